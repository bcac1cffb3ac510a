// Python bindings over the core: geometry, glimpse extraction, dataset
// generation, episodes, losses, metrics and training entry points.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fovea/benchmark.hpp"
#include "fovea/dataset.hpp"
#include "fovea/glimpse.hpp"
#include "fovea/ini.hpp"
#include "fovea/losses.hpp"
#include "fovea/metrics.hpp"
#include "fovea/network.hpp"
#include "fovea/training.hpp"
#include "fovea/visualize.hpp"

namespace py = pybind11;
using namespace fovea;

namespace {

Tensor3 tensor_from_array(const py::array_t<double, py::array::c_style |
                                                        py::array::forcecast>& a) {
  if (a.ndim() == 2) {
    Tensor3 t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 1);
    std::memcpy(t.data.data(), a.data(), sizeof(double) * t.size());
    return t;
  }
  if (a.ndim() == 3) {
    Tensor3 t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
              static_cast<int>(a.shape(2)));
    std::memcpy(t.data.data(), a.data(), sizeof(double) * t.size());
    return t;
  }
  throw std::invalid_argument("expected an HxW or HxWxC array");
}

py::array_t<double> array_from_tensor(const Tensor3& t) {
  py::array_t<double> a({t.h, t.w, t.c});
  std::memcpy(a.mutable_data(), t.data.data(), sizeof(double) * t.size());
  return a;
}

BoundingBox box_from_tuple(double y, double x, double h, double w) {
  BoundingBox b;
  b.yx = {y, x};
  b.hw = {h, w};
  return b;
}

py::dict trajectory_to_dict(const Trajectory& traj) {
  const int T = static_cast<int>(traj.steps.size());
  py::array_t<double> fixations({T, 2}), boxes({T, 4}), mus({T, 2});
  py::array_t<double> scores(T);
  auto fx = fixations.mutable_unchecked<2>();
  auto bx = boxes.mutable_unchecked<2>();
  auto mu = mus.mutable_unchecked<2>();
  auto sc = scores.mutable_unchecked<1>();
  const int N = T > 0 ? static_cast<int>(traj.steps[0].class_dist.size()) : 0;
  py::array_t<double> probs({T, N});
  for (int t = 0; t < T; ++t) {
    fx(t, 0) = traj.fixations[t](0);
    fx(t, 1) = traj.fixations[t](1);
    const StepOutput& s = traj.steps[t];
    bx(t, 0) = s.box.yx(0);
    bx(t, 1) = s.box.yx(1);
    bx(t, 2) = s.box.hw(0);
    bx(t, 3) = s.box.hw(1);
    sc(t) = s.score;
    mu(t, 0) = s.policy_mean(0);
    mu(t, 1) = s.policy_mean(1);
    if (N > 0) {
      auto pr = probs.mutable_unchecked<2>();
      for (int k = 0; k < N; ++k) pr(t, k) = s.class_dist(k);
    }
  }
  py::dict d;
  d["fixations"] = fixations;
  d["boxes"] = boxes;
  d["scores"] = scores;
  d["policy_means"] = mus;
  if (N > 0) d["class_probs"] = probs;
  return d;
}

}  // namespace

PYBIND11_MODULE(fovea, m) {
  m.doc() = "recurrent-glimpse object detection core";

  // --- geometry ---
  py::class_<BoundingBox>(m, "BoundingBox")
      .def(py::init([](double y, double x, double h, double w) {
             return box_from_tuple(y, x, h, w);
           }),
           py::arg("y"), py::arg("x"), py::arg("h"), py::arg("w"))
      .def_property_readonly("yx",
                             [](const BoundingBox& b) {
                               return py::make_tuple(b.yx(0), b.yx(1));
                             })
      .def_property_readonly("hw",
                             [](const BoundingBox& b) {
                               return py::make_tuple(b.hw(0), b.hw(1));
                             })
      .def("__repr__", [](const BoundingBox& b) {
        return "BoundingBox(y=" + std::to_string(b.yx(0)) +
               ", x=" + std::to_string(b.yx(1)) +
               ", h=" + std::to_string(b.hw(0)) +
               ", w=" + std::to_string(b.hw(1)) + ")";
      });

  m.def("iou", &iou, py::arg("a"), py::arg("b"),
        "intersection over union, clamped to [1e-8, 1]");
  m.def("rasterize_iou_oracle", &rasterize_iou_oracle, py::arg("a"),
        py::arg("b"), py::arg("grid_n") = 1000);
  m.def("box_center", [](const BoundingBox& b) {
    const Vec2 c = box_center(b);
    return py::make_tuple(c(0), c(1));
  });
  m.def(
      "clip_detection",
      [](double y, double x, double h, double w, double s) {
        const ScoredBox sb = clip_detection({y, x}, {h, w}, s, ClipLimits{});
        return py::make_tuple(sb.box, sb.score);
      },
      py::arg("y"), py::arg("x"), py::arg("h"), py::arg("w"), py::arg("s"));

  // --- glimpse ---
  py::class_<GlimpseConfig>(m, "GlimpseConfig")
      .def(py::init([](int s0, int n, double sf, int su) {
             return GlimpseConfig{s0, n, sf, su};
           }),
           py::arg("s0") = 8, py::arg("n") = 3, py::arg("sf") = 2.0,
           py::arg("su") = 16)
      .def_readwrite("s0", &GlimpseConfig::s0)
      .def_readwrite("n", &GlimpseConfig::n)
      .def_readwrite("sf", &GlimpseConfig::sf)
      .def_readwrite("su", &GlimpseConfig::su)
      .def("crop_sides", &GlimpseConfig::crop_sides);

  m.def(
      "extract_pyramid",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             image,
         std::pair<double, double> fixation, const GlimpseConfig& cfg) {
        const Tensor3 img = tensor_from_array(image);
        FixationPoint p;
        p.p = {fixation.first, fixation.second};
        GlimpsePyramid pyr = extract_pyramid(img, p, cfg);
        py::list patches;
        for (const auto& t : pyr.patches) patches.append(array_from_tensor(t));
        py::dict d;
        d["patches"] = patches;
        d["source_sizes"] = pyr.source_sizes;
        return d;
      },
      py::arg("image"), py::arg("fixation"), py::arg("config"));
  m.def("to_pixel", [](std::pair<double, double> p, int h, int w) {
    FixationPoint fp;
    fp.p = {p.first, p.second};
    return to_pixel(fp, h, w);
  });

  // --- datasets ---
  m.def("synthesize_digit_corpus", &synthesize_digit_corpus, py::arg("count"),
        py::arg("seed"), py::arg("id_prefix") = "digit");
  py::class_<AnnotatedImage>(m, "AnnotatedImage")
      .def_property_readonly(
          "pixels", [](const AnnotatedImage& r) { return array_from_tensor(r.pixels); })
      .def_readonly("bbox", &AnnotatedImage::bbox)
      .def_property_readonly("label",
                             [](const AnnotatedImage& r) -> py::object {
                               if (r.label) return py::int_(*r.label);
                               return py::none();
                             })
      .def_readonly("id", &AnnotatedImage::id);
  py::class_<GeneratorConfig>(m, "GeneratorConfig")
      .def(py::init<>())
      .def_readwrite("canvas_size", &GeneratorConfig::canvas_size)
      .def_readwrite("scale_lo", &GeneratorConfig::scale_lo)
      .def_readwrite("scale_hi", &GeneratorConfig::scale_hi)
      .def_readwrite("noise_patch_count", &GeneratorConfig::noise_patch_count)
      .def_readwrite("noise_patch_size", &GeneratorConfig::noise_patch_size)
      .def_readwrite("seed", &GeneratorConfig::seed)
      .def_readwrite("id_prefix", &GeneratorConfig::id_prefix);
  m.def("generate_mso", &generate_mso);
  m.def("generate_msno", &generate_msno);
  m.def("generate_ct100", &generate_ct100);
  m.def("save_dataset", &save_dataset);
  m.def("load_dataset", &load_dataset);
  m.def("load_fcar", &load_fcar);

  // --- model / episodes ---
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("glimpse", &ModelConfig::glimpse)
      .def_readwrite("channels", &ModelConfig::channels)
      .def_readwrite("feature_dim", &ModelConfig::feature_dim)
      .def_readwrite("lstm_layers", &ModelConfig::lstm_layers)
      .def_readwrite("lstm_width", &ModelConfig::lstm_width)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def_readwrite("sigma", &ModelConfig::sigma)
      .def_property(
          "conv_channels",
          [](const ModelConfig& c) {
            return py::make_tuple(c.conv_channels[0], c.conv_channels[1],
                                  c.conv_channels[2]);
          },
          [](ModelConfig& c, std::array<int, 3> v) { c.conv_channels = v; })
      .def_property(
          "fusion",
          [](const ModelConfig& c) { return fusion_to_string(c.fusion); },
          [](ModelConfig& c, const std::string& s) {
            c.fusion = fusion_from_string(s);
          });

  py::class_<Model>(m, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"),
           py::arg("seed"))
      .def_property_readonly("config", &Model::config)
      .def("config_digest", &Model::config_digest)
      .def(
          "run_episode",
          [](const Model& model,
             const py::array_t<double,
                               py::array::c_style | py::array::forcecast>& image,
             int T, double init_range, bool stochastic, std::uint64_t seed) {
            const Tensor3 img = tensor_from_array(image);
            Rng rng(seed);
            EpisodeOptions opt;
            opt.T = T;
            opt.init_range = init_range;
            opt.mode = stochastic ? EpisodeMode::kStochastic
                                  : EpisodeMode::kDeterministic;
            opt.rng = &rng;
            return trajectory_to_dict(run_episode(model, img, opt));
          },
          py::arg("image"), py::arg("T") = 6, py::arg("init_range") = 0.3,
          py::arg("stochastic") = false, py::arg("seed") = 0)
      .def("shape_audit",
           [](const Model& model) { return shape_audit(model).to_string(); })
      .def("episode_macs", [](const Model& model, int T) {
        return episode_mac_count(model.config(), T);
      });

  m.def("load_checkpoint",
        [](const std::filesystem::path& path) { return load_checkpoint(path); });
  m.def("save_checkpoint",
        [](const std::filesystem::path& path, const Model& model) {
          save_checkpoint(path, model, CheckpointMeta{});
        });

  // --- losses ---
  py::class_<LossConfig>(m, "LossConfig")
      .def(py::init<>())
      .def_readwrite("sigma_o", &LossConfig::sigma_o)
      .def_readwrite("sigma", &LossConfig::sigma)
      .def_readwrite("stochastic", &LossConfig::stochastic)
      .def_readwrite("awareness", &LossConfig::awareness);
  m.def(
      "detection_loss",
      [](const BoundingBox& pred, const BoundingBox& gt, const LossConfig& cfg) {
        return detection_loss(pred, gt, cfg);
      },
      py::arg("pred"), py::arg("gt"), py::arg("config") = LossConfig{});
  m.def("classification_loss", [](const std::vector<double>& probs, int label) {
    Vec p(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) p(i) = probs[i];
    return classification_loss(p, label);
  });

  // --- metrics ---
  py::class_<EvalRecord>(m, "EvalRecord")
      .def(py::init([](const std::string& id, const BoundingBox& pred,
                       double score, int pred_class, const BoundingBox& gt,
                       py::object label) {
             EvalRecord r;
             r.id = id;
             r.pred = pred;
             r.score = score;
             r.pred_class = pred_class;
             r.gt = gt;
             if (!label.is_none()) r.label = label.cast<int>();
             return r;
           }),
           py::arg("id"), py::arg("pred"), py::arg("score"),
           py::arg("pred_class"), py::arg("gt"), py::arg("label") = py::none());
  m.def("mean_iou", &mean_iou);
  m.def("classification_error_rate", &classification_error_rate);
  m.def(
      "mean_average_precision",
      [](const std::vector<EvalRecord>& records, double thr) {
        return mean_average_precision(records, thr);
      },
      py::arg("records"), py::arg("iou_threshold") = 0.5);

  // --- training ---
  m.def(
      "train_from_config",
      [](const std::filesystem::path& ini_path) {
        TrainResult res = train(TrainConfig::from_ini(IniFile::load(ini_path)));
        py::dict d;
        d["checkpoint"] = res.checkpoint.string();
        d["first_epoch_loss"] = res.first_epoch_loss;
        d["last_epoch_loss"] = res.last_epoch_loss;
        if (res.eval_report) {
          d["mean_iou"] = res.eval_report->mean_iou;
          if (res.eval_report->map) d["map"] = *res.eval_report->map;
          if (res.eval_report->error_rate)
            d["error_rate"] = *res.eval_report->error_rate;
        }
        return d;
      },
      py::arg("config_path"));
  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& ckpt, const std::filesystem::path& data,
         int T, int threads) {
        CheckpointMeta meta;
        Model model = load_checkpoint(ckpt, &meta);
        Dataset ds = load_dataset(data);
        MetricsReport rep =
            evaluate(model, ds, T > 0 ? T : meta.steps_T, threads);
        py::dict d;
        d["mean_iou"] = rep.mean_iou;
        if (rep.map) d["map"] = *rep.map;
        if (rep.error_rate) d["error_rate"] = *rep.error_rate;
        d["n_records"] = rep.n_records;
        return d;
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("T") = 0,
      py::arg("threads") = 0);

  py::register_exception<DatasetError>(m, "DatasetError");
}
