#include "fovea/dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fovea/glimpse.hpp"
#include "fovea/image_io.hpp"
#include "fovea/rng.hpp"

namespace fovea {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

bool tight_nonzero_box(const Tensor3& img, int& rmin, int& cmin, int& rmax,
                       int& cmax) {
  rmin = img.h;
  cmin = img.w;
  rmax = -1;
  cmax = -1;
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      for (int ch = 0; ch < img.c; ++ch)
        if (img.at(r, c, ch) > 0.0) {
          rmin = std::min(rmin, r);
          cmin = std::min(cmin, c);
          rmax = std::max(rmax, r);
          cmax = std::max(cmax, c);
          break;
        }
  return rmax >= 0;
}

BoundingBox pixel_box_to_norm(int rmin, int cmin, int rmax, int cmax, int h,
                              int w) {
  BoundingBox b;
  b.yx = {2.0 * rmin / h - 1.0, 2.0 * cmin / w - 1.0};
  b.hw = {2.0 * (rmax - rmin + 1) / h, 2.0 * (cmax - cmin + 1) / w};
  return b;
}

namespace {

void check_source_digit(const AnnotatedImage& d) {
  if (d.pixels.h != 28 || d.pixels.w != 28 || d.pixels.c != 1)
    throw DatasetError("source digit " + d.id +
                                " is not 28x28 single-channel");
  if (!d.label.has_value())
    throw DatasetError("source digit " + d.id + " has no label");
}

std::string make_id(const std::string& prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return prefix + "-" + buf;
}

// Paste src over dst starting at (r0, c0); overwrites what is underneath.
void paste(Tensor3& dst, const Tensor3& src, int r0, int c0) {
  for (int r = 0; r < src.h; ++r)
    for (int c = 0; c < src.w; ++c)
      for (int ch = 0; ch < src.c; ++ch)
        dst.at(r0 + r, c0 + c, ch) = src.at(r, c, ch);
}

Tensor3 crop(const Tensor3& src, int r0, int c0, int side) {
  Tensor3 out(side, side, src.c);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      for (int ch = 0; ch < src.c; ++ch)
        out.at(r, c, ch) = src.at(r0 + r, c0 + c, ch);
  return out;
}

void quantize_tensor(Tensor3& t) {
  for (double& v : t.data) v = quantize8(v);
}

// Common scaled-digit placement. Draw order per record: scale, row, col.
AnnotatedImage place_digit(const AnnotatedImage& src, const GeneratorConfig& cfg,
                           Rng& rng, bool rescale, const std::string& id) {
  const int canvas = cfg.canvas_size;
  AnnotatedImage rec;
  rec.id = id;
  rec.label = src.label;
  rec.pixels = Tensor3(canvas, canvas, 1, 0.0);

  Tensor3 digit = src.pixels;
  if (rescale) {
    const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const int side = std::max(1, static_cast<int>(std::lround(28.0 * scale)));
    if (side > canvas)
      throw std::invalid_argument(
          "scale range allows digits larger than the canvas");
    digit = resize_bilinear(digit, side, side);
    quantize_tensor(digit);
  }
  const int r0 = rng.uniform_int(0, canvas - digit.h);
  const int c0 = rng.uniform_int(0, canvas - digit.w);
  paste(rec.pixels, digit, r0, c0);

  int rmin, cmin, rmax, cmax;
  if (!tight_nonzero_box(rec.pixels, rmin, cmin, rmax, cmax))
    throw std::runtime_error("source digit " + src.id + " rendered blank");
  rec.bbox = pixel_box_to_norm(rmin, cmin, rmax, cmax, canvas, canvas);
  return rec;
}

}  // namespace

Dataset generate_mso(const Dataset& source_digits, const GeneratorConfig& cfg) {
  if (cfg.scale_hi * 28.0 > cfg.canvas_size + 0.5)
    throw std::invalid_argument("scale range exceeds canvas size");
  Dataset out;
  out.reserve(source_digits.size());
  for (std::size_t i = 0; i < source_digits.size(); ++i) {
    check_source_digit(source_digits[i]);
    Rng rng(derive_seed(cfg.seed, i));
    out.push_back(place_digit(source_digits[i], cfg, rng, /*rescale=*/true,
                              make_id(cfg.id_prefix, i)));
  }
  return out;
}

Dataset generate_msno(const Dataset& source_digits, const GeneratorConfig& cfg) {
  if (cfg.scale_hi * 28.0 > cfg.canvas_size + 0.5)
    throw std::invalid_argument("scale range exceeds canvas size");
  const int ps = cfg.noise_patch_size;
  Dataset out;
  out.reserve(source_digits.size());
  for (std::size_t i = 0; i < source_digits.size(); ++i) {
    check_source_digit(source_digits[i]);
    Rng rng(derive_seed(cfg.seed, i));
    AnnotatedImage rec = place_digit(source_digits[i], cfg, rng,
                                     /*rescale=*/true, make_id(cfg.id_prefix, i));
    // noise patches land after the box is fixed; they may corrupt the digit
    for (int p = 0; p < cfg.noise_patch_count; ++p) {
      const auto& donor =
          source_digits[rng.uniform_index(source_digits.size())];
      const int sr = rng.uniform_int(0, donor.pixels.h - ps);
      const int sc = rng.uniform_int(0, donor.pixels.w - ps);
      const int dr = rng.uniform_int(0, cfg.canvas_size - ps);
      const int dc = rng.uniform_int(0, cfg.canvas_size - ps);
      paste(rec.pixels, crop(donor.pixels, sr, sc, ps), dr, dc);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

Dataset generate_ct100(const Dataset& source_digits, const GeneratorConfig& cfg) {
  const int ps = cfg.noise_patch_size;
  Dataset out;
  out.reserve(source_digits.size());
  for (std::size_t i = 0; i < source_digits.size(); ++i) {
    check_source_digit(source_digits[i]);
    Rng rng(derive_seed(cfg.seed, i));
    AnnotatedImage rec = place_digit(source_digits[i], cfg, rng,
                                     /*rescale=*/false, make_id(cfg.id_prefix, i));
    for (int p = 0; p < cfg.noise_patch_count; ++p) {
      // clutter comes from other digits, never the record's own
      std::size_t j = rng.uniform_index(source_digits.size());
      while (source_digits.size() > 1 && j == i)
        j = rng.uniform_index(source_digits.size());
      const auto& donor = source_digits[j];
      const int sr = rng.uniform_int(0, donor.pixels.h - ps);
      const int sc = rng.uniform_int(0, donor.pixels.w - ps);
      const int dr = rng.uniform_int(0, cfg.canvas_size - ps);
      const int dc = rng.uniform_int(0, cfg.canvas_size - ps);
      paste(rec.pixels, crop(donor.pixels, sr, sc, ps), dr, dc);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void save_dataset(const Dataset& ds, const fs::path& root) {
  const fs::path manifest = root / "annotations.jsonl";
  if (fs::exists(manifest))
    throw DatasetError("save_dataset: " + manifest.string() +
                             " already exists");
  fs::create_directories(root / "images");

  std::set<std::string> seen;
  std::ofstream out(manifest);
  if (!out)
    throw DatasetError("save_dataset: cannot write " + manifest.string());
  for (const auto& rec : ds) {
    if (!seen.insert(rec.id).second)
      throw DatasetError("save_dataset: duplicate record id " + rec.id);
    const std::string file = "images/" + rec.id + ".png";
    write_png(root / file, rec.pixels);
    json line;
    line["id"] = rec.id;
    line["file"] = file;
    line["bbox_yx"] = {rec.bbox.yx(0), rec.bbox.yx(1)};
    line["bbox_hw"] = {rec.bbox.hw(0), rec.bbox.hw(1)};
    if (rec.label.has_value())
      line["label"] = *rec.label;
    else
      line["label"] = nullptr;
    line["width"] = rec.pixels.w;
    line["height"] = rec.pixels.h;
    line["schema"] = 1;
    out << line.dump() << "\n";
  }
}

Dataset load_dataset(const fs::path& root) {
  const fs::path manifest = root / "annotations.jsonl";
  std::ifstream in(manifest);
  if (!in)
    throw DatasetError("load_dataset: missing manifest " +
                             manifest.string());
  Dataset ds;
  std::string lineStr;
  std::size_t lineno = 0;
  while (std::getline(in, lineStr)) {
    ++lineno;
    if (lineStr.empty()) continue;
    json line;
    try {
      line = json::parse(lineStr);
    } catch (const std::exception& e) {
      throw DatasetError("load_dataset: corrupt manifest line " +
                               std::to_string(lineno) + ": " + e.what());
    }
    const int schema = line.value("schema", -1);
    if (schema != 1)
      throw DatasetError("load_dataset: unsupported schema version " +
                               std::to_string(schema) + " at line " +
                               std::to_string(lineno));
    AnnotatedImage rec;
    rec.id = line.at("id").get<std::string>();
    const fs::path file = root / line.at("file").get<std::string>();
    if (!fs::exists(file))
      throw DatasetError("load_dataset: record " + rec.id +
                               " references missing file " + file.string());
    try {
      rec.pixels = read_png(file);
    } catch (const std::exception& e) {
      throw DatasetError("load_dataset: record " + rec.id + ": " + e.what());
    }
    if (rec.pixels.w != line.at("width").get<int>() ||
        rec.pixels.h != line.at("height").get<int>())
      throw DatasetError("load_dataset: record " + rec.id +
                               " image size does not match manifest");
    rec.bbox.yx = {line.at("bbox_yx")[0].get<double>(),
                   line.at("bbox_yx")[1].get<double>()};
    rec.bbox.hw = {line.at("bbox_hw")[0].get<double>(),
                   line.at("bbox_hw")[1].get<double>()};
    if (!line.at("label").is_null()) rec.label = line.at("label").get<int>();
    ds.push_back(std::move(rec));
  }
  return ds;
}

Dataset load_fcar(const fs::path& root) {
  Dataset ds = load_dataset(root);
  for (const auto& rec : ds) {
    if (rec.pixels.c != 3)
      throw DatasetError("load_fcar: record " + rec.id +
                               " is not 3-channel");
    if (rec.label.has_value())
      throw DatasetError("load_fcar: record " + rec.id +
                               " unexpectedly carries a label");
    const auto& b = rec.bbox;
    if (b.yx(0) < -1.0 || b.yx(1) < -1.0 || b.yx(0) + b.hw(0) > 1.0 + 1e-9 ||
        b.yx(1) + b.hw(1) > 1.0 + 1e-9)
      throw DatasetError("load_fcar: record " + rec.id +
                               " box out of bounds");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic digit corpus
// ---------------------------------------------------------------------------

namespace {

struct P {
  double x, y;
};
using Stroke = std::vector<P>;

void quad(Stroke& s, P p0, P p1, P p2, int segs = 8) {
  for (int i = 1; i <= segs; ++i) {
    const double t = static_cast<double>(i) / segs;
    const double u = 1.0 - t;
    s.push_back({u * u * p0.x + 2 * u * t * p1.x + t * t * p2.x,
                 u * u * p0.y + 2 * u * t * p1.y + t * t * p2.y});
  }
}

Stroke ellipse(double cx, double cy, double rx, double ry, int segs = 20) {
  Stroke s;
  for (int i = 0; i <= segs; ++i) {
    const double a = 2.0 * 3.14159265358979323846 * i / segs;
    s.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
  }
  return s;
}

// Glyph templates in [0,1]^2, y growing downward.
std::vector<Stroke> glyph_strokes(int digit) {
  std::vector<Stroke> g;
  switch (digit) {
    case 0:
      g.push_back(ellipse(0.50, 0.50, 0.27, 0.38));
      break;
    case 1: {
      g.push_back({{0.52, 0.10}, {0.52, 0.90}});
      g.push_back({{0.52, 0.10}, {0.37, 0.26}});
      break;
    }
    case 2: {
      Stroke s{{0.24, 0.28}};
      quad(s, {0.24, 0.28}, {0.30, 0.04}, {0.54, 0.08});
      quad(s, {0.54, 0.08}, {0.80, 0.12}, {0.72, 0.34});
      s.push_back({0.24, 0.88});
      s.push_back({0.78, 0.88});
      g.push_back(std::move(s));
      break;
    }
    case 3: {
      Stroke s{{0.26, 0.16}};
      quad(s, {0.26, 0.16}, {0.52, 0.02}, {0.68, 0.20});
      quad(s, {0.68, 0.20}, {0.78, 0.40}, {0.48, 0.48});
      quad(s, {0.48, 0.48}, {0.84, 0.54}, {0.72, 0.78});
      quad(s, {0.72, 0.78}, {0.58, 0.98}, {0.26, 0.82});
      g.push_back(std::move(s));
      break;
    }
    case 4: {
      g.push_back({{0.64, 0.08}, {0.20, 0.62}, {0.84, 0.62}});
      g.push_back({{0.64, 0.08}, {0.64, 0.92}});
      break;
    }
    case 5: {
      Stroke s{{0.74, 0.10}, {0.30, 0.10}, {0.28, 0.46}};
      quad(s, {0.28, 0.46}, {0.64, 0.38}, {0.72, 0.58});
      quad(s, {0.72, 0.58}, {0.78, 0.82}, {0.52, 0.88});
      quad(s, {0.52, 0.88}, {0.32, 0.94}, {0.24, 0.78});
      g.push_back(std::move(s));
      break;
    }
    case 6: {
      Stroke s{{0.66, 0.08}};
      quad(s, {0.66, 0.08}, {0.38, 0.14}, {0.33, 0.42});
      quad(s, {0.33, 0.42}, {0.28, 0.58}, {0.29, 0.68});
      g.push_back(std::move(s));
      g.push_back(ellipse(0.50, 0.70, 0.21, 0.19));
      break;
    }
    case 7: {
      g.push_back({{0.20, 0.14}, {0.80, 0.12}, {0.46, 0.90}});
      break;
    }
    case 8: {
      g.push_back(ellipse(0.50, 0.29, 0.20, 0.18));
      g.push_back(ellipse(0.50, 0.70, 0.24, 0.21));
      break;
    }
    case 9: {
      g.push_back(ellipse(0.50, 0.32, 0.21, 0.20));
      Stroke s{{0.71, 0.32}};
      quad(s, {0.71, 0.32}, {0.72, 0.62}, {0.56, 0.90});
      g.push_back(std::move(s));
      break;
    }
    default:
      throw std::invalid_argument("glyph_strokes: digit out of range");
  }
  return g;
}

double dist_to_segment(double px, double py, const P& a, const P& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = ((px - a.x) * dx + (py - a.y) * dy) / len2;
  t = std::clamp(t, 0.0, 1.0);
  const double qx = a.x + t * dx, qy = a.y + t * dy;
  return std::hypot(px - qx, py - qy);
}

}  // namespace

Dataset synthesize_digit_corpus(int count, std::uint64_t seed,
                                const std::string& id_prefix) {
  Dataset ds;
  ds.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const int digit = i % 10;

    // per-sample handwriting jitter
    const double rot = rng.uniform(-0.18, 0.18);
    const double shear = rng.uniform(-0.22, 0.22);
    const double sx = rng.uniform(0.82, 1.05);
    const double sy = rng.uniform(0.85, 1.05);
    const double tx = rng.uniform(-0.05, 0.05);
    const double ty = rng.uniform(-0.05, 0.05);
    const double thick = rng.uniform(1.5, 2.5);
    const double ink = rng.uniform(0.85, 1.0);

    const double ca = std::cos(rot), sa = std::sin(rot);
    auto warp = [&](const P& p) {
      double x = (p.x - 0.5) * sx, y = (p.y - 0.5) * sy;
      x += shear * y;
      const double xr = ca * x - sa * y, yr = sa * x + ca * y;
      // glyph box maps to a 20px region centered on the 28px canvas
      return P{(xr + 0.5 + tx) * 20.0 + 4.0, (yr + 0.5 + ty) * 20.0 + 4.0};
    };

    std::vector<Stroke> strokes;
    for (const auto& s : glyph_strokes(digit)) {
      Stroke w;
      w.reserve(s.size());
      for (const auto& p : s) w.push_back(warp(p));
      strokes.push_back(std::move(w));
    }

    AnnotatedImage rec;
    rec.id = make_id(id_prefix, static_cast<std::size_t>(i));
    rec.label = digit;
    rec.pixels = Tensor3(28, 28, 1, 0.0);
    const double halfw = thick / 2.0;
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c) {
        const double px = c + 0.5, py = r + 0.5;
        double d = 1e9;
        for (const auto& s : strokes)
          for (std::size_t k = 0; k + 1 < s.size(); ++k)
            d = std::min(d, dist_to_segment(px, py, s[k], s[k + 1]));
        const double cov = std::clamp(halfw + 0.6 - d, 0.0, 1.0);
        if (cov > 0.0) rec.pixels.at(r, c, 0) = quantize8(ink * cov);
      }

    int rmin, cmin, rmax, cmax;
    if (!tight_nonzero_box(rec.pixels, rmin, cmin, rmax, cmax))
      throw std::runtime_error("synthesize_digit_corpus: blank render");
    rec.bbox = pixel_box_to_norm(rmin, cmin, rmax, cmax, 28, 28);
    ds.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// idx-ubyte loader
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw DatasetError("load_idx: truncated " + what);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
         (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Dataset load_idx(const fs::path& images_file, const fs::path& labels_file,
                 const std::string& id_prefix) {
  std::ifstream imgs(images_file, std::ios::binary);
  if (!imgs)
    throw DatasetError("load_idx: cannot open " + images_file.string());
  std::ifstream labs(labels_file, std::ios::binary);
  if (!labs)
    throw DatasetError("load_idx: cannot open " + labels_file.string());

  if (read_be32(imgs, "image magic") != 0x00000803u)
    throw DatasetError("load_idx: bad image magic in " +
                             images_file.string());
  const std::uint32_t n = read_be32(imgs, "image count");
  const std::uint32_t h = read_be32(imgs, "rows");
  const std::uint32_t w = read_be32(imgs, "cols");
  if (read_be32(labs, "label magic") != 0x00000801u)
    throw DatasetError("load_idx: bad label magic in " +
                             labels_file.string());
  if (read_be32(labs, "label count") != n)
    throw DatasetError("load_idx: image/label count mismatch");

  Dataset ds;
  ds.reserve(n);
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!imgs.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(buf.size())))
      throw DatasetError("load_idx: truncated image data");
    char lab;
    if (!labs.get(lab)) throw DatasetError("load_idx: truncated labels");
    AnnotatedImage rec;
    rec.id = make_id(id_prefix, i);
    rec.label = static_cast<int>(static_cast<unsigned char>(lab));
    rec.pixels = Tensor3(static_cast<int>(h), static_cast<int>(w), 1);
    for (std::size_t k = 0; k < buf.size(); ++k)
      rec.pixels.data[k] = buf[k] / 255.0;
    int rmin, cmin, rmax, cmax;
    if (tight_nonzero_box(rec.pixels, rmin, cmin, rmax, cmax))
      rec.bbox = pixel_box_to_norm(rmin, cmin, rmax, cmax, rec.pixels.h,
                                   rec.pixels.w);
    ds.push_back(std::move(rec));
  }
  return ds;
}

Dataset load_digit_source(const fs::path& path, const std::string& split) {
  if (fs::exists(path / "annotations.jsonl")) return load_dataset(path);
  const std::string img_name = split == "train" ? "train-images-idx3-ubyte"
                                                : "t10k-images-idx3-ubyte";
  const std::string lab_name = split == "train" ? "train-labels-idx1-ubyte"
                                                : "t10k-labels-idx1-ubyte";
  if (fs::exists(path / img_name))
    return load_idx(path / img_name, path / lab_name, split);
  throw DatasetError(
      "no digit source found at " + path.string() +
      " (expected annotations.jsonl or idx-ubyte files)");
}

Dataset build_benchmark_dataset(const std::string& kind,
                                const std::string& split, std::uint64_t seed,
                                int count, const Dataset* source) {
  const std::uint64_t split_id = split == "train" ? 0 : 1;
  Dataset synth;
  if (!source) {
    synth = synthesize_digit_corpus(count, derive_seed(seed, split_id + 100),
                                    "digit-" + split);
    source = &synth;
  }
  GeneratorConfig cfg;
  cfg.seed = derive_seed(seed, split_id);
  cfg.id_prefix = kind + "-" + split;
  if (kind == "mso") return generate_mso(*source, cfg);
  if (kind == "msno") {
    cfg.noise_patch_count = 6;
    cfg.noise_patch_size = 6;
    return generate_msno(*source, cfg);
  }
  if (kind == "ct100") {
    cfg.canvas_size = 100;
    cfg.noise_patch_count = 8;
    cfg.noise_patch_size = 8;
    return generate_ct100(*source, cfg);
  }
  throw std::invalid_argument("build_benchmark_dataset: unknown kind " + kind);
}

}  // namespace fovea
