#include "fovea/network.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fovea/ini.hpp"
#include "fovea/macs.hpp"

namespace fovea {

using json = nlohmann::ordered_json;

FusionMethod fusion_from_string(const std::string& s) {
  if (s == "add") return FusionMethod::kAdd;
  if (s == "multiply") return FusionMethod::kMultiply;
  if (s == "concat") return FusionMethod::kConcat;
  throw std::invalid_argument("unknown fusion method: " + s);
}

std::string fusion_to_string(FusionMethod m) {
  switch (m) {
    case FusionMethod::kAdd: return "add";
    case FusionMethod::kMultiply: return "multiply";
    case FusionMethod::kConcat: return "concat";
  }
  throw std::logic_error("bad fusion enum");
}

void ModelConfig::validate() const {
  glimpse.validate();
  if (glimpse.su % 4 != 0)
    throw std::invalid_argument("su must be divisible by 4 (two 2x2 pools)");
  if (channels != 1 && channels != 3)
    throw std::invalid_argument("channels must be 1 or 3");
  if (conv_kernel < 3 || conv_kernel % 2 == 0)
    throw std::invalid_argument("conv kernel must be odd and >= 3");
  for (int c : conv_channels)
    if (c <= 0) throw std::invalid_argument("conv channel widths must be > 0");
  if (feature_dim <= 0 || lstm_width <= 0 || lstm_layers <= 0)
    throw std::invalid_argument("feature/lstm dimensions must be positive");
  if (num_classes < 0) throw std::invalid_argument("num_classes must be >= 0");
  if (sigma <= 0.0) throw std::invalid_argument("sigma must be > 0");
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

namespace {

void alloc_params(ModelParams& p, const ModelConfig& cfg) {
  const int k2 = cfg.conv_kernel * cfg.conv_kernel;
  const int c0 = cfg.channels;
  const auto [c1, c2, c3] = cfg.conv_channels;
  const int feat = cfg.feature_dim;
  p.cnn.resize(cfg.glimpse.n);
  for (auto& cnn : p.cnn) {
    cnn.conv1 = {Mat::Zero(k2 * c0, c1), Vec::Zero(c1)};
    cnn.conv2 = {Mat::Zero(k2 * c1, c2), Vec::Zero(c2)};
    cnn.conv3 = {Mat::Zero(k2 * c2, c3), Vec::Zero(c3)};
    cnn.fc = {Mat::Zero(feat, cfg.flatten_dim()), Vec::Zero(feat)};
  }
  p.scale_fc = {Mat::Zero(feat, cfg.glimpse.n * feat), Vec::Zero(feat)};
  p.loc_fc = {Mat::Zero(feat, 2), Vec::Zero(feat)};
  if (cfg.fusion == FusionMethod::kConcat)
    p.concat_fc = {Mat::Zero(feat, 2 * feat), Vec::Zero(feat)};
  else
    p.concat_fc = {Mat(), Vec()};
  p.lstm.resize(cfg.lstm_layers);
  for (int l = 0; l < cfg.lstm_layers; ++l) {
    const int in = l == 0 ? feat : cfg.lstm_width;
    p.lstm[l] = {Mat::Zero(4 * cfg.lstm_width, in + cfg.lstm_width),
                 Vec::Zero(4 * cfg.lstm_width)};
  }
  p.det = {Mat::Zero(5, cfg.lstm_width), Vec::Zero(5)};
  if (cfg.has_classifier())
    p.cls = {Mat::Zero(cfg.num_classes, cfg.lstm_width),
             Vec::Zero(cfg.num_classes)};
  else
    p.cls = {Mat(), Vec()};
  p.pol = {Mat::Zero(2, cfg.lstm_width), Vec::Zero(2)};
}

void glorot_fill(Mat& W, double fan_in, double fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < W.size(); ++i)
    W.data()[i] = rng.uniform(-a, a);
}

void init_params(ModelParams& p, const ModelConfig& cfg, Rng& rng) {
  const int k2 = cfg.conv_kernel * cfg.conv_kernel;
  const int c0 = cfg.channels;
  const auto [c1, c2, c3] = cfg.conv_channels;
  for (auto& cnn : p.cnn) {
    glorot_fill(cnn.conv1.W, k2 * c0, k2 * c1, rng);
    glorot_fill(cnn.conv2.W, k2 * c1, k2 * c2, rng);
    glorot_fill(cnn.conv3.W, k2 * c2, k2 * c3, rng);
    glorot_fill(cnn.fc.W, cnn.fc.W.cols(), cnn.fc.W.rows(), rng);
  }
  glorot_fill(p.scale_fc.W, p.scale_fc.W.cols(), p.scale_fc.W.rows(), rng);
  glorot_fill(p.loc_fc.W, p.loc_fc.W.cols(), p.loc_fc.W.rows(), rng);
  if (p.concat_fc.W.size() > 0)
    glorot_fill(p.concat_fc.W, p.concat_fc.W.cols(), p.concat_fc.W.rows(), rng);
  for (auto& l : p.lstm) {
    glorot_fill(l.W, l.W.cols(), l.W.rows(), rng);
    l.b.segment(cfg.lstm_width, cfg.lstm_width).setOnes();  // forget-gate bias
  }
  glorot_fill(p.det.W, p.det.W.cols(), p.det.W.rows(), rng);
  // keep raw head outputs inside the clip ranges at the start
  p.det.b << -0.3, -0.3, 0.7, 0.7, 0.5;
  if (p.cls.W.size() > 0) glorot_fill(p.cls.W, p.cls.W.cols(), p.cls.W.rows(), rng);
  glorot_fill(p.pol.W, p.pol.W.cols(), p.pol.W.rows(), rng);
}

void add_ref(std::vector<TensorRef>& refs, const std::string& name, Mat& m) {
  if (m.size() == 0) return;
  refs.push_back({name, m.data(), static_cast<std::size_t>(m.size()),
                  {static_cast<int>(m.rows()), static_cast<int>(m.cols())}});
}
void add_ref(std::vector<TensorRef>& refs, const std::string& name, Vec& v) {
  if (v.size() == 0) return;
  refs.push_back({name, v.data(), static_cast<std::size_t>(v.size()),
                  {static_cast<int>(v.size())}});
}

}  // namespace

ModelParams ModelParams::zeros_like(const ModelConfig& cfg) {
  ModelParams p;
  alloc_params(p, cfg);
  return p;
}

std::vector<TensorRef> enumerate_params(ModelParams& p) {
  std::vector<TensorRef> refs;
  for (std::size_t k = 0; k < p.cnn.size(); ++k) {
    const std::string base = "cnn" + std::to_string(k);
    add_ref(refs, base + ".conv1.W", p.cnn[k].conv1.W);
    add_ref(refs, base + ".conv1.b", p.cnn[k].conv1.b);
    add_ref(refs, base + ".conv2.W", p.cnn[k].conv2.W);
    add_ref(refs, base + ".conv2.b", p.cnn[k].conv2.b);
    add_ref(refs, base + ".conv3.W", p.cnn[k].conv3.W);
    add_ref(refs, base + ".conv3.b", p.cnn[k].conv3.b);
    add_ref(refs, base + ".fc.W", p.cnn[k].fc.W);
    add_ref(refs, base + ".fc.b", p.cnn[k].fc.b);
  }
  add_ref(refs, "fusion.scale.W", p.scale_fc.W);
  add_ref(refs, "fusion.scale.b", p.scale_fc.b);
  add_ref(refs, "fusion.location.W", p.loc_fc.W);
  add_ref(refs, "fusion.location.b", p.loc_fc.b);
  add_ref(refs, "fusion.concat.W", p.concat_fc.W);
  add_ref(refs, "fusion.concat.b", p.concat_fc.b);
  for (std::size_t l = 0; l < p.lstm.size(); ++l) {
    const std::string base = "lstm" + std::to_string(l);
    add_ref(refs, base + ".W", p.lstm[l].W);
    add_ref(refs, base + ".b", p.lstm[l].b);
  }
  add_ref(refs, "head.det.W", p.det.W);
  add_ref(refs, "head.det.b", p.det.b);
  add_ref(refs, "head.cls.W", p.cls.W);
  add_ref(refs, "head.cls.b", p.cls.b);
  add_ref(refs, "head.pol.W", p.pol.W);
  add_ref(refs, "head.pol.b", p.pol.b);
  return refs;
}

std::size_t total_param_count(const ModelParams& p) {
  std::size_t n = 0;
  auto& mp = const_cast<ModelParams&>(p);
  for (const auto& r : enumerate_params(mp)) n += r.size;
  return n;
}

RecurrentState RecurrentState::zeros(int layers, int width) {
  RecurrentState s;
  s.h.assign(layers, Vec::Zero(width));
  s.c.assign(layers, Vec::Zero(width));
  return s;
}

void TrajectoryGrad::resize(int T, int num_classes) {
  d_mu.assign(T, Vec2::Zero());
  d_score.assign(T, 0.0);
  d_yx.setZero();
  d_hw.setZero();
  d_class = Vec::Zero(num_classes);
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  alloc_params(p_, cfg_);
  Rng rng(seed);
  init_params(p_, cfg_, rng);
}

std::string Model::config_json() const {
  json j;
  j["glimpse"] = {{"s0", cfg_.glimpse.s0},
                  {"n", cfg_.glimpse.n},
                  {"sf", cfg_.glimpse.sf},
                  {"su", cfg_.glimpse.su}};
  j["channels"] = cfg_.channels;
  j["conv_channels"] = cfg_.conv_channels;
  j["conv_kernel"] = cfg_.conv_kernel;
  j["feature_dim"] = cfg_.feature_dim;
  j["fusion"] = fusion_to_string(cfg_.fusion);
  j["lstm_layers"] = cfg_.lstm_layers;
  j["lstm_width"] = cfg_.lstm_width;
  j["num_classes"] = cfg_.num_classes;
  j["sigma"] = cfg_.sigma;
  j["clip"] = {{"pos", {cfg_.clip.pos_lo, cfg_.clip.pos_hi}},
               {"size", {cfg_.clip.size_lo, cfg_.clip.size_hi}},
               {"score", {cfg_.clip.score_lo, cfg_.clip.score_hi}}};
  return j.dump();
}

std::string Model::config_digest() const { return digest_hex(config_json()); }

// ---------------------------------------------------------------------------
// conv / pool primitives
// ---------------------------------------------------------------------------

namespace {

inline void relu_(RMat& m) { m = m.cwiseMax(0.0); }
inline void relu_(Vec& v) { v = v.cwiseMax(0.0); }

// X: (H*W) x C feature map, same padding, odd kernel.
RMat im2col(const RMat& X, int H, int W, int k, int C) {
  const int pad = k / 2;
  RMat col = RMat::Zero(static_cast<Eigen::Index>(H) * W, k * k * C);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const Eigen::Index row = static_cast<Eigen::Index>(r) * W + c;
      for (int dy = -pad; dy <= pad; ++dy) {
        const int sr = r + dy;
        if (sr < 0 || sr >= H) continue;
        for (int dx = -pad; dx <= pad; ++dx) {
          const int sc = c + dx;
          if (sc < 0 || sc >= W) continue;
          const int tap = (dy + pad) * k + (dx + pad);
          col.block(row, static_cast<Eigen::Index>(tap) * C, 1, C) =
              X.block(static_cast<Eigen::Index>(sr) * W + sc, 0, 1, C);
        }
      }
    }
  }
  return col;
}

void col2im_add(const RMat& dcol, int H, int W, int k, int C, RMat& dX) {
  const int pad = k / 2;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const Eigen::Index row = static_cast<Eigen::Index>(r) * W + c;
      for (int dy = -pad; dy <= pad; ++dy) {
        const int sr = r + dy;
        if (sr < 0 || sr >= H) continue;
        for (int dx = -pad; dx <= pad; ++dx) {
          const int sc = c + dx;
          if (sc < 0 || sc >= W) continue;
          const int tap = (dy + pad) * k + (dx + pad);
          dX.block(static_cast<Eigen::Index>(sr) * W + sc, 0, 1, C) +=
              dcol.block(row, static_cast<Eigen::Index>(tap) * C, 1, C);
        }
      }
    }
  }
}

RMat maxpool2(const RMat& X, int H, int W, int C, std::vector<int>& argmax) {
  const int oh = H / 2, ow = W / 2;
  RMat out(static_cast<Eigen::Index>(oh) * ow, C);
  argmax.assign(static_cast<std::size_t>(oh) * ow * C, 0);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      const Eigen::Index orow = static_cast<Eigen::Index>(r) * ow + c;
      const int s00 = (2 * r) * W + 2 * c;
      const int cand[4] = {s00, s00 + 1, s00 + W, s00 + W + 1};
      for (int ch = 0; ch < C; ++ch) {
        int best = cand[0];
        double bv = X(cand[0], ch);
        for (int t = 1; t < 4; ++t) {
          const double v = X(cand[t], ch);
          if (v > bv) {
            bv = v;
            best = cand[t];
          }
        }
        out(orow, ch) = bv;
        argmax[static_cast<std::size_t>(orow) * C + ch] = best;
      }
    }
  }
  return out;
}

void maxpool2_add_back(const RMat& dY, const std::vector<int>& argmax, int C,
                       RMat& dX) {
  for (Eigen::Index row = 0; row < dY.rows(); ++row)
    for (int ch = 0; ch < C; ++ch)
      dX(argmax[static_cast<std::size_t>(row) * C + ch], ch) += dY(row, ch);
}

RMat tensor_as_rmat(const Tensor3& t) {
  RMat X(static_cast<Eigen::Index>(t.h) * t.w, t.c);
  std::memcpy(X.data(), t.data.data(), sizeof(double) * t.data.size());
  return X;
}

}  // namespace

// ---------------------------------------------------------------------------
// forward operations
// ---------------------------------------------------------------------------

Vec cnn_forward(const Tensor3& patch, const CnnP& p, const ModelConfig& cfg,
                CnnCache* cache) {
  const int su = cfg.glimpse.su, k = cfg.conv_kernel;
  if (patch.h != su || patch.w != su || patch.c != cfg.channels)
    throw std::invalid_argument("cnn_forward: patch does not match config");
  const auto [c1, c2, c3] = cfg.conv_channels;
  const int s1 = su / 2;

  RMat x0 = tensor_as_rmat(patch);
  RMat col1 = im2col(x0, su, su, k, cfg.channels);
  RMat r1 = col1 * p.conv1.W;
  macs::add(static_cast<std::uint64_t>(r1.rows()) * col1.cols() * c1);
  r1.rowwise() += p.conv1.b.transpose();
  relu_(r1);
  std::vector<int> idx1;
  RMat p1 = maxpool2(r1, su, su, c1, idx1);

  RMat col2 = im2col(p1, s1, s1, k, c1);
  RMat r2 = col2 * p.conv2.W;
  macs::add(static_cast<std::uint64_t>(r2.rows()) * col2.cols() * c2);
  r2.rowwise() += p.conv2.b.transpose();
  relu_(r2);

  RMat col3 = im2col(r2, s1, s1, k, c2);
  RMat r3 = col3 * p.conv3.W;
  macs::add(static_cast<std::uint64_t>(r3.rows()) * col3.cols() * c3);
  r3.rowwise() += p.conv3.b.transpose();
  relu_(r3);
  std::vector<int> idx3;
  RMat p3 = maxpool2(r3, s1, s1, c3, idx3);

  Eigen::Map<const Vec> flat(p3.data(), p3.size());
  Vec out = p.fc.W * flat + p.fc.b;
  macs::add(static_cast<std::uint64_t>(p.fc.W.rows()) * p.fc.W.cols());
  relu_(out);

  if (cache) {
    cache->x0 = std::move(x0);
    cache->r1 = std::move(r1);
    cache->idx1 = std::move(idx1);
    cache->p1 = std::move(p1);
    cache->r2 = std::move(r2);
    cache->r3 = std::move(r3);
    cache->idx3 = std::move(idx3);
    cache->p3 = std::move(p3);
    cache->fc_out = out;
  }
  return out;
}

namespace {

// Gradient of one CNN learner; recomputes the im2col views from the cache.
void cnn_backward(const Vec& dout, const CnnCache& cc, const CnnP& p,
                  const ModelConfig& cfg, CnnP& g) {
  const int su = cfg.glimpse.su, k = cfg.conv_kernel;
  const auto [c1, c2, c3] = cfg.conv_channels;
  const int s1 = su / 2;

  Vec dfc = (cc.fc_out.array() > 0.0).select(dout, 0.0);
  Eigen::Map<const Vec> flat(cc.p3.data(), cc.p3.size());
  g.fc.W.noalias() += dfc * flat.transpose();
  g.fc.b += dfc;
  Vec dflat = p.fc.W.transpose() * dfc;

  RMat dp3 = Eigen::Map<const RMat>(dflat.data(), cc.p3.rows(), cc.p3.cols());
  RMat dr3 = RMat::Zero(cc.r3.rows(), cc.r3.cols());
  maxpool2_add_back(dp3, cc.idx3, c3, dr3);
  RMat da3 = (cc.r3.array() > 0.0).select(dr3, 0.0);

  RMat col3 = im2col(cc.r2, s1, s1, k, c2);
  g.conv3.W.noalias() += col3.transpose() * da3;
  g.conv3.b += da3.colwise().sum().transpose();
  RMat dcol3 = da3 * p.conv3.W.transpose();
  RMat dr2 = RMat::Zero(cc.r2.rows(), cc.r2.cols());
  col2im_add(dcol3, s1, s1, k, c2, dr2);
  RMat da2 = (cc.r2.array() > 0.0).select(dr2, 0.0);

  RMat col2 = im2col(cc.p1, s1, s1, k, c1);
  g.conv2.W.noalias() += col2.transpose() * da2;
  g.conv2.b += da2.colwise().sum().transpose();
  RMat dcol2 = da2 * p.conv2.W.transpose();
  RMat dp1 = RMat::Zero(cc.p1.rows(), cc.p1.cols());
  col2im_add(dcol2, s1, s1, k, c1, dp1);

  RMat dr1 = RMat::Zero(cc.r1.rows(), cc.r1.cols());
  maxpool2_add_back(dp1, cc.idx1, c1, dr1);
  RMat da1 = (cc.r1.array() > 0.0).select(dr1, 0.0);

  RMat col1 = im2col(cc.x0, su, su, k, cfg.channels);
  g.conv1.W.noalias() += col1.transpose() * da1;
  g.conv1.b += da1.colwise().sum().transpose();
  // gradient stops here: the patch is data
}

}  // namespace

Vec fuse(const std::vector<Vec>& features, const Vec2& fixation,
         const ModelParams& p, const ModelConfig& cfg, FuseCache* cache) {
  const int n = cfg.glimpse.n, feat = cfg.feature_dim;
  if (static_cast<int>(features.size()) != n)
    throw std::invalid_argument("fuse: expected one feature per scale");
  Vec cat(n * feat);
  for (int k = 0; k < n; ++k) cat.segment(k * feat, feat) = features[k];

  Vec xs = p.scale_fc.W * cat + p.scale_fc.b;
  macs::add(static_cast<std::uint64_t>(p.scale_fc.W.rows()) * p.scale_fc.W.cols());
  relu_(xs);
  Vec xp = p.loc_fc.W * Vec(fixation) + p.loc_fc.b;
  macs::add(static_cast<std::uint64_t>(p.loc_fc.W.rows()) * p.loc_fc.W.cols());
  relu_(xp);

  Vec x, xcat;
  switch (cfg.fusion) {
    case FusionMethod::kAdd: x = xs + xp; break;
    case FusionMethod::kMultiply: x = xs.cwiseProduct(xp); break;
    case FusionMethod::kConcat: {
      xcat.resize(2 * feat);
      xcat << xs, xp;
      x = p.concat_fc.W * xcat + p.concat_fc.b;
      macs::add(static_cast<std::uint64_t>(p.concat_fc.W.rows()) *
                p.concat_fc.W.cols());
      relu_(x);
      break;
    }
  }
  if (cache) {
    cache->cat = std::move(cat);
    cache->xs = xs;
    cache->xp = xp;
    cache->xcat_in = std::move(xcat);
    cache->x = x;
    cache->fixation = fixation;
  }
  return x;
}

namespace {

void fuse_backward(const Vec& dx, const FuseCache& fc, const ModelParams& p,
                   const ModelConfig& cfg, ModelParams& g,
                   std::vector<Vec>& dfeats) {
  const int n = cfg.glimpse.n, feat = cfg.feature_dim;
  Vec dxs, dxp;
  switch (cfg.fusion) {
    case FusionMethod::kAdd:
      dxs = dx;
      dxp = dx;
      break;
    case FusionMethod::kMultiply:
      dxs = dx.cwiseProduct(fc.xp);
      dxp = dx.cwiseProduct(fc.xs);
      break;
    case FusionMethod::kConcat: {
      Vec dz = (fc.x.array() > 0.0).select(dx, 0.0);
      g.concat_fc.W.noalias() += dz * fc.xcat_in.transpose();
      g.concat_fc.b += dz;
      Vec dcat2 = p.concat_fc.W.transpose() * dz;
      dxs = dcat2.head(feat);
      dxp = dcat2.tail(feat);
      break;
    }
  }
  Vec dzs = (fc.xs.array() > 0.0).select(dxs, 0.0);
  g.scale_fc.W.noalias() += dzs * fc.cat.transpose();
  g.scale_fc.b += dzs;
  Vec dcat = p.scale_fc.W.transpose() * dzs;
  dfeats.resize(n);
  for (int k = 0; k < n; ++k) dfeats[k] = dcat.segment(k * feat, feat);

  Vec dzp = (fc.xp.array() > 0.0).select(dxp, 0.0);
  g.loc_fc.W.noalias() += dzp * Vec(fc.fixation).transpose();
  g.loc_fc.b += dzp;
  // the fixation itself is a sampled constant; nothing flows through it
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

std::pair<RecurrentState, Vec> recurrent_step(const RecurrentState& state,
                                              const Vec& x,
                                              const std::vector<LstmP>& layers,
                                              std::vector<LstmCache>* cache) {
  const int m = static_cast<int>(layers.size());
  if (static_cast<int>(state.h.size()) != m)
    throw std::invalid_argument("recurrent_step: state/layer count mismatch");
  RecurrentState next;
  next.h.resize(m);
  next.c.resize(m);
  if (cache) cache->resize(m);

  Vec input = x;
  for (int l = 0; l < m; ++l) {
    const LstmP& lp = layers[l];
    const int H = static_cast<int>(state.h[l].size());
    Vec uh(input.size() + H);
    uh << input, state.h[l];
    Vec z = lp.W * uh + lp.b;
    macs::add(static_cast<std::uint64_t>(lp.W.rows()) * lp.W.cols());
    Vec i = z.head(H).unaryExpr([](double v) { return sigmoid(v); });
    Vec f = z.segment(H, H).unaryExpr([](double v) { return sigmoid(v); });
    Vec g = z.segment(2 * H, H).array().tanh();
    Vec o = z.tail(H).unaryExpr([](double v) { return sigmoid(v); });
    Vec c = f.cwiseProduct(state.c[l]) + i.cwiseProduct(g);
    Vec tc = c.array().tanh();
    Vec h = o.cwiseProduct(tc);
    if (cache) {
      auto& lc = (*cache)[l];
      lc.u = input;
      lc.h_prev = state.h[l];
      lc.c_prev = state.c[l];
      lc.i = i;
      lc.f = f;
      lc.g = g;
      lc.o = o;
      lc.c = c;
      lc.tanh_c = tc;
      lc.h = h;
    }
    next.h[l] = h;
    next.c[l] = std::move(c);
    input = next.h[l];
  }
  Vec h_top = next.h.back();
  return {std::move(next), std::move(h_top)};
}

namespace {

// One LSTM cell backward; returns input gradient, updates dh/dc in place to
// the previous step's values.
Vec lstm_cell_backward(const LstmCache& lc, const LstmP& p, LstmP& g, Vec& dh,
                       Vec& dc) {
  const int H = static_cast<int>(lc.h.size());
  Vec do_ = dh.cwiseProduct(lc.tanh_c);
  dc += dh.cwiseProduct(lc.o).cwiseProduct(
      (1.0 - lc.tanh_c.array().square()).matrix());
  Vec di = dc.cwiseProduct(lc.g);
  Vec df = dc.cwiseProduct(lc.c_prev);
  Vec dg = dc.cwiseProduct(lc.i);
  Vec dc_prev = dc.cwiseProduct(lc.f);

  Vec dz(4 * H);
  dz.head(H) = di.cwiseProduct(lc.i).cwiseProduct((1.0 - lc.i.array()).matrix());
  dz.segment(H, H) =
      df.cwiseProduct(lc.f).cwiseProduct((1.0 - lc.f.array()).matrix());
  dz.segment(2 * H, H) = dg.cwiseProduct((1.0 - lc.g.array().square()).matrix());
  dz.tail(H) = do_.cwiseProduct(lc.o).cwiseProduct((1.0 - lc.o.array()).matrix());

  Vec uh(lc.u.size() + H);
  uh << lc.u, lc.h_prev;
  g.W.noalias() += dz * uh.transpose();
  g.b += dz;
  Vec duh = p.W.transpose() * dz;
  dh = duh.tail(H);   // flows to h_prev
  dc = dc_prev;
  return duh.head(lc.u.size());
}

}  // namespace

StepOutput act(const Vec& h_top, const ModelParams& p, const ModelConfig& cfg,
               HeadsCache* cache) {
  StepOutput out;
  Vec det_raw = p.det.W * h_top + p.det.b;
  macs::add(static_cast<std::uint64_t>(p.det.W.rows()) * p.det.W.cols());
  const ScoredBox sb = clip_detection({det_raw(0), det_raw(1)},
                                      {det_raw(2), det_raw(3)}, det_raw(4),
                                      cfg.clip);
  out.box = sb.box;
  out.score = sb.score;

  Vec probs;
  if (cfg.has_classifier()) {
    Vec logits = p.cls.W * h_top + p.cls.b;
    macs::add(static_cast<std::uint64_t>(p.cls.W.rows()) * p.cls.W.cols());
    const double mx = logits.maxCoeff();
    probs = (logits.array() - mx).exp();
    probs /= probs.sum();
    out.class_dist = probs;
  }

  Vec z = p.pol.W * h_top + p.pol.b;
  macs::add(static_cast<std::uint64_t>(p.pol.W.rows()) * p.pol.W.cols());
  const Vec2 sig{sigmoid(z(0)), sigmoid(z(1))};
  out.policy_mean = 2.0 * sig - Vec2::Ones();
  out.sampled_fixation = out.policy_mean;

  if (cache) {
    cache->h = h_top;
    cache->det_raw = std::move(det_raw);
    cache->cls_prob = probs;
    cache->pol_sig = sig;
  }
  return out;
}

namespace {

// Gradients into the heads; returns d h_top. Clip passes gradient only where
// the raw value lies inside (or exactly on) its limits.
Vec act_backward(const HeadsCache& hc, const ModelParams& p,
                 const ModelConfig& cfg, const Vec2& d_yx, const Vec2& d_hw,
                 double d_score, const Vec& d_class, const Vec2& d_mu,
                 ModelParams& g) {
  const ClipLimits& cl = cfg.clip;
  Vec d5 = Vec::Zero(5);
  auto pass = [](double raw, double lo, double hi) {
    return raw >= lo && raw <= hi;
  };
  if (pass(hc.det_raw(0), cl.pos_lo, cl.pos_hi)) d5(0) = d_yx(0);
  if (pass(hc.det_raw(1), cl.pos_lo, cl.pos_hi)) d5(1) = d_yx(1);
  if (pass(hc.det_raw(2), cl.size_lo, cl.size_hi)) d5(2) = d_hw(0);
  if (pass(hc.det_raw(3), cl.size_lo, cl.size_hi)) d5(3) = d_hw(1);
  if (pass(hc.det_raw(4), cl.score_lo, cl.score_hi)) d5(4) = d_score;
  g.det.W.noalias() += d5 * hc.h.transpose();
  g.det.b += d5;
  Vec dh = p.det.W.transpose() * d5;

  if (cfg.has_classifier() && d_class.size() > 0) {
    // softmax backward: dz = p .* (dp - p . dp)
    const double dot = hc.cls_prob.dot(d_class);
    Vec dz = hc.cls_prob.cwiseProduct(d_class.array().matrix() -
                                      Vec::Constant(d_class.size(), dot));
    g.cls.W.noalias() += dz * hc.h.transpose();
    g.cls.b += dz;
    dh.noalias() += p.cls.W.transpose() * dz;
  }

  if (d_mu.squaredNorm() > 0.0) {
    Vec2 dzp;
    for (int i = 0; i < 2; ++i)
      dzp(i) = d_mu(i) * 2.0 * hc.pol_sig(i) * (1.0 - hc.pol_sig(i));
    g.pol.W.noalias() += Vec(dzp) * hc.h.transpose();
    g.pol.b += Vec(dzp);
    dh.noalias() += p.pol.W.transpose() * Vec(dzp);
  }
  return dh;
}

}  // namespace

Vec2 sample_fixation(const Vec2& mu, double sigma, Rng& rng) {
  if (sigma <= 0.0) throw std::invalid_argument("sample_fixation: sigma <= 0");
  Vec2 out;
  out(0) = clampd(rng.normal(mu(0), sigma), -1.0, 1.0);
  out(1) = clampd(rng.normal(mu(1), sigma), -1.0, 1.0);
  return out;
}

Trajectory run_episode(const Model& model, const Tensor3& image,
                       const EpisodeOptions& opt) {
  const ModelConfig& cfg = model.config();
  const ModelParams& p = model.params();
  if (opt.T < 1) throw std::invalid_argument("run_episode: T must be >= 1");
  if (opt.init_range < 0.0 || opt.init_range > 1.0)
    throw std::invalid_argument("run_episode: init range must be in [0, 1]");
  if (image.c != cfg.channels)
    throw std::invalid_argument("run_episode: image channels do not match");
  const bool stochastic = opt.mode == EpisodeMode::kStochastic;
  if (stochastic && !opt.rng && !opt.forced_fixations)
    throw std::invalid_argument("run_episode: stochastic mode needs an rng");

  Trajectory traj;
  traj.steps.reserve(opt.T);
  traj.fixations.reserve(opt.T);
  if (opt.cache) {
    opt.cache->steps.clear();
    opt.cache->steps.resize(opt.T);
  }

  Vec2 fix;
  if (opt.forced_fixations) {
    if (static_cast<int>(opt.forced_fixations->size()) != opt.T)
      throw std::invalid_argument("run_episode: need T forced fixations");
    fix = (*opt.forced_fixations)[0];
  } else if (stochastic) {
    fix = {opt.rng->uniform(-opt.init_range, opt.init_range),
           opt.rng->uniform(-opt.init_range, opt.init_range)};
  } else {
    fix = {0.0, 0.0};
  }

  RecurrentState state = RecurrentState::zeros(cfg.lstm_layers, cfg.lstm_width);
  for (int t = 0; t < opt.T; ++t) {
    StepCache* sc = opt.cache ? &opt.cache->steps[t] : nullptr;
    traj.fixations.push_back(fix);

    GlimpsePyramid pyr = extract_pyramid(image, FixationPoint{fix}, cfg.glimpse);
    std::vector<Vec> feats(cfg.glimpse.n);
    if (sc) sc->cnn.resize(cfg.glimpse.n);
    for (int k = 0; k < cfg.glimpse.n; ++k)
      feats[k] = cnn_forward(pyr.patches[k], p.cnn[k], cfg,
                             sc ? &sc->cnn[k] : nullptr);

    Vec x = fuse(feats, fix, p, cfg, sc ? &sc->fuse : nullptr);
    auto [next_state, h_top] =
        recurrent_step(state, x, p.lstm, sc ? &sc->lstm : nullptr);
    state = std::move(next_state);

    StepOutput step = act(h_top, p, cfg, sc ? &sc->heads : nullptr);
    if (opt.forced_fixations) {
      if (t + 1 < opt.T) fix = (*opt.forced_fixations)[t + 1];
    } else if (stochastic) {
      step.sampled_fixation = sample_fixation(step.policy_mean, cfg.sigma,
                                              *opt.rng);
      fix = step.sampled_fixation;
    } else {
      fix = step.policy_mean;
    }
    traj.steps.push_back(std::move(step));
  }
  traj.final_state = std::move(state);
  return traj;
}

void backward_episode(const Model& model, const EpisodeCache& cache,
                      const TrajectoryGrad& grad, ModelParams& g) {
  const ModelConfig& cfg = model.config();
  const ModelParams& p = model.params();
  const int T = static_cast<int>(cache.steps.size());
  if (static_cast<int>(grad.d_mu.size()) != T ||
      static_cast<int>(grad.d_score.size()) != T)
    throw std::invalid_argument("backward_episode: gradient length mismatch");

  const int m = cfg.lstm_layers, H = cfg.lstm_width;
  std::vector<Vec> dh(m, Vec::Zero(H)), dc(m, Vec::Zero(H));
  const Vec2 zero2 = Vec2::Zero();
  const Vec zeroN;

  for (int t = T - 1; t >= 0; --t) {
    const StepCache& sc = cache.steps[t];
    const bool last = t == T - 1;
    Vec d_hm = act_backward(sc.heads, p, cfg, last ? grad.d_yx : zero2,
                            last ? grad.d_hw : zero2, grad.d_score[t],
                            last ? grad.d_class : zeroN, grad.d_mu[t], g);
    dh[m - 1] += d_hm;

    Vec dx;
    for (int l = m - 1; l >= 0; --l) {
      Vec du = lstm_cell_backward(sc.lstm[l], p.lstm[l], g.lstm[l], dh[l], dc[l]);
      if (l > 0)
        dh[l - 1] += du;
      else
        dx = std::move(du);
    }

    std::vector<Vec> dfeats;
    fuse_backward(dx, sc.fuse, p, cfg, g, dfeats);
    for (int k = 0; k < cfg.glimpse.n; ++k)
      cnn_backward(dfeats[k], sc.cnn[k], p.cnn[k], cfg, g.cnn[k]);
  }
}

// ---------------------------------------------------------------------------
// shape audit
// ---------------------------------------------------------------------------

ShapeAudit shape_audit(const Model& model) {
  const ModelConfig& cfg = model.config();
  const int su = cfg.glimpse.su;
  Tensor3 image(56, 56, cfg.channels, 0.25);

  EpisodeCache cache;
  EpisodeOptions opt;
  opt.T = 1;
  opt.mode = EpisodeMode::kDeterministic;
  opt.cache = &cache;
  Trajectory traj = run_episode(model, image, opt);

  auto expect = [](bool ok, const std::string& what) {
    if (!ok) throw std::logic_error("shape audit failed: " + what);
  };

  ShapeAudit a;
  a.scales = cfg.glimpse.n;
  a.crop_sides = cfg.glimpse.crop_sides();
  const auto [c1, c2, c3] = cfg.conv_channels;
  a.conv_maps = {{su, su, c1}, {su / 2, su / 2, c2}, {su / 2, su / 2, c3}};
  a.flatten_dim = cfg.flatten_dim();
  a.feature_dim = cfg.feature_dim;
  a.scale_fusion_in = cfg.glimpse.n * cfg.feature_dim;
  a.scale_fusion_out = cfg.feature_dim;
  a.location_in = 2;
  a.location_out = cfg.feature_dim;
  a.lstm_layers = cfg.lstm_layers;
  a.lstm_width = cfg.lstm_width;
  a.head_widths = {2, 2, 1, cfg.num_classes, 2};

  const StepCache& sc = cache.steps[0];
  expect(static_cast<int>(sc.cnn.size()) == a.scales, "scale count");
  for (const auto& cc : sc.cnn) {
    expect(cc.r1.rows() == su * su && cc.r1.cols() == c1, "conv1 map");
    expect(cc.r2.rows() == (su / 2) * (su / 2) && cc.r2.cols() == c2, "conv2 map");
    expect(cc.r3.rows() == (su / 2) * (su / 2) && cc.r3.cols() == c3, "conv3 map");
    expect(static_cast<int>(cc.p3.size()) == a.flatten_dim, "flatten width");
    expect(static_cast<int>(cc.fc_out.size()) == cfg.feature_dim, "cnn feature");
  }
  expect(static_cast<int>(sc.fuse.cat.size()) == a.scale_fusion_in,
         "scale fusion input");
  expect(static_cast<int>(sc.fuse.x.size()) == cfg.feature_dim, "fused width");
  expect(static_cast<int>(sc.lstm.size()) == cfg.lstm_layers, "lstm layers");
  for (const auto& lc : sc.lstm)
    expect(static_cast<int>(lc.h.size()) == cfg.lstm_width, "lstm width");
  expect(static_cast<int>(sc.heads.det_raw.size()) == 5, "detection head");
  if (cfg.has_classifier())
    expect(static_cast<int>(sc.heads.cls_prob.size()) == cfg.num_classes,
           "classifier head");
  expect(static_cast<int>(traj.steps.size()) == 1, "trajectory length");
  return a;
}

std::string ShapeAudit::to_string() const {
  std::ostringstream out;
  out << "scales: " << scales << " (crop sides";
  for (int s : crop_sides) out << " " << s;
  out << ")\n";
  for (std::size_t i = 0; i < conv_maps.size(); ++i)
    out << "conv" << i + 1 << ": " << conv_maps[i][0] << "x" << conv_maps[i][1]
        << "x" << conv_maps[i][2] << "\n";
  out << "flatten: " << flatten_dim << " -> fc: " << feature_dim << "\n";
  out << "scale fusion: " << scale_fusion_in << " -> " << scale_fusion_out
      << "\n";
  out << "location: " << location_in << " -> " << location_out << "\n";
  out << "recurrent: [" << lstm_width << "] x " << lstm_layers << "\n";
  out << "heads: yx " << head_widths[0] << ", hw " << head_widths[1]
      << ", score " << head_widths[2] << ", classes " << head_widths[3]
      << ", policy " << head_widths[4] << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'F', 'O', 'V', 'C', 'K', 'P', 'T', '1'};

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.glimpse.s0 = j.at("glimpse").at("s0").get<int>();
  cfg.glimpse.n = j.at("glimpse").at("n").get<int>();
  cfg.glimpse.sf = j.at("glimpse").at("sf").get<double>();
  cfg.glimpse.su = j.at("glimpse").at("su").get<int>();
  cfg.channels = j.at("channels").get<int>();
  const auto cc = j.at("conv_channels");
  cfg.conv_channels = {cc[0].get<int>(), cc[1].get<int>(), cc[2].get<int>()};
  cfg.conv_kernel = j.at("conv_kernel").get<int>();
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.fusion = fusion_from_string(j.at("fusion").get<std::string>());
  cfg.lstm_layers = j.at("lstm_layers").get<int>();
  cfg.lstm_width = j.at("lstm_width").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.sigma = j.at("sigma").get<double>();
  const auto cl = j.at("clip");
  cfg.clip.pos_lo = cl.at("pos")[0].get<double>();
  cfg.clip.pos_hi = cl.at("pos")[1].get<double>();
  cfg.clip.size_lo = cl.at("size")[0].get<double>();
  cfg.clip.size_hi = cl.at("size")[1].get<double>();
  cfg.clip.score_lo = cl.at("score")[0].get<double>();
  cfg.clip.score_hi = cl.at("score")[1].get<double>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta) {
  auto params = const_cast<Model&>(model).param_refs();
  json header;
  header["schema"] = meta.schema;
  header["config"] = json::parse(model.config_json());
  header["meta"] = {{"config_digest", model.config_digest()},
                    {"epoch", meta.epoch},
                    {"global_step", meta.global_step},
                    {"steps_T", meta.steps_T},
                    {"init_range", meta.init_range},
                    {"metrics", json::parse(meta.metrics_json)}};
  json plist = json::array();
  for (const auto& r : params)
    plist.push_back({{"name", r.name}, {"shape", r.shape}});
  header["params"] = plist;
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("save_checkpoint: cannot write " + path.string());
  out.write(kCkptMagic, 8);
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& r : params)
    out.write(reinterpret_cast<const char*>(r.data),
              static_cast<std::streamsize>(r.size * sizeof(double)));
  if (!out)
    throw std::runtime_error("save_checkpoint: write failed for " +
                             path.string());
}

Model load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string htext(hlen, '\0');
  if (!in.read(htext.data(), static_cast<std::streamsize>(hlen)))
    throw std::runtime_error("load_checkpoint: truncated header");
  json header = json::parse(htext);
  const int schema = header.value("schema", -1);
  if (schema != 1)
    throw std::runtime_error("load_checkpoint: unsupported schema version " +
                             std::to_string(schema));

  Model model(config_from_json(header.at("config")), /*seed=*/0);
  auto refs = model.param_refs();
  const auto& plist = header.at("params");
  if (plist.size() != refs.size())
    throw std::runtime_error("load_checkpoint: parameter list mismatch");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (plist[i].at("name").get<std::string>() != refs[i].name)
      throw std::runtime_error("load_checkpoint: parameter order mismatch at " +
                               refs[i].name);
    if (!in.read(reinterpret_cast<char*>(refs[i].data),
                 static_cast<std::streamsize>(refs[i].size * sizeof(double))))
      throw std::runtime_error("load_checkpoint: truncated data at " +
                               refs[i].name);
  }
  if (meta) {
    const auto& m = header.at("meta");
    meta->schema = schema;
    meta->config_digest = m.value("config_digest", "");
    meta->epoch = m.value("epoch", 0);
    meta->global_step = m.value("global_step", std::int64_t{0});
    meta->steps_T = m.value("steps_T", 10);
    meta->init_range = m.value("init_range", 0.3);
    meta->metrics_json = m.value("metrics", json::object()).dump();
  }
  return model;
}

std::uint64_t episode_mac_count(const ModelConfig& cfg, int T) {
  const std::uint64_t k2 = static_cast<std::uint64_t>(cfg.conv_kernel) *
                           cfg.conv_kernel;
  const std::uint64_t su = cfg.glimpse.su, s1 = su / 2;
  const auto [c1, c2, c3] = cfg.conv_channels;
  std::uint64_t cnn = su * su * k2 * cfg.channels * c1 +
                      s1 * s1 * k2 * static_cast<std::uint64_t>(c1) * c2 +
                      s1 * s1 * k2 * static_cast<std::uint64_t>(c2) * c3 +
                      static_cast<std::uint64_t>(cfg.flatten_dim()) *
                          cfg.feature_dim;
  std::uint64_t fusion =
      static_cast<std::uint64_t>(cfg.glimpse.n) * cfg.feature_dim *
          cfg.feature_dim +
      2ULL * cfg.feature_dim +
      (cfg.fusion == FusionMethod::kConcat
           ? 2ULL * cfg.feature_dim * cfg.feature_dim
           : 0ULL);
  std::uint64_t lstm = 0;
  for (int l = 0; l < cfg.lstm_layers; ++l) {
    const std::uint64_t in = l == 0 ? cfg.feature_dim : cfg.lstm_width;
    lstm += 4ULL * cfg.lstm_width * (in + cfg.lstm_width);
  }
  const std::uint64_t heads =
      static_cast<std::uint64_t>(5 + cfg.num_classes + 2) * cfg.lstm_width;
  return static_cast<std::uint64_t>(T) *
         (static_cast<std::uint64_t>(cfg.glimpse.n) * cnn + fusion + lstm +
          heads);
}

}  // namespace fovea
