#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fovea/geometry.hpp"
#include "fovea/glimpse.hpp"
#include "fovea/rng.hpp"
#include "fovea/tensor.hpp"

namespace fovea {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FusionMethod { kAdd, kMultiply, kConcat };

FusionMethod fusion_from_string(const std::string& s);
std::string fusion_to_string(FusionMethod m);

// Structural configuration of the whole forward pass. Defaults follow the
// 56x56 digit-detection setup; the real-image variant swaps the glimpse
// parameters, uses 3 input channels and drops the classification head.
struct ModelConfig {
  GlimpseConfig glimpse{8, 3, 2.0, 16};
  int channels = 1;
  std::array<int, 3> conv_channels{32, 64, 4};
  int conv_kernel = 5;
  int feature_dim = 256;
  FusionMethod fusion = FusionMethod::kAdd;
  int lstm_layers = 3;
  int lstm_width = 256;
  int num_classes = 10;  // 0 disables the classification head
  double sigma = 0.2;    // fixation sampling std-dev
  ClipLimits clip;

  void validate() const;
  int pooled_side() const { return glimpse.su / 4; }  // pool after conv1, conv3
  int flatten_dim() const {
    return pooled_side() * pooled_side() * conv_channels[2];
  }
  bool has_classifier() const { return num_classes > 0; }
};

// --- parameter groups -------------------------------------------------------

struct ConvP {
  Mat W;  // (k*k*Cin) x Cout
  Vec b;  // Cout
};
struct DenseP {
  Mat W;  // out x in
  Vec b;  // out
};
struct LstmP {
  Mat W;  // 4H x (in + H), gate order i, f, g, o
  Vec b;  // 4H
};
struct CnnP {
  ConvP conv1, conv2, conv3;
  DenseP fc;
};

struct ModelParams {
  std::vector<CnnP> cnn;  // one independent learner per glimpse scale
  DenseP scale_fc;        // feat x (n * feat)
  DenseP loc_fc;          // feat x 2
  DenseP concat_fc;       // feat x 2*feat, only for concat fusion
  std::vector<LstmP> lstm;
  DenseP det;             // 5 x width -> yx, hw, score
  DenseP cls;             // N x width
  DenseP pol;             // 2 x width

  static ModelParams zeros_like(const ModelConfig& cfg);
};

// Flat view over every parameter array, fixed enumeration order. The same
// order drives the optimizer, serialization and gradient reduction.
struct TensorRef {
  std::string name;
  double* data;
  std::size_t size;
  std::vector<int> shape;
};
std::vector<TensorRef> enumerate_params(ModelParams& p);
std::size_t total_param_count(const ModelParams& p);

// --- episode state ----------------------------------------------------------

struct RecurrentState {
  std::vector<Vec> h, c;  // one entry per layer
  static RecurrentState zeros(int layers, int width);
};

struct StepOutput {
  BoundingBox box;
  double score = 0.0;
  Vec class_dist;        // empty when no classifier
  Vec2 policy_mean;      // mean of the next fixation
  Vec2 sampled_fixation; // draw from that mean (== mean when deterministic)
};

struct Trajectory {
  std::vector<StepOutput> steps;   // length T
  std::vector<Vec2> fixations;     // the fixations actually used, length T
  RecurrentState final_state;
};

// --- forward caches (kept for backprop) --------------------------------------

struct CnnCache {
  RMat x0;                // su^2 x Cin
  RMat r1;                // post-relu conv1
  std::vector<int> idx1;  // pool1 argmax (source pixel per out cell/channel)
  RMat p1;
  RMat r2, r3;
  std::vector<int> idx3;
  RMat p3;
  Vec fc_out;
};

struct FuseCache {
  Vec cat;       // concatenated scale features
  Vec xs, xp;    // appearance / location descriptors (post-relu)
  Vec xcat_in;   // concat-method input (only used for kConcat)
  Vec x;         // fused observation
  Vec2 fixation;
};

struct LstmCache {
  Vec u, h_prev, c_prev;
  Vec i, f, g, o, c, tanh_c, h;
};

struct HeadsCache {
  Vec h;
  Vec det_raw;   // 5
  Vec cls_prob;  // N (empty when disabled)
  Vec2 pol_sig;  // sigmoid(z)
};

struct StepCache {
  std::vector<CnnCache> cnn;
  FuseCache fuse;
  std::vector<LstmCache> lstm;
  HeadsCache heads;
};

struct EpisodeCache {
  std::vector<StepCache> steps;
};

// Loss gradients w.r.t. network outputs, aligned with trajectory steps
// (0-based step s emits the mean of fixation s+1).
struct TrajectoryGrad {
  std::vector<Vec2> d_mu;         // per step
  std::vector<double> d_score;    // per step
  Vec2 d_yx{0, 0}, d_hw{0, 0};    // final-step box
  Vec d_class;                    // w.r.t. final-step probabilities

  void resize(int T, int num_classes);
};

// --- the model ----------------------------------------------------------------

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return p_; }
  const ModelParams& params() const { return p_; }
  std::vector<TensorRef> param_refs() { return enumerate_params(p_); }

  std::string config_json() const;
  std::string config_digest() const;

 private:
  ModelConfig cfg_;
  ModelParams p_;
};

// --- spec operations ----------------------------------------------------------

Vec cnn_forward(const Tensor3& patch, const CnnP& p, const ModelConfig& cfg,
                CnnCache* cache = nullptr);

Vec fuse(const std::vector<Vec>& features, const Vec2& fixation,
         const ModelParams& p, const ModelConfig& cfg,
         FuseCache* cache = nullptr);

// One stacked-LSTM update; returns the new state and the top hidden vector.
std::pair<RecurrentState, Vec> recurrent_step(const RecurrentState& state,
                                              const Vec& x,
                                              const std::vector<LstmP>& layers,
                                              std::vector<LstmCache>* cache = nullptr);

StepOutput act(const Vec& h_top, const ModelParams& p, const ModelConfig& cfg,
               HeadsCache* cache = nullptr);

// Gaussian draw around the policy mean, clamped into the frame.
Vec2 sample_fixation(const Vec2& mu, double sigma, Rng& rng);

enum class EpisodeMode { kStochastic, kDeterministic };

struct EpisodeOptions {
  int T = 10;
  double init_range = 0.3;
  EpisodeMode mode = EpisodeMode::kStochastic;
  Rng* rng = nullptr;  // required for stochastic mode
  EpisodeCache* cache = nullptr;
  const std::vector<Vec2>* forced_fixations = nullptr;  // test hook
};

Trajectory run_episode(const Model& model, const Tensor3& image,
                       const EpisodeOptions& opt);

// Accumulate parameter gradients for one episode (reverse pass over `cache`).
void backward_episode(const Model& model, const EpisodeCache& cache,
                      const TrajectoryGrad& grad, ModelParams& grad_out);

// --- dimension audit -----------------------------------------------------------

struct ShapeAudit {
  int scales = 0;
  std::vector<int> crop_sides;
  std::vector<std::array<int, 3>> conv_maps;  // per conv layer: side, side, ch
  int flatten_dim = 0;
  int feature_dim = 0;
  int scale_fusion_in = 0, scale_fusion_out = 0;
  int location_in = 0, location_out = 0;
  int lstm_layers = 0, lstm_width = 0;
  std::array<int, 5> head_widths{};  // yx, hw, score, classes, policy
  std::string to_string() const;
};

// Dry-runs one episode and cross-checks every intermediate dimension.
ShapeAudit shape_audit(const Model& model);

// --- checkpoints ----------------------------------------------------------------

struct CheckpointMeta {
  int schema = 1;
  std::string config_digest;
  int epoch = 0;
  std::int64_t global_step = 0;
  int steps_T = 10;
  double init_range = 0.3;
  std::string metrics_json = "{}";
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta);
Model load_checkpoint(const std::filesystem::path& path,
                      CheckpointMeta* meta = nullptr);

// Analytic multiply-accumulate count of one episode's forward pass.
std::uint64_t episode_mac_count(const ModelConfig& cfg, int T);

}  // namespace fovea
