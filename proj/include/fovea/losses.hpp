#pragma once

#include <optional>
#include <vector>

#include "fovea/geometry.hpp"
#include "fovea/network.hpp"

namespace fovea {

struct LossConfig {
  double sigma_o = 0.1;   // detection position std-dev
  double sigma = 0.2;     // fixation policy std-dev (shared with the model)
  bool stochastic = true;   // S: policy-gradient term on sampled fixations
  bool awareness = true;    // A: pull the last fixation mean to the object
};

// Per-step rewards (clamped IoU) and baselines (predicted scores). Both are
// constants with respect to gradients.
struct RewardTrace {
  std::vector<double> R;
  std::vector<double> b;
};

struct LossBreakdown {
  double det = 0.0;
  double cls = 0.0;
  double policy = 0.0;   // REINFORCE term; can be negative
  double score = 0.0;    // reward-regression term, always active
  double aware = 0.0;
  double total = 0.0;
};

struct FixationLossParts {
  double policy = 0.0, score = 0.0, aware = 0.0;
};

// Which components contribute (value and gradients). Tests use this to probe
// one term at a time; training leaves everything on.
struct LossMask {
  bool det = true, cls = true, policy = true, score = true, aware = true;
};

// d iou(a, b) / d a.yx and d a.hw, zero wherever the clamp is active.
void iou_gradient(const BoundingBox& a, const BoundingBox& b, Vec2& d_yx,
                  Vec2& d_hw);

// Squared position error over 2 sigma_o^2 plus -log of the clamped IoU.
double detection_loss(const BoundingBox& pred, const BoundingBox& gt,
                      const LossConfig& cfg, Vec2* d_yx = nullptr,
                      Vec2* d_hw = nullptr);

// -log p[label], probabilities floored at 1e-12.
double classification_loss(const Vec& probs, int label, Vec* d_probs = nullptr);

RewardTrace compute_rewards(const Trajectory& traj, const BoundingBox& gt);

// Eq. 10/11 terms. The policy term covers fixations 2..T (the first fixation
// is drawn uniformly, not from the policy); gradients flow only through the
// policy means. Gradients accumulate into `grads` when given.
FixationLossParts fixation_loss(const Trajectory& traj,
                                const RewardTrace& rewards,
                                const BoundingBox& gt, const LossConfig& cfg,
                                TrajectoryGrad* grads = nullptr,
                                const LossMask& mask = {});

// Full objective. When `rewards` is null they are computed from the
// trajectory; passing them explicitly lets tests freeze the trace.
LossBreakdown hybrid_loss(const Trajectory& traj, const BoundingBox& gt,
                          std::optional<int> label, const LossConfig& cfg,
                          const RewardTrace* rewards = nullptr,
                          TrajectoryGrad* grads = nullptr,
                          const LossMask& mask = {});

}  // namespace fovea
