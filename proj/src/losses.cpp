#include "fovea/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace fovea {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

}  // namespace

void iou_gradient(const BoundingBox& a, const BoundingBox& b, Vec2& d_yx,
                  Vec2& d_hw) {
  d_yx.setZero();
  d_hw.setZero();
  const double ay0 = a.yx(0), ax0 = a.yx(1);
  const double ay1 = ay0 + a.hw(0), ax1 = ax0 + a.hw(1);
  const double by0 = b.yx(0), bx0 = b.yx(1);
  const double by1 = by0 + b.hw(0), bx1 = bx0 + b.hw(1);

  const double iy = std::min(ay1, by1) - std::max(ay0, by0);
  const double ix = std::min(ax1, bx1) - std::max(ax0, bx0);
  if (iy <= 0.0 || ix <= 0.0) return;  // clamp region: flat

  const double inter = iy * ix;
  const double uni = a.hw.prod() + b.hw.prod() - inter;
  const double raw = inter / uni;
  if (raw <= kIouFloor || raw >= 1.0) return;  // clamped above/below

  // partials of the intersection extents w.r.t. a's corner and size
  const double diy_day0 = (ay0 > by0 ? -1.0 : 0.0) + (ay1 < by1 ? 1.0 : 0.0);
  const double dix_dax0 = (ax0 > bx0 ? -1.0 : 0.0) + (ax1 < bx1 ? 1.0 : 0.0);
  const double diy_dah = (ay1 < by1 ? 1.0 : 0.0);
  const double dix_daw = (ax1 < bx1 ? 1.0 : 0.0);

  const double dinter_day0 = ix * diy_day0;
  const double dinter_dax0 = iy * dix_dax0;
  const double dinter_dah = ix * diy_dah;
  const double dinter_daw = iy * dix_daw;

  // iou = inter / (areaA + areaB - inter)
  const double u2 = uni * uni;
  auto via = [&](double dinter, double darea) {
    return (dinter * uni - inter * (darea - dinter)) / u2;
  };
  d_yx(0) = via(dinter_day0, 0.0);
  d_yx(1) = via(dinter_dax0, 0.0);
  d_hw(0) = via(dinter_dah, a.hw(1));
  d_hw(1) = via(dinter_daw, a.hw(0));
}

double detection_loss(const BoundingBox& pred, const BoundingBox& gt,
                      const LossConfig& cfg, Vec2* d_yx, Vec2* d_hw) {
  if (cfg.sigma_o <= 0.0)
    throw std::invalid_argument("detection_loss: sigma_o must be > 0");
  const Vec2 err = pred.yx - gt.yx;
  const double inv2s2 = 1.0 / (2.0 * cfg.sigma_o * cfg.sigma_o);
  const double pos_term = err.squaredNorm() * inv2s2;
  const double overlap = iou(pred, gt);
  const double iou_term = -std::log(overlap);
  if (d_yx || d_hw) {
    Vec2 gy, gh;
    iou_gradient(pred, gt, gy, gh);
    if (d_yx) *d_yx = 2.0 * inv2s2 * err - gy / overlap;
    if (d_hw) *d_hw = -gh / overlap;
  }
  return pos_term + iou_term;
}

double classification_loss(const Vec& probs, int label, Vec* d_probs) {
  if (label < 0 || label >= probs.size())
    throw std::invalid_argument("classification_loss: label out of range");
  const double p = std::max(probs(label), 1e-12);
  if (d_probs) {
    *d_probs = Vec::Zero(probs.size());
    (*d_probs)(label) = -1.0 / p;
  }
  return -std::log(p);
}

RewardTrace compute_rewards(const Trajectory& traj, const BoundingBox& gt) {
  RewardTrace rt;
  rt.R.reserve(traj.steps.size());
  rt.b.reserve(traj.steps.size());
  for (const auto& step : traj.steps) {
    rt.R.push_back(iou(step.box, gt));
    rt.b.push_back(step.score);
  }
  return rt;
}

FixationLossParts fixation_loss(const Trajectory& traj,
                                const RewardTrace& rewards,
                                const BoundingBox& gt, const LossConfig& cfg,
                                TrajectoryGrad* grads, const LossMask& mask) {
  const int T = static_cast<int>(traj.steps.size());
  if (static_cast<int>(rewards.R.size()) != T ||
      static_cast<int>(rewards.b.size()) != T)
    throw std::invalid_argument("fixation_loss: reward trace length mismatch");
  if (cfg.sigma <= 0.0)
    throw std::invalid_argument("fixation_loss: sigma must be > 0");

  FixationLossParts parts;
  const double inv_s2 = 1.0 / (cfg.sigma * cfg.sigma);

  if (cfg.stochastic && mask.policy) {
    // fixation t (1-based, t >= 2) was sampled around step t-1's mean
    for (int t = 1; t < T; ++t) {
      const Vec2 mu = traj.steps[t - 1].policy_mean;
      const Vec2 pf = traj.fixations[t];
      const double adv = rewards.R[t] - rewards.b[t];
      const double logpi = -0.5 * inv_s2 * (pf - mu).squaredNorm() -
                           std::log(kTwoPi * cfg.sigma * cfg.sigma);
      parts.policy += -logpi * adv;
      if (grads)
        grads->d_mu[t - 1] += -adv * inv_s2 * (pf - mu);
    }
  }

  if (mask.score) {
    for (int t = 0; t < T; ++t) {
      const double diff = traj.steps[t].score - rewards.R[t];
      parts.score += diff * diff / T;
      if (grads) grads->d_score[t] += 2.0 * diff / T;
    }
  }

  if (cfg.awareness && mask.aware && T >= 2) {
    // the mean that generated the final fixation, emitted at step T-1
    const Vec2 mu_last = traj.steps[T - 2].policy_mean;
    const Vec2 diff = mu_last - box_center(gt);
    parts.aware = diff.squaredNorm();
    if (grads) grads->d_mu[T - 2] += 2.0 * diff;
  }
  return parts;
}

LossBreakdown hybrid_loss(const Trajectory& traj, const BoundingBox& gt,
                          std::optional<int> label, const LossConfig& cfg,
                          const RewardTrace* rewards, TrajectoryGrad* grads,
                          const LossMask& mask) {
  const int T = static_cast<int>(traj.steps.size());
  if (T == 0) throw std::invalid_argument("hybrid_loss: empty trajectory");
  const StepOutput& last = traj.steps[T - 1];
  const bool has_classifier = last.class_dist.size() > 0;
  if (label.has_value() && !has_classifier)
    throw std::invalid_argument("hybrid_loss: label given to a label-free model");
  if (!label.has_value() && has_classifier)
    throw std::invalid_argument("hybrid_loss: classifier output needs a label");

  if (grads)
    grads->resize(T, static_cast<int>(last.class_dist.size()));

  LossBreakdown out;
  if (mask.det) {
    Vec2 dyx, dhw;
    out.det = detection_loss(last.box, gt, cfg, grads ? &dyx : nullptr,
                             grads ? &dhw : nullptr);
    if (grads) {
      grads->d_yx = dyx;
      grads->d_hw = dhw;
    }
  }
  if (mask.cls && has_classifier) {
    Vec dp;
    out.cls = classification_loss(last.class_dist, *label,
                                  grads ? &dp : nullptr);
    if (grads) grads->d_class = dp;
  }

  RewardTrace local;
  if (!rewards) {
    local = compute_rewards(traj, gt);
    rewards = &local;
  }
  const FixationLossParts parts = fixation_loss(traj, *rewards, gt, cfg,
                                                grads, mask);
  out.policy = parts.policy;
  out.score = parts.score;
  out.aware = parts.aware;
  out.total = out.det + out.cls + out.policy + out.score + out.aware;
  return out;
}

}  // namespace fovea
