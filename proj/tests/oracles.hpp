// Test-only reference implementations, kept independent of the library's
// compute paths.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fovea/network.hpp"
#include "fovea/tensor.hpp"

namespace fovea::testing {

// Naive same-padding correlation, quadruple loop. Weights are addressed as
// w4(ky, kx, cin, cout) through the supplied functor.
inline Tensor3 naive_conv2d(
    const Tensor3& in, int k, int cout,
    const std::function<double(int, int, int, int)>& w4,
    const std::function<double(int)>& bias) {
  const int pad = k / 2;
  Tensor3 out(in.h, in.w, cout, 0.0);
  for (int r = 0; r < in.h; ++r)
    for (int c = 0; c < in.w; ++c)
      for (int co = 0; co < cout; ++co) {
        double acc = bias(co);
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int sr = r + ky - pad, sc = c + kx - pad;
            if (sr < 0 || sr >= in.h || sc < 0 || sc >= in.w) continue;
            for (int ci = 0; ci < in.c; ++ci)
              acc += in.at(sr, sc, ci) * w4(ky, kx, ci, co);
          }
        out.at(r, c, co) = acc;
      }
  return out;
}

// Scalar gate-by-gate LSTM step, loops only.
struct ScalarLstmOut {
  std::vector<double> h, c;
};
inline ScalarLstmOut scalar_lstm_step(const std::vector<double>& u,
                                      const std::vector<double>& h_prev,
                                      const std::vector<double>& c_prev,
                                      const Mat& W, const Vec& b) {
  const int H = static_cast<int>(h_prev.size());
  const int in = static_cast<int>(u.size());
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  ScalarLstmOut out;
  out.h.resize(H);
  out.c.resize(H);
  for (int j = 0; j < H; ++j) {
    double zi = b(j), zf = b(H + j), zg = b(2 * H + j), zo = b(3 * H + j);
    for (int t = 0; t < in; ++t) {
      zi += W(j, t) * u[t];
      zf += W(H + j, t) * u[t];
      zg += W(2 * H + j, t) * u[t];
      zo += W(3 * H + j, t) * u[t];
    }
    for (int t = 0; t < H; ++t) {
      zi += W(j, in + t) * h_prev[t];
      zf += W(H + j, in + t) * h_prev[t];
      zg += W(2 * H + j, in + t) * h_prev[t];
      zo += W(3 * H + j, in + t) * h_prev[t];
    }
    const double i = sig(zi), f = sig(zf), g = std::tanh(zg), o = sig(zo);
    out.c[j] = f * c_prev[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

// Mean of clamp(X, lo, hi) for X ~ N(mu, sigma^2).
inline double clamped_gaussian_mean(double mu, double sigma, double lo,
                                    double hi) {
  auto Phi = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  auto phi = [](double z) {
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
  };
  const double a = (lo - mu) / sigma, b = (hi - mu) / sigma;
  return lo * Phi(a) + hi * (1.0 - Phi(b)) + mu * (Phi(b) - Phi(a)) -
         sigma * (phi(b) - phi(a));
}

// Standard normal pdf, for the closed-form policy gradient.
inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
}

}  // namespace fovea::testing
