#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace tswm {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kGammaMin = 1e-3;
inline constexpr double kGammaMax = 1.0 - 1e-3;

inline double clamp_gamma(double g) noexcept { return std::clamp(g, kGammaMin, kGammaMax); }

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// ln(1 + e^x) without overflow.
inline double softplus(double x) noexcept {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

/// Inverse of softplus for y > 0: ln(e^y - 1).
inline double inverse_softplus(double y) noexcept {
  if (y > 30.0) return y + std::log1p(-std::exp(-y));
  return std::log(std::expm1(y));
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

/// Numerically stable softmax into `out`.
inline void softmax(std::span<const double> logits, std::span<double> out) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& x : out) x /= total;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  softmax(logits, out);
  return out;
}

/// Shannon entropy in nats.
inline double entropy(std::span<const double> p) noexcept {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

} // namespace tswm
