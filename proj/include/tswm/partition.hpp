#pragma once

// Seeded green/red vocabulary partition. Hard membership is a stateless
// per-(step seed, token) hash so detection can query any token in O(1)
// without materializing the list; the multiplier constants and the mix are
// part of the interoperable format.

#include <cmath>
#include <cstdint>

#include "tswm/corpus_lm.hpp"
#include "tswm/error.hpp"
#include "tswm/numeric.hpp"
#include "tswm/rng.hpp"

namespace tswm {

inline constexpr std::uint64_t kPrevMultiplier = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kTokenMultiplier = 0xD2B74407B1CE6E93ULL;

/// Experiment-wide watermark secret.
struct PartitionKey {
  std::uint64_t global_key = 0;
  bool operator==(const PartitionKey&) const = default;
};

inline constexpr std::uint64_t step_seed(PartitionKey key, TokenId prev) noexcept {
  return mix64(key.global_key ^ ((static_cast<std::uint64_t>(prev) + 1) * kPrevMultiplier));
}

/// The uniform in [0, 1] deciding membership of token v under a step seed:
/// the mixed 64-bit word converted to double (round to nearest) times 2^-64.
inline double membership_uniform(std::uint64_t seed, TokenId v) noexcept {
  const std::uint64_t z = mix64(seed ^ ((static_cast<std::uint64_t>(v) + 1) * kTokenMultiplier));
  return static_cast<double>(z) * 0x1p-64;
}

inline bool hard_membership(std::uint64_t seed, TokenId v, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("gamma must lie in (0,1)");
  return membership_uniform(seed, v) < gamma;
}

struct SoftMembership {
  double value = 0.5;
  double g0 = 0.0;
  double g1 = 0.0;
  double tau = 1.0;
};

/// Gumbel-softmax relaxation of the two-way (green, red) choice:
/// sigmoid((ln g + g0 - ln(1-g) - g1) / tau), the log-space form of the
/// two-term softmax.
inline SoftMembership soft_membership(double gamma, double tau, double g0, double g1) {
  if (!(tau > 0.0)) throw InputError("temperature must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("gamma must lie in (0,1)");
  return {sigmoid((logit(gamma) + g0 - g1) / tau), g0, g1, tau};
}

/// d(soft membership)/d(gamma) for fixed noise.
inline double soft_membership_dgamma(const SoftMembership& m, double gamma) noexcept {
  return m.value * (1.0 - m.value) / (m.tau * gamma * (1.0 - gamma));
}

} // namespace tswm
