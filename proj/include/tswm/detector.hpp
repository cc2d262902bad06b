#pragma once

// Dynamic-gamma one-sided z-test. Detection re-derives each token's green
// flag from (key, previous token, gamma net, embedding table); it never
// touches the language model's transition table.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tswm/corpus_lm.hpp"
#include "tswm/error.hpp"
#include "tswm/generators.hpp"
#include "tswm/numeric.hpp"
#include "tswm/partition.hpp"

namespace tswm {

/// Below this many scored tokens the Gaussian approximation is weak.
inline constexpr std::size_t kMinConfidentLength = 25;

struct ZScore {
  double z = 0.0;
  double green_count = 0.0;
  double sum_gamma = 0.0;
  double sum_var = 0.0;
  bool low_confidence = false;
};

inline ZScore z_score(const std::vector<bool>& flags, std::span<const double> gammas) {
  if (flags.size() != gammas.size()) throw InputError("flags/gammas length mismatch");
  if (flags.empty()) throw InputError("z-score needs at least one token");
  ZScore r;
  for (std::size_t t = 0; t < flags.size(); ++t) {
    const double g = gammas[t];
    if (!(g >= kGammaMin && g <= kGammaMax)) throw InputError("gamma outside [1e-3, 1-1e-3]");
    r.green_count += flags[t] ? 1.0 : 0.0;
    r.sum_gamma += g;
    r.sum_var += g * (1.0 - g);
  }
  r.z = (r.green_count - r.sum_gamma) / std::sqrt(r.sum_var);
  r.low_confidence = flags.size() < kMinConfidentLength;
  return r;
}

struct DetectionResult {
  std::size_t scored = 0; // T: tokens with a predecessor
  double green_count = 0.0;
  double sum_gamma = 0.0;
  double sum_var = 0.0;
  double z = 0.0;
  double threshold = 0.0;
  bool verdict = false;
  bool low_confidence = false;
  std::vector<bool> flags;
  std::vector<double> gammas;
  std::optional<std::size_t> window_offset;
};

/// Per-token (flag, gamma) for tokens 2..T of `text`.
struct ScoredTokens {
  std::vector<bool> flags;
  std::vector<double> gammas;
};

inline ScoredTokens score_tokens(std::span<const TokenId> text, const GeneratorNet& gamma_net,
                                 const EmbeddingTable& embeddings, PartitionKey key) {
  if (text.size() < 2) throw InputError("detection needs at least 2 tokens");
  if (gamma_net.kind() != GeneratorKind::Gamma) throw UsageError("detection needs the gamma generator");
  ScoredTokens s;
  s.flags.reserve(text.size() - 1);
  s.gammas.reserve(text.size() - 1);
  for (std::size_t t = 1; t < text.size(); ++t) {
    const TokenId prev = text[t - 1];
    if (text[t] >= embeddings.vocab_size()) throw InputError("token id out of range");
    const double g = gamma_net.forward(embeddings.row(prev));
    s.gammas.push_back(g);
    s.flags.push_back(hard_membership(step_seed(key, prev), text[t], g));
  }
  return s;
}

namespace detail {

inline DetectionResult finish(ScoredTokens s, double threshold) {
  DetectionResult r;
  const auto z = z_score(s.flags, s.gammas);
  r.scored = s.flags.size();
  r.green_count = z.green_count;
  r.sum_gamma = z.sum_gamma;
  r.sum_var = z.sum_var;
  r.z = z.z;
  r.low_confidence = z.low_confidence;
  r.threshold = threshold;
  r.verdict = r.z > threshold;
  r.flags = std::move(s.flags);
  r.gammas = std::move(s.gammas);
  return r;
}

} // namespace detail

inline DetectionResult detect(std::span<const TokenId> text, const GeneratorNet& gamma_net,
                              const EmbeddingTable& embeddings, PartitionKey key, double threshold) {
  return detail::finish(score_tokens(text, gamma_net, embeddings, key), threshold);
}

inline DetectionResult detect(const TokenSeq& text, const GeneratorNet& gamma_net,
                              const EmbeddingTable& embeddings, PartitionKey key, double threshold) {
  return detect(std::span<const TokenId>(text.tokens), gamma_net, embeddings, key, threshold);
}

struct WindowedZ {
  double max_z = 0.0;
  std::size_t offset = 0; // index of the first scored token of the best window
};

/// Maximum z over every window of W consecutive scored tokens (stride 1).
inline WindowedZ windowed_z(const ScoredTokens& s, std::size_t window) {
  if (window < kMinConfidentLength) throw InputError("window must be >= 25");
  const std::size_t n = s.flags.size();
  if (window > n) throw InputError("window exceeds number of scored tokens");
  double green = 0.0;
  double mean = 0.0;
  double var = 0.0;
  auto add = [&](std::size_t i, double sign) {
    green += sign * (s.flags[i] ? 1.0 : 0.0);
    mean += sign * s.gammas[i];
    var += sign * s.gammas[i] * (1.0 - s.gammas[i]);
  };
  for (std::size_t i = 0; i < window; ++i) add(i, 1.0);
  WindowedZ best{(green - mean) / std::sqrt(var), 0};
  for (std::size_t start = 1; start + window <= n; ++start) {
    add(start - 1, -1.0);
    add(start + window - 1, 1.0);
    // Recompute exactly every so often to keep running sums from drifting.
    if (start % 1024 == 0) {
      green = mean = var = 0.0;
      for (std::size_t i = start; i < start + window; ++i) add(i, 1.0);
    }
    const double z = (green - mean) / std::sqrt(var);
    if (z > best.max_z) best = {z, start};
  }
  return best;
}

inline WindowedZ windowed_z(std::span<const TokenId> text, const GeneratorNet& gamma_net,
                            const EmbeddingTable& embeddings, PartitionKey key, std::size_t window) {
  if (text.size() < window + 1) throw InputError("window exceeds text length");
  return windowed_z(score_tokens(text, gamma_net, embeddings, key), window);
}

/// Detection restricted to the best window: z, counts and flags describe the
/// W scored tokens starting at `window_offset`.
inline DetectionResult detect_windowed(std::span<const TokenId> text, const GeneratorNet& gamma_net,
                                       const EmbeddingTable& embeddings, PartitionKey key, std::size_t window,
                                       double threshold) {
  if (text.size() < window + 1) throw InputError("window exceeds text length");
  auto s = score_tokens(text, gamma_net, embeddings, key);
  const auto w = windowed_z(s, window);
  const auto first = static_cast<std::ptrdiff_t>(w.offset);
  const auto last = first + static_cast<std::ptrdiff_t>(window);
  ScoredTokens slice{{s.flags.begin() + first, s.flags.begin() + last},
                     {s.gammas.begin() + first, s.gammas.begin() + last}};
  auto r = detail::finish(std::move(slice), threshold);
  r.window_offset = w.offset;
  return r;
}

struct AnnotatedToken {
  TokenId token = 0;
  bool green = false;
  double gamma = 0.0;
  double delta = 0.0;
};

/// Per scored token: green flag with the gamma used, plus delta for display.
inline std::vector<AnnotatedToken> annotate(std::span<const TokenId> text, const GeneratorNet& gamma_net,
                                            const GeneratorNet& delta_net, const EmbeddingTable& embeddings,
                                            PartitionKey key) {
  const auto s = score_tokens(text, gamma_net, embeddings, key);
  std::vector<AnnotatedToken> out;
  out.reserve(s.flags.size());
  for (std::size_t i = 0; i < s.flags.size(); ++i)
    out.push_back({text[i + 1], s.flags[i], s.gammas[i], delta_net.forward(embeddings.row(text[i]))});
  return out;
}

inline nlohmann::json to_json(const DetectionResult& r) {
  nlohmann::json j = {{"z", r.z},
                      {"green_count", r.green_count},
                      {"T", r.scored},
                      {"threshold", r.threshold},
                      {"verdict", r.verdict}};
  if (r.window_offset) j["window_offset"] = *r.window_offset;
  if (r.low_confidence) j["low_confidence"] = true;
  return j;
}

} // namespace tswm
