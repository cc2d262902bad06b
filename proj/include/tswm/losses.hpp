#pragma once

// Training objectives on a soft rollout:
//   detection loss  L_D = -z_hat, z_hat = (sum p_gr - sum gamma) / sqrt(sum gamma (1 - gamma))
//   semantic loss   L_S = -cos(f(reference), f(watermarked))
// where f is a fixed seeded projection of mean-pooled token embeddings and
// the watermarked side uses the trace's expected embeddings.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tswm/corpus_lm.hpp"
#include "tswm/error.hpp"
#include "tswm/numeric.hpp"
#include "tswm/pipeline.hpp"
#include "tswm/rng.hpp"

namespace tswm {

/// Sentence embedder: unit-normalized P * mean(embeddings), P a seeded
/// d_s x d Gaussian matrix.
class SentenceEmbedder {
public:
  SentenceEmbedder(std::size_t token_dim, std::size_t out_dim = 16, std::uint64_t seed = 0x5e17)
      : d_(token_dim), ds_(out_dim), seed_(seed), proj_(token_dim * out_dim) {
    if (token_dim == 0 || out_dim == 0) throw ConfigError("embedder dimensions must be positive");
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(token_dim));
    for (double& x : proj_) x = scale * rng.normal();
  }

  std::size_t token_dim() const noexcept { return d_; }
  std::size_t out_dim() const noexcept { return ds_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::span<const double> projection() const noexcept { return proj_; }

  /// P * x for a d-vector x.
  std::vector<double> project(std::span<const double> x) const {
    std::vector<double> out(ds_, 0.0);
    for (std::size_t i = 0; i < ds_; ++i) out[i] = dot({proj_.data() + i * d_, d_}, x);
    return out;
  }

  /// P^T * y for a d_s-vector y.
  std::vector<double> project_transpose(std::span<const double> y) const {
    std::vector<double> out(d_, 0.0);
    for (std::size_t i = 0; i < ds_; ++i)
      for (std::size_t j = 0; j < d_; ++j) out[j] += proj_[i * d_ + j] * y[i];
    return out;
  }

  bool operator==(const SentenceEmbedder&) const = default;

private:
  std::size_t d_;
  std::size_t ds_;
  std::uint64_t seed_;
  std::vector<double> proj_;
};

struct SentenceEmbedding {
  std::vector<double> raw;  // P * mean
  std::vector<double> unit; // raw / |raw|
  double norm = 0.0;
};

namespace detail {

inline SentenceEmbedding finish_embedding(const SentenceEmbedder& f, std::span<const double> mean) {
  SentenceEmbedding s;
  s.raw = f.project(mean);
  s.norm = norm2(s.raw);
  if (!(s.norm > 0.0)) throw NumericError("sentence embedding has zero norm");
  s.unit = s.raw;
  for (double& x : s.unit) x /= s.norm;
  return s;
}

} // namespace detail

inline SentenceEmbedding embed_sequence_full(const SentenceEmbedder& f,
                                             std::span<const std::vector<double>> embeddings) {
  if (embeddings.empty()) throw InputError("cannot embed an empty sequence");
  std::vector<double> mean(f.token_dim(), 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != f.token_dim()) throw InputError("embedding dimension mismatch");
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
  }
  for (double& x : mean) x /= static_cast<double>(embeddings.size());
  return detail::finish_embedding(f, mean);
}

inline std::vector<double> embed_sequence(const SentenceEmbedder& f,
                                          std::span<const std::vector<double>> embeddings) {
  return embed_sequence_full(f, embeddings).unit;
}

/// Sentence embedding of hard tokens.
inline SentenceEmbedding embed_tokens(const SentenceEmbedder& f, const EmbeddingTable& table,
                                      std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("cannot embed an empty sequence");
  if (table.dim() != f.token_dim()) throw InputError("embedding dimension mismatch");
  std::vector<double> mean(f.token_dim(), 0.0);
  for (TokenId t : tokens) {
    const auto row = table.row(t);
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += row[j];
  }
  for (double& x : mean) x /= static_cast<double>(tokens.size());
  return detail::finish_embedding(f, mean);
}

/// Cosine of the sentence embeddings of two token sequences (hard path).
inline double sequence_similarity(const SentenceEmbedder& f, const EmbeddingTable& table,
                                  std::span<const TokenId> a, std::span<const TokenId> b) {
  return dot(embed_tokens(f, table, a).unit, embed_tokens(f, table, b).unit);
}

struct LossWithGradient {
  double value = 0.0;
  TraceGradient grad;
};

struct DetectionLoss : LossWithGradient {
  double z_hat = 0.0;
};

/// L_D = -z_hat with its gradient with respect to every p_gr^(t) and the
/// direct dependence on gamma_t through the null mean and variance.
inline DetectionLoss detection_loss(const RolloutTrace& tr) {
  const std::size_t T = tr.size();
  if (T == 0) throw InputError("empty trace");
  double mass = 0.0;
  double mean = 0.0;
  double var = 0.0;
  for (const auto& s : tr.steps) {
    mass += s.green_mass;
    mean += s.gamma;
    var += s.gamma * (1.0 - s.gamma);
  }
  if (!(var > 1e-9)) throw NumericError("degenerate null variance in detection loss");
  const double sd = std::sqrt(var);
  const double num = mass - mean;
  DetectionLoss out;
  out.z_hat = num / sd;
  out.value = -out.z_hat;
  out.grad.green_mass.assign(T, -1.0 / sd);
  out.grad.gamma.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double g = tr.steps[t].gamma;
    // d z_hat / d gamma_t = -1/sd - num (1 - 2 gamma_t) / (2 var sd)
    const double dz = -1.0 / sd - num * (1.0 - 2.0 * g) / (2.0 * var * sd);
    out.grad.gamma[t] = -dz;
  }
  return out;
}

/// The relaxed z with realized green flags substituted for p_gr.
inline double relaxed_z_with_flags(const std::vector<bool>& flags, std::span<const double> gammas) {
  double mass = 0.0, mean = 0.0, var = 0.0;
  for (std::size_t t = 0; t < flags.size(); ++t) {
    mass += flags[t] ? 1.0 : 0.0;
    mean += gammas[t];
    var += gammas[t] * (1.0 - gammas[t]);
  }
  return (mass - mean) / std::sqrt(var);
}

/// L_S = -cos(f(ref continuation), f(expected embeddings of the trace)),
/// with its gradient with respect to each expected embedding.
/// `ref` must be the unwatermarked sample for the same prompt and gen seed.
inline LossWithGradient semantic_loss(const TokenSeq& ref, const RolloutTrace& tr, const SentenceEmbedder& f,
                                      const SyntheticLM& model) {
  if (tr.size() == 0) throw InputError("empty trace");
  if (ref.tokens.size() != tr.size() + 1 || ref.tokens.front() != tr.text.tokens.front() ||
      ref.seed != tr.gen_seed)
    throw UsageError("reference does not share the trace's prompt and sampling seed");
  const auto u = embed_tokens(f, model.embeddings(), continuation(ref));
  std::vector<std::vector<double>> ebar;
  ebar.reserve(tr.size());
  for (const auto& s : tr.steps) ebar.push_back(s.expected_embedding);
  const auto w = embed_sequence_full(f, ebar);
  const double c = dot(u.unit, w.unit);
  LossWithGradient out;
  out.value = -c;
  // dL/d raw_w = -(u - c w) / |raw_w|
  std::vector<double> draw(w.raw.size());
  for (std::size_t i = 0; i < draw.size(); ++i) draw[i] = -(u.unit[i] - c * w.unit[i]) / w.norm;
  auto dmean = f.project_transpose(draw);
  for (double& x : dmean) x /= static_cast<double>(tr.size());
  out.grad.expected_embedding.assign(tr.size(), dmean);
  return out;
}

} // namespace tswm
