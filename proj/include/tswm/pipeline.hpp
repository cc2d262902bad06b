#pragma once

// Watermarked autoregressive generation.
//
// Hard path (inference): per step, gamma/delta from the generators on the
// previous token's embedding, Bernoulli(gamma) green list from the stateless
// partition hash, green logits shifted by delta, multinomial draw.
//
// Soft path (training): the same loop with Gumbel-softmax memberships, a
// recorded RolloutTrace, and reverse-mode propagation of per-step upstream
// gradients (green mass, expected embedding, direct gamma terms) into both
// generators. Sampled tokens feed later steps as constants.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tswm/corpus_lm.hpp"
#include "tswm/error.hpp"
#include "tswm/generators.hpp"
#include "tswm/numeric.hpp"
#include "tswm/partition.hpp"
#include "tswm/rng.hpp"

namespace tswm {

/// l_v + membership_v * delta.
inline std::vector<double> bias_logits(std::span<const double> l, std::span<const double> membership,
                                       double delta) {
  if (l.size() != membership.size()) throw InputError("logit/membership length mismatch");
  if (!(delta >= 0.0)) throw InputError("delta must be non-negative");
  std::vector<double> out(l.size());
  for (std::size_t v = 0; v < l.size(); ++v) out[v] = l[v] + membership[v] * delta;
  return out;
}

struct WatermarkedOutput {
  TokenSeq text;               // context token followed by the continuation
  std::vector<double> gammas;  // per generated token
  std::vector<double> deltas;  // per generated token
  std::vector<bool> green;     // whether each generated token was green
};

inline WatermarkedOutput generate_watermarked(const SyntheticLM& model, const GeneratorNet& gamma_net,
                                              const GeneratorNet& delta_net, PartitionKey key,
                                              const TokenSeq& prompt, std::size_t length,
                                              std::uint64_t gen_seed, double temperature = 1.0) {
  if (prompt.tokens.empty()) throw InputError("empty prompt");
  if (length < 1) throw InputError("length must be >= 1");
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  validate(prompt, model.vocab_size());
  const std::size_t V = model.vocab_size();
  Rng rng(gen_seed);
  WatermarkedOutput out;
  out.text = {{prompt.tokens.back()}, Origin::Watermarked, gen_seed};
  out.text.tokens.reserve(length + 1);
  out.gammas.reserve(length);
  out.deltas.reserve(length);
  out.green.reserve(length);
  std::vector<double> scaled(V);
  std::vector<double> probs(V);
  std::vector<std::uint8_t> green(V);
  for (std::size_t t = 0; t < length; ++t) {
    const TokenId prev = out.text.tokens.back();
    const auto e = model.embeddings().row(prev);
    const double gamma = gamma_net.forward(e);
    const double delta = delta_net.forward(e);
    const std::uint64_t seed = step_seed(key, prev);
    const auto l = model.log_probs(prev);
    for (std::size_t v = 0; v < V; ++v) {
      green[v] = hard_membership(seed, static_cast<TokenId>(v), gamma) ? 1 : 0;
      scaled[v] = (l[v] + (green[v] ? delta : 0.0)) / temperature;
    }
    softmax(scaled, probs);
    const TokenId next = sample_index(probs, rng.uniform());
    out.text.tokens.push_back(next);
    out.gammas.push_back(gamma);
    out.deltas.push_back(delta);
    out.green.push_back(green[next] != 0);
  }
  return out;
}

/// How the per-token Gumbel pairs of the soft path are drawn.
enum class NoiseMode {
  /// g0 ~ Gumbel from the noise stream, g1 = g0 + logit(u) with u the
  /// partition hash uniform of the token. The difference g1 - g0 is exactly
  /// Logistic(0,1), as for two independent Gumbels, and the tau -> 0 limit of
  /// the soft membership equals the hard membership of the same step.
  Coupled,
  /// g0, g1 independent Gumbel(0,1) draws from the noise stream.
  Independent,
};

struct RolloutStep {
  TokenId prev = 0;
  TokenId token = 0;
  std::uint64_t seed = 0;
  double gamma = 0.0;
  double delta = 0.0;
  std::vector<double> soft;      // soft membership per vocabulary entry
  std::vector<double> g0;        // frozen Gumbel noise
  std::vector<double> g1;
  std::vector<double> probs;     // softmax of the biased logits
  std::vector<std::uint8_t> green; // realized hard green list
  double green_mass = 0.0;       // sum of probs over the hard green list
  std::vector<double> expected_embedding;
  ForwardCache gamma_cache;
  ForwardCache delta_cache;
};

struct RolloutTrace {
  TokenSeq text; // context token followed by the sampled continuation
  double tau = 0.1;
  double temperature = 1.0;
  std::uint64_t gen_seed = 0;
  std::uint64_t noise_seed = 0;
  std::vector<RolloutStep> steps;

  std::size_t size() const noexcept { return steps.size(); }
};

struct SoftRolloutOptions {
  double tau = 0.1;
  double temperature = 1.0;
  NoiseMode noise = NoiseMode::Coupled;
};

namespace detail {

inline double logistic_quantile(double u) noexcept {
  u = std::clamp(u, 0x1p-64, 1.0 - 0x1p-53);
  return std::log(u) - std::log1p(-u);
}

// Fill soft memberships, biased-logit softmax, green mass and expected
// embedding of one step given gamma, delta and the frozen noise.
inline void evaluate_step(const SyntheticLM& model, RolloutStep& s, double tau, double temperature) {
  const std::size_t V = model.vocab_size();
  const std::size_t d = model.embed_dim();
  const auto l = model.log_probs(s.prev);
  const double lg = logit(s.gamma);
  std::vector<double> scaled(V);
  for (std::size_t v = 0; v < V; ++v) {
    s.soft[v] = sigmoid((lg + s.g0[v] - s.g1[v]) / tau);
    scaled[v] = (l[v] + s.soft[v] * s.delta) / temperature;
  }
  softmax(scaled, s.probs);
  s.green_mass = 0.0;
  for (std::size_t v = 0; v < V; ++v)
    if (s.green[v]) s.green_mass += s.probs[v];
  s.expected_embedding.assign(d, 0.0);
  const auto E = model.embeddings().data();
  for (std::size_t v = 0; v < V; ++v) {
    const double p = s.probs[v];
    const double* row = E.data() + v * d;
    for (std::size_t j = 0; j < d; ++j) s.expected_embedding[j] += p * row[j];
  }
}

} // namespace detail

inline RolloutTrace soft_rollout(const SyntheticLM& model, const GeneratorNet& gamma_net,
                                 const GeneratorNet& delta_net, PartitionKey key, const TokenSeq& prompt,
                                 std::size_t length, std::uint64_t gen_seed, std::uint64_t noise_seed,
                                 const SoftRolloutOptions& opt = {}) {
  if (!(opt.tau > 0.0)) throw InputError("tau must be positive");
  if (!(opt.temperature > 0.0)) throw InputError("temperature must be positive");
  if (prompt.tokens.empty()) throw InputError("empty prompt");
  if (length < 1) throw InputError("length must be >= 1");
  validate(prompt, model.vocab_size());
  const std::size_t V = model.vocab_size();
  Rng rng(gen_seed);
  Rng noise(noise_seed);
  RolloutTrace tr;
  tr.text = {{prompt.tokens.back()}, Origin::Watermarked, gen_seed};
  tr.tau = opt.tau;
  tr.temperature = opt.temperature;
  tr.gen_seed = gen_seed;
  tr.noise_seed = noise_seed;
  tr.steps.resize(length);
  for (std::size_t t = 0; t < length; ++t) {
    RolloutStep& s = tr.steps[t];
    s.prev = tr.text.tokens.back();
    const auto e = model.embeddings().row(s.prev);
    s.gamma = gamma_net.forward(e, &s.gamma_cache);
    s.delta = delta_net.forward(e, &s.delta_cache);
    s.seed = step_seed(key, s.prev);
    s.soft.resize(V);
    s.g0.resize(V);
    s.g1.resize(V);
    s.probs.resize(V);
    s.green.resize(V);
    for (std::size_t v = 0; v < V; ++v) {
      const double u = membership_uniform(s.seed, static_cast<TokenId>(v));
      s.green[v] = u < s.gamma ? 1 : 0;
      s.g0[v] = noise.gumbel();
      s.g1[v] = opt.noise == NoiseMode::Coupled ? s.g0[v] + detail::logistic_quantile(u) : noise.gumbel();
    }
    detail::evaluate_step(model, s, opt.tau, opt.temperature);
    s.token = sample_index(s.probs, rng.uniform());
    tr.text.tokens.push_back(s.token);
  }
  return tr;
}

/// Recompute gamma, delta and every differentiable step quantity from
/// `pair` while holding the sampled tokens, realized green lists and noise
/// fixed. This is the function whose derivative backprop_* computes.
inline void reevaluate(const SyntheticLM& model, RolloutTrace& tr, const GeneratorPair& pair) {
  for (RolloutStep& s : tr.steps) {
    const auto e = model.embeddings().row(s.prev);
    s.gamma = pair.gamma.forward(e, &s.gamma_cache);
    s.delta = pair.delta.forward(e, &s.delta_cache);
    detail::evaluate_step(model, s, tr.tau, tr.temperature);
  }
}

/// Upstream gradients of a scalar loss with respect to the per-step trace
/// quantities. Empty vectors mean zero.
struct TraceGradient {
  std::vector<double> green_mass;                      // dL/d p_gr^(t)
  std::vector<std::vector<double>> expected_embedding; // dL/d e_bar_t
  std::vector<double> gamma;                           // direct dL/d gamma_t
  std::vector<double> delta;                           // direct dL/d delta_t
};

/// Per-step gradients with respect to gamma_t and delta_t after chaining
/// through softmax, logit biasing and the soft memberships.
struct StepParamGradient {
  std::vector<double> gamma;
  std::vector<double> delta;
};

inline StepParamGradient backprop_to_steps(const SyntheticLM& model, const RolloutTrace& tr,
                                           const TraceGradient& up) {
  const std::size_t T = tr.size();
  const std::size_t V = model.vocab_size();
  const std::size_t d = model.embed_dim();
  auto at = [](const std::vector<double>& v, std::size_t i) { return v.empty() ? 0.0 : v[i]; };
  StepParamGradient out{std::vector<double>(T, 0.0), std::vector<double>(T, 0.0)};
  const auto E = model.embeddings().data();
  std::vector<double> dprob(V);
  for (std::size_t t = 0; t < T; ++t) {
    const RolloutStep& s = tr.steps[t];
    const double a = at(up.green_mass, t);
    const bool has_emb = !up.expected_embedding.empty() && !up.expected_embedding[t].empty();
    double mean = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      double g = s.green[v] ? a : 0.0;
      if (has_emb) g += dot(up.expected_embedding[t], std::span<const double>(E.data() + v * d, d));
      dprob[v] = g;
      mean += s.probs[v] * g;
    }
    double dgamma = at(up.gamma, t);
    double ddelta = at(up.delta, t);
    const double dsoft_dgamma_scale = 1.0 / (tr.tau * s.gamma * (1.0 - s.gamma));
    for (std::size_t v = 0; v < V; ++v) {
      // dL/d(biased logit) through softmax with temperature.
      const double dl = s.probs[v] * (dprob[v] - mean) / tr.temperature;
      ddelta += dl * s.soft[v];
      const double dsoft = dl * s.delta;
      dgamma += dsoft * s.soft[v] * (1.0 - s.soft[v]) * dsoft_dgamma_scale;
    }
    out.gamma[t] = dgamma;
    out.delta[t] = ddelta;
  }
  return out;
}

/// Accumulate dL/dtheta for the pair into `grad` (pair flat order).
inline void backprop_to_params(const RolloutTrace& tr, const StepParamGradient& sg, const GeneratorPair& pair,
                               std::span<double> grad) {
  if (grad.size() != pair.param_count()) throw InputError("gradient buffer size mismatch");
  const std::size_t ng = pair.gamma.param_count();
  for (std::size_t t = 0; t < tr.size(); ++t) {
    pair.gamma.backward_accumulate(tr.steps[t].gamma_cache, sg.gamma[t], grad.subspan(0, ng));
    pair.delta.backward_accumulate(tr.steps[t].delta_cache, sg.delta[t], grad.subspan(ng));
  }
}

} // namespace tswm
