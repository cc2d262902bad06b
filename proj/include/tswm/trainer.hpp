#pragma once

// Multi-objective training of the generator pair: batch-mean gradients of
// the detection loss and the semantic loss, combined by the closed-form
// two-task MGDA weight (or a fixed weighted sum), then one Adam step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tswm/corpus_lm.hpp"
#include "tswm/detector.hpp"
#include "tswm/error.hpp"
#include "tswm/generators.hpp"
#include "tswm/losses.hpp"
#include "tswm/parallel.hpp"
#include "tswm/pipeline.hpp"

namespace tswm {

// ---- gradient combination ----------------------------------------------------

/// Weight on g_D of the min-norm point of the segment [g_S, g_D].
/// nullopt when both gradients vanish (Pareto stationary, nothing to do).
inline std::optional<double> mgda_lambda(std::span<const double> gd, std::span<const double> gs) {
  if (gd.size() != gs.size()) throw InputError("gradient length mismatch");
  const double dd = dot(gd, gd), ss = dot(gs, gs), ds = dot(gd, gs);
  if (dd == 0.0 && ss == 0.0) return std::nullopt;
  if (ds >= dd) return 1.0;
  if (ds >= ss) return 0.0;
  // ((g_S - g_D) . g_S) / |g_D - g_S|^2, expanded to avoid a temporary
  const double lam = (ss - ds) / (dd - 2.0 * ds + ss);
  return std::clamp(lam, 0.0, 1.0);
}

inline std::vector<double> combine_gradients(std::span<const double> gd, std::span<const double> gs, double lambda) {
  if (gd.size() != gs.size()) throw InputError("gradient length mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("lambda must lie in [0,1]");
  std::vector<double> g(gd.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = lambda * gd[i] + (1.0 - lambda) * gs[i];
  return g;
}

/// Gradient of L_S + lambda_ws L_D.
inline std::vector<double> weighted_sum_grad(std::span<const double> gd, std::span<const double> gs, double lambda_ws) {
  if (gd.size() != gs.size()) throw InputError("gradient length mismatch");
  if (!(lambda_ws >= 0.0)) throw InputError("lambda_ws must be non-negative");
  std::vector<double> g(gs.begin(), gs.end());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda_ws * gd[i];
  return g;
}

inline double lambda_ws_from_moo(double lambda_moo) {
  if (!(lambda_moo >= 0.0 && lambda_moo < 1.0)) throw InputError("lambda_moo must lie in [0,1)");
  return lambda_moo / (1.0 - lambda_moo);
}

// ---- Adam ----------------------------------------------------------------------

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::span<double> params, std::span<const double> grad, AdamState& st, double lr) {
  if (params.size() != grad.size() || st.m.size() != grad.size() || st.v.size() != grad.size())
    throw InputError("adam: shape mismatch");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i]))
      throw NumericError("non-finite gradient at parameter " + std::to_string(i) + ", aborting");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * grad[i];
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * grad[i] * grad[i];
    params[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
  }
}

// ---- configuration -------------------------------------------------------------

enum class TrainMode { Mgda, WeightedSum };

inline std::string to_string(TrainMode m) { return m == TrainMode::Mgda ? "MGDA" : "WEIGHTED_SUM"; }

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "MGDA") return TrainMode::Mgda;
  if (s == "WEIGHTED_SUM") return TrainMode::WeightedSum;
  throw ConfigError("unknown training mode: " + s);
}

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t epochs = 2;
  double lr = 1e-4;
  double tau = 0.1;
  std::size_t gen_length = 200;
  std::size_t checkpoint_every = 100;
  TrainMode mode = TrainMode::Mgda;
  double lambda_ws = 4e-4;
  std::size_t train_prompts = 640;
  std::size_t val_prompts = 100;
  std::size_t prompt_length = 20;
  std::uint64_t data_seed = 1;
  std::uint64_t noise_seed = 2;
  std::uint64_t init_seed = 3;
  std::uint64_t key = 0x7a6b5c4d;
  double gamma0 = 0.25;
  double delta0 = 1.25;
  std::size_t hidden = 64;
  double leaky_slope = 0.01;
  std::size_t sentence_dim = 16;
  std::uint64_t embedder_seed = 0x5e17;
  NoiseMode noise = NoiseMode::Coupled;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (gen_length < 1) throw ConfigError("gen_length must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
    if (mode == TrainMode::WeightedSum && !(lambda_ws >= 0.0)) throw ConfigError("lambda_ws must be >= 0");
    if (val_prompts < 1) throw ConfigError("val_prompts must be >= 1");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},       {"epochs", c.epochs},
          {"lr", c.lr},                       {"tau", c.tau},
          {"gen_length", c.gen_length},       {"checkpoint_every", c.checkpoint_every},
          {"mode", to_string(c.mode)},        {"lambda_ws", c.lambda_ws},
          {"train_prompts", c.train_prompts}, {"val_prompts", c.val_prompts},
          {"prompt_length", c.prompt_length}, {"data_seed", c.data_seed},
          {"noise_seed", c.noise_seed},       {"init_seed", c.init_seed},
          {"key", c.key},                     {"gamma0", c.gamma0},
          {"delta0", c.delta0},               {"hidden", c.hidden},
          {"leaky_slope", c.leaky_slope},     {"sentence_dim", c.sentence_dim},
          {"embedder_seed", c.embedder_seed},
          {"noise", c.noise == NoiseMode::Coupled ? "COUPLED" : "INDEPENDENT"}};
}

/// Fields present in `j` override `c`; unknown fields are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "epochs") c.epochs = v.get<std::size_t>();
      else if (k == "lr") c.lr = v.get<double>();
      else if (k == "tau") c.tau = v.get<double>();
      else if (k == "gen_length") c.gen_length = v.get<std::size_t>();
      else if (k == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
      else if (k == "mode") c.mode = train_mode_from_string(v.get<std::string>());
      else if (k == "lambda_ws") c.lambda_ws = v.get<double>();
      else if (k == "train_prompts") c.train_prompts = v.get<std::size_t>();
      else if (k == "val_prompts") c.val_prompts = v.get<std::size_t>();
      else if (k == "prompt_length") c.prompt_length = v.get<std::size_t>();
      else if (k == "data_seed") c.data_seed = v.get<std::uint64_t>();
      else if (k == "noise_seed") c.noise_seed = v.get<std::uint64_t>();
      else if (k == "init_seed") c.init_seed = v.get<std::uint64_t>();
      else if (k == "key") c.key = v.get<std::uint64_t>();
      else if (k == "gamma0") c.gamma0 = v.get<double>();
      else if (k == "delta0") c.delta0 = v.get<double>();
      else if (k == "hidden") c.hidden = v.get<std::size_t>();
      else if (k == "leaky_slope") c.leaky_slope = v.get<double>();
      else if (k == "sentence_dim") c.sentence_dim = v.get<std::size_t>();
      else if (k == "embedder_seed") c.embedder_seed = v.get<std::uint64_t>();
      else if (k == "noise") {
        const auto s = v.get<std::string>();
        if (s == "COUPLED") c.noise = NoiseMode::Coupled;
        else if (s == "INDEPENDENT") c.noise = NoiseMode::Independent;
        else throw ConfigError("unknown noise mode: " + s);
      } else throw ConfigError("unknown train config field: " + k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- validation ------------------------------------------------------------------

struct ValidationPoint {
  double mean_z = 0.0;
  double mean_cos = 0.0;
  std::vector<double> z;
  std::vector<double> cos;
};

/// Seed of the i-th validation sample. Fixed across checkpoints so every
/// checkpoint is scored on identical draws.
inline std::uint64_t validation_seed(std::uint64_t data_seed, std::size_t i) {
  return derive_seed(derive_seed(data_seed, 0x7a11d), i);
}

/// Hard-path watermarking of every prompt; z from the detector, similarity
/// against the unwatermarked sample drawn with the same seed.
inline ValidationPoint validate_pair(const SyntheticLM& model, const GeneratorPair& pair, PartitionKey key,
                                     const std::vector<TokenSeq>& prompts, std::size_t length,
                                     std::uint64_t data_seed, const SentenceEmbedder& f, std::size_t jobs = 1) {
  if (prompts.empty()) throw ConfigError("empty validation set");
  ValidationPoint vp;
  vp.z.resize(prompts.size());
  vp.cos.resize(prompts.size());
  parallel_for(prompts.size(), jobs, [&](std::size_t i) {
    const std::uint64_t s = validation_seed(data_seed, i);
    const auto wm = generate_watermarked(model, pair.gamma, pair.delta, key, prompts[i], length, s);
    const auto ref = sample_unwatermarked(model, prompts[i], length, s);
    vp.z[i] = detect(wm.text, pair.gamma, model.embeddings(), key, 0.0).z;
    vp.cos[i] = sequence_similarity(f, model.embeddings(), continuation(wm.text), continuation(ref));
  });
  vp.mean_z = std::accumulate(vp.z.begin(), vp.z.end(), 0.0) / static_cast<double>(vp.z.size());
  vp.mean_cos = std::accumulate(vp.cos.begin(), vp.cos.end(), 0.0) / static_cast<double>(vp.cos.size());
  return vp;
}

// ---- training ----------------------------------------------------------------------

struct CheckpointRecord {
  std::size_t step = 0;
  GeneratorPair pair;
  double val_z = 0.0;
  double val_cos = 0.0;
  double score = 0.0;
};

struct TrainResult {
  ValidationPoint init;
  std::vector<CheckpointRecord> checkpoints;
  std::size_t selected = 0;
  std::vector<nlohmann::json> log;
  std::optional<GeneratorPair> final_pair;

  const CheckpointRecord& best() const { return checkpoints.at(selected); }
};

struct TrainHooks {
  std::size_t jobs = 1;
  std::function<void(const nlohmann::json&)> on_log;
};

struct PromptSplit {
  std::vector<TokenSeq> train;
  std::vector<TokenSeq> validation;
};

/// Enough prompts for the configured split, drawn from the data seed.
inline std::vector<TokenSeq> training_prompts(const SyntheticLM& model, const TrainConfig& c) {
  return make_prompts(model, c.train_prompts + c.val_prompts, c.prompt_length, derive_seed(c.data_seed, 0x9a1));
}

/// Seeded shuffle, then the first val_prompts go to validation and up to
/// train_prompts of the rest to training.
inline PromptSplit split_prompts(const std::vector<TokenSeq>& prompts, const TrainConfig& c) {
  if (prompts.empty()) throw ConfigError("empty prompt pool");
  if (prompts.size() <= c.val_prompts) throw ConfigError("prompt pool too small for the validation split");
  std::vector<std::size_t> idx(prompts.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(c.data_seed, 0x5b1));
  for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
  PromptSplit s;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (i < c.val_prompts) s.validation.push_back(prompts[idx[i]]);
    else if (s.train.size() < c.train_prompts) s.train.push_back(prompts[idx[i]]);
  }
  return s;
}

/// Mean of min-max normalized (z, cos) over checkpoints; ties keep the earliest.
inline std::size_t select_checkpoint(std::vector<CheckpointRecord>& cps) {
  if (cps.empty()) throw UsageError("no checkpoints to select from");
  auto norm = [&](auto get) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& c : cps) {
      lo = std::min(lo, get(c));
      hi = std::max(hi, get(c));
    }
    std::vector<double> out;
    for (const auto& c : cps) out.push_back(hi > lo ? (get(c) - lo) / (hi - lo) : 0.0);
    return out;
  };
  const auto nz = norm([](const CheckpointRecord& c) { return c.val_z; });
  const auto nc = norm([](const CheckpointRecord& c) { return c.val_cos; });
  std::size_t best = 0;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    cps[i].score = 0.5 * (nz[i] + nc[i]);
    if (cps[i].score > cps[best].score) best = i;
  }
  return best;
}

struct BatchGradients {
  std::vector<double> gd;
  std::vector<double> gs;
  double loss_d = 0.0;
  double loss_s = 0.0;
};

/// Batch-mean gradients of both losses. Per-sequence results land in
/// their own slots and are summed in index order.
inline BatchGradients batch_gradients(const SyntheticLM& model, const GeneratorPair& pair, const TrainConfig& c,
                                      const SentenceEmbedder& f, const std::vector<const TokenSeq*>& prompts,
                                      const std::vector<std::uint64_t>& gen_seeds,
                                      const std::vector<std::uint64_t>& noise_seeds, std::size_t jobs) {
  const std::size_t B = prompts.size();
  const std::size_t P = pair.param_count();
  std::vector<std::vector<double>> gd(B), gs(B);
  std::vector<double> ld(B), ls(B);
  const PartitionKey key{c.key};
  parallel_for(B, jobs, [&](std::size_t i) {
    const auto tr = soft_rollout(model, pair.gamma, pair.delta, key, *prompts[i], c.gen_length, gen_seeds[i],
                                 noise_seeds[i], {.tau = c.tau, .temperature = 1.0, .noise = c.noise});
    const auto ref = sample_unwatermarked(model, *prompts[i], c.gen_length, gen_seeds[i]);
    const auto dl = detection_loss(tr);
    const auto sl = semantic_loss(ref, tr, f, model);
    gd[i].assign(P, 0.0);
    gs[i].assign(P, 0.0);
    backprop_to_params(tr, backprop_to_steps(model, tr, dl.grad), pair, gd[i]);
    backprop_to_params(tr, backprop_to_steps(model, tr, sl.grad), pair, gs[i]);
    ld[i] = dl.value;
    ls[i] = sl.value;
  });
  BatchGradients out{std::vector<double>(P, 0.0), std::vector<double>(P, 0.0)};
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t k = 0; k < P; ++k) {
      out.gd[k] += gd[i][k];
      out.gs[k] += gs[i][k];
    }
    out.loss_d += ld[i];
    out.loss_s += ls[i];
  }
  const double inv = 1.0 / static_cast<double>(B);
  for (std::size_t k = 0; k < P; ++k) {
    out.gd[k] *= inv;
    out.gs[k] *= inv;
  }
  out.loss_d *= inv;
  out.loss_s *= inv;
  if (!std::isfinite(out.loss_d) || !std::isfinite(out.loss_s)) throw NumericError("loss diverged (non-finite)");
  return out;
}

inline TrainResult train(const TrainConfig& c, const SyntheticLM& model, const std::vector<TokenSeq>& prompts,
                         const GeneratorPair& init, const TrainHooks& hooks = {}) {
  c.validate();
  if (init.gamma.input_dim() != model.embed_dim() || init.delta.input_dim() != model.embed_dim())
    throw ConfigError("generator input dimension does not match the model");
  const auto split = split_prompts(prompts, c);
  if (split.train.empty()) throw ConfigError("empty training split");
  const SentenceEmbedder f(model.embed_dim(), c.sentence_dim, c.embedder_seed);
  const PartitionKey key{c.key};

  TrainResult res;
  auto emit = [&](nlohmann::json j) {
    if (hooks.on_log) hooks.on_log(j);
    res.log.push_back(std::move(j));
  };
  auto validate_now = [&](const GeneratorPair& p) {
    return validate_pair(model, p, key, split.validation, c.gen_length, c.data_seed, f, hooks.jobs);
  };

  GeneratorPair pair = init;
  res.init = validate_now(pair);
  emit({{"step", 0}, {"val_z", res.init.mean_z}, {"val_cos", res.init.mean_cos}, {"kind", "validation"}});

  AdamState adam(pair.param_count());
  std::vector<double> flat = pair.flat();
  const std::size_t n = split.train.size();
  const std::size_t per_epoch = (n + c.batch_size - 1) / c.batch_size;
  const std::size_t total = per_epoch * c.epochs;
  std::size_t step = 0;

  auto checkpoint = [&] {
    const auto vp = validate_now(pair);
    res.checkpoints.push_back({step, pair, vp.mean_z, vp.mean_cos, 0.0});
    emit({{"step", step}, {"val_z", vp.mean_z}, {"val_cos", vp.mean_cos}, {"kind", "validation"}});
  };

  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(c.data_seed, 0xe0 + epoch));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    const std::uint64_t gen_base = derive_seed(derive_seed(c.data_seed, 0x6e0), epoch);
    const std::uint64_t noise_base = derive_seed(c.noise_seed, epoch);

    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<const TokenSeq*> batch;
      std::vector<std::uint64_t> gseeds, nseeds;
      for (std::size_t i = b * c.batch_size; i < std::min(n, (b + 1) * c.batch_size); ++i) {
        batch.push_back(&split.train[order[i]]);
        gseeds.push_back(derive_seed(gen_base, order[i]));
        nseeds.push_back(derive_seed(noise_base, order[i]));
      }
      const auto g = batch_gradients(model, pair, c, f, batch, gseeds, nseeds, hooks.jobs);

      std::optional<double> lambda;
      std::vector<double> dir;
      if (c.mode == TrainMode::Mgda) {
        lambda = mgda_lambda(g.gd, g.gs);
        if (lambda) dir = combine_gradients(g.gd, g.gs, *lambda);
      } else {
        dir = weighted_sum_grad(g.gd, g.gs, c.lambda_ws);
      }
      ++step;
      if (!dir.empty()) {
        adam_step(flat, dir, adam, c.lr);
        pair.set_flat(flat);
      }
      nlohmann::json rec = {{"step", step},
                            {"epoch", epoch},
                            {"L_D", g.loss_d},
                            {"L_S", g.loss_s},
                            {"g_D_norm", norm2(g.gd)},
                            {"g_S_norm", norm2(g.gs)},
                            {"kind", "step"}};
      if (c.mode == TrainMode::Mgda) rec["lambda"] = lambda ? nlohmann::json(*lambda) : nlohmann::json(nullptr);
      else rec["lambda_ws"] = c.lambda_ws;
      if (dir.empty()) rec["stationary"] = true;
      emit(std::move(rec));
      if (step % c.checkpoint_every == 0 || step == total) checkpoint();
    }
  }
  res.final_pair = pair;
  res.selected = select_checkpoint(res.checkpoints);
  return res;
}

} // namespace tswm
