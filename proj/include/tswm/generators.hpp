#pragma once

// Two-layer perceptrons mapping a preceding-token embedding to a splitting
// ratio (GAMMA kind, sigmoid head clamped to [1e-3, 1-1e-3]) or a watermark
// logit (DELTA kind, softplus head), with hand-written reverse mode.
//
// Flat parameter order, shared by gradients and checkpoints:
//   W1 (h x d, row-major), b1 (h), W2 (h), b2 (1)
// and for a pair, the gamma net first, the delta net second.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tswm/error.hpp"
#include "tswm/numeric.hpp"
#include "tswm/rng.hpp"

namespace tswm {

enum class GeneratorKind { Gamma, Delta };

inline constexpr std::string_view to_string(GeneratorKind k) noexcept {
  return k == GeneratorKind::Gamma ? "GAMMA" : "DELTA";
}

inline GeneratorKind generator_kind_from_string(std::string_view s) {
  if (s == "GAMMA") return GeneratorKind::Gamma;
  if (s == "DELTA") return GeneratorKind::Delta;
  throw ConfigError("unknown generator kind: " + std::string(s));
}

/// Smallest delta the softplus head reports; keeps the output strictly positive.
inline constexpr double kDeltaMin = 1e-12;

class GeneratorNet;

/// Activations retained by forward() for backward().
struct ForwardCache {
  const GeneratorNet* net = nullptr;
  std::uint64_t version = 0;
  std::vector<double> input;
  std::vector<double> pre;    // W1 e + b1
  std::vector<double> hidden; // LeakyReLU(pre)
  double raw = 0.0;
  double output = 0.0;
  bool saturated = false; // clamp (GAMMA) or floor (DELTA) active: zero gradient
};

struct GeneratorGrad {
  std::vector<double> params; // flat, same order as GeneratorNet::params()
  std::vector<double> input;  // dL/de
};

class GeneratorNet {
public:
  GeneratorNet(GeneratorKind kind, std::size_t input_dim, std::size_t hidden_dim,
               double leaky_slope = 0.01)
      : kind_(kind), d_(input_dim), h_(hidden_dim), slope_(leaky_slope),
        params_(hidden_dim * input_dim + 2 * hidden_dim + 1, 0.0) {
    if (input_dim == 0 || hidden_dim == 0) throw ConfigError("generator dimensions must be positive");
    if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must lie in [0,1)");
  }

  GeneratorKind kind() const noexcept { return kind_; }
  std::size_t input_dim() const noexcept { return d_; }
  std::size_t hidden_dim() const noexcept { return h_; }
  double leaky_slope() const noexcept { return slope_; }
  std::size_t param_count() const noexcept { return params_.size(); }

  std::span<const double> params() const noexcept { return params_; }

  /// Writable parameters. Invalidates outstanding forward caches.
  std::span<double> mutable_params() noexcept {
    ++version_;
    return params_;
  }

  std::span<const double> w1() const noexcept { return {params_.data(), h_ * d_}; }
  std::span<const double> b1() const noexcept { return {params_.data() + h_ * d_, h_}; }
  std::span<const double> w2() const noexcept { return {params_.data() + h_ * d_ + h_, h_}; }
  double b2() const noexcept { return params_.back(); }

  double forward(std::span<const double> e, ForwardCache* cache = nullptr) const {
    if (e.size() != d_) throw InputError("embedding dimension mismatch");
    const double* W1 = params_.data();
    const double* B1 = W1 + h_ * d_;
    const double* W2 = B1 + h_;
    double raw = params_.back();
    if (cache) {
      cache->net = this;
      cache->version = version_;
      cache->input.assign(e.begin(), e.end());
      cache->pre.resize(h_);
      cache->hidden.resize(h_);
    }
    for (std::size_t i = 0; i < h_; ++i) {
      double a = B1[i];
      const double* row = W1 + i * d_;
      for (std::size_t j = 0; j < d_; ++j) a += row[j] * e[j];
      const double hid = a > 0.0 ? a : slope_ * a;
      raw += W2[i] * hid;
      if (cache) {
        cache->pre[i] = a;
        cache->hidden[i] = hid;
      }
    }
    double out = 0.0;
    bool saturated = false;
    if (kind_ == GeneratorKind::Gamma) {
      const double s = sigmoid(raw);
      out = clamp_gamma(s);
      saturated = out != s;
    } else {
      const double s = softplus(raw);
      out = std::max(s, kDeltaMin);
      saturated = out != s;
    }
    if (cache) {
      cache->raw = raw;
      cache->output = out;
      cache->saturated = saturated;
    }
    return out;
  }

  /// Adds upstream * d(output)/d(params) into grad (flat order) and returns
  /// the scalar d(output)/d(raw) factor applied.
  double backward_accumulate(const ForwardCache& cache, double upstream, std::span<double> grad,
                             std::span<double> input_grad = {}) const {
    check_cache(cache);
    if (grad.size() != params_.size()) throw InputError("gradient buffer size mismatch");
    double draw = 0.0;
    if (!cache.saturated) {
      if (kind_ == GeneratorKind::Gamma) {
        const double s = sigmoid(cache.raw);
        draw = upstream * s * (1.0 - s);
      } else {
        draw = upstream * sigmoid(cache.raw);
      }
    }
    if (draw == 0.0) return 0.0;
    double* gW1 = grad.data();
    double* gB1 = gW1 + h_ * d_;
    double* gW2 = gB1 + h_;
    const double* W1 = params_.data();
    const double* W2 = W1 + h_ * d_ + h_;
    grad.back() += draw;
    const bool want_input = input_grad.size() == d_;
    for (std::size_t i = 0; i < h_; ++i) {
      gW2[i] += draw * cache.hidden[i];
      const double da = draw * W2[i] * (cache.pre[i] > 0.0 ? 1.0 : slope_);
      gB1[i] += da;
      double* grow = gW1 + i * d_;
      for (std::size_t j = 0; j < d_; ++j) grow[j] += da * cache.input[j];
      if (want_input) {
        const double* row = W1 + i * d_;
        for (std::size_t j = 0; j < d_; ++j) input_grad[j] += da * row[j];
      }
    }
    return draw;
  }

  GeneratorGrad backward(const ForwardCache& cache, double upstream) const {
    GeneratorGrad g{std::vector<double>(params_.size(), 0.0), std::vector<double>(d_, 0.0)};
    backward_accumulate(cache, upstream, g.params, g.input);
    return g;
  }

  bool operator==(const GeneratorNet& o) const {
    return kind_ == o.kind_ && d_ == o.d_ && h_ == o.h_ && slope_ == o.slope_ && params_ == o.params_;
  }

private:
  void check_cache(const ForwardCache& c) const {
    if (c.net != this || c.version != version_)
      throw UsageError("stale forward cache: parameters changed or cache from another net");
  }

  GeneratorKind kind_;
  std::size_t d_;
  std::size_t h_;
  double slope_;
  std::vector<double> params_;
  std::uint64_t version_ = 0;
};

/// Kaiming-normal W1 and W2 (W2 scaled by 1e-2), zero b1, and b2 at the
/// inverse activation of `target`, so the net starts as a near-constant
/// function emitting `target`.
inline GeneratorNet init_to_constant(GeneratorKind kind, double target, std::uint64_t init_seed,
                                     std::size_t d, std::size_t h, double leaky_slope = 0.01) {
  if (kind == GeneratorKind::Gamma && !(target > 0.0 && target < 1.0))
    throw ConfigError("gamma target must lie in (0,1)");
  if (kind == GeneratorKind::Delta && !(target > 0.0 && std::isfinite(target)))
    throw ConfigError("delta target must be positive");
  GeneratorNet net(kind, d, h, leaky_slope);
  auto p = net.mutable_params();
  Rng rng(init_seed);
  const double gain = 2.0 / (1.0 + leaky_slope * leaky_slope);
  const double std1 = std::sqrt(gain / static_cast<double>(d));
  const double std2 = std::sqrt(gain / static_cast<double>(h)) * 1e-2;
  for (std::size_t i = 0; i < h * d; ++i) p[i] = std1 * rng.normal();
  for (std::size_t i = 0; i < h; ++i) p[h * d + i] = 0.0;
  for (std::size_t i = 0; i < h; ++i) p[h * d + h + i] = std2 * rng.normal();
  p.back() = kind == GeneratorKind::Gamma ? logit(target) : inverse_softplus(target);
  return net;
}

/// A net whose output is exactly `value` for every input.
inline GeneratorNet constant_net(GeneratorKind kind, double value, std::size_t d, std::size_t h,
                                 double leaky_slope = 0.01) {
  GeneratorNet net(kind, d, h, leaky_slope);
  net.mutable_params().back() = kind == GeneratorKind::Gamma ? logit(value) : inverse_softplus(value);
  return net;
}

/// The (gamma, delta) generator pair, optimized jointly.
struct GeneratorPair {
  GeneratorNet gamma;
  GeneratorNet delta;

  std::size_t param_count() const noexcept { return gamma.param_count() + delta.param_count(); }

  std::vector<double> flat() const {
    std::vector<double> out(gamma.params().begin(), gamma.params().end());
    out.insert(out.end(), delta.params().begin(), delta.params().end());
    return out;
  }

  void set_flat(std::span<const double> v) {
    if (v.size() != param_count()) throw InputError("flat parameter size mismatch");
    auto g = gamma.mutable_params();
    auto d = delta.mutable_params();
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(g.size()), g.begin());
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(g.size()), v.end(), d.begin());
  }

  bool operator==(const GeneratorPair&) const = default;
};

inline GeneratorPair init_pair(double gamma0, double delta0, std::uint64_t init_seed, std::size_t d,
                               std::size_t h = 64, double leaky_slope = 0.01) {
  return {init_to_constant(GeneratorKind::Gamma, gamma0, derive_seed(init_seed, 0), d, h, leaky_slope),
          init_to_constant(GeneratorKind::Delta, delta0, derive_seed(init_seed, 1), d, h, leaky_slope)};
}

// ---- checkpoint format ------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const GeneratorNet& n) {
  return {{"kind", std::string(to_string(n.kind()))},
          {"input_dim", n.input_dim()},
          {"hidden_dim", n.hidden_dim()},
          {"leaky_slope", n.leaky_slope()},
          {"params", std::vector<double>(n.params().begin(), n.params().end())}};
}

inline GeneratorNet generator_from_json(const nlohmann::json& j) {
  try {
    GeneratorNet n(generator_kind_from_string(j.at("kind").get<std::string>()),
                   j.at("input_dim").get<std::size_t>(), j.at("hidden_dim").get<std::size_t>(),
                   j.at("leaky_slope").get<double>());
    const auto p = j.at("params").get<std::vector<double>>();
    if (p.size() != n.param_count()) throw ConfigError("checkpoint parameter count mismatch");
    std::copy(p.begin(), p.end(), n.mutable_params().begin());
    return n;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad generator record: ") + e.what());
  }
}

inline nlohmann::json checkpoint_json(const GeneratorPair& pair, const nlohmann::json& extra = {}) {
  nlohmann::json j = {{"format", "tswm-generators"},
                      {"version", kCheckpointVersion},
                      {"param_order", "W1 row-major (h x d), b1, W2, b2; gamma net first, delta net second"},
                      {"nets", {to_json(pair.gamma), to_json(pair.delta)}}};
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

inline GeneratorPair pair_from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.value("format", std::string{}) != "tswm-generators")
      throw ConfigError("not a generator checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version");
    const auto& nets = j.at("nets");
    if (!nets.is_array() || nets.size() != 2) throw ConfigError("checkpoint must hold two nets");
    GeneratorPair p{generator_from_json(nets[0]), generator_from_json(nets[1])};
    if (p.gamma.kind() != GeneratorKind::Gamma || p.delta.kind() != GeneratorKind::Delta)
      throw ConfigError("checkpoint nets out of order");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad checkpoint: ") + e.what());
  }
}

} // namespace tswm
