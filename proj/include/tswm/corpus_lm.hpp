#pragma once

// Desk-scale stand-in for a pretrained language model: a first-order
// (previous-token) categorical model with an entropy-structured transition
// table and a unit-norm random embedding matrix. Everything is rebuilt from
// (V, d, model_seed, entropy_mix); the numbers are never serialized.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tswm/error.hpp"
#include "tswm/numeric.hpp"
#include "tswm/rng.hpp"

namespace tswm {

using TokenId = std::uint32_t;

enum class Category { LowEntropy, MidEntropy, HighEntropy };

inline constexpr std::string_view to_string(Category c) noexcept {
  switch (c) {
  case Category::LowEntropy: return "LOW_ENTROPY";
  case Category::MidEntropy: return "MID_ENTROPY";
  case Category::HighEntropy: return "HIGH_ENTROPY";
  }
  return "?";
}

enum class Origin { Prompt, Human, Unwatermarked, Watermarked, Attacked };

inline constexpr std::string_view to_string(Origin o) noexcept {
  switch (o) {
  case Origin::Prompt: return "PROMPT";
  case Origin::Human: return "HUMAN";
  case Origin::Unwatermarked: return "UNWATERMARKED";
  case Origin::Watermarked: return "WATERMARKED";
  case Origin::Attacked: return "ATTACKED";
  }
  return "?";
}

inline Origin origin_from_string(std::string_view s) {
  for (auto o : {Origin::Prompt, Origin::Human, Origin::Unwatermarked, Origin::Watermarked,
                 Origin::Attacked})
    if (to_string(o) == s) return o;
  throw InputError("unknown origin tag: " + std::string(s));
}

/// A token sequence. Generated sequences carry their context token first:
/// tokens[0] is the last prompt token, tokens[1..] the continuation.
struct TokenSeq {
  std::vector<TokenId> tokens;
  Origin origin = Origin::Unwatermarked;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const TokenSeq&) const = default;
};

/// The continuation of a generated sequence (everything after the context token).
inline std::span<const TokenId> continuation(const TokenSeq& s) {
  if (s.tokens.size() < 2) throw InputError("sequence has no continuation");
  return std::span<const TokenId>(s.tokens).subspan(1);
}

struct EntropyMix {
  double low = 0.20;
  double mid = 0.10;
  double high = 0.70;
  bool operator==(const EntropyMix&) const = default;
};

/// Read-only V x d embedding table with unit-norm rows. Detection needs
/// only this, never the model's transition table.
class EmbeddingTable {
public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t vocab, std::size_t dim, std::vector<double> data)
      : vocab_(vocab), dim_(dim), data_(std::move(data)) {}

  std::size_t vocab_size() const noexcept { return vocab_; }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const double> row(TokenId t) const {
    if (t >= vocab_) throw InputError("token id out of range: " + std::to_string(t));
    return {data_.data() + static_cast<std::size_t>(t) * dim_, dim_};
  }

  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const EmbeddingTable&) const = default;

private:
  std::size_t vocab_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

class SyntheticLM {
public:
  std::size_t vocab_size() const noexcept { return vocab_; }
  std::size_t embed_dim() const noexcept { return embeddings_.dim(); }
  std::uint64_t model_seed() const noexcept { return seed_; }
  const EntropyMix& entropy_mix() const noexcept { return mix_; }
  const EmbeddingTable& embeddings() const noexcept { return embeddings_; }
  const std::vector<Category>& categories() const noexcept { return categories_; }

  Category category(TokenId t) const {
    check(t);
    return categories_[t];
  }

  /// Topic cluster of a token; tables built by from_table have one topic.
  std::size_t topic(TokenId t) const {
    check(t);
    return topics_.empty() ? 0 : topics_[t];
  }

  /// Next-token distribution after `prev`.
  std::span<const double> probs(TokenId prev) const {
    check(prev);
    return {table_.data() + static_cast<std::size_t>(prev) * vocab_, vocab_};
  }

  /// log(max(p, 1e-12)) of the row, precomputed.
  std::span<const double> log_probs(TokenId prev) const {
    check(prev);
    return {log_table_.data() + static_cast<std::size_t>(prev) * vocab_, vocab_};
  }

  bool operator==(const SyntheticLM&) const = default;

  /// A model from an explicit row-stochastic V x V table and V x d
  /// embedding rows (normalized here). Categories are measured from row
  /// entropies. model_seed is recorded but not used.
  static SyntheticLM from_table(std::size_t vocab, std::vector<double> table, std::size_t dim,
                                std::vector<double> embeddings, std::uint64_t model_seed = 0);

  friend SyntheticLM build_model(std::size_t, std::size_t, std::uint64_t, EntropyMix);

private:
  void check(TokenId t) const {
    if (t >= vocab_) throw InputError("token id out of range: " + std::to_string(t));
  }

  std::size_t vocab_ = 0;
  std::uint64_t seed_ = 0;
  EntropyMix mix_{};
  std::vector<double> table_;
  std::vector<double> log_table_;
  std::vector<Category> categories_;
  std::vector<std::uint32_t> topics_;
  EmbeddingTable embeddings_;
};

namespace detail {

inline void normalize(std::vector<double>& p) {
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& x : p) x /= s;
}

inline void blend_uniform(std::vector<double>& p, double w) {
  const double u = 1.0 / static_cast<double>(p.size());
  for (double& x : p) x = (1.0 - w) * x + w * u;
}

inline void sharpen(std::vector<double>& p, double power) {
  for (double& x : p) x = std::pow(x, power);
  normalize(p);
}

// k distinct ids drawn from pool (pool.size() >= k).
inline std::vector<TokenId> distinct_ids(Rng& rng, const std::vector<TokenId>& pool, std::size_t k) {
  std::vector<TokenId> out;
  while (out.size() < k) {
    const auto t = pool[rng.below(pool.size())];
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

// Every row keeps this much mass inside its own topic unless the entropy
// floor of a flat row forces it lower.
inline constexpr double kTopicPersistence = 0.999;
inline constexpr std::size_t kMaxTopics = 4;

inline constexpr double kTopicWeight = 1.0;
inline constexpr double kCategoryWeight = 0.6;
// Relative weight of low-entropy tokens as successors of high-entropy rows.
// Many rarely visited concentrated rows keep the fixed-key green fraction of
// their dominant bigrams from biasing unwatermarked scores.
inline constexpr double kLowEntryWeight = 0.1;

// Most topics (<= kMaxTopics) whose flat entry-weighted in-topic row still
// clears the high-entropy floor 0.8 ln V with a 0.1 nat margin.
inline std::size_t topic_count(std::size_t vocab, double low_fraction) {
  const double v = static_cast<double>(vocab);
  const double target = 0.8 * std::log(v) + 0.1;
  auto flat_entropy = [&](std::size_t k) {
    const double n = v / static_cast<double>(k);
    const double nl = low_fraction * n, nh = n - nl;
    const double w = nh + kLowEntryWeight * nl;
    double h = 0.0;
    if (nh > 0.0) h += nh / w * std::log(w);
    if (nl > 0.0) h += kLowEntryWeight * nl / w * std::log(w / kLowEntryWeight);
    return h;
  };
  std::size_t k = kMaxTopics;
  while (k > 1 && flat_entropy(k) < target) --k;
  return k;
}

inline void add_uniform(std::vector<double>& p, const std::vector<TokenId>& ids, double mass) {
  for (TokenId t : ids) p[t] += mass / static_cast<double>(ids.size());
}

// Dominant in-topic successor with >= 0.9 mass, two secondaries from other
// topics, thin uniform tail.
inline std::vector<double> low_entropy_row(Rng& rng, std::size_t vocab, const std::vector<TokenId>& near,
                                           const std::vector<TokenId>& far) {
  const auto dom = distinct_ids(rng, near, 1);
  const auto sec = distinct_ids(rng, far.size() >= 2 ? far : near, 2);
  const double dominant = 0.97 + 0.02 * rng.uniform();
  double tail = 0.2 * (1.0 - dominant);
  for (;;) {
    std::vector<double> p(vocab, tail / static_cast<double>(vocab));
    const double rest = 1.0 - dominant - tail;
    p[dom[0]] += dominant;
    p[sec[0]] += 0.5 * rest;
    p[sec[1]] += 0.5 * rest;
    normalize(p);
    if (entropy(p) <= 0.95) return p;
    tail *= 0.5;
  }
}

inline std::vector<double> mid_entropy_row(Rng& rng, std::size_t vocab, const std::vector<TokenId>& near,
                                           const std::vector<TokenId>& topic) {
  const double hi = 0.8 * std::log(static_cast<double>(vocab));
  const std::size_t k = std::min(std::clamp<std::size_t>(vocab / 8, 4, 64), near.size());
  const auto ids = distinct_ids(rng, near, k);
  std::vector<double> p(vocab, 0.0);
  std::vector<double> w(k);
  for (double& x : w) x = rng.gamma(1.0);
  const double ws = std::accumulate(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < k; ++i) p[ids[i]] += 0.9 * w[i] / ws;
  add_uniform(p, topic, 0.1 - (1.0 - kTopicPersistence));
  for (double& x : p) x += (1.0 - kTopicPersistence) / static_cast<double>(vocab);
  normalize(p);
  // Keep strictly inside (1, 0.8 ln V) with a margin on both sides.
  for (int it = 0; it < 200; ++it) {
    const double h = entropy(p);
    if (h <= 1.05) blend_uniform(p, 0.2);
    else if (h >= hi - 0.05) sharpen(p, 1.25);
    else break;
  }
  return p;
}

// Dirichlet-flat within and outside the topic, then blended toward a flat
// in-topic row in small steps until the entropy floor holds. `entry` scales
// each successor's expected share.
inline std::vector<double> high_entropy_row(Rng& rng, std::size_t vocab, const std::vector<TokenId>& topic,
                                            const std::vector<double>& entry) {
  const double floor = 0.8 * std::log(static_cast<double>(vocab)) + 0.01;
  std::vector<double> p(vocab);
  for (std::size_t v = 0; v < vocab; ++v) p[v] = rng.gamma(10.0) * entry[v];
  std::vector<bool> inside(vocab, false);
  for (TokenId t : topic) inside[t] = true;
  double in = 0.0, out = 0.0;
  for (std::size_t v = 0; v < vocab; ++v) (inside[v] ? in : out) += p[v];
  if (out > 0.0 && topic.size() < vocab)
    for (std::size_t v = 0; v < vocab; ++v)
      p[v] *= inside[v] ? kTopicPersistence / in : (1.0 - kTopicPersistence) / out;
  normalize(p);
  // blend toward a flat entry-weighted in-topic row so persistence is kept
  std::vector<double> flat(vocab, 0.0);
  double in_w = 0.0;
  for (TokenId t : topic) in_w += entry[t];
  for (TokenId t : topic) flat[t] = kTopicPersistence * entry[t] / in_w;
  for (double& x : flat) x += (1.0 - kTopicPersistence) / static_cast<double>(vocab);
  for (int it = 0; entropy(p) < floor; ++it) {
    // the flat target alone may sit below the floor for small topics
    if (it >= 100) blend_uniform(p, 0.1);
    else
      for (std::size_t v = 0; v < vocab; ++v) p[v] = 0.9 * p[v] + 0.1 * flat[v];
  }
  return p;
}

} // namespace detail

/// Build the synthetic model. Pure function of its arguments.
///
/// Tokens fall into a few topics. Rows keep most mass inside the current
/// topic, so a continuation's sentence embedding reflects its prompt.
/// Concentrated rows hand off to high-entropy tokens so the chain cannot
/// lock into short deterministic loops; a low-entropy row's secondary
/// successors lie in other topics, so pushing mass off its dominant
/// successor moves the text away from its topic. Embeddings mix a topic
/// centre, a category direction and isotropic noise.
inline SyntheticLM build_model(std::size_t vocab, std::size_t dim, std::uint64_t model_seed,
                               EntropyMix mix = {}) {
  if (vocab < 16) throw ConfigError("vocab_size must be >= 16");
  if (dim < 4) throw ConfigError("embed_dim must be >= 4");
  if (vocab > (std::size_t{1} << 24)) throw ConfigError("vocab_size too large");
  for (double f : {mix.low, mix.mid, mix.high})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("entropy_mix fractions must lie in [0,1]");
  if (std::abs(mix.low + mix.mid + mix.high - 1.0) > 1e-9)
    throw ConfigError("entropy_mix fractions must sum to 1");

  SyntheticLM m;
  m.vocab_ = vocab;
  m.seed_ = model_seed;
  m.mix_ = mix;

  auto shuffled = [&](std::uint64_t tag) {
    Rng rng(derive_seed(model_seed, tag));
    std::vector<TokenId> ids(vocab);
    std::iota(ids.begin(), ids.end(), TokenId{0});
    for (std::size_t i = vocab - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
    return ids;
  };

  // Category assignment: shuffled ids, then consecutive blocks.
  {
    const auto ids = shuffled(1);
    const auto n_low = static_cast<std::size_t>(std::llround(mix.low * static_cast<double>(vocab)));
    const auto n_mid = std::min(
        vocab - n_low, static_cast<std::size_t>(std::llround(mix.mid * static_cast<double>(vocab))));
    m.categories_.assign(vocab, Category::HighEntropy);
    for (std::size_t i = 0; i < vocab; ++i) {
      if (i < n_low) m.categories_[ids[i]] = Category::LowEntropy;
      else if (i < n_low + n_mid) m.categories_[ids[i]] = Category::MidEntropy;
    }
  }
  // Topic assignment: balanced, independent of category.
  const std::size_t K = detail::topic_count(vocab, mix.low);
  {
    const auto ids = shuffled(4);
    m.topics_.resize(vocab);
    for (std::size_t i = 0; i < vocab; ++i) m.topics_[ids[i]] = static_cast<std::uint32_t>(i % K);
  }

  std::vector<std::vector<TokenId>> members(K), high_in(K);
  std::vector<TokenId> high_all;
  for (std::size_t t = 0; t < vocab; ++t) {
    const auto id = static_cast<TokenId>(t);
    members[m.topics_[t]].push_back(id);
    if (m.categories_[t] == Category::HighEntropy) {
      high_in[m.topics_[t]].push_back(id);
      high_all.push_back(id);
    }
  }
  std::vector<TokenId> all(vocab);
  std::iota(all.begin(), all.end(), TokenId{0});
  std::vector<double> entry(vocab, 1.0);
  for (std::size_t t = 0; t < vocab; ++t)
    if (m.categories_[t] == Category::LowEntropy) entry[t] = detail::kLowEntryWeight;
  const std::size_t min_pool = std::clamp<std::size_t>(vocab / 8, 4, 64);
  // successor pools with fallbacks when high-entropy tokens are scarce
  auto near_pool = [&](std::size_t k) -> const std::vector<TokenId>& {
    if (high_in[k].size() >= 4) return high_in[k];
    if (high_all.size() >= min_pool) return high_all;
    return all;
  };
  std::vector<std::vector<TokenId>> far(K);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < K; ++j)
      if (j != k) far[k].insert(far[k].end(), high_in[j].begin(), high_in[j].end());

  m.table_.resize(vocab * vocab);
  m.log_table_.resize(vocab * vocab);
  const std::uint64_t rows_seed = derive_seed(model_seed, 2);
  for (std::size_t t = 0; t < vocab; ++t) {
    Rng rng(derive_seed(rows_seed, t));
    const std::size_t k = m.topics_[t];
    std::vector<double> row;
    switch (m.categories_[t]) {
    case Category::LowEntropy: row = detail::low_entropy_row(rng, vocab, near_pool(k), far[k]); break;
    case Category::MidEntropy: row = detail::mid_entropy_row(rng, vocab, near_pool(k), members[k]); break;
    case Category::HighEntropy: row = detail::high_entropy_row(rng, vocab, members[k], entry); break;
    }
    for (std::size_t v = 0; v < vocab; ++v) {
      m.table_[t * vocab + v] = row[v];
      m.log_table_[t * vocab + v] = std::log(std::max(row[v], kProbFloor));
    }
  }

  Rng rng(derive_seed(model_seed, 3));
  auto unit = [&] {
    std::vector<double> u(dim);
    for (double& x : u) x = rng.normal();
    const double n = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
    for (double& x : u) x /= n;
    return u;
  };
  std::vector<std::vector<double>> centre(K), cat_dir(3);
  for (auto& c : centre) c = unit();
  for (auto& c : cat_dir) c = unit();
  const double noise_sd = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> emb(vocab * dim);
  for (std::size_t t = 0; t < vocab; ++t) {
    double* r = emb.data() + t * dim;
    const auto& c = centre[m.topics_[t]];
    const auto& g = cat_dir[static_cast<std::size_t>(m.categories_[t])];
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      r[j] = detail::kTopicWeight * c[j] + detail::kCategoryWeight * g[j] + noise_sd * rng.normal();
      s += r[j] * r[j];
    }
    s = std::sqrt(s);
    for (std::size_t j = 0; j < dim; ++j) r[j] /= s;
  }
  m.embeddings_ = EmbeddingTable(vocab, dim, std::move(emb));
  return m;
}

/// Category implied by a row's entropy: <= 1 nat LOW, >= 0.8 ln V HIGH, else MID.
inline Category classify_entropy(std::span<const double> row) {
  const double h = entropy(row);
  if (h <= 1.0) return Category::LowEntropy;
  if (h >= 0.8 * std::log(static_cast<double>(row.size()))) return Category::HighEntropy;
  return Category::MidEntropy;
}

inline SyntheticLM SyntheticLM::from_table(std::size_t vocab, std::vector<double> table, std::size_t dim,
                                           std::vector<double> embeddings, std::uint64_t model_seed) {
  if (vocab == 0 || table.size() != vocab * vocab) throw ConfigError("table must be V x V");
  if (dim == 0 || embeddings.size() != vocab * dim) throw ConfigError("embeddings must be V x d");
  SyntheticLM m;
  m.vocab_ = vocab;
  m.seed_ = model_seed;
  m.categories_.resize(vocab);
  m.log_table_.resize(vocab * vocab);
  for (std::size_t t = 0; t < vocab; ++t) {
    std::span<double> row(table.data() + t * vocab, vocab);
    double sum = 0.0;
    for (double x : row) {
      if (!(x >= 0.0)) throw ConfigError("table entries must be non-negative");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("table rows must sum to 1");
    m.categories_[t] = classify_entropy(row);
    for (std::size_t v = 0; v < vocab; ++v) m.log_table_[t * vocab + v] = std::log(std::max(row[v], kProbFloor));
  }
  for (std::size_t t = 0; t < vocab; ++t) {
    double* r = embeddings.data() + t * dim;
    const double n = std::sqrt(std::inner_product(r, r + dim, r, 0.0));
    if (!(n > 0.0)) throw ConfigError("embedding rows must be nonzero");
    for (std::size_t j = 0; j < dim; ++j) r[j] /= n;
  }
  const auto frac = [&](Category c) {
    return static_cast<double>(std::count(m.categories_.begin(), m.categories_.end(), c)) /
           static_cast<double>(vocab);
  };
  m.mix_ = {frac(Category::LowEntropy), frac(Category::MidEntropy), frac(Category::HighEntropy)};
  m.table_ = std::move(table);
  m.embeddings_ = EmbeddingTable(vocab, dim, std::move(embeddings));
  return m;
}

inline std::vector<double> logits(const SyntheticLM& model, TokenId prev) {
  const auto row = model.log_probs(prev);
  return {row.begin(), row.end()};
}

inline std::vector<double> embed(const SyntheticLM& model, TokenId token) {
  const auto row = model.embeddings().row(token);
  return {row.begin(), row.end()};
}

/// Inverse-CDF draw from a normalized distribution with uniform u in [0,1).
inline TokenId sample_index(std::span<const double> p, double u) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  // Rounding left u above the accumulated total; take the last nonzero entry.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return static_cast<TokenId>(i);
  return 0;
}

inline void validate(const TokenSeq& seq, std::size_t vocab) {
  if (seq.tokens.empty()) throw InputError("empty token sequence");
  for (TokenId t : seq.tokens)
    if (t >= vocab) throw InputError("token id out of range: " + std::to_string(t));
}

/// Temperature-1 multinomial sampling. The output starts with the prompt's
/// last token followed by `length` sampled tokens. One uniform per step is
/// drawn from the gen_seed stream; watermarked generation consumes the same
/// stream the same way, so the two are coupled step by step.
inline TokenSeq sample_unwatermarked(const SyntheticLM& model, const TokenSeq& prompt,
                                     std::size_t length, std::uint64_t gen_seed,
                                     Origin origin = Origin::Unwatermarked) {
  if (prompt.tokens.empty()) throw InputError("empty prompt");
  if (length < 1) throw InputError("length must be >= 1");
  validate(prompt, model.vocab_size());
  Rng rng(gen_seed);
  TokenSeq out{{prompt.tokens.back()}, origin, gen_seed};
  out.tokens.reserve(length + 1);
  for (std::size_t t = 0; t < length; ++t)
    out.tokens.push_back(sample_index(model.probs(out.tokens.back()), rng.uniform()));
  return out;
}

/// exp of the mean negative log-likelihood of tokens 2..T.
inline double perplexity(const SyntheticLM& oracle, std::span<const TokenId> seq) {
  if (seq.size() < 2) throw InputError("perplexity needs at least 2 tokens");
  double nll = 0.0;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const auto row = oracle.probs(seq[i - 1]);
    if (seq[i] >= row.size()) throw InputError("token id out of range");
    nll -= std::log(std::max(row[seq[i]], kProbFloor));
  }
  return std::exp(nll / static_cast<double>(seq.size() - 1));
}

inline double perplexity(const SyntheticLM& oracle, const TokenSeq& seq) {
  return perplexity(oracle, std::span<const TokenId>(seq.tokens));
}

/// Deterministic prompts: a uniform start token followed by model samples.
inline std::vector<TokenSeq> make_prompts(const SyntheticLM& model, std::size_t count,
                                          std::size_t prompt_length, std::uint64_t seed) {
  if (prompt_length < 1) throw ConfigError("prompt_length must be >= 1");
  std::vector<TokenSeq> prompts;
  prompts.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Rng rng(s);
    TokenSeq p{{static_cast<TokenId>(rng.below(model.vocab_size()))}, Origin::Prompt, s};
    while (p.tokens.size() < prompt_length)
      p.tokens.push_back(sample_index(model.probs(p.tokens.back()), rng.uniform()));
    prompts.push_back(std::move(p));
  }
  return prompts;
}

// ---- persistence -----------------------------------------------------------

inline nlohmann::json model_header(const SyntheticLM& m) {
  return {{"vocab_size", m.vocab_size()},
          {"embed_dim", m.embed_dim()},
          {"model_seed", m.model_seed()},
          {"entropy_mix", {m.entropy_mix().low, m.entropy_mix().mid, m.entropy_mix().high}}};
}

inline SyntheticLM model_from_header(const nlohmann::json& j) {
  try {
    EntropyMix mix{};
    if (j.contains("entropy_mix")) {
      const auto& a = j.at("entropy_mix");
      if (!a.is_array() || a.size() != 3) throw ConfigError("entropy_mix must have 3 entries");
      mix = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    }
    return build_model(j.value("vocab_size", std::size_t{512}), j.value("embed_dim", std::size_t{32}),
                       j.value("model_seed", std::uint64_t{0}), mix);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model header: ") + e.what());
  }
}

inline nlohmann::json to_json(const TokenSeq& s) {
  return {{"tokens", s.tokens}, {"origin", std::string(to_string(s.origin))}, {"seed", s.seed}};
}

inline TokenSeq token_seq_from_json(const nlohmann::json& j) {
  try {
    return {j.at("tokens").get<std::vector<TokenId>>(),
            origin_from_string(j.at("origin").get<std::string>()), j.value("seed", std::uint64_t{0})};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad corpus record: ") + e.what());
  }
}

inline void write_jsonl(std::ostream& os, std::span<const TokenSeq> seqs) {
  for (const auto& s : seqs) os << to_json(s).dump() << '\n';
}

inline std::vector<TokenSeq> read_jsonl(std::istream& is) {
  std::vector<TokenSeq> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(token_seq_from_json(j));
  }
  return out;
}

} // namespace tswm
