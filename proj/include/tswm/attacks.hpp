#pragma once

// Watermark-removal simulations: copy-paste dilution into human text and a
// resampling corruption that stands in for paraphrasing.

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tswm/corpus_lm.hpp"
#include "tswm/error.hpp"
#include "tswm/rng.hpp"

namespace tswm {

struct CopyPasteResult {
  TokenSeq text;
  // [begin, end) of each inserted segment in the output, in order
  std::vector<std::pair<std::size_t, std::size_t>> segments;
};

/// Lengths of k contiguous near-equal parts of n tokens, longer parts first.
inline std::vector<std::size_t> near_equal_split(std::size_t n, std::size_t k) {
  std::vector<std::size_t> out(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++out[i];
  return out;
}

/// Insert the whole watermarked sequence (k = 1) or three near-equal
/// contiguous pieces of it (k = 3) into the human text at distinct random
/// points, keeping segment order. The watermarked leading token travels
/// with the first segment, so every scored pair of the block survives k = 1.
inline CopyPasteResult copy_paste_placed(const TokenSeq& watermarked, const TokenSeq& human, std::size_t k,
                                         std::uint64_t attack_seed) {
  if (k != 1 && k != 3) throw InputError("copy-paste segment count must be 1 or 3");
  if (watermarked.tokens.size() < k) throw InputError("watermarked text shorter than the segment count");
  if (human.tokens.size() < watermarked.tokens.size())
    throw InputError("human text must be at least as long as the watermarked text");
  const std::size_t H = human.tokens.size();
  Rng rng(attack_seed);
  // k distinct insertion points in [0, H], sorted
  std::vector<std::size_t> points;
  while (points.size() < k) {
    const std::size_t p = rng.below(H + 1);
    if (std::find(points.begin(), points.end(), p) == points.end()) points.push_back(p);
  }
  std::sort(points.begin(), points.end());
  const auto lens = near_equal_split(watermarked.tokens.size(), k);

  CopyPasteResult r;
  r.text.origin = Origin::Attacked;
  r.text.seed = attack_seed;
  r.text.tokens.reserve(H + watermarked.tokens.size());
  std::size_t h = 0, w = 0;
  for (std::size_t s = 0; s < k; ++s) {
    r.text.tokens.insert(r.text.tokens.end(), human.tokens.begin() + static_cast<std::ptrdiff_t>(h),
                         human.tokens.begin() + static_cast<std::ptrdiff_t>(points[s]));
    h = points[s];
    const std::size_t begin = r.text.tokens.size();
    r.text.tokens.insert(r.text.tokens.end(), watermarked.tokens.begin() + static_cast<std::ptrdiff_t>(w),
                         watermarked.tokens.begin() + static_cast<std::ptrdiff_t>(w + lens[s]));
    w += lens[s];
    r.segments.emplace_back(begin, r.text.tokens.size());
  }
  r.text.tokens.insert(r.text.tokens.end(), human.tokens.begin() + static_cast<std::ptrdiff_t>(h), human.tokens.end());
  return r;
}

inline TokenSeq copy_paste(const TokenSeq& watermarked, const TokenSeq& human, std::size_t k,
                           std::uint64_t attack_seed) {
  return copy_paste_placed(watermarked, human, k, attack_seed).text;
}

/// Each position after the first is, with probability `rate`, replaced by a
/// fresh model sample given the (possibly already replaced) previous token.
/// The first token has no context and is kept.
inline TokenSeq corrupt(const TokenSeq& seq, double rate, std::uint64_t attack_seed, const SyntheticLM& model) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw InputError("corruption rate must lie in [0,1]");
  if (seq.tokens.empty()) throw InputError("empty sequence");
  validate(seq, model.vocab_size());
  TokenSeq out = seq;
  out.origin = Origin::Attacked;
  out.seed = attack_seed;
  Rng rng(attack_seed);
  for (std::size_t i = 1; i < out.tokens.size(); ++i) {
    // two draws per position regardless of outcome keep the stream aligned
    const double coin = rng.uniform();
    const double u = rng.uniform();
    if (coin < rate) out.tokens[i] = sample_index(model.probs(out.tokens[i - 1]), u);
  }
  return out;
}

inline nlohmann::json attack_metadata_copy_paste(std::size_t k, std::uint64_t seed) {
  return {{"kind", "copy_paste"}, {"k", k}, {"seed", seed}};
}

inline nlohmann::json attack_metadata_corrupt(double rate, std::uint64_t seed) {
  return {{"kind", "corrupt"}, {"rate", rate}, {"seed", seed}};
}

} // namespace tswm
