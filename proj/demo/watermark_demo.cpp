// Watermark a continuation, detect it, then hide it inside human text
// and recover it with sliding-window detection.

#include <cstdio>

#include "tswm/attacks.hpp"
#include "tswm/detector.hpp"
#include "tswm/evalkit.hpp"
#include "tswm/pipeline.hpp"

using namespace tswm;

int main() {
  const SyntheticLM model = build_model(2048, 32, 2024);
  const PartitionKey key{0x7a6b5c4d};
  const GeneratorPair pair = init_pair(0.25, 2.0, 3, model.embed_dim());

  const TokenSeq prompt = make_prompts(model, 1, 20, 1)[0];
  const TokenSeq wm = generate_watermarked(model, pair.gamma, pair.delta, key, prompt, 200, 2).text;
  const TokenSeq plain = sample_unwatermarked(model, prompt, 200, 2);

  const auto hit = detect(wm, pair.gamma, model.embeddings(), key, 4.0);
  const auto miss = detect(plain, pair.gamma, model.embeddings(), key, 4.0);
  std::printf("watermarked:   z %6.2f  green %3.0f/%zu  verdict %d\n", hit.z, hit.green_count, hit.scored, hit.verdict);
  std::printf("unwatermarked: z %6.2f  green %3.0f/%zu  verdict %d\n", miss.z, miss.green_count, miss.scored, miss.verdict);

  const SentenceEmbedder f(model.embed_dim(), 16, 0x5e17);
  std::printf("similarity to the unwatermarked continuation: %.3f\n", similarity(wm, plain, f, model));

  const TokenSeq human = sample_unwatermarked(model, make_prompts(model, 1, 20, 3)[0], 599, 4, Origin::Human);
  const TokenSeq attacked = copy_paste(wm, human, 1, 5);
  const auto whole = detect(attacked, pair.gamma, model.embeddings(), key, 4.0);
  const auto windowed = detect_windowed(attacked.tokens, pair.gamma, model.embeddings(), key, 200, 4.0);
  std::printf("copy-paste, whole text:  z %6.2f\n", whole.z);
  std::printf("copy-paste, window 200:  z %6.2f at offset %zu\n", windowed.z, *windowed.window_offset);
}
