#include "t2i/attention.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>

#include "t2i/errors.hpp"
#include "t2i/ops.hpp"
#include "t2i/serialize.hpp"

namespace t2i {

Tensor project_words(const Tensor& U, const Tensor& e) {
  if (U.rank() != 2 || e.rank() != 3 || U.dim(1) != e.dim(1)) {
    throw ShapeError("project_words: U " + shape_str(U.shape()) + " incompatible with e " + shape_str(e.shape()));
  }
  std::vector<Tensor> items;
  for (std::int64_t b = 0; b < e.dim(0); ++b) items.push_back(matmul(U, select(e, b)));
  return stack(items);
}

AttentionResult word_context(const Tensor& words, const std::vector<std::uint8_t>& mask, const Tensor& h) {
  if (words.rank() != 3 || h.rank() != 3 || words.dim(0) != h.dim(0) || words.dim(1) != h.dim(1)) {
    throw ShapeError("word_context: words " + shape_str(words.shape()) + " incompatible with h " +
                     shape_str(h.shape()));
  }
  const std::int64_t B = words.dim(0), T = words.dim(2), N = h.dim(2);
  if (static_cast<std::int64_t>(mask.size()) != B * T) throw ShapeError("word_context: mask size mismatch");

  std::vector<Tensor> contexts, alphas;
  for (std::int64_t b = 0; b < B; ++b) {
    std::vector<double> bias(static_cast<std::size_t>(T * N), 0.0);
    bool any = false;
    for (std::int64_t t = 0; t < T; ++t) {
      if (mask[static_cast<std::size_t>(b * T + t)]) {
        any = true;
      } else {
        std::fill_n(bias.begin() + t * N, N, kMaskedScore);
      }
    }
    if (!any) throw MaskError("word_context: every word of item " + std::to_string(b) + " is masked");
    const Tensor wb = select(words, b);  // (Dh, T)
    Tensor scores = matmul(wb, select(h, b), true, false);  // (T, N)
    Tensor alpha = softmax(add(scores, Tensor({T, N}, std::move(bias))), 0);
    contexts.push_back(matmul(wb, alpha));
    alphas.push_back(alpha);
  }
  return {stack(contexts), stack(alphas)};
}

std::vector<std::vector<AttendedWord>> top_attended(const Tensor& alpha, const std::vector<std::uint8_t>& mask,
                                                    const std::vector<std::vector<std::string>>& tokens, int k) {
  if (k < 1) throw ConfigError("top_attended: k must be >= 1");
  if (alpha.rank() != 3) throw ShapeError("top_attended: alpha must be (B, T, N)");
  const std::int64_t B = alpha.dim(0), T = alpha.dim(1), N = alpha.dim(2);
  if (static_cast<std::int64_t>(mask.size()) != B * T || static_cast<std::int64_t>(tokens.size()) != B) {
    throw ShapeError("top_attended: mask or token list does not match alpha");
  }
  const auto v = alpha.values();
  std::vector<std::vector<AttendedWord>> out(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) {
    std::vector<AttendedWord> words;
    for (std::int64_t t = 0; t < T; ++t) {
      if (!mask[static_cast<std::size_t>(b * T + t)]) continue;
      double s = 0.0;
      for (std::int64_t j = 0; j < N; ++j) s += v[static_cast<std::size_t>((b * T + t) * N + j)];
      const auto& toks = tokens[static_cast<std::size_t>(b)];
      words.push_back({t < static_cast<std::int64_t>(toks.size()) ? toks[static_cast<std::size_t>(t)] : "<unk>", t,
                       s / static_cast<double>(N)});
    }
    std::stable_sort(words.begin(), words.end(),
                     [](const AttendedWord& a, const AttendedWord& c) { return a.score > c.score; });
    if (static_cast<int>(words.size()) > k) words.resize(static_cast<std::size_t>(k));
    out[static_cast<std::size_t>(b)] = std::move(words);
  }
  return out;
}

std::vector<std::string> caption_tokens(const Vocabulary& vocab, const TokenizedCaption& caption) {
  return decode_caption(vocab, caption);
}

void write_attention_dump(const std::filesystem::path& dir, const std::string& stem, int stage, const Tensor& alpha,
                          const std::vector<std::vector<AttendedWord>>& top, const std::vector<std::string>& captions) {
  save_tensor(dir / (stem + ".t2it"), alpha);
  std::ofstream out(dir / (stem + ".jsonl"), std::ios::binary);
  if (!out) throw IoError("cannot write attention sidecar in " + dir.string());
  for (std::size_t i = 0; i < top.size(); ++i) {
    nlohmann::ordered_json line;
    line["item"] = i;
    line["caption"] = i < captions.size() ? captions[i] : std::string();
    line["stage"] = stage;
    line["ranking"] = "mean_over_subregions";
    auto arr = nlohmann::ordered_json::array();
    for (const auto& w : top[i]) {
      arr.push_back({{"token", w.token}, {"position", w.position}, {"score", std::round(w.score * 1e6) / 1e6}});
    }
    line["top"] = std::move(arr);
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("failed writing attention sidecar in " + dir.string());
}

}  // namespace t2i
