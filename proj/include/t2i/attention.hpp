#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "t2i/tensor.hpp"
#include "t2i/textdata.hpp"

namespace t2i {

/// Masked positions get this score before the softmax.
inline constexpr double kMaskedScore = -1e30;

/// e' = U e per item. U (Dh, D), e (B, D, T) -> (B, Dh, T).
Tensor project_words(const Tensor& U, const Tensor& e);

struct AttentionResult {
  Tensor context;  // (B, Dh, N)
  Tensor alpha;    // (B, T, N), each column sums to 1 over attendable words
};

/// mask holds B*T flags (row-major). h is (B, Dh, N).
AttentionResult word_context(const Tensor& words, const std::vector<std::uint8_t>& mask, const Tensor& h);

struct AttendedWord {
  std::string token;
  std::int64_t position = 0;
  double score = 0.0;
};

/// Score of word i is the mean of alpha[i, :] over subregions. Descending,
/// ties to the lower position, masked words skipped, at most k entries.
std::vector<std::vector<AttendedWord>> top_attended(const Tensor& alpha, const std::vector<std::uint8_t>& mask,
                                                    const std::vector<std::vector<std::string>>& tokens, int k);

/// Token strings for the word positions of a caption (EOS and padding left out).
std::vector<std::string> caption_tokens(const Vocabulary& vocab, const TokenizedCaption& caption);

/// Writes `<stem>.t2it` (alpha) and `<stem>.jsonl` (one line per item:
/// {"item", "caption", "stage", "ranking": "mean_over_subregions", "top": [...]})
/// with scores rounded to 6 decimals.
void write_attention_dump(const std::filesystem::path& dir, const std::string& stem, int stage, const Tensor& alpha,
                          const std::vector<std::vector<AttendedWord>>& top, const std::vector<std::string>& captions);

}  // namespace t2i
