#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "t2i/image.hpp"

namespace t2i {

/// NFC normalization of UTF-8 text. Throws EncodingError on ill-formed input.
std::string nfc(std::string_view text);

/// NFC, then split on whitespace, Unicode punctuation, ASCII punctuation and
/// the Bengali dandas. Latin letters are lowercased.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kUnk = 1;
  static constexpr std::int64_t kEos = 2;

  Vocabulary();

  std::int64_t size() const { return static_cast<std::int64_t>(id_to_token_.size()); }
  /// UNK for anything not in the table.
  std::int64_t id(const std::string& token) const;
  const std::string& token(std::int64_t id) const;
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  int min_freq() const { return min_freq_; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// One token per line in id order, specials first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  friend Vocabulary build_vocab(const std::vector<std::vector<std::string>>&, int);
  void append(const std::string& token);

  std::unordered_map<std::string, std::int64_t> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_freq_ = 1;
};

Vocabulary build_vocab(const std::vector<std::vector<std::string>>& corpus, int min_freq);

struct TokenizedCaption {
  std::vector<std::int64_t> ids;  // exactly max_len entries
  std::int64_t length = 0;        // includes the EOS
  std::string raw;

  /// Words visible to attention: everything before the EOS.
  std::int64_t word_count() const { return length - 1; }
};

inline constexpr std::int64_t kDefaultMaxLen = 18;

TokenizedCaption encode_caption(const Vocabulary& vocab, const std::vector<std::string>& tokens,
                                std::int64_t max_len = kDefaultMaxLen, std::string raw = {});
/// Tokens before EOS, with UNK rendered as its special spelling.
std::vector<std::string> decode_caption(const Vocabulary& vocab, const TokenizedCaption& caption);

struct CaptionRecord {
  std::string image_path;
  std::vector<TokenizedCaption> captions;
  std::int64_t class_label = 0;
};

struct DatasetSplit {
  std::vector<CaptionRecord> train;
  std::vector<CaptionRecord> test;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

std::int64_t split_train_count(std::int64_t n, double train_fraction);
DatasetSplit split_dataset(std::vector<CaptionRecord> records, double train_fraction, std::uint64_t seed);

// ---- on-disk datasets -------------------------------------------------------

/// Untokenized record as found on disk.
struct RawRecord {
  std::string stem;
  std::filesystem::path image_path;
  std::vector<std::string> captions;
  std::int64_t class_label = 0;
};

/// Reads images/, captions/<stem>.txt and classes.tsv; sorted by stem.
std::vector<RawRecord> load_raw_dataset(const std::filesystem::path& dir);

struct Corpus {
  Vocabulary vocab;
  std::vector<CaptionRecord> records;
};

/// Tokenizes every caption, builds the vocabulary over all of them and
/// encodes. Every record must carry exactly `captions_per_image` captions.
Corpus build_corpus(const std::vector<RawRecord>& raw, int min_freq, std::int64_t max_len,
                    std::int64_t captions_per_image);
/// Encodes against an existing vocabulary.
std::vector<CaptionRecord> encode_records(const std::vector<RawRecord>& raw, const Vocabulary& vocab,
                                          std::int64_t max_len);

/// Whether the directory was produced by the toy generator.
bool is_toy_dataset(const std::filesystem::path& dir);

// ---- toy generator ----------------------------------------------------------

enum class ToyShape { circle, square, triangle };

struct ToyColor {
  std::string word;  // Bangla colour word
  std::array<std::uint8_t, 3> rgb{};
};

struct ToySpec {
  std::int64_t n_images = 240;
  int image_size = 32;
  std::vector<ToyShape> shapes{ToyShape::circle, ToyShape::square, ToyShape::triangle};
  std::vector<ToyColor> colors;
  int captions_per_image = 10;
  std::uint64_t seed = 0;
};

/// Eight colours, three shapes.
ToySpec default_toy_spec(std::int64_t n_images, std::uint64_t seed);
const std::array<std::uint8_t, 3>& toy_background();
std::string shape_word(ToyShape shape);
std::string shape_name(ToyShape shape);

struct ToyItem {
  std::string stem;
  Image image;
  int color = 0;  // index into spec.colors
  int shape = 0;  // index into spec.shapes
  int cx = 0, cy = 0, half = 0;
  bool big = false;
  std::int64_t class_label = 0;
  std::vector<std::string> captions;
};

/// Whether pixel centre (x, y) lies inside the shape.
bool toy_covers(ToyShape shape, int cx, int cy, int half, int x, int y);

std::vector<ToyItem> render_toy(const ToySpec& spec);
/// Renders and writes images/, captions/, classes.tsv and toy.tsv (ground truth).
std::vector<ToyItem> gen_toy_dataset(const ToySpec& spec, const std::filesystem::path& dir);

}  // namespace t2i
