#pragma once

#include <cstdint>
#include <vector>

#include "t2i/nn.hpp"
#include "t2i/textdata.hpp"

namespace t2i {

/// Token ids laid out (B, T) with per-row lengths (EOS included).
struct CaptionBatch {
  std::int64_t batch = 0;
  std::int64_t steps = 0;
  std::vector<std::int64_t> ids;
  std::vector<std::int64_t> lengths;
};

/// T is the longest length in the batch unless `steps` is larger.
CaptionBatch make_caption_batch(const std::vector<const TokenizedCaption*>& captions, std::int64_t steps = 0);

/// e: (B, D, T). mask: B*T flags, true for attendable words. The EOS column
/// carries features (it feeds the recurrence) but is not attendable, so a
/// caption of n words exposes exactly n columns to attention and matching.
struct WordFeatures {
  Tensor e;
  std::vector<std::uint8_t> mask;
  std::vector<std::int64_t> lengths;

  std::int64_t batch() const { return e.dim(0); }
  std::int64_t dim() const { return e.dim(1); }
  std::int64_t steps() const { return e.dim(2); }
  bool attendable(std::int64_t b, std::int64_t t) const { return mask[static_cast<std::size_t>(b * steps() + t)] != 0; }
};

struct EncoderConfig {
  std::int64_t vocab_size = 0;
  std::int64_t embed_dim = 32;
  std::int64_t hidden = 32;  // per direction
  std::int64_t dim = 64;     // common space D, must equal 2 * hidden
  double dropout = 0.2;
  int image_size = 32;
  std::vector<std::int64_t> channels{16, 32, 64, 64};
};

class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(const EncoderConfig& config, RngStream& rng);

  struct Output {
    WordFeatures words;
    Tensor sentence;  // (B, D)
  };
  /// Dropout is applied only when `train` is set; it draws from `rng`.
  Output operator()(const CaptionBatch& batch, bool train = false, RngStream* rng = nullptr) const;

  void params(const nn::ParamSink& sink) const;
  std::int64_t dim() const { return 2 * hidden_; }

 private:
  Tensor embedding_;  // (V, E)
  nn::LstmCell forward_;
  nn::LstmCell backward_;
  std::int64_t hidden_ = 0;
  double dropout_ = 0.0;
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const EncoderConfig& config, RngStream& rng);

  struct Output {
    Tensor regions;  // (B, D, N)
    Tensor global;   // (B, D)
  };
  Output operator()(const Tensor& images) const;

  void params(const nn::ParamSink& sink) const;
  std::int64_t dim() const { return dim_; }
  /// Side of the region grid; N = grid^2.
  std::int64_t grid() const { return image_size_ / 4; }

 private:
  std::vector<nn::Conv2d> blocks_;
  nn::Conv2d regions_;
  nn::Linear global_;
  std::int64_t dim_ = 0;
  int image_size_ = 0;
};

/// Text and image encoder pair sharing D.
struct DamsmEncoders {
  EncoderConfig config;
  TextEncoder text;
  ImageEncoder image;

  DamsmEncoders() = default;
  DamsmEncoders(const EncoderConfig& config, std::uint64_t seed);
  /// Names start with "text_encoder." and "image_encoder.".
  std::vector<NamedTensor> params() const;
};

}  // namespace t2i
