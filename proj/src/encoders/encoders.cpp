#include "t2i/encoders.hpp"

#include <algorithm>

#include "t2i/errors.hpp"

namespace t2i {

CaptionBatch make_caption_batch(const std::vector<const TokenizedCaption*>& captions, std::int64_t steps) {
  if (captions.empty()) throw BatchError("empty caption batch");
  CaptionBatch b;
  b.batch = static_cast<std::int64_t>(captions.size());
  b.steps = steps;
  for (const auto* c : captions) {
    if (c->length < 1 || c->length > static_cast<std::int64_t>(c->ids.size())) {
      throw VocabError("caption length out of range");
    }
    b.steps = std::max(b.steps, c->length);
  }
  b.ids.assign(static_cast<std::size_t>(b.batch * b.steps), Vocabulary::kPad);
  for (std::int64_t i = 0; i < b.batch; ++i) {
    const auto* c = captions[static_cast<std::size_t>(i)];
    std::copy_n(c->ids.begin(), c->length, b.ids.begin() + i * b.steps);
    b.lengths.push_back(c->length);
  }
  return b;
}

// ---- text -------------------------------------------------------------------

TextEncoder::TextEncoder(const EncoderConfig& config, RngStream& rng)
    : hidden_(config.hidden), dropout_(config.dropout) {
  if (config.dim != 2 * config.hidden) throw ConfigError("text encoder: D must equal 2 * hidden");
  if (config.vocab_size < 3) throw ConfigError("text encoder: vocabulary too small");
  embedding_ = nn::uniform_param({config.vocab_size, config.embed_dim}, 0.1, rng);
  forward_ = nn::LstmCell(config.embed_dim, config.hidden, rng);
  backward_ = nn::LstmCell(config.embed_dim, config.hidden, rng);
}

void TextEncoder::params(const nn::ParamSink& sink) const {
  sink.add("embedding", embedding_);
  forward_.params(sink.scope("forward"));
  backward_.params(sink.scope("backward"));
}

namespace {

Tensor step_mask(const CaptionBatch& b, std::int64_t t, std::int64_t width) {
  std::vector<double> m(static_cast<std::size_t>(b.batch * width));
  for (std::int64_t i = 0; i < b.batch; ++i) {
    const double on = t < b.lengths[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    std::fill_n(m.begin() + i * width, width, on);
  }
  return Tensor({b.batch, width}, std::move(m));
}

// Masked recurrence: inactive rows keep their previous state bit-for-bit, so
// padding never reaches either direction.
std::pair<Tensor, Tensor> masked_step(const nn::LstmCell& cell, const Tensor& gx, const Tensor& h, const Tensor& c,
                                      const Tensor& keep, const Tensor& skip) {
  const std::int64_t H = cell.hidden;
  Tensor gates = add_channel_bias(add(gx, matmul(h, cell.w_hh, false, true)), cell.bias);
  Tensor i = sigmoid(slice(gates, 1, 0, H));
  Tensor f = sigmoid(slice(gates, 1, H, H));
  Tensor g = tanh(slice(gates, 1, 2 * H, H));
  Tensor o = sigmoid(slice(gates, 1, 3 * H, H));
  Tensor c_next = add(mul(f, c), mul(i, g));
  Tensor h_next = mul(o, tanh(c_next));
  return {add(mul(keep, h_next), mul(skip, h)), add(mul(keep, c_next), mul(skip, c))};
}

}  // namespace

TextEncoder::Output TextEncoder::operator()(const CaptionBatch& b, bool train, RngStream* rng) const {
  const std::int64_t B = b.batch, T = b.steps, H = hidden_;
  for (auto id : b.ids) {
    if (id < 0 || id >= embedding_.dim(0)) throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
  }
  Tensor x = embedding(embedding_, b.ids);  // (B*T, E)
  if (train && dropout_ > 0.0) {
    if (!rng) throw ConfigError("text encoder: dropout needs an rng in train mode");
    x = dropout(x, dropout_, *rng);
  }
  // Input projections for every position at once: (B, T*4H).
  Tensor gx_f = reshape(matmul(x, forward_.w_ih, false, true), {B, T * 4 * H});
  Tensor gx_b = reshape(matmul(x, backward_.w_ih, false, true), {B, T * 4 * H});

  std::vector<Tensor> keep(static_cast<std::size_t>(T)), skip(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    keep[t] = step_mask(b, t, H);
    skip[t] = add_scalar(neg(keep[t]), 1.0);
  }

  std::vector<Tensor> hf(static_cast<std::size_t>(T)), hb(static_cast<std::size_t>(T));
  Tensor h = Tensor::zeros({B, H}), c = Tensor::zeros({B, H});
  for (std::int64_t t = 0; t < T; ++t) {
    std::tie(h, c) = masked_step(forward_, slice(gx_f, 1, t * 4 * H, 4 * H), h, c, keep[t], skip[t]);
    hf[t] = h;
  }
  const Tensor last_forward = h;
  h = Tensor::zeros({B, H});
  c = Tensor::zeros({B, H});
  for (std::int64_t t = T - 1; t >= 0; --t) {
    std::tie(h, c) = masked_step(backward_, slice(gx_b, 1, t * 4 * H, 4 * H), h, c, keep[t], skip[t]);
    hb[t] = h;
  }
  const Tensor first_backward = h;

  // Word columns: concat directions, zero beyond length, then (T, B, 2H) -> (B, 2H, T).
  std::vector<Tensor> columns;
  for (std::int64_t t = 0; t < T; ++t) {
    columns.push_back(mul(concat({hf[t], hb[t]}, 1), step_mask(b, t, 2 * H)));
  }
  Tensor e = reshape(transpose(reshape(stack(columns), {T, B * 2 * H})), {B, 2 * H, T});

  Output out;
  out.words.e = e;
  out.words.lengths = b.lengths;
  out.words.mask.assign(static_cast<std::size_t>(B * T), 0);
  for (std::int64_t i = 0; i < B; ++i)
    for (std::int64_t t = 0; t + 1 < b.lengths[static_cast<std::size_t>(i)]; ++t)
      out.words.mask[static_cast<std::size_t>(i * T + t)] = 1;
  out.sentence = concat({last_forward, first_backward}, 1);
  return out;
}

// ---- image ------------------------------------------------------------------

ImageEncoder::ImageEncoder(const EncoderConfig& config, RngStream& rng)
    : dim_(config.dim), image_size_(config.image_size) {
  if (config.channels.size() != 4) throw ConfigError("image encoder: expected 4 channel widths");
  if (config.image_size % 16 != 0) throw ConfigError("image encoder: image size must be a multiple of 16");
  std::int64_t in = 3;
  for (auto ch : config.channels) {
    blocks_.emplace_back(in, ch, 3, 2, 1, rng);
    in = ch;
  }
  regions_ = nn::Conv2d(config.channels[1], dim_, 1, 1, 0, rng);
  global_ = nn::Linear(config.channels[3], dim_, rng);
}

void ImageEncoder::params(const nn::ParamSink& sink) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].params(sink.scope("block" + std::to_string(i) + ".conv"));
  regions_.params(sink.scope("regions"));
  global_.params(sink.scope("global"));
}

ImageEncoder::Output ImageEncoder::operator()(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != image_size_ || images.dim(3) != image_size_) {
    throw ShapeError("image encoder: expected (B, 3, " + std::to_string(image_size_) + ", " +
                     std::to_string(image_size_) + "), got " + shape_str(images.shape()));
  }
  const std::int64_t B = images.dim(0);
  Tensor x = leaky_relu(blocks_[0](images));
  x = leaky_relu(blocks_[1](x));
  Output out;
  const std::int64_t R = x.dim(2);
  out.regions = reshape(regions_(x), {B, dim_, R * R});
  x = leaky_relu(blocks_[2](x));
  x = leaky_relu(blocks_[3](x));
  out.global = global_(global_avg_pool(x));
  return out;
}

DamsmEncoders::DamsmEncoders(const EncoderConfig& cfg, std::uint64_t seed) : config(cfg) {
  if (cfg.dim != 2 * cfg.hidden) throw ConfigError("encoders: D must equal 2 * hidden");
  RngStream text_rng(seed, "init/text_encoder");
  RngStream image_rng(seed, "init/image_encoder");
  text = TextEncoder(cfg, text_rng);
  image = ImageEncoder(cfg, image_rng);
}

std::vector<NamedTensor> DamsmEncoders::params() const {
  std::vector<NamedTensor> out;
  text.params(nn::ParamSink(out, "text_encoder"));
  image.params(nn::ParamSink(out, "image_encoder"));
  return out;
}

}  // namespace t2i
