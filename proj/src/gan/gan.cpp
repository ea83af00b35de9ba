#include "t2i/gan.hpp"

#include <cmath>
#include <cstdio>

#include "t2i/attention.hpp"
#include "t2i/errors.hpp"
#include "t2i/optim.hpp"

namespace t2i {

void GanConfig::validate() const {
  if (!(beta >= 0)) throw ConfigError("gan: beta must be >= 0");
  if (z_dim < 1 || c_dim < 1) throw ConfigError("gan: z_dim and c_dim must be >= 1");
  if (ngf < 1 || ndf < 1) throw ConfigError("gan: ngf and ndf must be >= 1");
  if (epochs < 0) throw ConfigError("gan: epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("gan: batch_size must be >= 2");
  if (!(lr_g > 0 && lr_d > 0)) throw ConfigError("gan: learning rates must be positive");
  if (sample_every < 1 || n_samples < 1) throw ConfigError("gan: sample_every and n_samples must be >= 1");
}

// --- conditioning augmentation ---

CondAugment::CondAugment(std::int64_t sentence_dim, std::int64_t c, RngStream& rng)
    : fc(sentence_dim, 2 * c, rng), c_dim(c) {}

CAOutput CondAugment::operator()(const Tensor& sentence, bool train, RngStream* rng) const {
  const Tensor out = fc(sentence);
  CAOutput r;
  r.mu = slice(out, 1, 0, c_dim);
  r.logvar = slice(out, 1, c_dim, c_dim);
  if (train) {
    if (rng == nullptr) throw ConfigError("conditioning augmentation: train mode needs an rng");
    r.c_hat = reparam_sample(r.mu, r.logvar, *rng);
  } else {
    r.c_hat = r.mu;
  }
  r.kl = scale(gaussian_kl(r.mu, r.logvar), 1.0 / static_cast<double>(sentence.dim(0)));
  return r;
}

void CondAugment::params(const nn::ParamSink& sink) const { fc.params(sink.scope("fc")); }

// --- generator blocks ---

UpBlock::UpBlock(std::int64_t in, std::int64_t out, RngStream& rng) : conv(in, 2 * out, 3, 1, 1, rng, false), bn(2 * out) {}

Tensor UpBlock::operator()(const Tensor& x, bool train) const { return glu(bn(conv(upsample_nearest2x(x)), train)); }

void UpBlock::params(const nn::ParamSink& sink) const {
  conv.params(sink.scope("conv"));
  bn.params(sink.scope("bn"));
}

void UpBlock::buffers(const nn::ParamSink& sink) const { bn.buffers(sink.scope("bn")); }

InitStage::InitStage(std::int64_t in, std::int64_t ngf_, RngStream& rng)
    : fc(in, 2 * 2 * ngf_ * 16, rng, false), bn(2 * 2 * ngf_ * 16), up(2 * ngf_, ngf_, rng), ngf(ngf_) {}

Tensor InitStage::operator()(const Tensor& zc, bool train) const {
  const Tensor x = glu(bn(fc(zc), train));  // (B, 2 ngf * 16)
  return up(reshape(x, {zc.dim(0), 2 * ngf, 4, 4}), train);
}

void InitStage::params(const nn::ParamSink& sink) const {
  fc.params(sink.scope("fc"));
  bn.params(sink.scope("bn"));
  up.params(sink.scope("up"));
}

void InitStage::buffers(const nn::ParamSink& sink) const {
  bn.buffers(sink.scope("bn"));
  up.buffers(sink.scope("up"));
}

NextStage::NextStage(std::int64_t word_dim, std::int64_t ngf, RngStream& rng)
    : U(nn::uniform_param({ngf, word_dim}, 1.0 / std::sqrt(static_cast<double>(word_dim)), rng)),
      res0(2 * ngf, rng),
      res1(2 * ngf, rng),
      up(2 * ngf, ngf, rng) {}

NextStage::Output NextStage::operator()(const Tensor& h, const WordFeatures& words, bool train) const {
  const std::int64_t B = h.dim(0), C = h.dim(1), S = h.dim(2);
  const auto att = word_context(project_words(U, words.e), words.mask, reshape(h, {B, C, S * S}));
  Tensor x = concat({h, reshape(att.context, {B, C, S, S})}, 1);
  x = res1(res0(x, train), train);
  return {up(x, train), att.alpha};
}

void NextStage::params(const nn::ParamSink& sink) const {
  sink.add("U", U);
  res0.params(sink.scope("res0"));
  res1.params(sink.scope("res1"));
  up.params(sink.scope("up"));
}

void NextStage::buffers(const nn::ParamSink& sink) const {
  res0.buffers(sink.scope("res0"));
  res1.buffers(sink.scope("res1"));
  up.buffers(sink.scope("up"));
}

Generator::Generator(const GanConfig& cfg, std::int64_t word_dim, RngStream& rng)
    : ca(word_dim, cfg.c_dim, rng),
      f0(cfg.z_dim + cfg.c_dim, cfg.ngf, rng),
      f1(word_dim, cfg.ngf, rng),
      f2(word_dim, cfg.ngf, rng),
      z_dim_(cfg.z_dim),
      word_dim_(word_dim) {
  for (auto& h : heads) h = nn::Conv2d(cfg.ngf, 3, 3, 1, 1, rng);
}

ImagePyramid Generator::operator()(const Tensor& z, const Tensor& sentence, const WordFeatures& words, bool train,
                                   RngStream* ca_rng) const {
  const std::int64_t B = z.dim(0);
  if (z.rank() != 2 || z.dim(1) != z_dim_) throw ShapeError("generator: z must be (B, " + std::to_string(z_dim_) + ")");
  if (sentence.rank() != 2 || sentence.dim(0) != B || sentence.dim(1) != word_dim_) {
    throw ShapeError("generator: sentence must be (" + std::to_string(B) + ", " + std::to_string(word_dim_) + "), got " +
                     shape_str(sentence.shape()));
  }
  if (words.batch() != B || words.dim() != word_dim_) {
    throw ShapeError("generator: word features " + shape_str(words.e.shape()) + " do not match the batch");
  }
  ImagePyramid p;
  p.ca = ca(sentence, train, ca_rng);
  Tensor h = f0(concat({z, p.ca.c_hat}, 1), train);
  p.images[0] = tanh(heads[0](h));
  const NextStage* stages[2] = {&f1, &f2};
  for (int i = 0; i < 2; ++i) {
    auto out = (*stages[i])(h, words, train);
    h = out.h;
    p.attention[static_cast<std::size_t>(i)] = out.alpha;
    p.images[static_cast<std::size_t>(i + 1)] = tanh(heads[static_cast<std::size_t>(i + 1)](h));
  }
  return p;
}

void Generator::params(const nn::ParamSink& sink) const {
  ca.params(sink.scope("ca"));
  f0.params(sink.scope("f0"));
  f1.params(sink.scope("f1"));
  f2.params(sink.scope("f2"));
  for (std::size_t i = 0; i < heads.size(); ++i) heads[i].params(sink.scope("g" + std::to_string(i)));
}

void Generator::buffers(const nn::ParamSink& sink) const {
  f0.buffers(sink.scope("f0"));
  f1.buffers(sink.scope("f1"));
  f2.buffers(sink.scope("f2"));
}

// --- discriminators ---

Discriminator::Discriminator(int stage, std::int64_t ndf, std::int64_t sentence_dim, RngStream& rng)
    : stage_(stage), sentence_dim_(sentence_dim) {
  if (stage < 0 || stage > 2) throw ConfigError("discriminator: stage must be 0, 1 or 2");
  std::int64_t in = 3, out = ndf;
  for (int i = 0; i <= stage; ++i) {
    down_.emplace_back(in, out, 4, 2, 1, rng);
    in = out;
    out *= 2;
  }
  const std::int64_t code = 4 * ndf;
  code_ = nn::Conv2d(in, code, 3, 1, 1, rng);
  uncond_ = nn::Conv2d(code, 1, 4, 1, 0, rng);
  joint_ = nn::Conv2d(code + sentence_dim, code, 3, 1, 1, rng);
  cond_ = nn::Conv2d(code, 1, 4, 1, 0, rng);
}

Tensor Discriminator::encode(const Tensor& images) const {
  const std::int64_t S = size();
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != S || images.dim(3) != S) {
    throw ShapeError("discriminator " + std::to_string(stage_) + ": expected (B, 3, " + std::to_string(S) + ", " +
                     std::to_string(S) + "), got " + shape_str(images.shape()));
  }
  Tensor x = images;
  for (const auto& c : down_) x = leaky_relu(c(x));
  return leaky_relu(code_(x));
}

Tensor Discriminator::uncond_logits(const Tensor& code) const { return reshape(uncond_(code), {code.dim(0)}); }

Tensor Discriminator::cond_logits(const Tensor& code, const Tensor& sentence) const {
  if (sentence.rank() != 2 || sentence.dim(0) != code.dim(0) || sentence.dim(1) != sentence_dim_) {
    throw ShapeError("discriminator: sentence must be (B, " + std::to_string(sentence_dim_) + ")");
  }
  const Tensor x = concat({code, broadcast_spatial(sentence, code.dim(2), code.dim(3))}, 1);
  return reshape(cond_(leaky_relu(joint_(x))), {code.dim(0)});
}

void Discriminator::params(const nn::ParamSink& sink) const {
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].params(sink.scope("down" + std::to_string(i)));
  code_.params(sink.scope("code"));
  uncond_.params(sink.scope("uncond"));
  joint_.params(sink.scope("joint"));
  cond_.params(sink.scope("cond"));
}

DiscriminatorLoss discriminator_loss_from_logits(const DiscriminatorLogits& l) {
  DiscriminatorLoss out;
  out.uncond = scale(add(bce_with_logits(l.uncond_real, 1.0), bce_with_logits(l.uncond_fake, 0.0)), 0.5);
  out.cond = scale(add(add(bce_with_logits(l.cond_real, 1.0), bce_with_logits(l.cond_fake, 0.0)),
                       bce_with_logits(l.cond_wrong, 0.0)),
                   1.0 / 3.0);
  out.total = add(out.uncond, scale(out.cond, 0.5));
  return out;
}

DiscriminatorLoss discriminator_loss(const Discriminator& d, const Tensor& real, const Tensor& fake,
                                     const Tensor& sentence) {
  const std::int64_t B = real.dim(0);
  if (B < 2) throw BatchError("discriminator_loss: mismatched pairs need a batch of >= 2");
  if (fake.rank() != 4 || fake.dim(0) != B) throw ShapeError("discriminator_loss: real and fake batches differ");
  const Tensor code_real = d.encode(real);
  const Tensor code_fake = d.encode(fake.detach());
  const Tensor wrong = concat({slice(sentence, 0, 1, B - 1), slice(sentence, 0, 0, 1)}, 0);
  DiscriminatorLogits l;
  l.uncond_real = d.uncond_logits(code_real);
  l.uncond_fake = d.uncond_logits(code_fake);
  l.cond_real = d.cond_logits(code_real, sentence);
  l.cond_fake = d.cond_logits(code_fake, sentence);
  l.cond_wrong = d.cond_logits(code_real, wrong);
  return discriminator_loss_from_logits(l);
}

// --- generator objective ---

Tensor combine_generator_objective(const Tensor& lg, const Tensor& damsm, const Tensor& kl, double beta) {
  return add(add(lg, scale(damsm, beta)), kl);
}

double combine_generator_objective(double lg, double damsm, double kl, double beta) { return lg + beta * damsm + kl; }

GeneratorLossReport GeneratorLoss::report() const {
  GeneratorLossReport r;
  for (std::size_t i = 0; i < 3; ++i) r.stage[i] = stage[i].item();
  r.lg = lg.item();
  r.damsm = damsm.item();
  r.kl = kl.item();
  r.total = total.item();
  return r;
}

GeneratorLoss generator_loss(const std::array<Discriminator, 3>& ds, const ImagePyramid& pyramid,
                             const Tensor& sentence, const WordFeatures& words, const DamsmEncoders& enc,
                             const DamsmConfig& damsm_cfg, double beta) {
  GeneratorLoss out;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor code = ds[i].encode(pyramid.images[i]);
    out.stage[i] = add(bce_with_logits(ds[i].uncond_logits(code), 1.0),
                       bce_with_logits(ds[i].cond_logits(code, sentence), 1.0));
  }
  out.lg = add(add(out.stage[0], out.stage[1]), out.stage[2]);
  const auto img = enc.image(pyramid.images[2]);
  // Per-pair mean, so beta keeps the same meaning at any batch size.
  out.damsm = scale(damsm_loss(img.regions, img.global, words, sentence, damsm_cfg).total,
                    1.0 / static_cast<double>(sentence.dim(0)));
  out.kl = pyramid.ca.kl;
  out.total = combine_generator_objective(out.lg, out.damsm, out.kl, beta);
  return out;
}

// --- model and training ---

GanModel::GanModel(const GanConfig& cfg, std::int64_t word_dim, std::uint64_t seed) : config(cfg) {
  cfg.validate();
  RngStream g_rng(seed, "init/generator");
  generator = Generator(cfg, word_dim, g_rng);
  for (int i = 0; i < 3; ++i) {
    RngStream d_rng(seed, "init/discriminator" + std::to_string(i));
    discriminators[static_cast<std::size_t>(i)] = Discriminator(i, cfg.ndf, word_dim, d_rng);
  }
}

std::vector<NamedTensor> GanModel::generator_params() const {
  std::vector<NamedTensor> out;
  generator.params(nn::ParamSink(out, "generator"));
  return out;
}

std::vector<NamedTensor> GanModel::discriminator_params() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < 3; ++i) discriminators[i].params(nn::ParamSink(out, "discriminator" + std::to_string(i)));
  return out;
}

std::vector<NamedTensor> GanModel::state() const {
  auto out = generator_params();
  generator.buffers(nn::ParamSink(out, "generator"));
  for (auto& p : discriminator_params()) out.push_back(p);
  return out;
}

Tensor sample_noise(std::int64_t n, std::int64_t z_dim, RngStream& rng) {
  std::vector<double> v(static_cast<std::size_t>(n * z_dim));
  for (auto& x : v) x = rng.normal();
  return Tensor({n, z_dim}, std::move(v));
}

ImagePyramid generate_pyramid(const GanModel& model, const DamsmEncoders& enc,
                              const std::vector<const TokenizedCaption*>& captions, const Tensor& z) {
  NoGradGuard no_grad;
  const auto text = enc.text(make_caption_batch(captions));
  return model.generator(z, text.sentence, text.words, false, nullptr);
}

std::array<Image, 3> pyramid_grids(const ImagePyramid& pyramid, int columns) {
  std::array<Image, 3> out;
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<Image> tiles;
    for (std::int64_t b = 0; b < pyramid.images[s].dim(0); ++b) tiles.push_back(tensor_to_image(pyramid.images[s], b));
    out[s] = tile_grid(tiles, columns);
  }
  return out;
}

namespace {

// Restores requires_grad on scope exit.
class FrozenScope {
 public:
  explicit FrozenScope(std::vector<NamedTensor> params) : params_(std::move(params)) {
    for (const auto& p : params_) saved_.push_back(p.tensor.requires_grad());
    nn::set_requires_grad(params_, false);
  }
  ~FrozenScope() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor t = params_[i].tensor;
      t.set_requires_grad(saved_[i]);
    }
  }
  FrozenScope(const FrozenScope&) = delete;
  FrozenScope& operator=(const FrozenScope&) = delete;

 private:
  std::vector<NamedTensor> params_;
  std::vector<bool> saved_;
};

void check_finite(int epoch, const char* name, double v) {
  if (!std::isfinite(v)) {
    throw TrainingError("GAN training diverged at epoch " + std::to_string(epoch) + ": " + name + " is not finite");
  }
}

}  // namespace

GanTrainResult train_gan(GanModel& model, const DamsmEncoders& enc, const ImageSet& train, const DamsmConfig& damsm_cfg,
                         std::uint64_t seed, const GanEpochCallback& on_epoch) {
  const GanConfig& cfg = model.config;
  cfg.validate();
  damsm_cfg.validate();
  if (enc.config.dim != model.generator.word_dim()) {
    throw IncompatibleError("train_gan: DAMSM D=" + std::to_string(enc.config.dim) + " but generator expects D=" +
                            std::to_string(model.generator.word_dim()));
  }
  if (enc.config.image_size != kStageSizes[2]) {
    throw IncompatibleError("train_gan: image encoder expects " + std::to_string(enc.config.image_size) +
                            " px, generator renders " + std::to_string(kStageSizes[2]) + " px");
  }
  const std::size_t n = train.records.size();
  if (n < 2 || train.images.size() != n) throw DatasetError("train_gan: need at least 2 aligned training records");

  std::array<ImageSet, 3> real;
  for (std::size_t i = 0; i < n; ++i) {
    const Image& img = train.images[i];
    if (img.width != kStageSizes[2] || img.height != kStageSizes[2]) {
      throw DatasetError("train_gan: " + train.records[i].image_path + " is not " + std::to_string(kStageSizes[2]) +
                         "x" + std::to_string(kStageSizes[2]));
    }
    real[0].images.push_back(downsample(img, 4));
    real[1].images.push_back(downsample(img, 2));
    real[2].images.push_back(img);
  }

  FrozenScope frozen(enc.params());
  const auto g_params = model.generator_params();
  const auto d_params = model.discriminator_params();
  Adam adam_g(g_params, {cfg.lr_g, 0.5, 0.999, 1e-8});
  Adam adam_d(d_params, {cfg.lr_d, 0.5, 0.999, 1e-8});
  RngStream order_rng(seed, "gan/order");
  RngStream caption_rng(seed, "gan/caption");
  RngStream noise_rng(seed, "gan/noise");
  RngStream ca_rng(seed, "gan/ca");

  const std::size_t n_eval = std::min<std::size_t>(n, static_cast<std::size_t>(cfg.n_samples));
  std::vector<const TokenizedCaption*> eval_caps;
  for (std::size_t i = 0; i < n_eval; ++i) eval_caps.push_back(&train.records[i].captions.at(0));
  RngStream eval_rng(seed, "gan/eval_noise");
  const Tensor eval_z = sample_noise(static_cast<std::int64_t>(n_eval), cfg.z_dim, eval_rng);

  GanTrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    GanEpoch row;
    row.epoch = epoch;
    int batches = 0;
    try {
      for (const auto& idx : epoch_batches(n, cfg.batch_size, order_rng)) {
        std::vector<const TokenizedCaption*> caps;
        for (auto i : idx) {
          const auto& r = train.records[i];
          caps.push_back(&r.captions[caption_rng.below(r.captions.size())]);
        }
        TextEncoder::Output text;
        {
          NoGradGuard no_grad;
          text = enc.text(make_caption_batch(caps));
        }
        const Tensor z = sample_noise(static_cast<std::int64_t>(idx.size()), cfg.z_dim, noise_rng);
        const ImagePyramid pyramid = model.generator(z, text.sentence, text.words, true, &ca_rng);

        Tensor d_total;
        for (std::size_t s = 0; s < 3; ++s) {
          const Tensor real_s = images_to_tensor(gather_images(real[s], idx));
          const Tensor ds = discriminator_loss(model.discriminators[s], real_s, pyramid.images[s], text.sentence).total;
          row.d[s] += ds.item();
          d_total = d_total.defined() ? add(d_total, ds) : ds;
        }
        adam_d.zero_grad();
        d_total.backward();
        adam_d.step();

        GeneratorLoss gl;
        {
          FrozenScope d_frozen(d_params);
          gl = generator_loss(model.discriminators, pyramid, text.sentence, text.words, enc, damsm_cfg, cfg.beta);
          adam_g.zero_grad();
          gl.total.backward();
          adam_g.step();
        }
        const auto rep = gl.report();
        for (std::size_t s = 0; s < 3; ++s) row.lg[s] += rep.stage[s];
        row.damsm += rep.damsm;
        row.kl += rep.kl;
        row.total += rep.total;
        ++batches;
      }
    } catch (const NumericsError& e) {
      throw TrainingError("GAN training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const double inv = 1.0 / batches;
    static const char* d_names[3] = {"d0", "d1", "d2"};
    static const char* g_names[3] = {"lg0", "lg1", "lg2"};
    for (std::size_t s = 0; s < 3; ++s) {
      row.d[s] *= inv;
      row.lg[s] *= inv;
      check_finite(epoch, d_names[s], row.d[s]);
      check_finite(epoch, g_names[s], row.lg[s]);
    }
    row.damsm *= inv;
    row.kl *= inv;
    row.total *= inv;
    check_finite(epoch, "damsm", row.damsm);
    check_finite(epoch, "kl", row.kl);
    check_finite(epoch, "total", row.total);
    result.history.push_back(row);

    if (epoch % cfg.sample_every == 0 || epoch == cfg.epochs) {
      SampleGrid grid;
      grid.epoch = epoch;
      grid.stages = pyramid_grids(generate_pyramid(model, enc, eval_caps, eval_z), 4);
      result.samples.push_back(std::move(grid));
    }
    if (on_epoch) on_epoch(row);
  }
  return result;
}

std::string gan_history_csv(const std::vector<GanEpoch>& history) {
  std::string out = "epoch,d0,d1,d2,lg0,lg1,lg2,damsm,kl,total\n";
  char buf[320];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", h.epoch, h.d[0], h.d[1], h.d[2],
                  h.lg[0], h.lg[1], h.lg[2], h.damsm, h.kl, h.total);
    out += buf;
  }
  return out;
}

}  // namespace t2i
