#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "t2i/damsm.hpp"
#include "t2i/image.hpp"
#include "t2i/nn.hpp"

namespace t2i {

/// Stage i renders at kStageSizes[i] pixels.
inline constexpr std::array<std::int64_t, 3> kStageSizes{8, 16, 32};

struct GanConfig {
  double beta = 5.0;  // weight of L_DAMSM in the generator objective
  int epochs = 120;
  int batch_size = 16;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  int z_dim = 16;
  int c_dim = 16;
  int ngf = 16;  // generator hidden channels
  int ndf = 8;   // discriminator base channels
  int sample_every = 20;
  int n_samples = 8;

  void validate() const;
};

struct CAOutput {
  Tensor c_hat, mu, logvar;
  Tensor kl;  // batch mean of the Gaussian KL to N(0, I)
};

struct CondAugment {
  nn::Linear fc;  // D -> 2 c_dim: [mu, logvar]
  std::int64_t c_dim = 0;

  CondAugment() = default;
  CondAugment(std::int64_t sentence_dim, std::int64_t c_dim, RngStream& rng);
  /// Train mode samples with `rng`; eval mode returns c_hat = mu.
  CAOutput operator()(const Tensor& sentence, bool train, RngStream* rng) const;
  void params(const nn::ParamSink& sink) const;
};

/// Nearest 2x upsample, 3x3 conv to 2*out, BN, GLU.
struct UpBlock {
  nn::Conv2d conv;
  nn::BatchNorm bn;

  UpBlock() = default;
  UpBlock(std::int64_t in, std::int64_t out, RngStream& rng);
  Tensor operator()(const Tensor& x, bool train) const;
  void params(const nn::ParamSink& sink) const;
  void buffers(const nn::ParamSink& sink) const;
};

/// F0: [z, c_hat] -> h0 (ngf, 8, 8).
struct InitStage {
  nn::Linear fc;
  nn::BatchNorm bn;
  UpBlock up;
  std::int64_t ngf = 0;

  InitStage() = default;
  InitStage(std::int64_t in, std::int64_t ngf, RngStream& rng);
  Tensor operator()(const Tensor& zc, bool train) const;
  void params(const nn::ParamSink& sink) const;
  void buffers(const nn::ParamSink& sink) const;
};

/// F1, F2: attend words from h, two residual blocks on [h, context], upsample.
struct NextStage {
  Tensor U;  // (ngf, D) word projection
  nn::ResBlock res0, res1;
  UpBlock up;

  NextStage() = default;
  NextStage(std::int64_t word_dim, std::int64_t ngf, RngStream& rng);
  struct Output {
    Tensor h;
    Tensor alpha;  // (B, T, N) over the input grid
  };
  Output operator()(const Tensor& h, const WordFeatures& words, bool train) const;
  void params(const nn::ParamSink& sink) const;
  void buffers(const nn::ParamSink& sink) const;
};

struct ImagePyramid {
  std::array<Tensor, 3> images;     // (B, 3, S, S), tanh range
  std::array<Tensor, 2> attention;  // stages 1 and 2: (B, T, N)
  CAOutput ca;
};

class Generator {
 public:
  Generator() = default;
  Generator(const GanConfig& cfg, std::int64_t word_dim, RngStream& rng);

  /// z (B, z_dim), sentence (B, D), words (B, D, T).
  ImagePyramid operator()(const Tensor& z, const Tensor& sentence, const WordFeatures& words, bool train,
                          RngStream* ca_rng) const;

  void params(const nn::ParamSink& sink) const;
  void buffers(const nn::ParamSink& sink) const;
  std::int64_t z_dim() const { return z_dim_; }
  std::int64_t word_dim() const { return word_dim_; }

  CondAugment ca;
  InitStage f0;
  NextStage f1, f2;
  std::array<nn::Conv2d, 3> heads;  // G_i: 3x3 conv to RGB, then tanh

 private:
  std::int64_t z_dim_ = 0;
  std::int64_t word_dim_ = 0;
};

/// Per-stage discriminator with an unconditional and a sentence-conditioned head.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int stage, std::int64_t ndf, std::int64_t sentence_dim, RngStream& rng);

  /// (B, 3, S, S) at this stage's size -> (B, code, 4, 4).
  Tensor encode(const Tensor& images) const;
  Tensor uncond_logits(const Tensor& code) const;                         // (B)
  Tensor cond_logits(const Tensor& code, const Tensor& sentence) const;  // (B)

  int stage() const { return stage_; }
  std::int64_t size() const { return kStageSizes[static_cast<std::size_t>(stage_)]; }
  void params(const nn::ParamSink& sink) const;

 private:
  int stage_ = 0;
  std::int64_t sentence_dim_ = 0;
  std::vector<nn::Conv2d> down_;  // 4x4 stride-2 convs, leaky relu
  nn::Conv2d code_, uncond_, joint_, cond_;
};

struct DiscriminatorLogits {
  Tensor uncond_real, uncond_fake;
  Tensor cond_real, cond_fake, cond_wrong;  // wrong: real image, rotated caption
};

struct DiscriminatorLoss {
  Tensor uncond;  // mean of the two unconditional BCE terms
  Tensor cond;    // mean of the three conditional BCE terms
  Tensor total;   // uncond + cond / 2
};

DiscriminatorLoss discriminator_loss_from_logits(const DiscriminatorLogits& logits);
/// Fake images are detached here; mismatched pairs rotate captions by one.
DiscriminatorLoss discriminator_loss(const Discriminator& d, const Tensor& real, const Tensor& fake,
                                     const Tensor& sentence);

/// L = L_G + beta * L_DAMSM + kl.
Tensor combine_generator_objective(const Tensor& lg, const Tensor& damsm, const Tensor& kl, double beta);
double combine_generator_objective(double lg, double damsm, double kl, double beta);

struct GeneratorLossReport {
  std::array<double, 3> stage{};
  double lg = 0, damsm = 0, kl = 0, total = 0;
};

struct GeneratorLoss {
  std::array<Tensor, 3> stage;  // L_G_i
  Tensor lg;                    // sum of stages
  Tensor damsm;
  Tensor kl;
  Tensor total;
  GeneratorLossReport report() const;
};

/// Adversarial terms from each D_i plus DAMSM on the last stage through the
/// (frozen) image encoder, divided by the batch size. `words`/`sentence` are
/// the caption features.
GeneratorLoss generator_loss(const std::array<Discriminator, 3>& ds, const ImagePyramid& pyramid,
                             const Tensor& sentence, const WordFeatures& words, const DamsmEncoders& enc,
                             const DamsmConfig& damsm_cfg, double beta);

struct GanModel {
  GanConfig config;
  Generator generator;
  std::array<Discriminator, 3> discriminators;

  GanModel() = default;
  GanModel(const GanConfig& cfg, std::int64_t word_dim, std::uint64_t seed);
  /// "generator.*" trainables.
  std::vector<NamedTensor> generator_params() const;
  /// "discriminator<i>.*" trainables.
  std::vector<NamedTensor> discriminator_params() const;
  /// Everything that goes into a checkpoint, BN statistics included.
  std::vector<NamedTensor> state() const;
};

struct GanEpoch {
  int epoch = 0;
  std::array<double, 3> d{};
  std::array<double, 3> lg{};
  double damsm = 0, kl = 0, total = 0;
};

struct SampleGrid {
  int epoch = 0;
  std::array<Image, 3> stages;
};

struct GanTrainResult {
  std::vector<GanEpoch> history;
  std::vector<SampleGrid> samples;
};

using GanEpochCallback = std::function<void(const GanEpoch&)>;

/// Alternating Adam updates (all D_i, then G). DAMSM encoders stay frozen.
/// Samples use the first n_samples records, caption 0, and fixed noise.
GanTrainResult train_gan(GanModel& model, const DamsmEncoders& enc, const ImageSet& train, const DamsmConfig& damsm_cfg,
                         std::uint64_t seed, const GanEpochCallback& on_epoch = {});

/// Stage pyramid for the given captions under eval mode.
ImagePyramid generate_pyramid(const GanModel& model, const DamsmEncoders& enc,
                              const std::vector<const TokenizedCaption*>& captions, const Tensor& z);

/// Standard-normal noise (n, z_dim) from `rng`.
Tensor sample_noise(std::int64_t n, std::int64_t z_dim, RngStream& rng);

/// Tiles item i of each stage into one grid per stage.
std::array<Image, 3> pyramid_grids(const ImagePyramid& pyramid, int columns);

/// CSV with header epoch,d0,d1,d2,lg0,lg1,lg2,damsm,kl,total.
std::string gan_history_csv(const std::vector<GanEpoch>& history);

}  // namespace t2i
