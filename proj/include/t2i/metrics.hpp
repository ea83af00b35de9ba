#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2i/gan.hpp"
#include "t2i/nn.hpp"

namespace t2i {

struct GaussianStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // unbiased (n - 1) covariance
  std::int64_t n = 0;
};

/// Rows are samples. Accumulates in a canonical row order, so any permutation
/// of the rows gives bit-identical statistics.
GaussianStats gaussian_stats(const Eigen::MatrixXd& features);

struct FidResult {
  double fid = 0, mean_term = 0, trace_term = 0;
};

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)), the root taken as
/// sqrtm(S_a^(1/2) S_b S_a^(1/2)).
FidResult fid(const GaussianStats& a, const GaussianStats& b);

struct IsResult {
  double mean = 0, std = 0;
  int splits = 0;
};

/// probs (n, C) with stochastic rows. Split k takes rows
/// [k n / splits, (k + 1) n / splits); std is the population std over splits.
IsResult inception_score(const Eigen::MatrixXd& probs, int splits);

struct ClassifierConfig {
  int feature_dim = 32;
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 4e-3;
  double target_accuracy = 0.95;
  std::int64_t n_images = 1200;  // rendered toy images, 80:20 train/held-out

  void validate() const;
};

/// Small CNN standing in for the Inception network: four 3x3 convs (the last
/// three stride 2), global average pooling, a dense feature layer of width F,
/// then class logits.
class StandInClassifier {
 public:
  StandInClassifier() = default;
  StandInClassifier(std::int64_t classes, std::int64_t feature_dim, std::int64_t image_size, RngStream& rng);

  Tensor features(const Tensor& images) const;  // (B, F)
  Tensor logits(const Tensor& images) const;    // (B, C)

  /// Batched, gradient-free helpers.
  Eigen::MatrixXd feature_matrix(std::span<const Image> images) const;
  Eigen::MatrixXd probabilities(std::span<const Image> images) const;

  std::vector<NamedTensor> params() const;
  /// "standin-cnn-f<F>-c<C>-<fnv1a64 of the weights>".
  std::string id() const;
  std::int64_t classes() const { return classes_; }
  std::int64_t feature_dim() const { return feature_dim_; }
  std::int64_t image_size() const { return image_size_; }

 private:
  std::int64_t classes_ = 0, feature_dim_ = 0, image_size_ = 0;
  std::array<nn::Conv2d, 4> convs_;
  nn::Linear dense_, out_;
};

struct LabeledImages {
  std::vector<Image> images;
  std::vector<std::int64_t> labels;
};

/// Renders the toy spec in memory and labels every image with its class.
LabeledImages toy_labeled_images(const ToySpec& spec);

struct ClassifierSplit {
  LabeledImages train, heldout;
  std::int64_t classes = 0;
};

/// n rendered toy images, shuffled by stream "classifier/split" and cut 80:20.
ClassifierSplit toy_classifier_split(std::int64_t n_images, std::uint64_t seed);

struct ClassifierFit {
  StandInClassifier model;
  double heldout_accuracy = 0;
  std::vector<double> epoch_loss;
};

/// Adam on cross-entropy; no accuracy requirement.
ClassifierFit fit_classifier(const LabeledImages& train, const LabeledImages& heldout, std::int64_t classes,
                             const ClassifierConfig& cfg, std::uint64_t seed);
/// fit_classifier, then TrainingError if held-out accuracy misses the target.
ClassifierFit train_standin_classifier(const LabeledImages& train, const LabeledImages& heldout, std::int64_t classes,
                                       const ClassifierConfig& cfg, std::uint64_t seed);

double classifier_accuracy(const StandInClassifier& model, const LabeledImages& data);

/// Statistics of the classifier's penultimate features.
GaussianStats activation_stats(const StandInClassifier& classifier, std::span<const Image> images);

struct EvalConfig {
  std::int64_t n_samples = 512;
  int splits = 4;
};

struct EvalReport {
  FidResult fid;
  IsResult is;
  std::int64_t n_samples = 0;
  int splits = 0;
  std::string classifier_id;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Last-stage samples for the test captions (record i mod n, caption
/// (i / n) mod captions), in eval mode with noise from stream "eval/noise".
std::vector<Image> generate_samples(const GanModel& model, const DamsmEncoders& enc, const ImageSet& test,
                                    std::int64_t n_samples, std::uint64_t seed);

/// FID of generated samples against the real test images, and IS of the samples.
EvalReport evaluate_model(const GanModel& model, const DamsmEncoders& enc, const StandInClassifier& classifier,
                          const ImageSet& test, const EvalConfig& cfg, std::uint64_t seed);

/// FID and IS for an explicit image set against a reference set.
EvalReport evaluate_images(const StandInClassifier& classifier, std::span<const Image> generated,
                           std::span<const Image> reference, int splits, std::uint64_t seed);

/// {fid, fid_mean_term, fid_trace_term, is_mean, is_std, n_samples, splits,
/// classifier_id, seed}; reals carry 6 significant digits.
nlohmann::ordered_json metrics_json(const EvalReport& report);

}  // namespace t2i
