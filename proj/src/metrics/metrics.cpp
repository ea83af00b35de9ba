#include "t2i/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "t2i/errors.hpp"
#include "t2i/linalg.hpp"
#include "t2i/optim.hpp"

namespace t2i {

GaussianStats gaussian_stats(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows(), f = x.cols();
  if (n < 2) throw StatsError("gaussian_stats: need at least 2 samples, got " + std::to_string(n));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < f; ++j)
      if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
    return false;
  });
  GaussianStats st;
  st.n = n;
  st.mu = Eigen::VectorXd::Zero(f);
  for (auto i : order) st.mu += x.row(i).transpose();
  st.mu /= static_cast<double>(n);
  st.sigma = Eigen::MatrixXd::Zero(f, f);
  for (auto i : order) {
    const Eigen::VectorXd d = x.row(i).transpose() - st.mu;
    st.sigma.noalias() += d * d.transpose();
  }
  st.sigma /= static_cast<double>(n - 1);
  return st;
}

FidResult fid(const GaussianStats& a, const GaussianStats& b) {
  if (a.mu.size() != b.mu.size() || a.sigma.rows() != b.sigma.rows()) {
    throw ShapeError("fid: dimension " + std::to_string(a.mu.size()) + " vs " + std::to_string(b.mu.size()));
  }
  FidResult r;
  r.mean_term = (a.mu - b.mu).squaredNorm();
  const Eigen::MatrixXd ra = sqrtm_psd(a.sigma);
  Eigen::MatrixXd m = ra * b.sigma * ra;
  m = 0.5 * (m + m.transpose());
  r.trace_term = a.sigma.trace() + b.sigma.trace() - 2.0 * sqrtm_psd(m).trace();
  r.fid = r.mean_term + r.trace_term;
  if (r.fid < -1e-6) throw StatsError("fid: negative distance " + std::to_string(r.fid));
  r.fid = std::max(r.fid, 0.0);
  return r;
}

IsResult inception_score(const Eigen::MatrixXd& probs, int splits) {
  const Eigen::Index n = probs.rows();
  if (splits < 1 || n < splits) {
    throw StatsError("inception_score: need n >= splits >= 1 (n=" + std::to_string(n) +
                     ", splits=" + std::to_string(splits) + ")");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if ((probs.row(i).array() < 0).any() || !probs.row(i).allFinite() || std::abs(probs.row(i).sum() - 1.0) > 1e-6) {
      throw StatsError("inception_score: row " + std::to_string(i) + " is not a probability vector");
    }
  }
  std::vector<double> scores;
  for (int k = 0; k < splits; ++k) {
    const Eigen::Index lo = n * k / splits, hi = n * (k + 1) / splits;
    // Running mean: a split of identical rows reproduces that row exactly.
    Eigen::RowVectorXd py = probs.row(lo);
    for (Eigen::Index i = lo + 1; i < hi; ++i) py += (probs.row(i) - py) / static_cast<double>(i - lo + 1);
    double kl = 0;
    for (Eigen::Index i = lo; i < hi; ++i)
      for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        const double p = probs(i, c);
        if (p > 0) kl += p * (std::log(p) - std::log(py(c)));
      }
    scores.push_back(std::exp(kl / static_cast<double>(hi - lo)));
  }
  IsResult r;
  r.splits = splits;
  for (double s : scores) r.mean += s;
  r.mean /= splits;
  for (double s : scores) r.std += (s - r.mean) * (s - r.mean);
  r.std = std::sqrt(r.std / splits);
  return r;
}

// --- stand-in classifier ---

void ClassifierConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("classifier: feature_dim must be >= 1");
  if (epochs < 1 || batch_size < 1) throw ConfigError("classifier: epochs and batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("classifier: learning_rate must be positive");
  if (n_images < 10) throw ConfigError("classifier: n_images must be >= 10");
}

StandInClassifier::StandInClassifier(std::int64_t classes, std::int64_t feature_dim, std::int64_t image_size,
                                     RngStream& rng)
    : classes_(classes), feature_dim_(feature_dim), image_size_(image_size) {
  if (image_size % 8 != 0) throw ConfigError("classifier: image size must be a multiple of 8");
  const std::int64_t ch[5] = {3, 8, 16, 32, 64};
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i] = nn::Conv2d(ch[i], ch[i + 1], 3, i == 0 ? 1 : 2, 1, rng);
  dense_ = nn::Linear(ch[4], feature_dim, rng);
  out_ = nn::Linear(feature_dim, classes, rng);
}

Tensor StandInClassifier::features(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != image_size_ || images.dim(3) != image_size_) {
    throw ShapeError("classifier: expected (B, 3, " + std::to_string(image_size_) + ", " + std::to_string(image_size_) +
                     "), got " + shape_str(images.shape()));
  }
  Tensor x = images;
  for (const auto& c : convs_) x = leaky_relu(c(x));
  return leaky_relu(dense_(global_avg_pool(x)));
}

Tensor StandInClassifier::logits(const Tensor& images) const { return out_(features(images)); }

namespace {

constexpr std::size_t kEvalBatch = 64;

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  const auto v = t.values();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = v[static_cast<std::size_t>(i * m.cols() + j)];
  return m;
}

template <typename F>
Eigen::MatrixXd batched(std::span<const Image> images, std::int64_t cols, F&& f) {
  NoGradGuard no_grad;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), cols);
  for (std::size_t start = 0; start < images.size(); start += kEvalBatch) {
    const std::size_t len = std::min(kEvalBatch, images.size() - start);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) =
        to_matrix(f(images_to_tensor(images.subspan(start, len))));
  }
  return out;
}

}  // namespace

Eigen::MatrixXd StandInClassifier::feature_matrix(std::span<const Image> images) const {
  return batched(images, feature_dim_, [&](const Tensor& x) { return features(x); });
}

Eigen::MatrixXd StandInClassifier::probabilities(std::span<const Image> images) const {
  return batched(images, classes_, [&](const Tensor& x) { return softmax(logits(x), 1); });
}

std::vector<NamedTensor> StandInClassifier::params() const {
  std::vector<NamedTensor> out;
  nn::ParamSink sink(out, "classifier");
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].params(sink.scope("conv" + std::to_string(i)));
  dense_.params(sink.scope("dense"));
  out_.params(sink.scope("out"));
  return out;
}

std::string StandInClassifier::id() const {
  std::string bytes;
  for (const auto& p : params()) {
    const auto v = p.tensor.values();
    bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "standin-cnn-f%lld-c%lld-%016llx", static_cast<long long>(feature_dim_),
                static_cast<long long>(classes_), static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

LabeledImages toy_labeled_images(const ToySpec& spec) {
  LabeledImages out;
  for (auto& item : render_toy(spec)) {
    out.images.push_back(std::move(item.image));
    out.labels.push_back(item.class_label);
  }
  return out;
}

ClassifierSplit toy_classifier_split(std::int64_t n_images, std::uint64_t seed) {
  const ToySpec spec = default_toy_spec(n_images, seed);
  auto all = toy_labeled_images(spec);
  std::vector<std::size_t> idx(all.images.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream rng(seed, "classifier/split");
  rng.shuffle(idx);
  ClassifierSplit out;
  out.classes = static_cast<std::int64_t>(spec.shapes.size() * spec.colors.size());
  const std::size_t n_train = idx.size() * 8 / 10;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto& dst = k < n_train ? out.train : out.heldout;
    dst.images.push_back(std::move(all.images[idx[k]]));
    dst.labels.push_back(all.labels[idx[k]]);
  }
  return out;
}

double classifier_accuracy(const StandInClassifier& model, const LabeledImages& data) {
  if (data.images.empty()) return 0.0;
  const Eigen::MatrixXd p = model.probabilities(data.images);
  std::int64_t hits = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index arg = 0;
    p.row(i).maxCoeff(&arg);
    hits += arg == data.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hits) / static_cast<double>(p.rows());
}

ClassifierFit fit_classifier(const LabeledImages& train, const LabeledImages& heldout, std::int64_t classes,
                             const ClassifierConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (train.images.empty() || train.images.size() != train.labels.size()) {
    throw DatasetError("classifier: empty or misaligned training set");
  }
  for (auto l : train.labels)
    if (l < 0 || l >= classes) throw DatasetError("classifier: label " + std::to_string(l) + " out of range");
  RngStream init(seed, "init/classifier");
  ClassifierFit fit;
  fit.model = StandInClassifier(classes, cfg.feature_dim, train.images.front().width, init);
  Adam adam(fit.model.params(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  RngStream order(seed, "classifier/order");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0;
    int batches = 0;
    for (const auto& idx : epoch_batches(train.images.size(), cfg.batch_size, order)) {
      std::vector<Image> imgs;
      std::vector<double> onehot(idx.size() * static_cast<std::size_t>(classes), 0.0);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        imgs.push_back(train.images[idx[k]]);
        onehot[k * static_cast<std::size_t>(classes) + static_cast<std::size_t>(train.labels[idx[k]])] = 1.0;
      }
      const Tensor target({static_cast<std::int64_t>(idx.size()), classes}, std::move(onehot));
      const Tensor logp = log_softmax(fit.model.logits(images_to_tensor(imgs)), 1);
      const Tensor loss = scale(sum(mul(logp, target)), -1.0 / static_cast<double>(idx.size()));
      adam.zero_grad();
      loss.backward();
      adam.step();
      total += loss.item();
      ++batches;
    }
    fit.epoch_loss.push_back(total / batches);
  }
  fit.heldout_accuracy = classifier_accuracy(fit.model, heldout);
  return fit;
}

ClassifierFit train_standin_classifier(const LabeledImages& train, const LabeledImages& heldout, std::int64_t classes,
                                       const ClassifierConfig& cfg, std::uint64_t seed) {
  auto fit = fit_classifier(train, heldout, classes, cfg, seed);
  if (fit.heldout_accuracy < cfg.target_accuracy) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "classifier: held-out accuracy %.4f below target %.4f after %d epochs",
                  fit.heldout_accuracy, cfg.target_accuracy, cfg.epochs);
    throw TrainingError(buf);
  }
  return fit;
}

GaussianStats activation_stats(const StandInClassifier& classifier, std::span<const Image> images) {
  if (images.size() < 2) throw StatsError("activation_stats: need at least 2 images, got " + std::to_string(images.size()));
  return gaussian_stats(classifier.feature_matrix(images));
}

// --- evaluation ---

std::vector<Image> generate_samples(const GanModel& model, const DamsmEncoders& enc, const ImageSet& test,
                                    std::int64_t n_samples, std::uint64_t seed) {
  if (test.records.empty()) throw DatasetError("generate_samples: empty test split");
  const std::size_t n_test = test.records.size();
  RngStream noise(seed, "eval/noise");
  std::vector<Image> out;
  for (std::int64_t start = 0; start < n_samples; start += static_cast<std::int64_t>(kEvalBatch)) {
    const std::int64_t len = std::min<std::int64_t>(static_cast<std::int64_t>(kEvalBatch), n_samples - start);
    std::vector<const TokenizedCaption*> caps;
    for (std::int64_t i = start; i < start + len; ++i) {
      const auto& r = test.records[static_cast<std::size_t>(i) % n_test];
      caps.push_back(&r.captions.at((static_cast<std::size_t>(i) / n_test) % r.captions.size()));
    }
    const Tensor z = sample_noise(len, model.generator.z_dim(), noise);
    const auto p = generate_pyramid(model, enc, caps, z);
    for (std::int64_t b = 0; b < len; ++b) out.push_back(tensor_to_image(p.images[2], b));
  }
  return out;
}

EvalReport evaluate_images(const StandInClassifier& classifier, std::span<const Image> generated,
                           std::span<const Image> reference, int splits, std::uint64_t seed) {
  const auto n = static_cast<std::int64_t>(generated.size());
  if (n < 2 * static_cast<std::int64_t>(splits)) {
    throw StatsError("evaluate: n_samples " + std::to_string(n) + " must be >= 2 * splits");
  }
  EvalReport r;
  r.n_samples = n;
  r.splits = splits;
  r.seed = seed;
  r.classifier_id = classifier.id();
  const std::int64_t floor = 10 * classifier.feature_dim();
  if (n < floor || static_cast<std::int64_t>(reference.size()) < floor) {
    r.warnings.push_back("covariance from " + std::to_string(std::min<std::int64_t>(n, reference.size())) +
                         " samples is rank-deficient for F=" + std::to_string(classifier.feature_dim()) +
                         " (want >= " + std::to_string(floor) + ")");
  }
  r.fid = fid(activation_stats(classifier, generated), activation_stats(classifier, reference));
  r.is = inception_score(classifier.probabilities(generated), splits);
  return r;
}

EvalReport evaluate_model(const GanModel& model, const DamsmEncoders& enc, const StandInClassifier& classifier,
                          const ImageSet& test, const EvalConfig& cfg, std::uint64_t seed) {
  if (cfg.splits < 1) throw ConfigError("evaluate: splits must be >= 1");
  if (cfg.n_samples < 2 * cfg.splits) throw StatsError("evaluate: n_samples must be >= 2 * splits");
  const auto samples = generate_samples(model, enc, test, cfg.n_samples, seed);
  return evaluate_images(classifier, samples, test.images, cfg.splits, seed);
}

namespace {

double sig6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

}  // namespace

nlohmann::ordered_json metrics_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["fid"] = sig6(r.fid.fid);
  j["fid_mean_term"] = sig6(r.fid.mean_term);
  j["fid_trace_term"] = sig6(r.fid.trace_term);
  j["is_mean"] = sig6(r.is.mean);
  j["is_std"] = sig6(r.is.std);
  j["n_samples"] = r.n_samples;
  j["splits"] = r.splits;
  j["classifier_id"] = r.classifier_id;
  j["seed"] = r.seed;
  return j;
}

}  // namespace t2i
