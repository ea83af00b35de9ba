#include "t2i/damsm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "t2i/errors.hpp"
#include "t2i/optim.hpp"

namespace t2i {

void DamsmConfig::validate() const {
  if (!(gamma1 > 0 && gamma2 > 0 && gamma3 > 0)) throw ConfigError("damsm: gammas must be positive");
  if (batch_size < 2) throw ConfigError("damsm: batch_size must be >= 2");
  if (epochs < 0) throw ConfigError("damsm: epochs must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("damsm: learning_rate must be positive");
}

namespace {

// R from normalized words/regions plus the raw regions used for the context.
Tensor score_from_parts(const Tensor& v, const Tensor& v_hat, const Tensor& e_hat, const DamsmConfig& cfg) {
  Tensor s = matmul(e_hat, v_hat, true, false);                  // (n, N) cosines
  Tensor s_bar = softmax(s, 0);                                   // over words
  Tensor alpha = softmax(scale(s_bar, cfg.gamma1), 1);            // over regions
  Tensor c = matmul(v, alpha, false, true);                       // (D, n)
  Tensor r = sum_axis(mul(normalize_columns(c), e_hat), 0);       // (n)
  return scale(logsumexp(scale(r, cfg.gamma2), 0), 1.0 / cfg.gamma2);
}

std::int64_t word_count(const WordFeatures& w, std::int64_t b) {
  std::int64_t n = 0;
  while (n < w.steps() && w.attendable(b, n)) ++n;
  for (std::int64_t t = n; t < w.steps(); ++t)
    if (w.attendable(b, t)) throw MaskError("damsm: word mask must be a prefix");
  if (n == 0) throw MaskError("damsm: caption " + std::to_string(b) + " has no attendable words");
  return n;
}

Tensor diagonal_sum(const Tensor& m) {
  const std::int64_t M = m.dim(0);
  std::vector<double> eye(static_cast<std::size_t>(M * M), 0.0);
  for (std::int64_t i = 0; i < M; ++i) eye[static_cast<std::size_t>(i * M + i)] = 1.0;
  return sum(mul(m, Tensor({M, M}, std::move(eye))));
}

Eigen::MatrixXd normalized_columns(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double n = m.col(j).norm();
    if (!(n > 1e-12)) throw NumericsError("zero-norm vector in cosine");
    out.col(j) /= n;
  }
  return out;
}

Eigen::MatrixXd item_matrix(const Tensor& t, std::int64_t b, std::int64_t cols) {
  // t is (B, D, C) row-major; take the first `cols` columns of item b.
  const std::int64_t D = t.dim(1), C = t.dim(2);
  Eigen::MatrixXd m(D, cols);
  const auto v = t.values();
  for (std::int64_t d = 0; d < D; ++d)
    for (std::int64_t j = 0; j < cols; ++j) m(d, j) = v[static_cast<std::size_t>((b * D + d) * C + j)];
  return m;
}

}  // namespace

Tensor matching_score(const Tensor& v, const Tensor& e, const DamsmConfig& cfg) {
  if (v.rank() != 2 || e.rank() != 2 || v.dim(0) != e.dim(0)) {
    throw ShapeError("matching_score: v " + shape_str(v.shape()) + " vs e " + shape_str(e.shape()));
  }
  return score_from_parts(v, normalize_columns(v), normalize_columns(e), cfg);
}

double matching_score_value(const Eigen::MatrixXd& v, const Eigen::MatrixXd& e, const DamsmConfig& cfg) {
  if (v.rows() != e.rows() || e.cols() == 0) throw ShapeError("matching_score_value: dimension mismatch");
  const Eigen::MatrixXd vh = normalized_columns(v), eh = normalized_columns(e);
  Eigen::MatrixXd s = eh.transpose() * vh;  // (n, N)
  for (Eigen::Index j = 0; j < s.cols(); ++j) {
    const double mx = s.col(j).maxCoeff();
    s.col(j) = (s.col(j).array() - mx).exp();
    s.col(j) /= s.col(j).sum();
  }
  s *= cfg.gamma1;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
  const Eigen::MatrixXd c = normalized_columns(v * s.transpose());  // (D, n)
  const Eigen::VectorXd r = (c.array() * eh.array()).colwise().sum().transpose() * cfg.gamma2;
  const double mx = r.maxCoeff();
  return (mx + std::log((r.array() - mx).exp().sum())) / cfg.gamma2;
}

DamsmLossReport DamsmLoss::report() const {
  DamsmLossReport r;
  r.lw1 = lw1.item();
  r.lw2 = lw2.item();
  r.ls1 = ls1.item();
  r.ls2 = ls2.item();
  r.total = total.item();
  return r;
}

DamsmLoss damsm_loss_from_scores(const Tensor& word_scores, const Tensor& sentence_scores, const DamsmConfig& cfg) {
  if (word_scores.rank() != 2 || word_scores.dim(0) != word_scores.dim(1) ||
      sentence_scores.shape() != word_scores.shape()) {
    throw ShapeError("damsm_loss: score matrices must be square and equal-sized");
  }
  if (word_scores.dim(0) < 2) throw BatchError("damsm_loss: batch of " + std::to_string(word_scores.dim(0)) +
                                               " cannot be contrasted (need >= 2)");
  DamsmLoss out;
  out.word_scores = word_scores;
  out.sentence_scores = sentence_scores;
  const Tensor w = scale(word_scores, cfg.gamma3);
  out.lw1 = neg(diagonal_sum(log_softmax(w, 1)));
  out.lw2 = neg(diagonal_sum(log_softmax(w, 0)));
  out.ls1 = neg(diagonal_sum(log_softmax(sentence_scores, 1)));
  out.ls2 = neg(diagonal_sum(log_softmax(sentence_scores, 0)));
  out.total = add(add(out.lw1, out.lw2), add(out.ls1, out.ls2));
  return out;
}

DamsmLoss damsm_loss(const Tensor& regions, const Tensor& global, const WordFeatures& words, const Tensor& sentence,
                     const DamsmConfig& cfg) {
  cfg.validate();
  const std::int64_t M = regions.dim(0);
  if (M < 2) throw BatchError("damsm_loss: batch of " + std::to_string(M) + " cannot be contrasted (need >= 2)");
  if (words.batch() != M || global.dim(0) != M || sentence.dim(0) != M) {
    throw ShapeError("damsm_loss: image and caption batches differ in size");
  }
  if (regions.dim(1) != words.dim() || global.dim(1) != sentence.dim(1) || global.dim(1) != regions.dim(1)) {
    throw ShapeError("damsm_loss: feature dimensions differ");
  }

  std::vector<Tensor> v(static_cast<std::size_t>(M)), v_hat(static_cast<std::size_t>(M)),
      e_hat(static_cast<std::size_t>(M));
  for (std::int64_t k = 0; k < M; ++k) {
    v[k] = select(regions, k);
    v_hat[k] = normalize_columns(v[k]);
    e_hat[k] = normalize_columns(slice(select(words.e, k), 1, 0, word_count(words, k)));
  }
  std::vector<Tensor> scores;
  for (std::int64_t k = 0; k < M; ++k)
    for (std::int64_t l = 0; l < M; ++l) scores.push_back(score_from_parts(v[k], v_hat[k], e_hat[l], cfg));
  const Tensor word_scores = reshape(concat(scores, 0), {M, M});

  const Tensor g_hat = normalize_columns(transpose(global));    // (D, M)
  const Tensor s_hat = normalize_columns(transpose(sentence));  // (D, M)
  const Tensor sentence_scores = scale(matmul(g_hat, s_hat, true, false), cfg.gamma3);
  return damsm_loss_from_scores(word_scores, sentence_scores, cfg);
}

RetrievalStats retrieval_from_scores(const Eigen::MatrixXd& scores) {
  const Eigen::Index n = scores.rows();
  if (n == 0 || scores.cols() != n) throw ShapeError("retrieval: score matrix must be square and non-empty");
  RetrievalStats st;
  st.items = n;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index above_c2i = 0, above_i2c = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      above_c2i += scores(j, i) >= scores(i, i);
      above_i2c += scores(i, j) >= scores(i, i);
    }
    st.top1_c2i += above_c2i < 1;
    st.top5_c2i += above_c2i < 5;
    st.top1_i2c += above_i2c < 1;
    st.top5_i2c += above_i2c < 5;
  }
  const double d = static_cast<double>(n);
  st.top1_c2i /= d;
  st.top5_c2i /= d;
  st.top1_i2c /= d;
  st.top5_i2c /= d;
  return st;
}

Eigen::MatrixXd score_matrix(const DamsmEncoders& enc, const std::vector<Image>& images,
                             const std::vector<const TokenizedCaption*>& captions, const DamsmConfig& cfg) {
  if (images.empty() || captions.empty()) throw DatasetError("score_matrix: nothing to score");
  NoGradGuard no_grad;
  const Tensor regions = enc.image(images_to_tensor(images)).regions;
  const auto text = enc.text(make_caption_batch(captions));
  std::vector<Eigen::MatrixXd> v, e;
  for (std::int64_t k = 0; k < regions.dim(0); ++k) v.push_back(item_matrix(regions, k, regions.dim(2)));
  for (std::int64_t l = 0; l < text.words.batch(); ++l) e.push_back(item_matrix(text.words.e, l, word_count(text.words, l)));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(e.size()));
  for (std::size_t k = 0; k < v.size(); ++k)
    for (std::size_t l = 0; l < e.size(); ++l)
      out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) = matching_score_value(v[k], e[l], cfg);
  return out;
}

RetrievalStats retrieval_eval(const DamsmEncoders& enc, const std::vector<Image>& images,
                              const std::vector<CaptionRecord>& records, const DamsmConfig& cfg) {
  if (records.empty() || images.size() != records.size()) throw DatasetError("retrieval_eval: empty or misaligned test set");
  std::vector<const TokenizedCaption*> captions;
  for (const auto& r : records) {
    if (r.captions.empty()) throw DatasetError("retrieval_eval: record without captions");
    captions.push_back(&r.captions[0]);
  }
  return retrieval_from_scores(score_matrix(enc, images, captions, cfg));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, RngStream& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t bs = std::min<std::size_t>(n, static_cast<std::size_t>(batch_size));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; bs > 0 && start + bs <= n; start += bs) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(start + bs));
  }
  return out;
}

std::vector<Image> gather_images(const ImageSet& set, const std::vector<std::size_t>& index) {
  std::vector<Image> out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(set.images[i]);
  return out;
}

std::vector<DamsmEpoch> train_damsm(DamsmEncoders& enc, const ImageSet& train, const ImageSet& test,
                                    const DamsmConfig& cfg, std::uint64_t seed, const DamsmEpochCallback& on_epoch) {
  cfg.validate();
  if (train.records.size() < 2 || train.images.size() != train.records.size()) {
    throw DatasetError("train_damsm: need at least 2 aligned training records");
  }
  const auto params = enc.params();
  Adam adam(params, {cfg.learning_rate, 0.9, 0.999, 1e-8});
  RngStream order_rng(seed, "damsm/order");
  RngStream caption_rng(seed, "damsm/caption");
  RngStream dropout_rng(seed, "damsm/dropout");

  std::vector<DamsmEpoch> history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    DamsmEpoch row;
    row.epoch = epoch;
    int batches = 0;
    try {
      for (const auto& idx : epoch_batches(train.records.size(), cfg.batch_size, order_rng)) {
        std::vector<const TokenizedCaption*> caps;
        for (auto i : idx) {
          const auto& r = train.records[i];
          caps.push_back(&r.captions[caption_rng.below(r.captions.size())]);
        }
        const auto text = enc.text(make_caption_batch(caps), true, &dropout_rng);
        const auto img = enc.image(images_to_tensor(gather_images(train, idx)));
        const DamsmLoss loss = damsm_loss(img.regions, img.global, text.words, text.sentence, cfg);
        adam.zero_grad();
        loss.total.backward();
        adam.step();
        const auto r = loss.report();
        row.loss.lw1 += r.lw1;
        row.loss.lw2 += r.lw2;
        row.loss.ls1 += r.ls1;
        row.loss.ls2 += r.ls2;
        row.loss.total += r.total;
        ++batches;
      }
    } catch (const NumericsError& e) {
      throw TrainingError("DAMSM training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    for (double* x : {&row.loss.lw1, &row.loss.lw2, &row.loss.ls1, &row.loss.ls2, &row.loss.total}) *x /= batches;
    if (!std::isfinite(row.loss.total)) {
      throw TrainingError("DAMSM training diverged at epoch " + std::to_string(epoch) + ": non-finite loss");
    }
    if (!test.records.empty()) {
      const auto st = retrieval_eval(enc, test.images, test.records, cfg);
      row.top1_c2i = st.top1_c2i;
      row.top1_i2c = st.top1_i2c;
    }
    history.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return history;
}

std::string damsm_history_csv(const std::vector<DamsmEpoch>& history) {
  std::string out = "epoch,lw1,lw2,ls1,ls2,total,top1_c2i,top1_i2c\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", h.epoch, h.loss.lw1, h.loss.lw2,
                  h.loss.ls1, h.loss.ls2, h.loss.total, h.top1_c2i, h.top1_i2c);
    out += buf;
  }
  return out;
}

}  // namespace t2i
