#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "t2i/encoders.hpp"
#include "t2i/textdata.hpp"

namespace t2i {

struct DamsmConfig {
  double gamma1 = 4.0;
  double gamma2 = 5.0;
  double gamma3 = 10.0;
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 2e-3;

  void validate() const;
};

/// R for one pair. v (D, N) regions, e (D, n) word columns (attendable only).
Tensor matching_score(const Tensor& v, const Tensor& e, const DamsmConfig& cfg);

/// Same value without a tape, for ranking many pairs.
double matching_score_value(const Eigen::MatrixXd& v, const Eigen::MatrixXd& e, const DamsmConfig& cfg);

struct DamsmLossReport {
  double lw1 = 0, lw2 = 0, ls1 = 0, ls2 = 0, total = 0;
};

struct DamsmLoss {
  Tensor lw1, lw2, ls1, ls2, total;
  Tensor word_scores;      // (M, M), R(image k, caption l)
  Tensor sentence_scores;  // (M, M), gamma3 * cos(v_bar_k, e_bar_l)
  DamsmLossReport report() const;
};

/// Row k of every input is pair k. regions (M, D, N), global (M, D),
/// sentence (M, D).
DamsmLoss damsm_loss(const Tensor& regions, const Tensor& global, const WordFeatures& words, const Tensor& sentence,
                     const DamsmConfig& cfg);
/// Loss terms from precomputed score matrices (rows: images, columns: captions).
DamsmLoss damsm_loss_from_scores(const Tensor& word_scores, const Tensor& sentence_scores, const DamsmConfig& cfg);

struct RetrievalStats {
  double top1_c2i = 0, top5_c2i = 0, top1_i2c = 0, top5_i2c = 0;
  std::int64_t items = 0;
};

/// scores(k, l) rates image k against caption l; pair (k, k) is the truth.
/// A partner ranks r when r - 1 other candidates score >= it.
RetrievalStats retrieval_from_scores(const Eigen::MatrixXd& scores);

/// Word-level score matrix for a set of records (caption `caption_index` of
/// each record), encoders in eval mode.
Eigen::MatrixXd score_matrix(const DamsmEncoders& enc, const std::vector<Image>& images,
                             const std::vector<const TokenizedCaption*>& captions, const DamsmConfig& cfg);

/// Ranks every test image against caption 0 of every test image.
RetrievalStats retrieval_eval(const DamsmEncoders& enc, const std::vector<Image>& images,
                              const std::vector<CaptionRecord>& records, const DamsmConfig& cfg);

struct DamsmEpoch {
  int epoch = 0;  // 1-based
  DamsmLossReport loss;
  double top1_c2i = 0, top1_i2c = 0;
};

/// Images are indexed like the records they belong to.
struct ImageSet {
  std::vector<CaptionRecord> records;
  std::vector<Image> images;
};

using DamsmEpochCallback = std::function<void(const DamsmEpoch&)>;

/// Adam on the total loss, one caption per image per epoch, drop-last
/// batching. One history row per epoch; losses are batch means taken before
/// each update. Deterministic in `seed`.
std::vector<DamsmEpoch> train_damsm(DamsmEncoders& enc, const ImageSet& train, const ImageSet& test,
                                    const DamsmConfig& cfg, std::uint64_t seed,
                                    const DamsmEpochCallback& on_epoch = {});

/// CSV with header epoch,lw1,lw2,ls1,ls2,total,top1_c2i,top1_i2c.
std::string damsm_history_csv(const std::vector<DamsmEpoch>& history);

/// Batch helpers shared with GAN training.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, RngStream& rng);
std::vector<Image> gather_images(const ImageSet& set, const std::vector<std::size_t>& index);

}  // namespace t2i
