#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "t2i/damsm.hpp"
#include "t2i/errors.hpp"
#include "t2i/gradcheck.hpp"
#include "test_util.hpp"
#include "toy_fixture.hpp"

using namespace t2i;
using t2i::testing::random_normal;
using t2i::testing::random_tensor;
using t2i::testing::toy;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (std::int64_t i = 0; i < t.dim(0); ++i)
    for (std::int64_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at({i, j});
  return m;
}

double cosine(const Mat& a, std::size_t ca, const Mat& b, std::size_t cb) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    dot += a[d][ca] * b[d][cb];
    na += a[d][ca] * a[d][ca];
    nb += b[d][cb] * b[d][cb];
  }
  return dot / std::sqrt(na * nb);
}

// Literal step-by-step reading of the matching score.
double score_oracle(const Mat& v, const Mat& e, const DamsmConfig& cfg) {
  const std::size_t D = v.size(), N = v[0].size(), n = e[0].size();
  Mat s(n, std::vector<double>(N));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < N; ++j) s[i][j] = cosine(e, i, v, j);
  for (std::size_t j = 0; j < N; ++j) {  // softmax over words
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(s[i][j]);
    for (std::size_t i = 0; i < n; ++i) s[i][j] = std::exp(s[i][j]) / z;
  }
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < N; ++j) z += std::exp(cfg.gamma1 * s[i][j]);
    Mat c(D, std::vector<double>(1, 0.0));
    for (std::size_t j = 0; j < N; ++j) {
      const double a = std::exp(cfg.gamma1 * s[i][j]) / z;
      for (std::size_t d = 0; d < D; ++d) c[d][0] += a * v[d][j];
    }
    acc += std::exp(cfg.gamma2 * cosine(c, 0, e, i));
  }
  return std::log(acc) / cfg.gamma2;
}

// Direct enumeration of the four loss terms from score matrices.
double nll_rows(const Mat& m, double scale_by) {
  double total = 0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    double z = 0;
    for (double x : m[k]) z += std::exp(scale_by * x);
    total -= std::log(std::exp(scale_by * m[k][k]) / z);
  }
  return total;
}

Mat transpose_mat(const Mat& m) {
  Mat t(m[0].size(), std::vector<double>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j) t[j][i] = m[i][j];
  return t;
}

WordFeatures prefix_words(const Tensor& e, const std::vector<std::int64_t>& counts) {
  WordFeatures w;
  w.e = e;
  const std::int64_t T = e.dim(2);
  w.mask.assign(static_cast<std::size_t>(e.dim(0) * T), 0);
  for (std::size_t b = 0; b < counts.size(); ++b) {
    for (std::int64_t t = 0; t < counts[b]; ++t) w.mask[b * T + t] = 1;
    w.lengths.push_back(counts[b] + 1);
  }
  return w;
}

}  // namespace

TEST_CASE("matching_score: perfect single pair and rescaling") {
  DamsmConfig cfg;
  const Tensor v({3, 1}, {0.3, -1.2, 2.0});
  CHECK(std::abs(matching_score(v, v, cfg).item() - 1.0) < 1e-12);

  RngStream rng(1, "scale");
  const Tensor V = random_normal({6, 4}, rng, 1.0, false), E = random_normal({6, 3}, rng, 1.0, false);
  const double r = matching_score(V, E, cfg).item();
  CHECK(std::abs(matching_score(scale(V, 3.0), scale(E, 3.0), cfg).item() - r) < 1e-9);
  CHECK_THROWS_AS(matching_score(Tensor::zeros({6, 4}), E, cfg), NumericsError);
}

TEST_CASE("matching_score matches the step-by-step oracle (3 words x 4 regions)") {
  DamsmConfig cfg;
  RngStream rng(2, "oracle");
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor V = random_normal({5, 4}, rng, 1.0, false), E = random_normal({5, 3}, rng, 1.0, false);
    const double tape = matching_score(V, E, cfg).item();
    CHECK(std::abs(tape - score_oracle(to_mat(V), to_mat(E), cfg)) < 1e-9);
    Eigen::MatrixXd v(5, 4), e(5, 3);
    for (int d = 0; d < 5; ++d) {
      for (int j = 0; j < 4; ++j) v(d, j) = V.at({d, j});
      for (int i = 0; i < 3; ++i) e(d, i) = E.at({d, i});
    }
    CHECK(std::abs(matching_score_value(v, e, cfg) - tape) < 1e-12);
    // Word order does not matter.
    Eigen::MatrixXd p(5, 3);
    p << e.col(2), e.col(0), e.col(1);
    CHECK(std::abs(matching_score_value(v, p, cfg) - tape) < 1e-12);
  }
}

TEST_CASE("damsm_loss: batch precondition and uniform closed form") {
  DamsmConfig cfg;
  CHECK_THROWS_AS(damsm_loss_from_scores(Tensor::full({1, 1}, 0.5), Tensor::full({1, 1}, 0.5), cfg), BatchError);
  const auto uniform = damsm_loss_from_scores(Tensor::full({2, 2}, 0.7), Tensor::full({2, 2}, 0.1), cfg);
  CHECK(std::abs(uniform.lw1.item() - 2 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(uniform.lw2.item() - 2 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(uniform.total.item() - 8 * std::log(2.0)) < 1e-12);

  RngStream rng(3, "m1");
  WordFeatures w = prefix_words(random_normal({1, 4, 3}, rng, 1.0, false), {2});
  CHECK_THROWS_AS(damsm_loss(random_normal({1, 4, 5}, rng, 1.0, false), random_normal({1, 4}, rng, 1.0, false), w,
                             random_normal({1, 4}, rng, 1.0, false), cfg),
                  BatchError);
}

TEST_CASE("damsm_loss matches brute-force enumeration (M = 4)") {
  DamsmConfig cfg;
  RngStream rng(4, "enum");
  const std::int64_t M = 4, D = 6, N = 5, T = 4;
  const std::vector<std::int64_t> counts{4, 2, 3, 1};
  const Tensor regions = random_normal({M, D, N}, rng, 1.0, false);
  const Tensor global = random_normal({M, D}, rng, 1.0, false);
  const Tensor words = random_normal({M, D, T}, rng, 1.0, false);
  const Tensor sentence = random_normal({M, D}, rng, 1.0, false);
  const auto loss = damsm_loss(regions, global, prefix_words(words, counts), sentence, cfg);

  Mat R(M, std::vector<double>(M)), S(M, std::vector<double>(M));
  const Mat g = transpose_mat(to_mat(global)), s = transpose_mat(to_mat(sentence));
  for (std::int64_t k = 0; k < M; ++k)
    for (std::int64_t l = 0; l < M; ++l) {
      const Mat v = to_mat(select(regions, k));
      Mat e = to_mat(select(words, l));
      for (auto& row : e) row.resize(static_cast<std::size_t>(counts[l]));
      R[k][l] = score_oracle(v, e, cfg);
      S[k][l] = cosine(g, k, s, l);
    }
  const double lw1 = nll_rows(R, cfg.gamma3), lw2 = nll_rows(transpose_mat(R), cfg.gamma3);
  const double ls1 = nll_rows(S, cfg.gamma3), ls2 = nll_rows(transpose_mat(S), cfg.gamma3);
  const auto rep = loss.report();
  CHECK(std::abs(rep.lw1 - lw1) < 1e-8);
  CHECK(std::abs(rep.lw2 - lw2) < 1e-8);
  CHECK(std::abs(rep.ls1 - ls1) < 1e-8);
  CHECK(std::abs(rep.ls2 - ls2) < 1e-8);
  CHECK(std::abs(rep.total - (lw1 + lw2 + ls1 + ls2)) < 1e-8);
  CHECK(std::abs(rep.total - (rep.lw1 + rep.lw2 + rep.ls1 + rep.ls2)) < 1e-9);
  for (double x : {rep.lw1, rep.lw2, rep.ls1, rep.ls2}) CHECK(x >= 0.0);
}

TEST_CASE("damsm_loss: posteriors, batch permutation and gamma3 monotonicity") {
  RngStream rng(5, "props");
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t M = 2 + static_cast<std::int64_t>(rng.below(5));
    const Tensor W = random_tensor({M, M}, rng, -1, 1, false), S = random_tensor({M, M}, rng, -1, 1, false);
    DamsmConfig cfg;
    const auto base = damsm_loss_from_scores(W, S, cfg);

    const Tensor post = softmax(scale(W, cfg.gamma3), 1);
    for (std::int64_t k = 0; k < M; ++k) {
      double row = 0;
      for (std::int64_t l = 0; l < M; ++l) row += post.at({k, l});
      CHECK(std::abs(row - 1.0) < 1e-9);
    }

    std::vector<std::int64_t> perm(static_cast<std::size_t>(M));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> wp(static_cast<std::size_t>(M * M)), sp(static_cast<std::size_t>(M * M));
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < M; ++j) {
        wp[i * M + j] = W.at({perm[i], perm[j]});
        sp[i * M + j] = S.at({perm[i], perm[j]});
      }
    const auto permuted = damsm_loss_from_scores(Tensor({M, M}, wp), Tensor({M, M}, sp), cfg).report();
    const auto b = base.report();
    CHECK(std::abs(permuted.lw1 - b.lw1) < 1e-9);
    CHECK(std::abs(permuted.lw2 - b.lw2) < 1e-9);
    CHECK(std::abs(permuted.ls1 - b.ls1) < 1e-9);
    CHECK(std::abs(permuted.ls2 - b.ls2) < 1e-9);

    // Row 0 has a unique maximum; a sharper gamma3 raises its posterior.
    std::int64_t arg = 0;
    for (std::int64_t l = 1; l < M; ++l)
      if (W.at({0, l}) > W.at({0, arg})) arg = l;
    const double p10 = softmax(scale(W, 10.0), 1).at({0, arg});
    const double p20 = softmax(scale(W, 20.0), 1).at({0, arg});
    CHECK(p20 > p10);
  }
}

TEST_CASE("damsm_loss passes grad_check end-to-end") {
  DamsmConfig cfg;
  RngStream rng(6, "grad");
  Tensor regions = random_normal({3, 4, 5}, rng);
  Tensor global = random_normal({3, 4}, rng);
  Tensor words = random_normal({3, 4, 3}, rng);
  Tensor sentence = random_normal({3, 4}, rng);
  const auto wf = [&] { return prefix_words(words, {3, 1, 2}); };
  std::vector<NamedTensor> ps{{"regions", regions}, {"global", global}, {"words", words}, {"sentence", sentence}};
  const auto r = grad_check([&] { return damsm_loss(regions, global, wf(), sentence, cfg).total; }, ps);
  INFO(r.worst_parameter, " ", r.max_rel_err);
  CHECK(r.passed);
  CHECK(r.max_rel_err < 1e-4);

  // Through both encoders.
  EncoderConfig ec;
  ec.vocab_size = 6;
  ec.embed_dim = 3;
  ec.hidden = 2;
  ec.dim = 4;
  ec.image_size = 16;
  ec.channels = {2, 2, 3, 2};
  DamsmEncoders enc(ec, 7);
  Tensor images = random_tensor({2, 3, 16, 16}, rng, -1, 1, false);
  TokenizedCaption c0{{3, 4, 2, 0}, 3, ""}, c1{{5, 2, 0, 0}, 2, ""};
  const auto batch = make_caption_batch({&c0, &c1});
  const auto params = enc.params();
  GradCheckOptions opt;
  opt.max_coords_per_param = 12;
  // Some gradients are ~1e-5 on a loss near 9, where central differences
  // carry ~1e-9 of roundoff; judge those against an absolute floor.
  opt.abs_floor = 1e-4;
  const auto r2 = grad_check(
      [&] {
        const auto t = enc.text(batch);
        const auto i = enc.image(images);
        return damsm_loss(i.regions, i.global, t.words, t.sentence, cfg).total;
      },
      params, opt);
  INFO(r2.worst_parameter, " ", r2.max_rel_err);
  CHECK(r2.passed);
}

TEST_CASE("retrieval_from_scores: perfect fixture and hand-counted ranks") {
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(7, 7);
  const auto p = retrieval_from_scores(eye);
  CHECK(p.top1_c2i == 1.0);
  CHECK(p.top1_i2c == 1.0);

  // Rows are images, columns captions.
  Eigen::MatrixXd s(3, 3);
  s << 0.9, 0.1, 0.8,
       0.5, 0.2, 0.3,
       0.4, 0.7, 0.6;
  // caption 0: image 0 best (0.9) -> hit; caption 1: 0.2 below 0.7 -> miss;
  // caption 2: 0.6 below 0.8 -> miss. image 0: 0.9 best -> hit; image 1: 0.2
  // below 0.5 -> miss; image 2: 0.6 below 0.7 -> miss.
  const auto h = retrieval_from_scores(s);
  CHECK(h.top1_c2i == doctest::Approx(1.0 / 3));
  CHECK(h.top1_i2c == doctest::Approx(1.0 / 3));
  CHECK(h.top5_c2i == 1.0);
  // Ties count against the true partner.
  CHECK(retrieval_from_scores(Eigen::MatrixXd::Ones(2, 2)).top1_c2i == 0.0);
}

TEST_CASE("retrieval_eval: shared one-hot features give perfect retrieval") {
  // Each pair shares a one-hot direction for every region and word.
  DamsmConfig cfg;
  std::vector<Eigen::MatrixXd> v, e;
  Eigen::MatrixXd scores(6, 6);
  for (int k = 0; k < 6; ++k) {
    v.push_back(Eigen::MatrixXd::Zero(6, 4));
    v.back().row(k).setOnes();
    e.push_back(Eigen::MatrixXd::Zero(6, 2));
    e.back().row(k).setConstant(2.0);
  }
  for (int k = 0; k < 6; ++k)
    for (int l = 0; l < 6; ++l) scores(k, l) = matching_score_value(v[k], e[l], cfg);
  CHECK(retrieval_from_scores(scores).top1_c2i == 1.0);
}


TEST_CASE("retrieval_eval: untrained encoders sit at chance") {
  auto f = toy(100, 3);
  ImageSet all = f.train;
  all.records.insert(all.records.end(), f.test.records.begin(), f.test.records.end());
  all.images.insert(all.images.end(), f.test.images.begin(), f.test.images.end());
  REQUIRE(all.records.size() == 100);
  EncoderConfig ec;
  ec.vocab_size = f.vocab.size();
  DamsmConfig cfg;
  double hits = 0;
  const int seeds = 5;
  for (int s = 0; s < seeds; ++s) hits += retrieval_eval(DamsmEncoders(ec, 100 + s), all.images, all.records, cfg).top1_c2i;
  // Mean of 5 runs, each Binomial(100, 0.01) / 100; 3 sigma band.
  const double mean = hits / seeds;
  const double sigma = std::sqrt(0.01 * 0.99 / (100.0 * seeds));
  CHECK(std::abs(mean - 0.01) <= 3 * sigma);
}

TEST_CASE("train_damsm: deterministic history, descent and CSV layout") {
  auto f = toy(48, 5);
  EncoderConfig ec;
  ec.vocab_size = f.vocab.size();
  DamsmConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  DamsmEncoders a(ec, 1), b(ec, 1);
  const auto ha = train_damsm(a, f.train, f.test, cfg, 9);
  const auto hb = train_damsm(b, f.train, f.test, cfg, 9);
  REQUIRE(ha.size() == 3);
  CHECK(damsm_history_csv(ha) == damsm_history_csv(hb));
  CHECK(ha.back().loss.total < ha.front().loss.total);
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(), pb[i].tensor.values().begin()));
  const auto csv = damsm_history_csv(ha);
  CHECK(csv.rfind("epoch,lw1,lw2,ls1,ls2,total,top1_c2i,top1_i2c\n1,", 0) == 0);

  DamsmConfig bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(train_damsm(a, f.train, f.test, bad, 9), ConfigError);
}
