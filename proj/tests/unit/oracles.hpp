#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "t2i/metrics.hpp"

namespace t2i::testing {

// Independent reference implementations for the metric formulas. Plain
// nested vectors and loops, nothing shared with the library.

using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t n) { return Mat(n, std::vector<double>(n, 0.0)); }

inline Mat from_eigen(const Eigen::MatrixXd& m) {
  Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a.size(); ++k)
      for (std::size_t j = 0; j < a.size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// Cyclic Jacobi rotations on a symmetric matrix; returns eigenvalues, and the
// eigenvectors as columns of V.
inline std::vector<double> jacobi(Mat a, Mat& v) {
  const std::size_t n = a.size();
  v = zeros(n);
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
  return ev;
}

inline Mat jacobi_sqrt(const Mat& a) {
  Mat v;
  const auto ev = jacobi(a, v);
  Mat r = zeros(a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      for (std::size_t k = 0; k < a.size(); ++k) r[i][j] += v[i][k] * std::sqrt(std::max(ev[k], 0.0)) * v[j][k];
  return r;
}

inline double fid_oracle(const GaussianStats& a, const GaussianStats& b) {
  double mean = 0;
  for (Eigen::Index i = 0; i < a.mu.size(); ++i) mean += (a.mu(i) - b.mu(i)) * (a.mu(i) - b.mu(i));
  const Mat sa = from_eigen(a.sigma), sb = from_eigen(b.sigma);
  const Mat ra = jacobi_sqrt(sa);
  Mat v;
  const auto ev = jacobi(matmul(matmul(ra, sb), ra), v);
  double tr = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) tr += sa[i][i] + sb[i][i];
  for (double e : ev) tr -= 2.0 * std::sqrt(std::max(e, 0.0));
  return mean + tr;
}

// Per-split exp(mean KL(p(y|x) || p(y))), marginal by direct summation.
inline double is_oracle(const Eigen::MatrixXd& p, int splits) {
  std::vector<double> scores;
  const Eigen::Index n = p.rows();
  for (int k = 0; k < splits; ++k) {
    const Eigen::Index lo = n * k / splits, hi = n * (k + 1) / splits;
    std::vector<double> py(static_cast<std::size_t>(p.cols()), 0.0);
    for (Eigen::Index i = lo; i < hi; ++i)
      for (Eigen::Index c = 0; c < p.cols(); ++c) py[c] += p(i, c) / static_cast<double>(hi - lo);
    double kl = 0;
    for (Eigen::Index i = lo; i < hi; ++i)
      for (Eigen::Index c = 0; c < p.cols(); ++c)
        if (p(i, c) > 0) kl += p(i, c) * std::log(p(i, c) / py[c]);
    scores.push_back(std::exp(kl / static_cast<double>(hi - lo)));
  }
  return std::accumulate(scores.begin(), scores.end(), 0.0) / splits;
}

}  // namespace t2i::testing
