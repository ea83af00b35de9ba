#include "t2i/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "t2i/errors.hpp"

namespace t2i {

double asymmetry(const Eigen::MatrixXd& a) {
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw LinAlgError("sqrtm_psd: expected a non-empty square matrix, got " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()));
  }
  if (!a.allFinite()) throw LinAlgError("sqrtm_psd: non-finite entry");
  const double magnitude = std::max(1.0, a.cwiseAbs().maxCoeff());
  if (asymmetry(a) > 1e-8 * magnitude) {
    throw LinAlgError("sqrtm_psd: matrix is not symmetric (asymmetry " + std::to_string(asymmetry(a)) + ")");
  }
  const Eigen::MatrixXd sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw LinAlgError("sqrtm_psd: eigendecomposition failed");
  Eigen::VectorXd lambda = solver.eigenvalues();
  const double floor = -1e-8 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < floor) {
      throw LinAlgError("sqrtm_psd: matrix is indefinite (eigenvalue " + std::to_string(lambda(i)) + ")");
    }
    lambda(i) = std::sqrt(std::max(lambda(i), 0.0));
  }
  const Eigen::MatrixXd& q = solver.eigenvectors();
  Eigen::MatrixXd root = q * lambda.asDiagonal() * q.transpose();
  return 0.5 * (root + root.transpose());
}

}  // namespace t2i
