#pragma once

#include <Eigen/Dense>

namespace t2i {

/// Symmetric square root of a symmetric positive semi-definite matrix.
///
/// Eigenvalues down to -1e-8 * max(1, |lambda_max|) are treated as rounding
/// noise and clamped to zero; anything more negative, or an asymmetry above
/// 1e-8 * max(1, max|A|), raises LinAlgError. The result is symmetrised.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& a);

/// Largest absolute entry of A - A^T.
double asymmetry(const Eigen::MatrixXd& a);

}  // namespace t2i
