#pragma once

#include <Eigen/Core>

namespace vibus {

/// H x D representation matrix: one row per sampled point, one column per
/// feature channel.
using FeatureMatrix = Eigen::MatrixXd;

/// Columns whose centered norm falls below this are treated as constant.
inline constexpr double kColumnNormEpsilon = 1e-12;

struct VBConfig {
  /// Off-diagonal scale of the cross-correlation penalty. Required: there is
  /// no meaningful default, so a non-positive value fails validation.
  double lambda = 0.0;
  int feature_dim = 512;
  std::size_t fps_target = 1024;
  /// Train on the squared Frobenius norm (smooth at the optimum).
  bool squared_norm = true;
};

void validate(const VBConfig& cfg);

/// Centers each column and scales it to unit Euclidean norm. Constant
/// columns become zero. Throws for fewer than two rows.
FeatureMatrix column_normalize(const FeatureMatrix& z);

/// D x D cross-correlation of the column-normalized views. Inputs are
/// normalized here (normalization is idempotent), so entries lie in [-1, 1].
Eigen::MatrixXd cross_correlation(const FeatureMatrix& zp, const FeatureMatrix& zq);

/// ||Gamma_lambda(Z) - I||_F, squared when cfg.squared_norm. Gamma_lambda
/// scales the off-diagonal entries by lambda.
double vb_loss(const Eigen::MatrixXd& z, const VBConfig& cfg);

struct VBLossGradient {
  double loss = 0.0;
  FeatureMatrix grad_p;  // d loss / d zp, same shape as zp
  FeatureMatrix grad_q;
};

/// Loss of cross_correlation(zp, zq) and its exact gradient through the
/// correlation and the column normalization of both views.
VBLossGradient vb_loss_grad(const FeatureMatrix& zp, const FeatureMatrix& zq, const VBConfig& cfg);

/// log|Sigma + eps*I| of the D x D sample covariance of the rows of z.
double logdet_covariance(const FeatureMatrix& z, double eps = 1e-6);

}  // namespace vibus
