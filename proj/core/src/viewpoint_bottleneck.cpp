#include "vibus/viewpoint_bottleneck.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>

namespace vibus {

void validate(const VBConfig& cfg) {
  if (!(cfg.lambda > 0.0)) throw std::invalid_argument("VB lambda must be positive (no default is assumed)");
  if (cfg.feature_dim < 1) throw std::invalid_argument("VB feature dimension must be at least 1");
  if (cfg.fps_target < 1) throw std::invalid_argument("VB FPS target must be at least 1");
}

namespace {

struct NormalizedColumns {
  FeatureMatrix values;
  Eigen::VectorXd norms;  // centered norms; zero marks a constant column
};

NormalizedColumns normalize_with_norms(const FeatureMatrix& z) {
  if (z.rows() < 2)
    throw std::invalid_argument("column normalization needs at least 2 rows, got " + std::to_string(z.rows()));
  NormalizedColumns out;
  out.values = z.rowwise() - z.colwise().mean();
  out.norms = out.values.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    if (out.norms(j) < kColumnNormEpsilon) {
      out.values.col(j).setZero();
      out.norms(j) = 0.0;
    } else {
      out.values.col(j) /= out.norms(j);
    }
  }
  return out;
}

// Pulls a gradient w.r.t. normalized columns back to the raw columns.
FeatureMatrix normalize_backward(const NormalizedColumns& fwd, const FeatureMatrix& grad_normalized) {
  FeatureMatrix grad(fwd.values.rows(), fwd.values.cols());
  for (Eigen::Index j = 0; j < grad.cols(); ++j) {
    if (fwd.norms(j) == 0.0) {
      grad.col(j).setZero();
      continue;
    }
    const auto a = fwd.values.col(j);
    const auto g = grad_normalized.col(j);
    Eigen::VectorXd gc = (g - a * a.dot(g)) / fwd.norms(j);
    grad.col(j) = gc.array() - gc.mean();
  }
  return grad;
}

Eigen::MatrixXd scaled_residual(const Eigen::MatrixXd& z, double lambda) {
  Eigen::MatrixXd m = lambda * z;
  m.diagonal() = z.diagonal().array() - 1.0;
  return m;
}

}  // namespace

FeatureMatrix column_normalize(const FeatureMatrix& z) { return normalize_with_norms(z).values; }

Eigen::MatrixXd cross_correlation(const FeatureMatrix& zp, const FeatureMatrix& zq) {
  if (zp.rows() != zq.rows() || zp.cols() != zq.cols())
    throw std::invalid_argument("cross_correlation: views differ in shape");
  return column_normalize(zp).transpose() * column_normalize(zq);
}

double vb_loss(const Eigen::MatrixXd& z, const VBConfig& cfg) {
  if (z.rows() != z.cols()) throw std::invalid_argument("vb_loss: cross-correlation matrix must be square");
  const double sq = scaled_residual(z, cfg.lambda).squaredNorm();
  return cfg.squared_norm ? sq : std::sqrt(sq);
}

VBLossGradient vb_loss_grad(const FeatureMatrix& zp, const FeatureMatrix& zq, const VBConfig& cfg) {
  if (zp.rows() != zq.rows() || zp.cols() != zq.cols())
    throw std::invalid_argument("vb_loss_grad: views differ in shape");
  const NormalizedColumns np = normalize_with_norms(zp);
  const NormalizedColumns nq = normalize_with_norms(zq);
  const Eigen::MatrixXd c = np.values.transpose() * nq.values;
  const Eigen::MatrixXd m = scaled_residual(c, cfg.lambda);
  const double sq = m.squaredNorm();

  VBLossGradient out;
  out.loss = cfg.squared_norm ? sq : std::sqrt(sq);

  // d(sq)/dC = 2 * Gamma_lambda(M)
  Eigen::MatrixXd g = 2.0 * cfg.lambda * m;
  g.diagonal() = 2.0 * m.diagonal();
  if (!cfg.squared_norm) {
    if (out.loss > 0.0) {
      g /= 2.0 * out.loss;
    } else {
      g.setZero();
    }
  }
  // C = A^T B  =>  dA = B G^T, dB = A G
  const FeatureMatrix grad_a = nq.values * g.transpose();
  const FeatureMatrix grad_b = np.values * g;
  out.grad_p = normalize_backward(np, grad_a);
  out.grad_q = normalize_backward(nq, grad_b);
  return out;
}

double logdet_covariance(const FeatureMatrix& z, double eps) {
  if (z.rows() < 2) throw std::invalid_argument("logdet_covariance needs at least 2 rows");
  const FeatureMatrix centered = z.rowwise() - z.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(z.rows() - 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  return (es.eigenvalues().array().max(0.0) + eps).log().sum();
}

}  // namespace vibus
