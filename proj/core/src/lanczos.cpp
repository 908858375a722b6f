#include "vibus/spectral.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

namespace vibus {

namespace {

Eigen::VectorXd random_unit(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v.normalized();
}

// Two passes of classical Gram-Schmidt against the first m basis columns.
void reorthogonalize(const Eigen::MatrixXd& basis, Eigen::Index m, Eigen::VectorXd& w) {
  for (int pass = 0; pass < 2; ++pass) {
    const auto q = basis.leftCols(m);
    w -= q * (q.transpose() * w);
  }
}

struct LanczosRun {
  EigenPairs pairs;
  bool converged = false;
};

using MatVec = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

LanczosRun lanczos(Eigen::Index n, const MatVec& apply, Eigen::Index kk, Eigen::Index cap, double scale,
                   double tolerance, std::mt19937_64& rng) {
  Eigen::MatrixXd basis(n, cap);
  std::vector<double> alpha, beta;
  basis.col(0) = random_unit(n, rng);
  const double breakdown = 1e-12 * std::max(1.0, scale);

  Eigen::VectorXd ritz_values, residual_est;
  Eigen::MatrixXd ritz_coeffs;
  double norm_est = 0.0;
  Eigen::Index m = 0;

  auto ritz = [&](Eigen::Index dim, double last_beta) {
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      t(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < dim) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    // Largest first.
    ritz_values = es.eigenvalues().reverse().head(kk);
    ritz_coeffs = es.eigenvectors().rowwise().reverse().leftCols(kk);
    norm_est = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    residual_est = (last_beta * ritz_coeffs.row(dim - 1).transpose()).cwiseAbs();
  };
  auto result = [&](bool converged, const Eigen::VectorXd& res) {
    LanczosRun run;
    run.pairs.values = ritz_values;
    run.pairs.vectors = basis.leftCols(m) * ritz_coeffs;
    run.pairs.residuals = res;
    run.pairs.krylov_dim = static_cast<std::size_t>(m);
    run.converged = converged;
    return run;
  };

  for (Eigen::Index j = 0; j < cap; ++j) {
    Eigen::VectorXd w = apply(basis.col(j));
    alpha.push_back(basis.col(j).dot(w));
    reorthogonalize(basis, j + 1, w);
    const double b = w.norm();
    m = j + 1;

    const bool check = m >= kk && ((m - kk) % 5 == 0 || m == cap || b < breakdown);
    if (check) {
      ritz(m, b < breakdown ? 0.0 : b);
      if (m == n || (residual_est.array() <= tolerance * norm_est).all()) {
        // Confirm with explicit residuals.
        const Eigen::MatrixXd vecs = basis.leftCols(m) * ritz_coeffs;
        Eigen::VectorXd res(kk);
        for (Eigen::Index i = 0; i < kk; ++i) res(i) = (apply(vecs.col(i)) - ritz_values(i) * vecs.col(i)).norm();
        if ((res.array() <= tolerance * norm_est).all() || m == n) return result(true, res);
      }
    }
    if (j + 1 == cap) break;
    if (b < breakdown) {
      // Invariant subspace found: continue from a fresh orthogonal direction.
      Eigen::VectorXd fresh = random_unit(n, rng);
      reorthogonalize(basis, j + 1, fresh);
      if (fresh.norm() < 1e-8) break;
      basis.col(j + 1) = fresh.normalized();
      beta.push_back(0.0);
    } else {
      basis.col(j + 1) = w / b;
      beta.push_back(b);
    }
  }
  ritz(m, beta.size() >= static_cast<std::size_t>(m) ? beta[static_cast<std::size_t>(m - 1)] : 0.0);
  return result(false, residual_est);
}

}  // namespace

EigenPairs top_k_eigenvectors(const Eigen::MatrixXd& a, std::size_t k, const LanczosOptions& opts) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("eigensolver needs a square matrix");
  if (k < 1 || static_cast<Eigen::Index>(k) > n)
    throw std::invalid_argument("requested " + std::to_string(k) + " eigenpairs of a " + std::to_string(n) +
                                "x" + std::to_string(n) + " matrix");
  if (!a.isApprox(a.transpose(), 1e-12) && (a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("eigensolver needs a symmetric matrix");

  const auto kk = static_cast<Eigen::Index>(k);
  const Eigen::Index cap = opts.max_krylov > 0
                               ? std::min<Eigen::Index>(n, static_cast<Eigen::Index>(opts.max_krylov))
                               : std::min<Eigen::Index>(n, std::max<Eigen::Index>(20 * kk, 1000));
  if (cap < kk) throw std::invalid_argument("Krylov dimension cap below the requested eigenpair count");

  std::mt19937_64 rng(opts.seed);
  const double scale = a.cwiseAbs().maxCoeff();
  const MatVec plain = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x; };
  LanczosRun run = lanczos(n, plain, kk, cap, scale, opts.tolerance, rng);
  if (!run.converged)
    throw EigenSolverError("Lanczos did not converge within a Krylov dimension of " + std::to_string(cap),
                           run.pairs.residuals);
  EigenPairs best = std::move(run.pairs);

  // A single Krylov sequence sees one direction per distinct eigenvalue, so
  // repeated eigenvalues can be missed. Shift the found pairs below the
  // spectrum and look for anything left above the k-th value.
  const double norm = std::max(a.cwiseAbs().rowwise().sum().maxCoeff(), 1e-300);
  const double slack = 10.0 * opts.tolerance * std::max(best.values.cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index round = 0; round < kk && best.vectors.cols() < n; ++round) {
    const Eigen::MatrixXd v = best.vectors;
    const Eigen::VectorXd shift = best.values.array() + 2.0 * norm;
    const MatVec deflated = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return a * x - v * shift.cwiseProduct(v.transpose() * x);
    };
    const Eigen::Index extra = std::min(kk, n - kk);
    const LanczosRun probe = lanczos(n, deflated, 1, cap, scale + 2.0 * norm, opts.tolerance, rng);
    if (!(probe.pairs.values(0) > best.values(kk - 1) + slack)) break;
    LanczosRun more = lanczos(n, deflated, extra, cap, scale + 2.0 * norm, opts.tolerance, rng);
    if (!more.converged)
      throw EigenSolverError("Lanczos did not converge on the deflated operator", more.pairs.residuals);

    std::vector<std::pair<double, Eigen::VectorXd>> pool;
    for (Eigen::Index i = 0; i < kk; ++i) pool.emplace_back(best.values(i), best.vectors.col(i));
    for (Eigen::Index i = 0; i < extra; ++i) pool.emplace_back(more.pairs.values(i), more.pairs.vectors.col(i));
    std::stable_sort(pool.begin(), pool.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    for (Eigen::Index i = 0; i < kk; ++i) {
      best.values(i) = pool[static_cast<std::size_t>(i)].first;
      best.vectors.col(i) = pool[static_cast<std::size_t>(i)].second;
    }
    best.krylov_dim += more.pairs.krylov_dim;
  }
  for (Eigen::Index i = 0; i < kk; ++i)
    best.residuals(i) = (a * best.vectors.col(i) - best.values(i) * best.vectors.col(i)).norm();
  return best;
}

}  // namespace vibus
