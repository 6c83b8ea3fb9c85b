#pragma once

// Deterministic ensemble transform Kalman filter. The update is computed in
// the M-dimensional weight space: with unscaled observed-space anomalies Y,
//   B = (M-1)/rho * I + Y^T R^-1 Y,
//   wbar = B^-1 Y^T R^-1 (y - ybar),
//   W = symmetric sqrt of (M-1) B^-1,
// and the analysis members are xbar + X (wbar 1^T + W). The symmetric root
// keeps the transform mean-preserving, so the analysis mean is xbar + X wbar
// and the analysis covariance is X B^-1 X^T.

#include <Eigen/Dense>

#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "mrenkf/ensemble.hpp"

namespace mrenkf {

// Observation-error covariance in one of three representations. Full matrices
// are factored once (Cholesky) and solved, never inverted.
class ObsCovariance {
 public:
  enum class Kind { Scalar, Diagonal, Full };

  static ObsCovariance scalar(double variance, Index dim) {
    if (!(variance > 0.0)) {
      throw std::invalid_argument("scalar observation variance must be positive");
    }
    if (dim <= 0) throw std::invalid_argument("observation dimension must be positive");
    ObsCovariance r;
    r.kind_ = Kind::Scalar;
    r.dim_ = dim;
    r.scalar_ = variance;
    return r;
  }

  static ObsCovariance diagonal(VectorXd variances) {
    if (variances.size() == 0 || (variances.array() <= 0.0).any()) {
      throw std::invalid_argument("diagonal observation variances must be positive");
    }
    ObsCovariance r;
    r.kind_ = Kind::Diagonal;
    r.dim_ = variances.size();
    r.diag_ = std::move(variances);
    return r;
  }

  static ObsCovariance full(MatrixXd cov) {
    if (cov.rows() != cov.cols() || cov.rows() == 0) {
      throw std::invalid_argument("full observation covariance must be square");
    }
    const double scale = cov.lpNorm<Eigen::Infinity>();
    if ((cov - cov.transpose()).lpNorm<Eigen::Infinity>() > 1e-8 * std::max(1.0, scale)) {
      throw std::invalid_argument("full observation covariance is not symmetric");
    }
    ObsCovariance r;
    r.kind_ = Kind::Full;
    r.dim_ = cov.rows();
    r.full_ = std::move(cov);
    r.llt_.compute(r.full_);
    if (r.llt_.info() != Eigen::Success) {
      throw std::invalid_argument("full observation covariance is not positive definite");
    }
    return r;
  }

  Kind kind() const { return kind_; }
  Index dim() const { return dim_; }

  // R^-1 * rhs
  MatrixXd solve(const MatrixXd& rhs) const {
    check_dim(rhs.rows());
    switch (kind_) {
      case Kind::Scalar:
        return rhs / scalar_;
      case Kind::Diagonal:
        return diag_.cwiseInverse().asDiagonal() * rhs;
      case Kind::Full:
        return llt_.solve(rhs);
    }
    throw std::logic_error("unreachable");
  }

  MatrixXd dense() const {
    switch (kind_) {
      case Kind::Scalar:
        return scalar_ * MatrixXd::Identity(dim_, dim_);
      case Kind::Diagonal:
        return MatrixXd(diag_.asDiagonal());
      case Kind::Full:
        return full_;
    }
    throw std::logic_error("unreachable");
  }

  // Largest singular value. Full matrices use power iteration from a fixed
  // start vector, which is deterministic and cheap for SPD input.
  double max_singular_value() const {
    switch (kind_) {
      case Kind::Scalar:
        return scalar_;
      case Kind::Diagonal:
        return diag_.maxCoeff();
      case Kind::Full: {
        VectorXd v = VectorXd::Ones(dim_) / std::sqrt(double(dim_));
        double lambda = 0.0;
        for (int it = 0; it < 500; ++it) {
          VectorXd w = full_ * v;
          const double next = w.norm();
          w /= next;
          if (std::abs(next - lambda) <= 1e-13 * next && it > 2) return next;
          lambda = next;
          v = std::move(w);
        }
        return lambda;
      }
    }
    throw std::logic_error("unreachable");
  }

  // Draws `count` samples of N(0, R), one per column.
  MatrixXd sample(Index count, std::mt19937_64& rng) const {
    std::normal_distribution<double> nd(0.0, 1.0);
    MatrixXd z(dim_, count);
    for (Index j = 0; j < count; ++j)
      for (Index i = 0; i < dim_; ++i) z(i, j) = nd(rng);
    switch (kind_) {
      case Kind::Scalar:
        return std::sqrt(scalar_) * z;
      case Kind::Diagonal:
        return diag_.cwiseSqrt().asDiagonal() * z;
      case Kind::Full:
        return llt_.matrixL() * z;
    }
    throw std::logic_error("unreachable");
  }

 private:
  void check_dim(Index d) const {
    if (d != dim_) {
      throw std::invalid_argument("observation covariance dimension mismatch: " +
                                  std::to_string(d) + " vs " + std::to_string(dim_));
    }
  }

  Kind kind_ = Kind::Scalar;
  Index dim_ = 0;
  double scalar_ = 1.0;
  VectorXd diag_;
  MatrixXd full_;
  Eigen::LLT<MatrixXd> llt_;
};

// Observed-space values H(x^alpha), one member per column.
struct ObsSpaceEnsemble {
  MatrixXd values;  // q x M

  explicit ObsSpaceEnsemble(MatrixXd v) : values(std::move(v)) {
    if (!values.allFinite()) {
      throw std::invalid_argument("observed-space ensemble contains non-finite entries");
    }
  }

  Index dim() const { return values.rows(); }
  Index size() const { return values.cols(); }
};

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-1e-10 * trace, 0) are clamped to zero; anything more negative is an error.
inline MatrixXd symmetric_sqrt(const MatrixXd& a) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("symmetric_sqrt: matrix must be square");
  }
  const double scale = a.lpNorm<Eigen::Infinity>();
  if ((a - a.transpose()).lpNorm<Eigen::Infinity>() > 1e-8 * std::max(1.0, scale)) {
    throw std::invalid_argument("symmetric_sqrt: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("symmetric_sqrt: eigendecomposition failed");
  }
  VectorXd evals = es.eigenvalues();
  const double floor = -1e-10 * std::max(a.trace(), 0.0) - 1e-300;
  for (Index i = 0; i < evals.size(); ++i) {
    if (evals[i] < floor) {
      throw std::invalid_argument("symmetric_sqrt: matrix has negative eigenvalue " +
                                  std::to_string(evals[i]));
    }
    evals[i] = evals[i] > 0.0 ? std::sqrt(evals[i]) : 0.0;
  }
  return es.eigenvectors() * evals.asDiagonal() * es.eigenvectors().transpose();
}

// One ETKF analysis. rho > 1 inflates the forecast spread before conditioning
// (equivalently divides R by rho in the mean update).
inline Ensemble etkf_update(const Ensemble& forecast,
                            const ObsSpaceEnsemble& obs_ens, const VectorXd& y,
                            const ObsCovariance& r, double rho) {
  const Index m = forecast.size();
  const Index q = y.size();
  if (obs_ens.size() != m) {
    throw std::invalid_argument("etkf_update: member count mismatch");
  }
  if (obs_ens.dim() != q || r.dim() != q) {
    throw std::invalid_argument("etkf_update: observation dimension mismatch");
  }
  if (!(rho > 0.0)) {
    throw std::invalid_argument("etkf_update: inflation must be positive");
  }
  if (!y.allFinite()) {
    throw std::invalid_argument("etkf_update: observation vector has non-finite entries");
  }
  forecast.validate();

  const VectorXd xbar = sample_mean(forecast);
  const MatrixXd x_anom = forecast.members.colwise() - xbar;  // n x M, unscaled
  const VectorXd ybar = obs_ens.values.rowwise().mean();
  const MatrixXd y_anom = obs_ens.values.colwise() - ybar;    // q x M, unscaled

  const MatrixXd s = r.solve(y_anom);                         // R^-1 Y
  MatrixXd b = y_anom.transpose() * s;
  b = 0.5 * (b + b.transpose());
  b.diagonal().array() += double(m - 1) / rho;

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(b);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("etkf_update: eigendecomposition failed");
  }
  const VectorXd evals = es.eigenvalues();
  if (evals.minCoeff() <= 0.0) {
    throw std::runtime_error("etkf_update: weight-space matrix not positive definite");
  }
  const MatrixXd& v = es.eigenvectors();

  const VectorXd innov_w = s.transpose() * (y - ybar);        // Y^T R^-1 innovation
  const VectorXd wbar = v * (v.transpose() * innov_w).cwiseQuotient(evals);
  const MatrixXd transform =
      v * (double(m - 1) * evals.cwiseInverse()).cwiseSqrt().asDiagonal() *
      v.transpose();

  MatrixXd analysis =
      (x_anom * transform).colwise() + (xbar + x_anom * wbar);
  return Ensemble(std::move(analysis));
}

}  // namespace mrenkf
