#pragma once

// Ensemble representation of Gaussian states and the sample statistics every
// filter update consumes. Anomalies carry the 1/sqrt(M-1) factor so that
// anomalies * anomalies^T is the unbiased sample covariance.

#include <Eigen/Dense>

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace mrenkf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// State vectors for M members, one per column.
struct Ensemble {
  MatrixXd members;  // n x M

  explicit Ensemble(MatrixXd m) : members(std::move(m)) { validate(); }

  Index dim() const { return members.rows(); }
  Index size() const { return members.cols(); }

  void validate() const {
    if (members.cols() < 2) {
      throw std::invalid_argument("ensemble needs at least 2 members, got " +
                                  std::to_string(members.cols()));
    }
    if (!members.allFinite()) {
      throw std::invalid_argument("ensemble contains non-finite entries");
    }
  }
};

struct GaussianMoments {
  VectorXd mean;
  MatrixXd cov;
};

inline VectorXd sample_mean(const Ensemble& e) {
  return e.members.rowwise().mean();
}

// Mean-free columns scaled by 1/sqrt(M-1).
inline MatrixXd anomalies(const Ensemble& e) {
  const VectorXd mean = sample_mean(e);
  return (e.members.colwise() - mean) / std::sqrt(double(e.size() - 1));
}

inline MatrixXd cross_cov(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("cross_cov: anomaly member counts differ (" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.cols()) + ")");
  }
  return a * b.transpose();
}

inline GaussianMoments ensemble_moments(const Ensemble& e) {
  const MatrixXd an = anomalies(e);
  return {sample_mean(e), an * an.transpose()};
}

// Multiplicative covariance inflation: mean is kept, anomalies scale by
// sqrt(rho) so the sample covariance scales by rho.
inline Ensemble inflate(const Ensemble& e, double rho) {
  if (!(rho > 0.0)) {
    throw std::invalid_argument("inflation factor must be positive, got " +
                                std::to_string(rho));
  }
  const VectorXd mean = sample_mean(e);
  MatrixXd out = ((e.members.colwise() - mean) * std::sqrt(rho)).colwise() + mean;
  return Ensemble(std::move(out));
}

// Snapshot format: header member_0,...,member_{M-1}; one row per state index.
inline void write_ensemble_csv(std::ostream& os, const Ensemble& e) {
  for (Index j = 0; j < e.size(); ++j) {
    os << (j ? "," : "") << "member_" << j;
  }
  os << '\n';
  char buf[32];
  for (Index i = 0; i < e.dim(); ++i) {
    for (Index j = 0; j < e.size(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", e.members(i, j));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
}

inline Ensemble read_ensemble_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) {
    throw std::invalid_argument("ensemble csv: missing header");
  }
  Index cols = 1;
  for (char ch : line)
    if (ch == ',') ++cols;
  std::vector<double> values;
  Index rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    Index got = 0;
    while (std::getline(ls, cell, ',')) {
      values.push_back(std::stod(cell));
      ++got;
    }
    if (got != cols) {
      throw std::invalid_argument("ensemble csv: ragged row " +
                                  std::to_string(rows));
    }
    ++rows;
  }
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = values[i * cols + j];
  return Ensemble(std::move(m));
}

}  // namespace mrenkf
