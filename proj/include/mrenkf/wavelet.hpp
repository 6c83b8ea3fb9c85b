#pragma once

// Orthonormal Daubechies wavelet transforms with periodic (circular) boundary
// handling. Periodization makes every decomposition step an exactly orthogonal
// square matrix, so multi-level transforms are isometries and covariance
// conjugations W R W^T are literal.
//
// Conventions used throughout:
//   - analysis step:  approx[j] = sum_k lo[k] * x[(2j + k) mod n]
//                     detail[j] = sum_k hi[k] * x[(2j + k) mod n]
//   - multi-level coefficient blocks are stored coarse first:
//     [approx_N, detail_N, detail_{N-1}, ..., detail_1], and levels are
//     numbered 1..N+1 with level N+1 the coarsest approximation block.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mrenkf {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Decomposition/reconstruction filter pair for one of the Daubechies wavelets
// db1..db9. highpass is the quadrature mirror of lowpass:
//   hi[k] = (-1)^k * lo[taps - 1 - k].
struct FilterPair {
  std::string name;
  std::vector<double> lowpass;
  std::vector<double> highpass;

  int length() const { return static_cast<int>(lowpass.size()); }
};

namespace detail {

// Extremal-phase Daubechies scaling coefficients, dbK has 2K taps. Values were
// produced by high-precision spectral factorization and satisfy
// sum h = sqrt(2), sum h^2 = 1, and the K vanishing-moment conditions to well
// below double roundoff.
inline const std::array<std::vector<double>, 9>& daubechies_lowpass() {
  static const std::array<std::vector<double>, 9> table = {{
      {0.70710678118654752, 0.70710678118654752},
      {0.48296291314453414, 0.83651630373780791, 0.22414386804201338,
       -0.12940952255126038},
      {0.33267055295008262, 0.80689150931109258, 0.45987750211849157,
       -0.13501102001025459, -0.085441273882026662, 0.035226291885709537},
      {0.23037781330889650, 0.71484657055291565, 0.63088076792985891,
       -0.027983769416859854, -0.18703481171909308, 0.030841381835560764,
       0.032883011666885200, -0.010597401785069032},
      {0.16010239797419291, 0.60382926979718967, 0.72430852843777293,
       0.13842814590132073, -0.24229488706638203, -0.032244869584638375,
       0.077571493840045714, -0.0062414902127982743, -0.012580751999081999,
       0.0033357252854737713},
      {0.11154074335010946, 0.49462389039845309, 0.75113390802109535,
       0.31525035170919763, -0.22626469396543982, -0.12976686756726194,
       0.097501605587323049, 0.027522865530305729, -0.031582039317486030,
       0.00055384220116149614, 0.0047772575109455106, -0.0010773010853084796},
      {0.077852054085009179, 0.39653931948191731, 0.72913209084623512,
       0.46978228740519312, -0.14390600392856498, -0.22403618499387498,
       0.071309219266830265, 0.080612609151083072, -0.038029936935014414,
       -0.016574541630666881, 0.012550998556099841, 0.00042957797292136652,
       -0.0018016407040474909, 0.00035371379997452025},
      {0.054415842243104010, 0.31287159091429997, 0.67563073629728981,
       0.58535468365420671, -0.015829105256349306, -0.28401554296154693,
       0.00047248457391328277, 0.12874742662047846, -0.017369301001807546,
       -0.044088253930794752, 0.013981027917398282, 0.0087460940474057767,
       -0.0048703529934515743, -0.00039174037337694705, 0.00067544940645056937,
       -0.00011747678412476953},
      {0.038077947363878347, 0.24383467461259035, 0.60482312369011111,
       0.65728807805130054, 0.13319738582500758, -0.29327378327917491,
       -0.096840783222976461, 0.14854074933810638, 0.030725681479333379,
       -0.067632829061329974, 0.00025094711483145196, 0.022361662123679097,
       -0.0047232047577513973, -0.0042815036824634298, 0.0018476468830562265,
       0.00023038576352319597, -0.00025196318894271014,
       3.9347320316271599e-05},
  }};
  return table;
}

inline Index mod(Index a, Index n) {
  Index r = a % n;
  return r < 0 ? r + n : r;
}

}  // namespace detail

inline FilterPair make_filter(const std::string& name) {
  if (name.size() != 3 || name.compare(0, 2, "db") != 0 || name[2] < '1' ||
      name[2] > '9') {
    throw std::invalid_argument("unknown wavelet '" + name +
                                "'; supported: db1, db2, ..., db9");
  }
  const int k = name[2] - '0';
  FilterPair f;
  f.name = name;
  f.lowpass = detail::daubechies_lowpass()[k - 1];
  const int taps = f.length();
  f.highpass.resize(taps);
  for (int i = 0; i < taps; ++i) {
    f.highpass[i] = (i % 2 == 0 ? 1.0 : -1.0) * f.lowpass[taps - 1 - i];
  }
  return f;
}

// One periodized analysis step. The signal may be shorter than the filter;
// the circular indexing wraps as many times as needed and the step stays
// orthogonal for any even length.
inline std::pair<VectorXd, VectorXd> dwt_step_periodic(
    const Eigen::Ref<const VectorXd>& signal, const FilterPair& filter) {
  const Index n = signal.size();
  if (n <= 0 || n % 2 != 0) {
    throw std::invalid_argument("dwt_step_periodic: signal length must be even and positive, got " +
                                std::to_string(n));
  }
  const Index half = n / 2;
  const int taps = filter.length();
  VectorXd approx = VectorXd::Zero(half);
  VectorXd det = VectorXd::Zero(half);
  for (Index j = 0; j < half; ++j) {
    double a = 0.0, d = 0.0;
    for (int k = 0; k < taps; ++k) {
      const double v = signal[detail::mod(2 * j + k, n)];
      a += filter.lowpass[k] * v;
      d += filter.highpass[k] * v;
    }
    approx[j] = a;
    det[j] = d;
  }
  return {std::move(approx), std::move(det)};
}

// Adjoint of dwt_step_periodic (the step matrix is orthogonal, so the adjoint
// is the exact inverse).
inline VectorXd idwt_step_periodic(const Eigen::Ref<const VectorXd>& approx,
                                   const Eigen::Ref<const VectorXd>& det,
                                   const FilterPair& filter) {
  if (approx.size() != det.size()) {
    throw std::invalid_argument("idwt_step_periodic: approx/detail length mismatch");
  }
  const Index half = approx.size();
  const Index n = 2 * half;
  const int taps = filter.length();
  VectorXd out = VectorXd::Zero(n);
  for (Index j = 0; j < half; ++j) {
    for (int k = 0; k < taps; ++k) {
      const Index m = detail::mod(2 * j + k, n);
      out[m] += filter.lowpass[k] * approx[j] + filter.highpass[k] * det[j];
    }
  }
  return out;
}

// Coefficients of an N-level transform grouped by level, coarsest block first.
class MultiLevelCoeffs {
 public:
  MultiLevelCoeffs(int levels, Index original_length,
                   std::vector<VectorXd> blocks)
      : levels_(levels),
        original_length_(original_length),
        blocks_(std::move(blocks)) {
    validate();
  }

  int levels() const { return levels_; }
  Index original_length() const { return original_length_; }
  int block_count() const { return static_cast<int>(blocks_.size()); }

  // Level numbering: levels()+1 is the coarsest (approximation) block,
  // 1 is the finest detail block.
  const VectorXd& level_block(int level) const {
    return blocks_[block_index(level)];
  }
  VectorXd& level_block(int level) { return blocks_[block_index(level)]; }

  const std::vector<VectorXd>& blocks() const { return blocks_; }
  std::vector<VectorXd>& blocks() { return blocks_; }

  VectorXd flatten() const {
    VectorXd out(original_length_);
    Index at = 0;
    for (const auto& b : blocks_) {
      out.segment(at, b.size()) = b;
      at += b.size();
    }
    return out;
  }

 private:
  int block_index(int level) const {
    if (level < 1 || level > levels_ + 1) {
      throw std::invalid_argument("level " + std::to_string(level) +
                                  " out of range [1, " +
                                  std::to_string(levels_ + 1) + "]");
    }
    return levels_ + 1 - level;
  }

  void validate() const {
    if (levels_ < 0) throw std::invalid_argument("negative level count");
    if (static_cast<int>(blocks_.size()) != levels_ + 1) {
      throw std::invalid_argument("expected " + std::to_string(levels_ + 1) +
                                  " coefficient blocks, got " +
                                  std::to_string(blocks_.size()));
    }
    Index total = 0;
    for (const auto& b : blocks_) total += b.size();
    if (total != original_length_) {
      throw std::invalid_argument("coefficient blocks sum to " +
                                  std::to_string(total) + ", expected " +
                                  std::to_string(original_length_));
    }
    if (levels_ > 0) {
      const Index coarse = original_length_ >> levels_;
      if (blocks_[0].size() != coarse || blocks_[1].size() != coarse) {
        throw std::invalid_argument("malformed coarse block lengths");
      }
      for (int d = 1; d <= levels_; ++d) {
        if (blocks_[d].size() != (original_length_ >> (levels_ + 1 - d))) {
          throw std::invalid_argument("malformed detail block lengths");
        }
      }
    }
  }

  int levels_;
  Index original_length_;
  std::vector<VectorXd> blocks_;
};

inline void require_divisible(Index n, int levels, const char* who) {
  if (levels < 0) throw std::invalid_argument(std::string(who) + ": negative level count");
  if (levels >= 63 || (n >> levels) << levels != n || (n >> levels) <= 0) {
    throw std::invalid_argument(std::string(who) + ": signal length " +
                                std::to_string(n) +
                                " is not divisible by 2^levels = 2^" +
                                std::to_string(levels));
  }
}

inline MultiLevelCoeffs wavedec(const Eigen::Ref<const VectorXd>& signal,
                                const FilterPair& filter, int levels) {
  require_divisible(signal.size(), levels, "wavedec");
  std::vector<VectorXd> details;  // finest first while peeling
  VectorXd approx = signal;
  for (int l = 0; l < levels; ++l) {
    auto [a, d] = dwt_step_periodic(approx, filter);
    details.push_back(std::move(d));
    approx = std::move(a);
  }
  std::vector<VectorXd> blocks;
  blocks.reserve(levels + 1);
  blocks.push_back(std::move(approx));
  for (int l = levels - 1; l >= 0; --l) blocks.push_back(std::move(details[l]));
  return MultiLevelCoeffs(levels, signal.size(), std::move(blocks));
}

inline VectorXd waverec(const MultiLevelCoeffs& coeffs,
                        const FilterPair& filter) {
  VectorXd approx = coeffs.level_block(coeffs.levels() + 1);
  for (int level = coeffs.levels(); level >= 1; --level) {
    approx = idwt_step_periodic(approx, coeffs.level_block(level), filter);
  }
  return approx;
}

inline const VectorXd& project_level(const MultiLevelCoeffs& coeffs,
                                     int level) {
  return coeffs.level_block(level);
}

// Materialized transform matrix: row blocks follow the MultiLevelCoeffs
// ordering, so transform_matrix(n, f, N) * x == wavedec(x, f, N).flatten().
// Intended for covariance conjugation and tests on modest n; the cap guards
// against accidental huge allocations.
inline MatrixXd transform_matrix(Index n, const FilterPair& filter, int levels,
                                 Index cap = 4096) {
  require_divisible(n, levels, "transform_matrix");
  if (n > cap) {
    throw std::invalid_argument("transform_matrix: n = " + std::to_string(n) +
                                " exceeds cap " + std::to_string(cap) +
                                "; use the sampled covariance strategy instead");
  }
  MatrixXd w(n, n);
  VectorXd e = VectorXd::Zero(n);
  for (Index j = 0; j < n; ++j) {
    e[j] = 1.0;
    w.col(j) = wavedec(e, filter, levels).flatten();
    e[j] = 0.0;
  }
  return w;
}

// ---------------------------------------------------------------------------
// 2D tensor-product transform.
//
// One level transforms rows first, then columns of each half. Sub-band layout
// per level: horizontal = (rows lowpass, cols highpass), vertical =
// (rows highpass, cols lowpass), diagonal = (rows highpass, cols highpass).
// Detail levels are stored coarsest first, matching the 1D convention.

struct DetailBands2D {
  MatrixXd horizontal;
  MatrixXd vertical;
  MatrixXd diagonal;
};

struct MultiLevelCoeffs2D {
  int levels = 0;
  Index rows = 0;
  Index cols = 0;
  MatrixXd approx;                      // coarsest approximation block
  std::vector<DetailBands2D> details;   // details[0] = coarsest level
};

namespace detail {

// Applies one analysis step to every row of `a`; writes approx halves into
// the left block and detail halves into the right block.
inline MatrixXd dwt_rows(const MatrixXd& a, const FilterPair& filter) {
  MatrixXd out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    auto [ap, de] = dwt_step_periodic(a.row(i).transpose(), filter);
    out.row(i).head(a.cols() / 2) = ap.transpose();
    out.row(i).tail(a.cols() / 2) = de.transpose();
  }
  return out;
}

}  // namespace detail

inline MultiLevelCoeffs2D wavedec2(const MatrixXd& field,
                                   const FilterPair& filter, int levels) {
  require_divisible(field.rows(), levels, "wavedec2 (rows)");
  require_divisible(field.cols(), levels, "wavedec2 (cols)");
  MultiLevelCoeffs2D out;
  out.levels = levels;
  out.rows = field.rows();
  out.cols = field.cols();
  out.details.resize(levels);
  MatrixXd approx = field;
  for (int l = 0; l < levels; ++l) {
    const Index hr = approx.rows() / 2, hc = approx.cols() / 2;
    MatrixXd rowpass = detail::dwt_rows(approx, filter);
    MatrixXd colpass = detail::dwt_rows(rowpass.transpose(), filter).transpose();
    // quadrants: top = column-approx, bottom = column-detail
    DetailBands2D bands;
    bands.horizontal = colpass.block(hr, 0, hr, hc);   // rows low, cols high
    bands.vertical = colpass.block(0, hc, hr, hc);     // rows high, cols low
    bands.diagonal = colpass.block(hr, hc, hr, hc);
    out.details[levels - 1 - l] = std::move(bands);
    approx = colpass.block(0, 0, hr, hc);
  }
  out.approx = std::move(approx);
  return out;
}

inline MatrixXd waverec2(const MultiLevelCoeffs2D& coeffs,
                         const FilterPair& filter) {
  MatrixXd approx = coeffs.approx;
  for (int l = coeffs.levels - 1; l >= 0; --l) {
    const auto& bands = coeffs.details[coeffs.levels - 1 - l];
    const Index hr = approx.rows(), hc = approx.cols();
    MatrixXd colpass(2 * hr, 2 * hc);
    colpass.block(0, 0, hr, hc) = approx;
    colpass.block(hr, 0, hr, hc) = bands.horizontal;
    colpass.block(0, hc, hr, hc) = bands.vertical;
    colpass.block(hr, hc, hr, hc) = bands.diagonal;
    // invert the column pass, then the row pass
    MatrixXd rowpass(2 * hr, 2 * hc);
    for (Index j = 0; j < 2 * hc; ++j) {
      rowpass.col(j) = idwt_step_periodic(colpass.col(j).head(hr),
                                          colpass.col(j).tail(hr), filter);
    }
    MatrixXd next(2 * hr, 2 * hc);
    for (Index i = 0; i < 2 * hr; ++i) {
      next.row(i) = idwt_step_periodic(rowpass.row(i).head(hc).transpose(),
                                       rowpass.row(i).tail(hc).transpose(),
                                       filter)
                        .transpose();
    }
    approx = std::move(next);
  }
  return approx;
}

// Debugging dump used by the CLI: one row per coefficient, level numbered
// with levels+1 = coarsest.
inline void write_coeffs_csv(std::ostream& os, const MultiLevelCoeffs& coeffs) {
  os << "level,index,value\n";
  char buf[32];
  for (int level = coeffs.levels() + 1; level >= 1; --level) {
    const VectorXd& b = coeffs.level_block(level);
    for (Index i = 0; i < b.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", b[i]);
      os << level << ',' << i << ',' << buf << '\n';
    }
  }
}

}  // namespace mrenkf
