#pragma once

// Pseudospectral Kuramoto-Sivashinsky solver on the periodic domain
// [-pi L, pi L]:
//
//   u_t + u_xx + u_xxxx + u u_x = 0
//
// Fourier modes diagonalize the linear part with symbol
// ell_k = (k/L)^2 - (k/L)^4, and time stepping uses fourth-order exponential
// time differencing (ETDRK4) with the phi-function weights evaluated by
// averaging over a unit circle of contour points centered at each ell_k * dt.
// That contour evaluation is what keeps the weights accurate through
// ell_k -> 0, where the closed forms suffer catastrophic cancellation.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <complex>
#include <stdexcept>
#include <string>
#include <utility>

namespace mrenkf {

using Eigen::Index;
using Eigen::VectorXcd;
using Eigen::VectorXd;

struct KSConfig {
  double L = 22.0;  // bifurcation parameter; domain is [-pi L, pi L]
  Index n = 512;    // grid points, power of two
  double dt = 0.5;

  void validate() const {
    if (!(L > 0.0)) throw std::invalid_argument("ks config: L must be positive");
    if (n < 2 || (n & (n - 1)) != 0) {
      throw std::invalid_argument("ks config: n must be a power of two, got " +
                                  std::to_string(n));
    }
    if (!(dt > 0.0)) throw std::invalid_argument("ks config: dt must be positive");
  }

  double domain_length() const { return 2.0 * M_PI * L; }
  double dx() const { return domain_length() / double(n); }
  // grid convention: x_j = -pi L + 2 pi L j / n
  double grid_point(Index j) const { return -M_PI * L + dx() * double(j); }
};

struct KSState {
  VectorXd u;
  double t = 0.0;
};

inline double linear_growth_rate(double k, double L) {
  const double r = (k / L) * (k / L);
  return r * (1.0 - r);
}

inline KSState ks_initial_condition(const KSConfig& cfg) {
  cfg.validate();
  VectorXd u(cfg.n);
  for (Index j = 0; j < cfg.n; ++j) {
    const double theta = cfg.grid_point(j) / cfg.L;
    u[j] = std::cos(theta) * (1.0 + std::sin(theta));
  }
  return {std::move(u), 0.0};
}

struct ETDRK4Coeffs {
  KSConfig cfg;
  VectorXd ell;       // linear symbol per mode
  VectorXd E, E2;     // exp(ell dt), exp(ell dt / 2)
  VectorXd Q, f1, f2, f3;
  VectorXcd g;        // spectral multiplier of the nonlinear term, 0 at Nyquist
};

inline ETDRK4Coeffs etdrk4_precompute(const KSConfig& cfg,
                                      int contour_points = 32) {
  cfg.validate();
  if (contour_points < 16) {
    throw std::invalid_argument("etdrk4_precompute: need at least 16 contour points");
  }
  const Index n = cfg.n;
  ETDRK4Coeffs c;
  c.cfg = cfg;
  c.ell.resize(n);
  c.E.resize(n);
  c.E2.resize(n);
  c.Q.resize(n);
  c.f1.resize(n);
  c.f2.resize(n);
  c.f3.resize(n);
  c.g.resize(n);

  for (Index j = 0; j < n; ++j) {
    const double mode = (j <= n / 2) ? double(j) : double(j) - double(n);
    c.ell[j] = linear_growth_rate(mode, cfg.L);
    const double z = c.ell[j] * cfg.dt;
    c.E[j] = std::exp(z);
    c.E2[j] = std::exp(0.5 * z);

    // differentiation multiplier; the Nyquist mode is zeroed to keep the
    // derivative of a real field real
    const double kderiv = (j == n / 2) ? 0.0 : mode;
    c.g[j] = std::complex<double>(0.0, -0.5 * kderiv / cfg.L);

    std::complex<double> q{}, a1{}, a2{}, a3{};
    for (int p = 0; p < contour_points; ++p) {
      const double angle = 2.0 * M_PI * (p + 0.5) / contour_points;
      const std::complex<double> r =
          std::complex<double>(z, 0.0) + std::polar(1.0, angle);
      const std::complex<double> er = std::exp(r);
      const std::complex<double> r3 = r * r * r;
      q += (std::exp(0.5 * r) - 1.0) / r;
      a1 += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
      a2 += (2.0 + r + er * (-2.0 + r)) / r3;
      a3 += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
    }
    const double scale = cfg.dt / contour_points;
    c.Q[j] = scale * q.real();
    c.f1[j] = scale * a1.real();
    c.f2[j] = scale * a2.real();
    c.f3[j] = scale * a3.real();
  }
  return c;
}

namespace detail {

inline Eigen::FFT<double>& ks_fft() {
  thread_local Eigen::FFT<double> fft;
  return fft;
}

// -(i k / 2L) FFT(u^2) evaluated pseudospectrally from a spectrum.
inline VectorXcd ks_nonlinear(const VectorXcd& spectrum,
                              const ETDRK4Coeffs& c) {
  auto& fft = ks_fft();
  VectorXcd phys(spectrum.size()), sq(spectrum.size()), out(spectrum.size());
  fft.inv(phys, spectrum);
  for (Index i = 0; i < phys.size(); ++i) {
    const double re = phys[i].real();
    sq[i] = std::complex<double>(re * re, 0.0);
  }
  fft.fwd(out, sq);
  return c.g.cwiseProduct(out);
}

}  // namespace detail

inline KSState ks_step(const KSState& state, const ETDRK4Coeffs& c) {
  const Index n = c.cfg.n;
  if (state.u.size() != n) {
    throw std::invalid_argument("ks_step: state dimension mismatch");
  }
  auto& fft = detail::ks_fft();

  VectorXcd v(n), u_c(n);
  for (Index i = 0; i < n; ++i) u_c[i] = std::complex<double>(state.u[i], 0.0);
  fft.fwd(v, u_c);

  using detail::ks_nonlinear;
  const VectorXcd nv = ks_nonlinear(v, c);
  const VectorXcd a = c.E2.cwiseProduct(v) + c.Q.cwiseProduct(nv);
  const VectorXcd na = ks_nonlinear(a, c);
  const VectorXcd b = c.E2.cwiseProduct(v) + c.Q.cwiseProduct(na);
  const VectorXcd nb = ks_nonlinear(b, c);
  const VectorXcd cc = c.E2.cwiseProduct(a) + c.Q.cwiseProduct(2.0 * nb - nv);
  const VectorXcd nc = ks_nonlinear(cc, c);

  const VectorXcd vnew = c.E.cwiseProduct(v) + c.f1.cwiseProduct(nv) +
                         c.f2.cwiseProduct(2.0 * (na + nb)) +
                         c.f3.cwiseProduct(nc);

  VectorXcd phys(n);
  fft.inv(phys, vnew);
  KSState next;
  next.u = phys.real();
  next.t = state.t + c.cfg.dt;
  if (!next.u.allFinite()) {
    throw std::runtime_error("ks_step: solver blow-up at t = " +
                             std::to_string(next.t));
  }
  return next;
}

inline KSState ks_propagate(const KSState& state, const ETDRK4Coeffs& c,
                            long steps) {
  if (steps < 0) throw std::invalid_argument("ks_propagate: negative step count");
  KSState s = state;
  for (long i = 0; i < steps; ++i) {
    try {
      s = ks_step(s, c);
    } catch (const std::exception& e) {
      throw std::runtime_error("ks_propagate: step " + std::to_string(i + 1) +
                               " of " + std::to_string(steps) + ": " + e.what());
    }
  }
  return s;
}

}  // namespace mrenkf
