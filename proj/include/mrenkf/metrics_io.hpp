#pragma once

// CSV emission for MetricsBundle contents. All floating-point values are
// written with %.17g so identical bundles serialize byte-identically.

#include <cstdio>
#include <ostream>
#include <string>

#include "mrenkf/experiment.hpp"

namespace mrenkf {

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_metrics_csv(std::ostream& os, const MetricsBundle& b) {
  os << "cycle,t,l2_pre,l2_post,trace_pre,trace_post\n";
  for (const auto& c : b.cycles) {
    os << c.cycle << ',' << detail::fmt(c.t) << ',' << detail::fmt(c.l2_pre)
       << ',' << detail::fmt(c.l2_post) << ',' << detail::fmt(c.trace_pre)
       << ',' << detail::fmt(c.trace_post) << '\n';
  }
}

inline void write_l2_series_csv(std::ostream& os, const MetricsBundle& b) {
  os << "t,l2\n";
  for (const auto& [t, l2] : b.l2_series) {
    os << detail::fmt(t) << ',' << detail::fmt(l2) << '\n';
  }
}

inline void write_rank_csv(std::ostream& os, const MetricsBundle& b) {
  os << "bin,count\n";
  for (std::size_t i = 0; i < b.rank_bins.size(); ++i) {
    os << i << ',' << b.rank_bins[i] << '\n';
  }
}

inline void write_snr_csv(std::ostream& os, const MetricsBundle& b) {
  os << "level,sigma,avg_snr\n";
  const int levels = static_cast<int>(b.snr.size()) - 1;
  for (int lv = levels + 1; lv >= 1; --lv) {
    os << lv << ',' << detail::fmt(b.snr_sigma[levels + 1 - lv]) << ','
       << detail::fmt(b.snr[levels + 1 - lv]) << '\n';
  }
}

// One row per (model step, marker); the obs column is empty away from
// assimilation times.
inline void write_tracking_csv(std::ostream& os, const MetricsBundle& b) {
  const Index members = b.tracking.empty() ? 0 : b.tracking.front().members.cols();
  os << "t,marker,truth,obs";
  for (Index j = 0; j < members; ++j) os << ",member_" << j;
  os << '\n';
  for (const auto& rec : b.tracking) {
    for (Index k = 0; k < rec.truth.size(); ++k) {
      os << detail::fmt(rec.t) << ',' << k << ',' << detail::fmt(rec.truth[k])
         << ',';
      if (rec.has_obs) os << detail::fmt(rec.obs[k]);
      for (Index j = 0; j < members; ++j) {
        os << ',' << detail::fmt(rec.members(k, j));
      }
      os << '\n';
    }
  }
}

inline void write_reference_csv(std::ostream& os, const MetricsBundle& b) {
  if (b.reference.empty()) return;
  const Index n = b.reference.front().second.size();
  os << 't';
  for (Index i = 0; i < n; ++i) os << ",x_" << i;
  os << '\n';
  for (const auto& [t, u] : b.reference) {
    os << detail::fmt(t);
    for (Index i = 0; i < n; ++i) os << ',' << detail::fmt(u[i]);
    os << '\n';
  }
}

}  // namespace mrenkf
