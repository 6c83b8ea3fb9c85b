// Command-line front end: `run` executes a twin experiment and writes the
// metric CSVs plus a manifest, `compare` scores two finished runs against
// each other, and `plotdata` turns a run directory into gnuplot-ready files
// (with an optional built-in SVG rendering for the simple plots).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mrenkf/experiment.hpp"
#include "mrenkf/manifest.hpp"
#include "mrenkf/metrics_io.hpp"
#include "mrenkf/run_config.hpp"

namespace fs = std::filesystem;
using namespace mrenkf;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Minimal CSV reader: returns rows of cells, header skipped.
std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
  std::istringstream is(read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t at = 0;
    while (at <= line.size()) {
      std::size_t comma = line.find(',', at);
      if (comma == std::string::npos) comma = line.size();
      cells.push_back(line.substr(at, comma - at));
      at = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// run

struct RunOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> filter;
  std::string out_dir;
  bool verbose = false;
};

TwinExperimentConfig resolve_config(const RunOptions& opt) {
  TwinExperimentConfig cfg;
  if (!opt.config_path.empty()) cfg = parse_config_file(opt.config_path);
  if (opt.seed) apply_config_key(cfg, "seed", std::to_string(*opt.seed));
  if (opt.filter) apply_config_key(cfg, "filter", *opt.filter);
  cfg.validate();
  return cfg;
}

fs::path default_out_dir(const TwinExperimentConfig& cfg) {
  const char* root = std::getenv("MRENKF_OUT_ROOT");
  fs::path base = root ? fs::path(root) : fs::path("runs");
  return base / (std::string(to_string(cfg.filter)) + "-seed" +
                 std::to_string(cfg.seed));
}

int cmd_run(const RunOptions& opt) {
  TwinExperimentConfig cfg;
  try {
    cfg = resolve_config(opt);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  const fs::path out =
      opt.out_dir.empty() ? default_out_dir(cfg) : fs::path(opt.out_dir);
  std::vector<fs::path> written;
  try {
    RunManifest manifest;
    manifest.seed = cfg.seed;
    manifest.filter = to_string(cfg.filter);
    manifest.config_text = resolved_config_text(cfg);
    manifest.started_utc = utc_timestamp();

    const MetricsBundle bundle = run_twin_experiment(cfg, opt.verbose);
    manifest.finished_utc = utc_timestamp();

    // serialize everything before touching the filesystem
    std::vector<std::pair<std::string, std::string>> files;
    files.emplace_back("config.resolved", manifest.config_text);
    auto add = [&](const char* name, auto&& writer) {
      std::ostringstream os;
      writer(os, bundle);
      files.emplace_back(name, os.str());
    };
    add("metrics.csv", [](auto& os, auto& b) { write_metrics_csv(os, b); });
    add("l2_series.csv", [](auto& os, auto& b) { write_l2_series_csv(os, b); });
    add("rankhist.csv", [](auto& os, auto& b) { write_rank_csv(os, b); });
    add("snr.csv", [](auto& os, auto& b) { write_snr_csv(os, b); });
    add("tracking.csv", [](auto& os, auto& b) { write_tracking_csv(os, b); });
    add("reference.csv", [](auto& os, auto& b) { write_reference_csv(os, b); });
    if (opt.verbose && !bundle.scale_diag.empty()) {
      std::ostringstream os;
      os << "cycle,scale,pre_trace,post_trace,obs_residual_norm,rho,lambda\n";
      for (std::size_t c = 0; c < bundle.scale_diag.size(); ++c) {
        for (const auto& d : bundle.scale_diag[c]) {
          char buf[200];
          std::snprintf(buf, sizeof(buf),
                        "%zu,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", c + 1,
                        d.level, d.pre_trace, d.post_trace,
                        d.obs_residual_norm, d.rho, d.lambda);
          os << buf;
        }
      }
      files.emplace_back("scale_diag.csv", os.str());
    }
    if (opt.verbose && bundle.first_obs_coeffs) {
      std::ostringstream os;
      write_coeffs_csv(os, *bundle.first_obs_coeffs);
      files.emplace_back("obs_coeffs.csv", os.str());
    }
    if (opt.verbose && bundle.final_ensemble) {
      std::ostringstream os;
      write_ensemble_csv(os, *bundle.final_ensemble);
      files.emplace_back("final_ensemble.csv", os.str());
    }

    fs::create_directories(out);
    for (const auto& [name, content] : files) {
      const fs::path path = out / name;
      std::ofstream of(path, std::ios::binary);
      of << content;
      if (!of) throw std::runtime_error("failed to write " + path.string());
      written.push_back(path);
      if (name != "config.resolved") {
        manifest.outputs.push_back(
            OutputEntry{name, content.size(), fnv1a64_hex(content)});
      }
    }
    {
      std::ofstream of(out / "manifest.json", std::ios::binary);
      of << manifest_to_json(manifest).dump(2) << '\n';
      if (!of) throw std::runtime_error("failed to write manifest");
    }

    if (opt.verbose) {
      std::cout << "run complete: " << bundle.cycles.size() << " cycles, "
                << "sigma_obs_effective = " << bundle.sigma_obs_effective
                << "\n";
    }
    std::cout << out.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    for (const auto& p : written) {
      std::error_code ec;
      fs::remove(p, ec);
    }
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------------------
// compare

// keys that pin the reference trajectory and the noise realization
bool same_reference_setup(const RunManifest& a, const RunManifest& b,
                          std::string* why) {
  auto lines_a = parse_config_lines(a.config_text);
  auto lines_b = parse_config_lines(b.config_text);
  auto pick = [](const std::vector<std::pair<std::string, std::string>>& kv,
                 const std::string& key) -> std::string {
    for (const auto& [k, v] : kv)
      if (k == key) return v;
    return "<missing>";
  };
  std::vector<std::string> keys = {"ks.L",       "ks.n",     "ks.dt",
                                   "horizon",    "obs_stride", "seed",
                                   "noise.wavelet", "noise.levels"};
  auto levels_a = pick(lines_a, "noise.levels");
  if (levels_a == pick(lines_b, "noise.levels")) {
    const int levels = std::stoi(levels_a);
    for (int lv = 1; lv <= levels + 1; ++lv) {
      keys.push_back("noise.sigma_level_" + std::to_string(lv));
    }
  }
  for (const auto& key : keys) {
    if (pick(lines_a, key) != pick(lines_b, key)) {
      if (why) *why = key + " differs (" + pick(lines_a, key) + " vs " +
                      pick(lines_b, key) + ")";
      return false;
    }
  }
  return true;
}

struct RunSummary {
  std::string label;
  double mean_l2 = 0.0;
  double chi_square = 0.0;
};

RunSummary summarize_run(const fs::path& dir, const RunManifest& manifest) {
  RunSummary s;
  s.label = manifest.filter + " seed " + std::to_string(manifest.seed);
  const auto l2 = read_csv_rows(dir / "l2_series.csv");
  if (l2.empty()) throw std::runtime_error("empty l2 series in " + dir.string());
  for (const auto& row : l2) s.mean_l2 += std::stod(row.at(1));
  s.mean_l2 /= double(l2.size());

  std::vector<long> bins;
  for (const auto& row : read_csv_rows(dir / "rankhist.csv")) {
    bins.push_back(std::stol(row.at(1)));
  }
  s.chi_square = chi_square_statistic(bins);
  return s;
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b) {
  try {
    const RunManifest ma = load_manifest((fs::path(dir_a) / "manifest.json").string());
    const RunManifest mb = load_manifest((fs::path(dir_b) / "manifest.json").string());
    std::string why;
    if (!same_reference_setup(ma, mb, &why)) {
      std::cerr << "refusing to compare: " << why << "\n";
      return kExitRuntime;
    }
    const RunSummary sa = summarize_run(dir_a, ma);
    const RunSummary sb = summarize_run(dir_b, mb);

    auto winner = [](double a, double b) {
      return a < b ? "A" : (b < a ? "B" : "tie");
    };
    std::printf("A: %s (%s)\n", sa.label.c_str(), dir_a.c_str());
    std::printf("B: %s (%s)\n\n", sb.label.c_str(), dir_b.c_str());
    std::printf("%-32s %14s %14s %8s\n", "metric", "A", "B", "winner");
    std::printf("%-32s %14.6g %14.6g %8s\n", "time-averaged L2 discrepancy",
                sa.mean_l2, sb.mean_l2, winner(sa.mean_l2, sb.mean_l2));
    std::printf("%-32s %14.6g %14.6g %8s\n", "rank-histogram chi-square",
                sa.chi_square, sb.chi_square,
                winner(sa.chi_square, sb.chi_square));

    std::printf("\nper-level SNR of the shared observations:\n");
    std::printf("%8s %12s %12s\n", "level", "sigma", "avg_snr");
    for (const auto& row : read_csv_rows(fs::path(dir_a) / "snr.csv")) {
      std::printf("%8s %12s %12s\n", row.at(0).c_str(), row.at(1).c_str(),
                  row.at(2).c_str());
    }
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "compare failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------------------
// plotdata

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream of(path, std::ios::binary);
  of << content;
  if (!of) throw std::runtime_error("failed to write " + path.string());
}

std::string svg_header(int w, int h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
     << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

void svg_line_plot(const fs::path& path,
                   const std::vector<std::vector<std::pair<double, double>>>& series,
                   const std::vector<std::string>& colors) {
  const int w = 860, h = 420, pad = 40;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (const auto& [x, y] : s) {
      xmin = std::min(xmin, x); xmax = std::max(xmax, x);
      ymin = std::min(ymin, y); ymax = std::max(ymax, y);
    }
  }
  if (!(xmax > xmin)) xmax = xmin + 1.0;
  if (!(ymax > ymin)) ymax = ymin + 1.0;
  std::ostringstream os;
  os << svg_header(w, h);
  os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << w - 2 * pad
     << "\" height=\"" << h - 2 * pad
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[k % colors.size()]
       << "\" stroke-width=\"1\" points=\"";
    for (const auto& [x, y] : series[k]) {
      const double px = pad + (x - xmin) / (xmax - xmin) * (w - 2 * pad);
      const double py = h - pad - (y - ymin) / (ymax - ymin) * (h - 2 * pad);
      os << px << ',' << py << ' ';
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  write_text(path, os.str());
}

void svg_bar_chart(const fs::path& path, const std::vector<long>& counts) {
  const int w = 860, h = 420, pad = 40;
  long cmax = 1;
  for (long c : counts) cmax = std::max(cmax, c);
  std::ostringstream os;
  os << svg_header(w, h);
  const double bw = double(w - 2 * pad) / double(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double bh = double(counts[i]) / double(cmax) * (h - 2 * pad);
    os << "<rect x=\"" << pad + i * bw << "\" y=\"" << h - pad - bh
       << "\" width=\"" << bw * 0.9 << "\" height=\"" << bh
       << "\" fill=\"steelblue\"/>\n";
  }
  os << "</svg>\n";
  write_text(path, os.str());
}

int cmd_plotdata(const std::string& run_dir, const std::string& other_dir,
                 const std::string& kind, bool svg) {
  try {
    const fs::path dir(run_dir);
    const RunManifest manifest = load_manifest((dir / "manifest.json").string());
    const TwinExperimentConfig cfg = parse_config_text(manifest.config_text);
    const fs::path plot = dir / "plot";
    fs::create_directories(plot);

    if (kind == "trajectory") {
      // t x u triplets in gnuplot block format
      std::ostringstream os;
      for (const auto& row : read_csv_rows(dir / "reference.csv")) {
        const double t = std::stod(row.at(0));
        for (Index j = 0; j + 1 < Index(row.size()); ++j) {
          os << t << ' ' << cfg.ks.grid_point(j) << ' ' << row.at(j + 1)
             << '\n';
        }
        os << '\n';
      }
      write_text(plot / "trajectory.dat", os.str());
    } else if (kind == "pointwise") {
      const auto rows = read_csv_rows(dir / "tracking.csv");
      const std::size_t markers = cfg.markers.size();
      for (std::size_t k = 0; k < markers; ++k) {
        std::ostringstream os;
        os << "# t truth obs member_1..member_" << cfg.ensemble_size << '\n';
        for (const auto& row : rows) {
          if (std::stoul(row.at(1)) != k) continue;
          os << row.at(0) << ' ' << row.at(2) << ' '
             << (row.at(3).empty() ? "nan" : row.at(3));
          for (std::size_t c = 4; c < row.size(); ++c) os << ' ' << row.at(c);
          os << '\n';
        }
        write_text(plot / ("pointwise_marker" + std::to_string(k) + ".dat"),
                   os.str());
      }
    } else if (kind == "rankhist") {
      std::vector<long> counts;
      std::ostringstream os;
      for (const auto& row : read_csv_rows(dir / "rankhist.csv")) {
        os << row.at(0) << ' ' << row.at(1) << '\n';
        counts.push_back(std::stol(row.at(1)));
      }
      write_text(plot / "rankhist.dat", os.str());
      if (svg) svg_bar_chart(plot / "rankhist.svg", counts);
    } else if (kind == "l2") {
      const auto rows = read_csv_rows(dir / "l2_series.csv");
      std::vector<std::vector<std::string>> other;
      if (!other_dir.empty()) {
        const RunManifest mo =
            load_manifest((fs::path(other_dir) / "manifest.json").string());
        std::string why;
        if (!same_reference_setup(manifest, mo, &why)) {
          std::cerr << "refusing to overlay: " << why << "\n";
          return kExitRuntime;
        }
        other = read_csv_rows(fs::path(other_dir) / "l2_series.csv");
        if (other.size() != rows.size()) {
          std::cerr << "refusing to overlay: series lengths differ\n";
          return kExitRuntime;
        }
      }
      std::ostringstream os;
      std::vector<std::pair<double, double>> s1, s2;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        os << rows[i].at(0) << ' ' << rows[i].at(1);
        s1.emplace_back(std::stod(rows[i].at(0)), std::stod(rows[i].at(1)));
        if (!other.empty()) {
          os << ' ' << other[i].at(1);
          s2.emplace_back(std::stod(other[i].at(0)), std::stod(other[i].at(1)));
        }
        os << '\n';
      }
      write_text(plot / "l2.dat", os.str());
      if (svg) {
        std::vector<std::vector<std::pair<double, double>>> series = {s1};
        if (!s2.empty()) series.push_back(s2);
        svg_line_plot(plot / "l2.svg", series, {"black", "red"});
      }
    } else {
      std::cerr << "unknown plot kind '" << kind
                << "'; expected trajectory, pointwise, rankhist or l2\n";
      return kExitConfig;
    }
    std::cout << (plot).string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "plotdata failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiresolution ensemble Kalman filter twin-experiment harness"};
  app.require_subcommand(1);

  RunOptions run_opt;
  std::uint64_t seed_arg = 0;
  std::string filter_arg;
  auto* run = app.add_subcommand("run", "execute a twin experiment");
  run->add_option("--config", run_opt.config_path, "config file (key = value lines)");
  auto* seed_opt = run->add_option("--seed", seed_arg, "master seed override");
  auto* filter_opt =
      run->add_option("--filter", filter_arg, "filter override (enkf|mrenkf)");
  run->add_option("--out", run_opt.out_dir,
                  "output directory (default $MRENKF_OUT_ROOT/<filter>-seed<seed>)");
  run->add_flag("--verbose", run_opt.verbose, "extra diagnostics and files");

  std::string cmp_a, cmp_b;
  auto* compare = app.add_subcommand("compare", "score two finished runs");
  compare->add_option("dir_a", cmp_a, "first run directory")->required();
  compare->add_option("dir_b", cmp_b, "second run directory")->required();

  std::string plot_dir, plot_other, plot_kind = "l2";
  bool plot_svg = false;
  auto* plotdata = app.add_subcommand("plotdata", "emit gnuplot-ready files");
  plotdata->add_option("run_dir", plot_dir, "run directory")->required();
  plotdata->add_option("other_dir", plot_other,
                       "second run directory (l2 overlay)");
  plotdata->add_option("--kind", plot_kind,
                       "trajectory | pointwise | rankhist | l2");
  plotdata->add_flag("--svg", plot_svg, "render a minimal SVG as well");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (run->parsed()) {
    if (*seed_opt) run_opt.seed = seed_arg;
    if (*filter_opt) run_opt.filter = filter_arg;
    return cmd_run(run_opt);
  }
  if (compare->parsed()) return cmd_compare(cmp_a, cmp_b);
  if (plotdata->parsed()) return cmd_plotdata(plot_dir, plot_other, plot_kind, plot_svg);
  return kExitConfig;
}
