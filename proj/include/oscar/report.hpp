#pragma once

// Report bundle: a JSON summary, `region,value` CSV tables and PNG heatmaps.
// Output bytes depend only on the inputs, so identical runs produce
// identical files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "oscar/attenuation.hpp"
#include "oscar/error.hpp"
#include "oscar/inference.hpp"
#include "oscar/tensor.hpp"

namespace oscar {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Colormap { Gray, Diverging };

struct RegionTable {
  std::string name;
  std::vector<double> values;
};

struct Heatmap {
  std::string name;
  RealArray values;  // 2D, or 3D (middle slice of the last axis is drawn)
  Colormap colormap = Colormap::Diverging;
};

struct ReportBundle {
  json summary = json::object();
  std::vector<RegionTable> tables;
  std::vector<Heatmap> heatmaps;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_region_csv(const fs::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "report", "cannot write " + path.string());
  out << "region,value\n";
  for (std::size_t r = 0; r < values.size(); ++r) out << r << ',' << format_real(values[r]) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "report", "write failed for " + path.string());
}

inline RealArray heatmap_plane(const RealArray& values) {
  if (values.ndim() == 2) return values;
  if (values.ndim() == 3) {
    const std::size_t h = values.shape[0], w = values.shape[1], d = values.shape[2], k = d / 2;
    RealArray plane(Shape{h, w}, 0.0);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) plane.at(r, c) = values.data[(r * w + c) * d + k];
    return plane;
  }
  throw Error(ErrorCode::BadShape, "report", "heatmaps need 2D or 3D arrays");
}

/// Gray: min..max mapped to 0..255. Diverging: symmetric about zero, blue for
/// negative, white at zero, red for positive.
inline void write_heatmap_png(const fs::path& path, const RealArray& values, Colormap cmap) {
  const RealArray plane = heatmap_plane(values);
  const std::size_t h = plane.shape[0], w = plane.shape[1];
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  std::vector<std::uint8_t> buffer;
  auto to_byte = [](double t) { return static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)); };
  if (cmap == Colormap::Gray) {
    image.format = PNG_FORMAT_GRAY;
    const auto [lo, hi] = std::minmax_element(plane.data.begin(), plane.data.end());
    const double span = *hi - *lo;
    buffer.resize(h * w);
    for (std::size_t i = 0; i < h * w; ++i) buffer[i] = to_byte(span > 0 ? (plane.data[i] - *lo) / span : 0.0);
  } else {
    image.format = PNG_FORMAT_RGB;
    double max_abs = 0.0;
    for (double v : plane.data) max_abs = std::max(max_abs, std::abs(v));
    buffer.resize(h * w * 3);
    for (std::size_t i = 0; i < h * w; ++i) {
      const double t = max_abs > 0 ? plane.data[i] / max_abs : 0.0;
      const std::uint8_t fade = to_byte(1.0 - std::abs(t));
      buffer[3 * i + 0] = t < 0 ? fade : 255;
      buffer[3 * i + 1] = fade;
      buffer[3 * i + 2] = t > 0 ? fade : 255;
    }
  }
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr))
    throw Error(ErrorCode::IoError, "report", "cannot write " + path.string() + ": " + image.message);
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "report", "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "report", "write failed for " + path.string());
}

/// Writes report.json, <table>.csv and <heatmap>.png into `dir`.
inline void write_report(const ReportBundle& bundle, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorCode::IoError, "report", "cannot create report directory " + dir.string());
  write_json_file(dir / "report.json", bundle.summary);
  for (const auto& t : bundle.tables) write_region_csv(dir / (t.name + ".csv"), t.values);
  for (const auto& hm : bundle.heatmaps) write_heatmap_png(dir / (hm.name + ".png"), hm.values, hm.colormap);
}

inline json roles_to_json(const Roles& roles) {
  json j = {{"a", to_string(roles.a)}, {"b", to_string(roles.b)}};
  j["c"] = roles.c ? json(to_string(*roles.c)) : json(nullptr);
  return j;
}

inline json inference_to_json(const InferenceResult& r) {
  return json{{"kind", to_string(r.kind)},
              {"method", to_string(r.method)},
              {"roles", roles_to_json(r.roles)},
              {"rho", r.rho_obs},
              {"p", r.p_value},
              {"ci_lo", r.ci_low},
              {"ci_hi", r.ci_high},
              {"n_regions", r.n_regions},
              {"n_permutations", r.n_permutations},
              {"n_permutation_degenerate", r.n_permutation_degenerate},
              {"exhaustive", r.exhaustive},
              {"permute", to_string(r.permute_mode)},
              {"n_bootstrap", r.n_bootstrap},
              {"n_bootstrap_dropped", r.n_bootstrap_dropped},
              {"percentile_rule", "linear interpolation at q*(N-1)"},
              {"seed", r.seed}};
}

inline json metrics_to_json(const GroupMetrics& m) {
  return json{{"group_accuracy",
               {{"y0_a0", m.group_accuracy[0]},
                {"y0_a1", m.group_accuracy[1]},
                {"y1_a0", m.group_accuracy[2]},
                {"y1_a1", m.group_accuracy[3]}}},
              {"balanced_accuracy", m.balanced_accuracy},
              {"worst_group_accuracy", m.worst_group_accuracy}};
}

/// Fold report; the "table" rows mirror a (mask, BAcc, WGAcc) layout.
inline json attenuation_to_json(const AttenuationReport& rep) {
  json j;
  j["n_folds"] = rep.n_folds;
  j["seed"] = rep.seed;
  j["grid"] = json::array();
  for (const auto& g : rep.grid) j["grid"].push_back({g.alpha, g.beta});
  j["interpolation"] = "bilinear";
  j["folds"] = json::array();
  for (const auto& f : rep.folds) {
    j["folds"].push_back({{"fold", f.fold},
                          {"alpha", f.selected.alpha},
                          {"beta", f.selected.beta},
                          {"feasible", f.feasible},
                          {"tuning_baseline", metrics_to_json(f.tuning_baseline)},
                          {"tuning_selected", metrics_to_json(f.tuning_selected)},
                          {"test_baseline", metrics_to_json(f.test_baseline)},
                          {"test_selected", metrics_to_json(f.test_selected)}});
  }
  j["selected"] = {{"alpha", rep.overall.alpha}, {"beta", rep.overall.beta}, {"feasible", rep.overall_feasible}};
  j["table"] = json::array();
  j["table"].push_back({{"mask", "None"},
                        {"balanced_accuracy", rep.mean_test_baseline.balanced_accuracy},
                        {"worst_group_accuracy", rep.mean_test_baseline.worst_group_accuracy}});
  j["table"].push_back({{"mask", "RCS"},
                        {"balanced_accuracy", rep.mean_test_selected.balanced_accuracy},
                        {"worst_group_accuracy", rep.mean_test_selected.worst_group_accuracy}});
  if (rep.shuffled) {
    const auto& s = *rep.shuffled;
    j["table"].push_back({{"mask", "Random"},
                          {"balanced_accuracy", s.balanced_mean},
                          {"balanced_accuracy_sd", s.balanced_sd},
                          {"worst_group_accuracy", s.worst_group_mean},
                          {"worst_group_accuracy_sd", s.worst_group_sd},
                          {"n_shuffles", s.n_shuffles},
                          {"min_frac", s.min_frac},
                          {"displacement", "toroidal Chebyshev >= ceil(min_frac * max(H, W))"}});
  }
  return j;
}

}  // namespace oscar
