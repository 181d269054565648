#pragma once

// Synthetic attribution bundles with planted task and shortcut regions.
//
// The image is a g x g grid of square cells (n = g^2 regions). Each template
// is piecewise constant on cells: a planted amplitude on its region set plus
// a random background level per cell. The task and shortcut templates draw
// their levels independently, so at lambda = 0 TS carries no information
// about SA beyond BA. Per-image maps add Gaussian pixel noise and then go
// through ReLU + l1:
//   BA = t_task + noise, SA = t_short + noise,
//   TS = (1 - lambda) t_task + lambda t_short + noise.
// The feature bundle mirrors the same grid: channel 0 encodes y on the task
// cells, channel 1 encodes a on the shortcut cells, and the linear head leans
// on the shortcut channel with weight 2 lambda, so minority groups (y != a)
// are misclassified more often as lambda grows. Raw images (for Sobel/SLIC)
// show both planted sets over a smooth ramp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oscar/error.hpp"
#include "oscar/interchange.hpp"
#include "oscar/npy.hpp"
#include "oscar/parallel.hpp"
#include "oscar/partitioning.hpp"
#include "oscar/random.hpp"
#include "oscar/tensor.hpp"

namespace oscar {

struct SynthConfig {
  std::size_t n_regions = 64;  // must be a perfect square
  std::size_t block_px = 4;    // cell side in pixels
  std::size_t m = 200;
  double lambda = 0.5;
  double noise_sigma = 0.1;
  std::vector<std::size_t> task_regions;      // empty: default layout
  std::vector<std::size_t> shortcut_regions;  // empty: default layout
  double planted_amplitude = 1.0;
  double background_level = 0.25;  // region levels ~ U(0, background_level)
  double feature_amplitude = 1.0;
  double feature_sigma = 0.7;
  std::uint64_t seed = 0;

  std::size_t side() const { return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(n_regions)))); }
  Shape shape() const { return Shape{side() * block_px, side() * block_px}; }
};

/// Default layout on a g x g grid: a task band near the top and a shortcut
/// band below the middle, each g/4 rows tall and g/2 columns wide.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> default_regions(std::size_t g) {
  const std::size_t rows = std::max<std::size_t>(1, g / 4);
  const std::size_t c0 = g / 4, c1 = std::max(c0 + 1, 3 * g / 4);
  std::vector<std::size_t> task, shortcut;
  for (std::size_t r = 1; r < 1 + rows; ++r)
    for (std::size_t c = c0; c < c1; ++c) task.push_back(r * g + c);
  for (std::size_t r = g / 2 + 1; r < g / 2 + 1 + rows; ++r)
    for (std::size_t c = c0; c < c1; ++c) shortcut.push_back(r * g + c);
  return {task, shortcut};
}

/// Fills in default region sets and checks every invariant.
inline SynthConfig resolve_synth_config(SynthConfig cfg) {
  const std::size_t g = cfg.side();
  if (cfg.n_regions == 0 || g * g != cfg.n_regions)
    throw Error(ErrorCode::BadConfig, "synth", "n must be a perfect square, got " + std::to_string(cfg.n_regions));
  if (g < 4) throw Error(ErrorCode::BadConfig, "synth", "n must be at least 16");
  if (cfg.block_px == 0) throw Error(ErrorCode::BadConfig, "synth", "block size must be positive");
  if (cfg.m == 0) throw Error(ErrorCode::BadConfig, "synth", "m must be positive");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) throw Error(ErrorCode::BadConfig, "synth", "lambda must lie in [0, 1]");
  if (!(cfg.noise_sigma >= 0.0) || !(cfg.feature_sigma >= 0.0) || !(cfg.background_level >= 0.0))
    throw Error(ErrorCode::BadConfig, "synth", "noise levels must be >= 0");
  if (cfg.task_regions.empty() && cfg.shortcut_regions.empty()) {
    auto [t, s] = default_regions(g);
    cfg.task_regions = t;
    cfg.shortcut_regions = s;
  }
  if (cfg.task_regions.empty() || cfg.shortcut_regions.empty())
    throw Error(ErrorCode::BadConfig, "synth", "task and shortcut region sets must both be nonempty");
  std::set<std::size_t> seen;
  for (auto r : cfg.task_regions) {
    if (r >= cfg.n_regions) throw Error(ErrorCode::BadConfig, "synth", "task region out of range");
    seen.insert(r);
  }
  for (auto r : cfg.shortcut_regions) {
    if (r >= cfg.n_regions) throw Error(ErrorCode::BadConfig, "synth", "shortcut region out of range");
    if (seen.count(r)) throw Error(ErrorCode::BadConfig, "synth", "task and shortcut regions overlap");
  }
  return cfg;
}

struct SynthBundle {
  SynthConfig config;  // resolved
  Partition partition;
  std::array<std::vector<RealArray>, 3> maps;  // indexed by ModelTag, preprocessed
  std::vector<RealArray> raw;
  GroupLabels labels;
  FeatureBundle features;
  std::vector<std::string> image_ids;
};

namespace detail {

inline RealArray cell_indicator(const SynthConfig& cfg, const std::vector<std::size_t>& regions) {
  const std::size_t g = cfg.side(), b = cfg.block_px, side = g * b;
  RealArray t(cfg.shape(), 0.0);
  for (auto r : regions) {
    const std::size_t gr = r / g, gc = r % g;
    for (std::size_t y = gr * b; y < (gr + 1) * b; ++y)
      for (std::size_t x = gc * b; x < (gc + 1) * b; ++x) t.data[y * side + x] = 1.0;
  }
  return t;
}

/// Smooth ramp used as the background of the raw images.
inline RealArray background_ramp(const Shape& shape) {
  const std::size_t h = shape[0], w = shape[1];
  RealArray t(shape, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      t.at(r, c) = 0.25 * ((static_cast<double>(c) + 0.5) / static_cast<double>(w) +
                           0.37 * (static_cast<double>(r) + 0.5) / static_cast<double>(h));
  return t;
}

/// Pixel map holding amplitude * indicator(planted) + level[region].
inline RealArray region_template(const Partition& partition, const std::vector<bool>& planted, double amplitude,
                                 const std::vector<double>& levels) {
  RealArray t(partition.shape, 0.0);
  for (std::size_t p = 0; p < t.size(); ++p) {
    const auto r = static_cast<std::size_t>(partition.labels[p]);
    t.data[p] = (planted[r] ? amplitude : 0.0) + levels[r];
  }
  return t;
}

}  // namespace detail

inline SynthBundle generate_synthetic(const SynthConfig& config, std::size_t workers = 1) {
  SynthBundle out;
  out.config = resolve_synth_config(config);
  const SynthConfig& cfg = out.config;
  const std::size_t g = cfg.side(), m = cfg.m;
  const Shape shape = cfg.shape();
  out.partition = grid_partition(shape, Shape{cfg.block_px, cfg.block_px});

  std::vector<bool> is_task(cfg.n_regions, false), is_short(cfg.n_regions, false);
  for (auto r : cfg.task_regions) is_task[r] = true;
  for (auto r : cfg.shortcut_regions) is_short[r] = true;

  std::vector<double> task_levels(cfg.n_regions), short_levels(cfg.n_regions);
  {
    Rng rng = make_rng(stage_seed(cfg.seed, "synth/templates"));
    std::uniform_real_distribution<double> level(0.0, cfg.background_level);
    for (auto& v : task_levels) v = level(rng);
    for (auto& v : short_levels) v = level(rng);
  }
  const RealArray t_task = detail::region_template(out.partition, is_task, cfg.planted_amplitude, task_levels);
  const RealArray t_short = detail::region_template(out.partition, is_short, cfg.planted_amplitude, short_levels);
  const RealArray task = detail::cell_indicator(cfg, cfg.task_regions);
  const RealArray shortcut = detail::cell_indicator(cfg, cfg.shortcut_regions);
  const RealArray ramp = detail::background_ramp(shape);
  const std::size_t px = shape_size(shape);

  for (auto& v : out.maps) v.resize(m);
  out.raw.resize(m);
  out.image_ids.resize(m);
  out.labels.image_ids.resize(m);
  out.labels.y.resize(m);
  out.labels.a.resize(m);
  const std::size_t channels = 4;
  out.features.features = RealArray(Shape{m, channels, g, g}, 0.0);
  const std::uint64_t stage = stage_seed(cfg.seed, "synth");

  parallel_for(m, workers, [&](std::size_t i) {
    Rng rng = make_rng(stage, i);
    std::normal_distribution<double> noise(0.0, 1.0);
    const int y = static_cast<int>((i % 4) / 2), a = static_cast<int>(i % 2);
    char id[32];
    std::snprintf(id, sizeof id, "img%05zu", i);
    out.image_ids[i] = id;
    out.labels.image_ids[i] = id;
    out.labels.y[i] = y;
    out.labels.a[i] = a;

    std::array<RealArray, 3> raw_maps;
    for (auto& rm : raw_maps) rm = RealArray(shape, 0.0);
    const double lam = cfg.lambda, sigma = cfg.noise_sigma;
    for (std::size_t p = 0; p < px; ++p) {
      raw_maps[index_of(ModelTag::BA)].data[p] = t_task.data[p] + sigma * noise(rng);
      raw_maps[index_of(ModelTag::SA)].data[p] = t_short.data[p] + sigma * noise(rng);
      raw_maps[index_of(ModelTag::TS)].data[p] = (1.0 - lam) * t_task.data[p] + lam * t_short.data[p] + sigma * noise(rng);
    }
    for (ModelTag tag : kAllModels) out.maps[index_of(tag)][i] = preprocess_map(raw_maps[index_of(tag)], PreprocessMode::ReluL1);

    RealArray image(shape, 0.0);
    for (std::size_t p = 0; p < px; ++p)
      image.data[p] = 0.5 * task.data[p] + 0.8 * shortcut.data[p] + ramp.data[p] + 0.05 * noise(rng);
    out.raw[i] = std::move(image);

    double* f = out.features.features.data.data() + i * channels * g * g;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      for (std::size_t r = 0; r < g * g; ++r) {
        double v = cfg.feature_sigma * noise(rng);
        if (ch == 0 && is_task[r]) v += cfg.feature_amplitude * (2.0 * y - 1.0);
        if (ch == 1 && is_short[r]) v += cfg.feature_amplitude * (2.0 * a - 1.0);
        f[ch * g * g + r] = v;
      }
    }
  });

  out.features.weights = RealArray(Shape{2, channels}, 0.0);
  out.features.weights.at(1, 0) = 1.0;
  out.features.weights.at(1, 1) = 2.0 * cfg.lambda;
  out.features.weights.at(0, 0) = -1.0;
  out.features.weights.at(0, 1) = -2.0 * cfg.lambda;
  out.features.bias = {0.0, 0.0};
  out.features.image_ids = out.image_ids;
  return out;
}

/// Writes manifest.json, maps/, raw/, features.npy, weights.npy, bias.npy and
/// partition.npy (the generating grid) into `dir`.
inline Manifest write_synthetic(const SynthBundle& bundle, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "maps", ec);
  fs::create_directories(dir / "raw", ec);
  if (!fs::is_directory(dir / "maps") || !fs::is_directory(dir / "raw"))
    throw Error(ErrorCode::IoError, "synth", "cannot create output directory " + dir.string());

  Manifest m;
  m.shape = bundle.config.shape();
  m.base_dir = dir;
  for (std::size_t i = 0; i < bundle.image_ids.size(); ++i) {
    const std::string& id = bundle.image_ids[i];
    ImageEntry e;
    e.id = id;
    for (ModelTag tag : kAllModels) {
      std::string key = to_string(tag);
      std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      const std::string rel = "maps/" + id + "_" + key + ".npy";
      npy::save(dir / rel, bundle.maps[index_of(tag)][i]);
      e.maps[index_of(tag)] = rel;
    }
    e.y = bundle.labels.y[i];
    e.a = bundle.labels.a[i];
    e.raw = "raw/" + id + ".npy";
    npy::save(dir / *e.raw, bundle.raw[i]);
    m.images.push_back(std::move(e));
  }
  npy::save(dir / "features.npy", bundle.features.features);
  npy::save(dir / "weights.npy", bundle.features.weights);
  npy::save(dir / "bias.npy", bundle.features.bias);
  npy::save(dir / "partition.npy", bundle.partition.as_array());
  m.features = FeatureRef{"features.npy", "weights.npy", "bias.npy"};
  save_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace oscar
