#pragma once

// End-to-end audit: load -> partition -> profile -> correlate -> infer -> RCS
// (-> attenuate when the manifest carries features and labels), written as a
// report bundle. The JSON summary embeds the resolved configuration and every
// derived seed but not the worker count, so it is identical for any number of
// workers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "oscar/attenuation.hpp"
#include "oscar/correlations.hpp"
#include "oscar/error.hpp"
#include "oscar/inference.hpp"
#include "oscar/interchange.hpp"
#include "oscar/npy.hpp"
#include "oscar/partitioning.hpp"
#include "oscar/random.hpp"
#include "oscar/rank_profiles.hpp"
#include "oscar/rcs.hpp"
#include "oscar/report.hpp"

namespace oscar {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// "16x16" or "4x4x4".
inline Shape parse_shape_spec(const std::string& spec) {
  Shape out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const std::size_t next = spec.find('x', pos);
    const std::string part = spec.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadConfig, "pipeline", "bad size spec '" + spec + "'");
    }
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

enum class PartitionMode { Grid, Slic, Atlas };

inline PartitionMode parse_partition_mode(const std::string& s) {
  if (s == "grid") return PartitionMode::Grid;
  if (s == "slic") return PartitionMode::Slic;
  if (s == "atlas") return PartitionMode::Atlas;
  throw Error(ErrorCode::BadConfig, "pipeline", "unknown partition mode '" + s + "'");
}

inline std::string to_string(PartitionMode m) {
  switch (m) {
    case PartitionMode::Grid: return "grid";
    case PartitionMode::Slic: return "slic";
    case PartitionMode::Atlas: return "atlas";
  }
  return "?";
}

struct PartitionSpec {
  PartitionMode mode = PartitionMode::Grid;
  Shape block{16, 16};
  std::size_t k = 64;
  double compactness = 10.0;
  std::size_t iterations = 10;
  std::string atlas;
  std::int32_t background = 0;
};

struct CorrelationSpec {
  CorrelationKind kind = CorrelationKind::Partial;
  Roles roles;
};

struct RcsSettings {
  bool enabled = true;
  Roles roles;
  bool star = true;
  std::size_t shuffles = 0;
  double min_frac = 0.5;
};

struct AttenuationSettings {
  std::optional<bool> enabled;  // unset: run when features and labels exist
  std::string grid = "0:2:0.25";
  std::size_t folds = 4;
  std::size_t shuffles = 10;
  double min_frac = 0.5;
  double balanced_tolerance = 0.005;
};

struct PipelineConfig {
  std::string manifest;
  std::string output_dir = "oscar_report";
  PartitionSpec partition;
  PreprocessMode preprocess = PreprocessMode::ReluL1;
  RegionStatistic statistic = RegionStatistic::Mean;
  Aggregation aggregation = Aggregation::Median;
  AggregationOrder order = AggregationOrder::RankThenAggregate;
  CorrelationMethod method = CorrelationMethod::Pearson;
  std::vector<CorrelationSpec> correlations{
      {CorrelationKind::Pairwise, Roles{ModelTag::TS, ModelTag::SA, std::nullopt}},
      {CorrelationKind::Partial, Roles{ModelTag::TS, ModelTag::SA, ModelTag::BA}},
      {CorrelationKind::Deviation, Roles{ModelTag::TS, ModelTag::SA, ModelTag::BA}}};
  InferenceSettings inference;
  RcsSettings rcs;
  AttenuationSettings attenuation;
  std::uint64_t seed = 0;
};

namespace detail {

inline Roles roles_from_json(const json& j, Roles fallback) {
  Roles r = fallback;
  if (j.contains("a")) r.a = parse_model_tag(j["a"].get<std::string>());
  if (j.contains("b")) r.b = parse_model_tag(j["b"].get<std::string>());
  if (j.contains("c")) {
    if (j["c"].is_null()) r.c.reset();
    else r.c = parse_model_tag(j["c"].get<std::string>());
  }
  return r;
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j[key].is_null()) out = j[key].get<T>();
}

}  // namespace detail

/// Missing keys keep their defaults. Relative paths resolve against `base`.
inline PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base = {}) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "pipeline", "config must be a JSON object");
  PipelineConfig c;
  try {
    detail::read_if(j, "manifest", c.manifest);
    detail::read_if(j, "output_dir", c.output_dir);
    if (j.contains("partition")) {
      const auto& p = j["partition"];
      if (p.contains("mode")) c.partition.mode = parse_partition_mode(p["mode"].get<std::string>());
      if (p.contains("block")) {
        if (p["block"].is_string()) c.partition.block = parse_shape_spec(p["block"].get<std::string>());
        else c.partition.block = p["block"].get<Shape>();
      }
      detail::read_if(p, "k", c.partition.k);
      detail::read_if(p, "compactness", c.partition.compactness);
      detail::read_if(p, "iterations", c.partition.iterations);
      detail::read_if(p, "atlas", c.partition.atlas);
      detail::read_if(p, "background", c.partition.background);
    }
    if (j.contains("preprocess")) c.preprocess = parse_preprocess_mode(j["preprocess"].get<std::string>());
    if (j.contains("statistic")) c.statistic = parse_region_statistic(j["statistic"].get<std::string>());
    if (j.contains("aggregation")) c.aggregation = parse_aggregation(j["aggregation"].get<std::string>());
    if (j.contains("order")) c.order = parse_aggregation_order(j["order"].get<std::string>());
    if (j.contains("method")) c.method = parse_correlation_method(j["method"].get<std::string>());
    if (j.contains("correlations")) {
      c.correlations.clear();
      for (const auto& e : j["correlations"]) {
        CorrelationSpec s;
        s.kind = parse_correlation_kind(e.at("kind").get<std::string>());
        s.roles = detail::roles_from_json(e, Roles{});
        if (s.kind == CorrelationKind::Pairwise) s.roles.c.reset();
        c.correlations.push_back(s);
      }
    }
    if (j.contains("inference")) {
      const auto& i = j["inference"];
      detail::read_if(i, "n_perm", c.inference.n_perm);
      detail::read_if(i, "n_boot", c.inference.n_boot);
      detail::read_if(i, "level", c.inference.level);
      if (i.contains("permute")) c.inference.permute_mode = parse_permute_mode(i["permute"].get<std::string>());
    }
    if (j.contains("rcs")) {
      const auto& r = j["rcs"];
      detail::read_if(r, "enabled", c.rcs.enabled);
      if (r.contains("roles")) c.rcs.roles = detail::roles_from_json(r["roles"], Roles{});
      detail::read_if(r, "star", c.rcs.star);
      detail::read_if(r, "shuffles", c.rcs.shuffles);
      detail::read_if(r, "min_frac", c.rcs.min_frac);
    }
    if (j.contains("attenuation")) {
      const auto& a = j["attenuation"];
      if (a.contains("enabled") && !a["enabled"].is_null()) c.attenuation.enabled = a["enabled"].get<bool>();
      if (a.contains("grid")) {
        if (a["grid"].is_string()) {
          c.attenuation.grid = a["grid"].get<std::string>();
        } else {
          std::string joined;
          for (const auto& v : a["grid"]) joined += (joined.empty() ? "" : ",") + format_real(v.get<double>());
          c.attenuation.grid = joined;
        }
      }
      detail::read_if(a, "folds", c.attenuation.folds);
      detail::read_if(a, "shuffles", c.attenuation.shuffles);
      detail::read_if(a, "min_frac", c.attenuation.min_frac);
      detail::read_if(a, "balanced_tolerance", c.attenuation.balanced_tolerance);
    }
    detail::read_if(j, "seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, "pipeline", std::string("malformed config: ") + e.what());
  }
  if (c.manifest.empty()) throw Error(ErrorCode::BadConfig, "pipeline", "config names no manifest");
  if (!base.empty()) {
    auto resolve = [&](std::string& p) {
      if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(c.manifest);
    resolve(c.output_dir);
    resolve(c.partition.atlas);
  }
  return c;
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "pipeline", "cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadConfig, "pipeline", path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j, path.parent_path());
}

inline json pipeline_config_to_json(const PipelineConfig& c) {
  json j;
  j["manifest"] = c.manifest;
  j["output_dir"] = c.output_dir;
  j["partition"] = {{"mode", to_string(c.partition.mode)}};
  switch (c.partition.mode) {
    case PartitionMode::Grid: j["partition"]["block"] = c.partition.block; break;
    case PartitionMode::Slic:
      j["partition"]["k"] = c.partition.k;
      j["partition"]["compactness"] = c.partition.compactness;
      j["partition"]["iterations"] = c.partition.iterations;
      break;
    case PartitionMode::Atlas:
      j["partition"]["atlas"] = c.partition.atlas;
      j["partition"]["background"] = c.partition.background;
      break;
  }
  j["preprocess"] = to_string(c.preprocess);
  j["statistic"] = to_string(c.statistic);
  j["aggregation"] = to_string(c.aggregation);
  j["order"] = to_string(c.order);
  j["method"] = to_string(c.method);
  j["correlations"] = json::array();
  for (const auto& s : c.correlations) {
    json e = roles_to_json(s.roles);
    e["kind"] = to_string(s.kind);
    j["correlations"].push_back(e);
  }
  j["inference"] = {{"n_perm", c.inference.n_perm},
                    {"n_boot", c.inference.n_boot},
                    {"level", c.inference.level},
                    {"permute", to_string(c.inference.permute_mode)}};
  j["rcs"] = {{"enabled", c.rcs.enabled},
              {"roles", roles_to_json(c.rcs.roles)},
              {"star", c.rcs.star},
              {"shuffles", c.rcs.shuffles},
              {"min_frac", c.rcs.min_frac}};
  j["attenuation"] = {{"enabled", c.attenuation.enabled ? json(*c.attenuation.enabled) : json(nullptr)},
                      {"grid", c.attenuation.grid},
                      {"folds", c.attenuation.folds},
                      {"shuffles", c.attenuation.shuffles},
                      {"min_frac", c.attenuation.min_frac},
                      {"balanced_tolerance", c.attenuation.balanced_tolerance}};
  j["seed"] = c.seed;
  return j;
}

/// Partition for a manifest; SLIC runs on the averaged Sobel edges of the
/// manifest's raw images.
inline Partition build_partition(const PartitionSpec& spec, const Manifest& m, std::size_t workers = 1) {
  switch (spec.mode) {
    case PartitionMode::Grid: return grid_partition(m.shape, spec.block);
    case PartitionMode::Slic: {
      if (!m.has_raw()) throw Error(ErrorCode::BadConfig, "pipeline", "SLIC needs raw images in the manifest");
      std::vector<RealArray> images(m.size());
      parallel_for(m.size(), workers, [&](std::size_t i) { images[i] = npy::load<double>(m.resolve(*m.images[i].raw)); });
      SlicOptions opt;
      opt.compactness = spec.compactness;
      opt.iterations = spec.iterations;
      return slic_partition(average_sobel(images), spec.k, opt);
    }
    case PartitionMode::Atlas: {
      if (spec.atlas.empty()) throw Error(ErrorCode::BadConfig, "pipeline", "atlas mode needs an atlas path");
      const LabelArray atlas = npy::load<std::int32_t>(spec.atlas);
      if (atlas.shape != m.shape) throw Error(ErrorCode::ShapeMismatch, "pipeline", "atlas shape differs from maps");
      return atlas_partition(atlas, spec.background);
    }
  }
  throw Error(ErrorCode::BadConfig, "pipeline", "unknown partition mode");
}

/// Per-image matrices (ranks for rank-agg, raw scores for agg-rank) and the
/// aggregated profiles, indexed by ModelTag.
struct ProfileData {
  RankMatrixSet matrices;
  ProfileSet profiles;
  bool rerank = false;
};

inline ProfileData build_profiles(const std::array<std::vector<RealArray>, 3>& maps, const Partition& partition,
                                  RegionStatistic statistic, Aggregation aggregation, AggregationOrder order,
                                  std::size_t workers = 1) {
  ProfileData d;
  d.rerank = order == AggregationOrder::AggregateThenRank;
  for (ModelTag tag : kAllModels) {
    const auto& mv = maps[index_of(tag)];
    if (d.rerank) {
      d.matrices[index_of(tag)] = score_matrix(mv, partition, statistic, workers);
      d.profiles[index_of(tag)] = rank_scores(aggregate_rows(d.matrices[index_of(tag)], aggregation));
    } else {
      d.matrices[index_of(tag)] = rank_matrix(mv, partition, statistic, workers);
      d.profiles[index_of(tag)] = aggregate_rows(d.matrices[index_of(tag)], aggregation);
    }
  }
  return d;
}

/// Region values laid out as a 2D map for masking and shuffling: the block
/// grid for 2D grid partitions, otherwise the rasterised pixel map.
inline RealArray rcs_spatial_map(std::span<const double> values, const Partition& partition,
                                 const PartitionSpec& spec) {
  if (spec.mode == PartitionMode::Grid && partition.shape.size() == 2) {
    const std::size_t gh = partition.shape[0] / spec.block[0], gw = partition.shape[1] / spec.block[1];
    return RealArray(Shape{gh, gw}, std::vector<double>(values.begin(), values.end()));
  }
  return rasterize_rcs(values, partition);
}

struct PipelineResult {
  json summary;
  Partition partition;
  ProfileData profiles;
  std::vector<InferenceResult> inferences;
  std::optional<RcsMap> rcs;
  std::optional<std::vector<double>> rcs_star;
  std::optional<AttenuationReport> attenuation;
  ReportBundle bundle;
};

inline PipelineResult run_pipeline(const PipelineConfig& cfg, std::size_t workers = 1, bool write = true) {
  if (workers == 0) workers = 1;
  const Manifest manifest = load_manifest(cfg.manifest);
  PipelineResult res;
  res.partition = build_partition(cfg.partition, manifest, workers);

  std::array<std::vector<RealArray>, 3> maps;
  for (ModelTag tag : kAllModels) maps[index_of(tag)] = load_model_maps(manifest, tag, cfg.preprocess, workers);
  res.profiles = build_profiles(maps, res.partition, cfg.statistic, cfg.aggregation, cfg.order, workers);
  maps = {};

  json& s = res.summary;
  s["config"] = pipeline_config_to_json(cfg);
  s["seeds"] = {{"master", cfg.seed},
                {"permutation", stage_seed(cfg.seed, "permutation")},
                {"bootstrap", stage_seed(cfg.seed, "bootstrap")},
                {"shuffle", stage_seed(cfg.seed, "shuffle")},
                {"folds", stage_seed(cfg.seed, "folds")},
                {"rule", "splitmix64(master ^ fnv1a64(stage)); replicate i uses splitmix64(stage + splitmix64(i + 1))"}};
  s["n_images"] = manifest.size();
  s["n_regions"] = res.partition.n_regions;
  s["partition"] = {{"mode", to_string(cfg.partition.mode)}, {"region_sizes", res.partition.region_sizes}};
  s["profiles"] = json::object();
  for (ModelTag tag : kAllModels) s["profiles"][to_string(tag)] = res.profiles.profiles[index_of(tag)];

  s["correlations"] = json::array();
  for (const auto& spec : cfg.correlations) {
    auto r = infer(res.profiles.matrices, res.profiles.profiles, spec.kind, spec.roles, cfg.method, cfg.aggregation,
                   cfg.inference, cfg.seed, workers, res.profiles.rerank);
    s["correlations"].push_back(inference_to_json(r));
    res.inferences.push_back(r);
  }

  ReportBundle& b = res.bundle;
  if (cfg.rcs.enabled) {
    if (!cfg.rcs.roles.c) throw Error(ErrorCode::BadConfig, "pipeline", "RCS needs a reference role C");
    const auto& P = res.profiles.profiles;
    res.rcs = compute_rcs(P[index_of(cfg.rcs.roles.a)], P[index_of(cfg.rcs.roles.b)], P[index_of(*cfg.rcs.roles.c)],
                          cfg.rcs.roles);
    json rj = {{"roles", roles_to_json(cfg.rcs.roles)}, {"raw", res.rcs->raw}, {"normalised", res.rcs->normalised}};
    b.tables.push_back({"rcs", res.rcs->normalised});
    b.heatmaps.push_back({"rcs", rasterize_rcs(res.rcs->normalised, res.partition), Colormap::Diverging});
    if (cfg.rcs.star) {
      res.rcs_star = compute_rcs_star(P[index_of(ModelTag::TS)], P[index_of(ModelTag::SA)], P[index_of(ModelTag::BA)]);
      rj["star"] = *res.rcs_star;
      b.tables.push_back({"rcs_star", *res.rcs_star});
      b.heatmaps.push_back({"rcs_star", rasterize_rcs(*res.rcs_star, res.partition), Colormap::Diverging});
    }
    if (cfg.rcs.shuffles > 0) {
      const auto& base = res.rcs_star ? *res.rcs_star : res.rcs->normalised;
      const RealArray spatial = rcs_spatial_map(base, res.partition, cfg.partition);
      const std::uint64_t stage = stage_seed(cfg.seed, "shuffle");
      rj["shuffled"] = json::array();
      for (std::size_t k = 0; k < cfg.rcs.shuffles; ++k) {
        const RealArray sh = shuffle_rcs(spatial, cfg.rcs.min_frac, replica_seed(stage, k));
        rj["shuffled"].push_back(sh.data);
      }
      rj["shuffle_min_frac"] = cfg.rcs.min_frac;
    }
    s["rcs"] = rj;
  }

  const bool can_attenuate = manifest.features.has_value() && manifest.has_labels();
  const bool attenuate = cfg.attenuation.enabled.value_or(can_attenuate);
  if (attenuate) {
    if (!can_attenuate)
      throw Error(ErrorCode::BadConfig, "pipeline", "attenuation needs a feature bundle and (y, a) labels");
    if (!res.rcs_star) throw Error(ErrorCode::BadConfig, "pipeline", "attenuation needs RCS* (rcs.star = true)");
    const FeatureBundle fb = load_feature_bundle(manifest);
    GridSearchOptions opt;
    opt.n_folds = cfg.attenuation.folds;
    opt.seed = cfg.seed;
    opt.workers = workers;
    opt.constraints.balanced_tolerance = cfg.attenuation.balanced_tolerance;
    opt.n_shuffles = cfg.attenuation.shuffles;
    opt.shuffle_min_frac = cfg.attenuation.min_frac;
    const RealArray spatial = rcs_spatial_map(*res.rcs_star, res.partition, cfg.partition);
    res.attenuation = grid_search_alpha_beta(fb, manifest.labels(), spatial,
                                             square_grid(parse_grid_axis(cfg.attenuation.grid)), opt);
    s["attenuation"] = attenuation_to_json(*res.attenuation);
  }

  b.summary = s;
  if (write) write_report(b, cfg.output_dir);
  return res;
}

/// Regenerates tables and heatmaps from a saved report.json and its partition.
inline ReportBundle report_from_summary(const json& summary, const Partition& partition) {
  ReportBundle b;
  b.summary = summary;
  if (summary.contains("rcs")) {
    const auto& r = summary["rcs"];
    const auto norm = r.at("normalised").get<std::vector<double>>();
    b.tables.push_back({"rcs", norm});
    b.heatmaps.push_back({"rcs", rasterize_rcs(norm, partition), Colormap::Diverging});
    if (r.contains("star")) {
      const auto star = r["star"].get<std::vector<double>>();
      b.tables.push_back({"rcs_star", star});
      b.heatmaps.push_back({"rcs_star", rasterize_rcs(star, partition), Colormap::Diverging});
    }
  }
  return b;
}

}  // namespace oscar
