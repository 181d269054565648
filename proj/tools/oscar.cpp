// oscar: command-line front end. Each subcommand is a thin wrapper over the
// library; errors exit with the numeric value of their ErrorCode.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oscar/oscar.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace oscar;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cli", "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, "cli", path.string() + ": " + e.what());
  }
}

void emit(const json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_json_file(out, j);
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

fs::path sidecar_of(const fs::path& npy) { return fs::path(npy).replace_extension(".json"); }

Partition load_partition(const fs::path& path) { return partition_from_array(npy::load<std::int32_t>(path)); }

/// Partition spec recorded next to a partition file, when present.
std::optional<PartitionSpec> partition_spec_of(const fs::path& npy_path) {
  const fs::path side = sidecar_of(npy_path);
  if (!fs::exists(side)) return std::nullopt;
  const json j = read_json(side);
  if (!j.contains("mode")) return std::nullopt;
  PartitionSpec spec;
  spec.mode = parse_partition_mode(j["mode"].get<std::string>());
  if (j.contains("block")) spec.block = j["block"].get<Shape>();
  return spec;
}

Roles parse_roles(const std::string& a, const std::string& b, const std::string& c) {
  Roles r;
  r.a = parse_model_tag(a);
  r.b = parse_model_tag(b);
  if (c.empty() || lower(c) == "none") r.c.reset();
  else r.c = parse_model_tag(c);
  return r;
}

struct ProfileDir {
  ProfileData data;
  Aggregation aggregation = Aggregation::Median;
};

ProfileDir load_profile_dir(const fs::path& dir) {
  const json meta = read_json(dir / "profile.json");
  ProfileDir p;
  p.aggregation = parse_aggregation(meta.at("aggregation").get<std::string>());
  p.data.rerank = meta.at("order").get<std::string>() == "agg-rank";
  for (ModelTag tag : kAllModels) {
    const std::string key = lower(to_string(tag));
    p.data.matrices[index_of(tag)] = npy::load<double>(dir / ("matrix_" + key + ".npy"));
    p.data.profiles[index_of(tag)] = npy::load<double>(dir / ("profile_" + key + ".npy")).data;
  }
  return p;
}

int run_partition(const std::string& manifest_path, const std::string& shape_spec, const PartitionSpec& spec,
                  const std::string& edges_path, const std::string& out, std::size_t workers) {
  Partition p;
  if (spec.mode == PartitionMode::Slic && !edges_path.empty()) {
    SlicOptions opt;
    opt.compactness = spec.compactness;
    opt.iterations = spec.iterations;
    p = slic_partition(npy::load<double>(edges_path), spec.k, opt);
  } else if (!manifest_path.empty()) {
    p = build_partition(spec, load_manifest(manifest_path), workers);
  } else if (!shape_spec.empty() && spec.mode == PartitionMode::Grid) {
    p = grid_partition(parse_shape_spec(shape_spec), spec.block);
  } else if (spec.mode == PartitionMode::Atlas) {
    p = atlas_partition(npy::load<std::int32_t>(spec.atlas), spec.background);
  } else {
    throw Error(ErrorCode::BadConfig, "cli", "partition needs --manifest, --shape (grid) or --edges (slic)");
  }
  npy::save(out, p.as_array());
  json side = {{"mode", to_string(spec.mode)}, {"n_regions", p.n_regions}, {"region_sizes", p.region_sizes}};
  if (spec.mode == PartitionMode::Grid) side["block"] = spec.block;
  write_json_file(sidecar_of(out), side);
  std::cout << json{{"n_regions", p.n_regions}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oscar: rank-profile audit of model triplets for shortcut learning"};
  app.require_subcommand(1);
  std::size_t workers = default_workers();
  app.add_option("--workers", workers, "worker threads (default: $OSCAR_WORKERS or 1)")->check(CLI::PositiveNumber);

  // partition
  auto* cmd_partition = app.add_subcommand("partition", "build a region partition");
  std::string p_manifest, p_shape, p_edges, p_out = "partition.npy", p_mode = "grid", p_block = "16x16";
  PartitionSpec p_spec;
  cmd_partition->add_option("--mode", p_mode)->check(CLI::IsMember({"grid", "slic", "atlas"}));
  cmd_partition->add_option("--manifest", p_manifest, "manifest (shape, raw images for SLIC)");
  cmd_partition->add_option("--shape", p_shape, "image shape for grid mode, e.g. 224x224");
  cmd_partition->add_option("--block", p_block, "grid block, e.g. 16x16");
  cmd_partition->add_option("--k", p_spec.k, "SLIC regions");
  cmd_partition->add_option("--compactness", p_spec.compactness);
  cmd_partition->add_option("--iters", p_spec.iterations);
  cmd_partition->add_option("--edges", p_edges, "edge image (.npy) for SLIC");
  cmd_partition->add_option("--atlas", p_spec.atlas, "atlas label array (.npy)");
  cmd_partition->add_option("--background", p_spec.background);
  cmd_partition->add_option("--out", p_out);

  // profile
  auto* cmd_profile = app.add_subcommand("profile", "per-image ranks and aggregated profiles");
  std::string pr_manifest, pr_partition, pr_out = "profiles", pr_stat = "mean", pr_agg = "median", pr_order = "rank-agg",
                                         pr_pre = "relu_l1";
  cmd_profile->add_option("--manifest", pr_manifest)->required();
  cmd_profile->add_option("--partition", pr_partition)->required();
  cmd_profile->add_option("--stat", pr_stat)->check(CLI::IsMember({"mean", "saliency"}));
  cmd_profile->add_option("--agg", pr_agg)->check(CLI::IsMember({"median", "mean"}));
  cmd_profile->add_option("--order", pr_order)->check(CLI::IsMember({"rank-agg", "agg-rank"}));
  cmd_profile->add_option("--preprocess", pr_pre)->check(CLI::IsMember({"relu_l1", "l1_only", "none"}));
  cmd_profile->add_option("--out", pr_out, "output directory");

  // correlate / infer share role options
  std::string c_profiles = "profiles", c_kind = "partial", c_a = "TS", c_b = "SA", c_c = "BA", c_method = "pearson",
              c_out;
  auto add_corr_opts = [&](CLI::App* cmd) {
    cmd->add_option("--profiles", c_profiles, "directory written by `oscar profile`");
    cmd->add_option("--kind", c_kind)->check(CLI::IsMember({"pairwise", "partial", "deviation"}));
    cmd->add_option("--a", c_a);
    cmd->add_option("--b", c_b);
    cmd->add_option("--c", c_c);
    cmd->add_option("--method", c_method)->check(CLI::IsMember({"pearson", "spearman"}));
    cmd->add_option("--out", c_out, "JSON output file (default stdout)");
  };
  auto* cmd_correlate = app.add_subcommand("correlate", "correlation of aggregated profiles");
  add_corr_opts(cmd_correlate);
  auto* cmd_infer = app.add_subcommand("infer", "permutation p-value and bootstrap interval");
  add_corr_opts(cmd_infer);
  InferenceSettings i_settings;
  std::string i_permute = "b";
  std::uint64_t i_seed = 0;
  cmd_infer->add_option("--n-perm", i_settings.n_perm)->check(CLI::PositiveNumber);
  cmd_infer->add_option("--n-boot", i_settings.n_boot)->check(CLI::PositiveNumber);
  cmd_infer->add_option("--level", i_settings.level);
  cmd_infer->add_option("--permute", i_permute)->check(CLI::IsMember({"b", "ab"}));
  cmd_infer->add_option("--seed", i_seed);

  // rcs
  auto* cmd_rcs = app.add_subcommand("rcs", "region contribution scores");
  std::string r_profiles = "profiles", r_partition, r_roles = "TS,SA,BA", r_out = "rcs";
  bool r_star = false, r_shuffle = false;
  double r_min_frac = 0.5;
  std::uint64_t r_seed = 0;
  cmd_rcs->add_option("--profiles", r_profiles);
  cmd_rcs->add_option("--partition", r_partition)->required();
  cmd_rcs->add_option("--roles", r_roles, "A,B,C");
  cmd_rcs->add_flag("--star", r_star, "also compute RCS* = RCS(TS,SA|BA) - RCS(TS,BA|SA)");
  cmd_rcs->add_flag("--shuffle", r_shuffle, "write a displaced shuffle of the map");
  cmd_rcs->add_option("--min-frac", r_min_frac);
  cmd_rcs->add_option("--seed", r_seed);
  cmd_rcs->add_option("--out", r_out, "output directory");

  // attenuate
  auto* cmd_att = app.add_subcommand("attenuate", "RCS*-guided test-time attenuation grid search");
  std::string a_manifest, a_rcs, a_grid = "0:2:0.25", a_out;
  std::size_t a_folds = 4, a_shuffles = 10;
  double a_min_frac = 0.5, a_tol = 0.005;
  std::uint64_t a_seed = 0;
  cmd_att->add_option("--manifest,--features", a_manifest, "manifest with a feature bundle and (y, a) labels")->required();
  cmd_att->add_option("--rcs-star", a_rcs, "2D RCS* map (.npy)")->required();
  cmd_att->add_option("--grid", a_grid, "axis values, 'lo:hi:step' or comma list");
  cmd_att->add_option("--folds", a_folds)->check(CLI::Range(2, 100));
  cmd_att->add_option("--shuffles", a_shuffles);
  cmd_att->add_option("--min-frac", a_min_frac);
  cmd_att->add_option("--tolerance", a_tol, "balanced-accuracy tolerance (absolute)");
  cmd_att->add_option("--seed", a_seed);
  cmd_att->add_option("--out", a_out, "JSON output file (default stdout)");

  // synth
  auto* cmd_synth = app.add_subcommand("synth", "write a synthetic interchange bundle");
  SynthConfig s_cfg;
  std::string s_out = "synth";
  cmd_synth->add_option("--lambda", s_cfg.lambda);
  cmd_synth->add_option("--m", s_cfg.m);
  cmd_synth->add_option("--n", s_cfg.n_regions, "regions (perfect square)");
  cmd_synth->add_option("--sigma", s_cfg.noise_sigma);
  cmd_synth->add_option("--block-px", s_cfg.block_px);
  cmd_synth->add_option("--seed", s_cfg.seed);
  cmd_synth->add_option("--out", s_out, "output directory");

  // run
  auto* cmd_run = app.add_subcommand("run", "full pipeline from a JSON config");
  std::string run_config, run_out;
  std::optional<std::uint64_t> run_seed;
  cmd_run->add_option("--config", run_config)->required();
  cmd_run->add_option("--out", run_out, "override output_dir");
  cmd_run->add_option("--seed", run_seed, "override the master seed");

  // report
  auto* cmd_report = app.add_subcommand("report", "re-render tables and heatmaps from report.json");
  std::string rep_input, rep_partition, rep_out = "report";
  cmd_report->add_option("--input", rep_input)->required();
  cmd_report->add_option("--partition", rep_partition)->required();
  cmd_report->add_option("--out", rep_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*cmd_partition) {
      p_spec.mode = parse_partition_mode(p_mode);
      p_spec.block = parse_shape_spec(p_block);
      return run_partition(p_manifest, p_shape, p_spec, p_edges, p_out, workers);
    }
    if (*cmd_profile) {
      const Manifest m = load_manifest(pr_manifest);
      const Partition part = load_partition(pr_partition);
      if (part.shape != m.shape) throw Error(ErrorCode::ShapeMismatch, "cli", "partition shape differs from maps");
      const auto mode = parse_preprocess_mode(pr_pre);
      std::array<std::vector<RealArray>, 3> maps;
      for (ModelTag tag : kAllModels) maps[index_of(tag)] = load_model_maps(m, tag, mode, workers);
      const auto data = build_profiles(maps, part, parse_region_statistic(pr_stat), parse_aggregation(pr_agg),
                                       parse_aggregation_order(pr_order), workers);
      fs::create_directories(pr_out);
      for (ModelTag tag : kAllModels) {
        const std::string key = lower(to_string(tag));
        npy::save(fs::path(pr_out) / ("matrix_" + key + ".npy"), data.matrices[index_of(tag)]);
        npy::save(fs::path(pr_out) / ("profile_" + key + ".npy"), data.profiles[index_of(tag)]);
      }
      write_json_file(fs::path(pr_out) / "profile.json",
                      {{"statistic", pr_stat},
                       {"aggregation", pr_agg},
                       {"order", pr_order},
                       {"preprocess", pr_pre},
                       {"n_images", m.size()},
                       {"n_regions", part.n_regions},
                       {"image_ids", m.ids()},
                       {"matrix", pr_order == "agg-rank" ? "region scores" : "per-image ranks"}});
      return 0;
    }
    if (*cmd_correlate || *cmd_infer) {
      const auto pd = load_profile_dir(c_profiles);
      const auto kind = parse_correlation_kind(c_kind);
      const auto method = parse_correlation_method(c_method);
      Roles roles = parse_roles(c_a, c_b, c_c);
      if (*cmd_correlate) {
        const auto r = correlate(pd.data.profiles, kind, roles, method);
        emit({{"kind", to_string(r.kind)}, {"method", to_string(r.method)}, {"roles", roles_to_json(r.roles)}, {"rho", r.rho}},
             c_out);
        return 0;
      }
      i_settings.permute_mode = parse_permute_mode(i_permute);
      const auto r = infer(pd.data.matrices, pd.data.profiles, kind, roles, method, pd.aggregation, i_settings, i_seed,
                           workers, pd.data.rerank);
      emit(inference_to_json(r), c_out);
      return 0;
    }
    if (*cmd_rcs) {
      const auto pd = load_profile_dir(r_profiles);
      const Partition part = load_partition(r_partition);
      std::vector<std::string> parts;
      {
        std::stringstream ss(r_roles);
        for (std::string t; std::getline(ss, t, ',');) parts.push_back(t);
      }
      if (parts.size() != 3) throw Error(ErrorCode::InvalidArgument, "cli", "--roles needs three models A,B,C");
      const Roles roles = parse_roles(parts[0], parts[1], parts[2]);
      const auto& P = pd.data.profiles;
      const RcsMap map = compute_rcs(P[index_of(roles.a)], P[index_of(roles.b)], P[index_of(*roles.c)], roles);
      ReportBundle b;
      b.summary = {{"roles", roles_to_json(roles)}, {"raw", map.raw}, {"normalised", map.normalised}};
      b.tables.push_back({"rcs", map.normalised});
      b.heatmaps.push_back({"rcs", rasterize_rcs(map.normalised, part), Colormap::Diverging});
      const PartitionSpec spec = partition_spec_of(r_partition).value_or([] {
        PartitionSpec s;
        s.mode = PartitionMode::Slic;
        return s;
      }());
      std::vector<double> base = map.normalised;
      if (r_star) {
        base = compute_rcs_star(P[index_of(ModelTag::TS)], P[index_of(ModelTag::SA)], P[index_of(ModelTag::BA)]);
        b.summary["star"] = base;
        b.tables.push_back({"rcs_star", base});
        b.heatmaps.push_back({"rcs_star", rasterize_rcs(base, part), Colormap::Diverging});
      }
      const RealArray spatial = rcs_spatial_map(base, part, spec);
      write_report(b, r_out);
      fs::rename(fs::path(r_out) / "report.json", fs::path(r_out) / "rcs.json");
      npy::save(fs::path(r_out) / (r_star ? "rcs_star.npy" : "rcs_map.npy"), spatial);
      if (r_shuffle) {
        const RealArray sh = shuffle_rcs(spatial, r_min_frac, replica_seed(stage_seed(r_seed, "shuffle"), 0));
        npy::save(fs::path(r_out) / "shuffled.npy", sh);
        write_heatmap_png(fs::path(r_out) / "shuffled.png", sh, Colormap::Diverging);
      }
      return 0;
    }
    if (*cmd_att) {
      const Manifest m = load_manifest(a_manifest);
      const FeatureBundle fb = load_feature_bundle(m);
      GridSearchOptions opt;
      opt.n_folds = a_folds;
      opt.seed = a_seed;
      opt.workers = workers;
      opt.n_shuffles = a_shuffles;
      opt.shuffle_min_frac = a_min_frac;
      opt.constraints.balanced_tolerance = a_tol;
      const auto rep =
          grid_search_alpha_beta(fb, m.labels(), npy::load<double>(a_rcs), square_grid(parse_grid_axis(a_grid)), opt);
      emit(attenuation_to_json(rep), a_out);
      return 0;
    }
    if (*cmd_synth) {
      const auto bundle = generate_synthetic(s_cfg, workers);
      write_synthetic(bundle, s_out);
      std::cout << json{{"out", s_out}, {"m", bundle.config.m}, {"n_regions", bundle.config.n_regions}}.dump() << '\n';
      return 0;
    }
    if (*cmd_run) {
      PipelineConfig cfg = load_pipeline_config(run_config);
      if (!run_out.empty()) cfg.output_dir = run_out;
      if (run_seed) cfg.seed = *run_seed;
      run_pipeline(cfg, workers);
      return 0;
    }
    if (*cmd_report) {
      write_report(report_from_summary(read_json(rep_input), load_partition(rep_partition)), rep_out);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "oscar: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "oscar: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
