#pragma once

// Test-time attenuation: RCS*-derived spatial weights applied before global
// pooling, group metrics, and the fold-based (alpha, beta) grid search.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "oscar/error.hpp"
#include "oscar/interchange.hpp"
#include "oscar/parallel.hpp"
#include "oscar/random.hpp"
#include "oscar/rcs.hpp"
#include "oscar/tensor.hpp"

namespace oscar {

inline constexpr double kMaskEpsilon = 1e-8;

struct AttenuationMask {
  double alpha = 0.0;
  double beta = 0.0;
  double epsilon = kMaskEpsilon;
  RealArray weights;  // H' x W', shared by every image
};

/// Bilinear resampling with half-pixel centres (align_corners = false);
/// equal shapes reproduce the input exactly.
inline RealArray resize_bilinear(const RealArray& src, std::size_t out_h, std::size_t out_w) {
  if (src.ndim() != 2 || src.size() == 0) throw Error(ErrorCode::BadShape, "attenuation", "expected a 2D map");
  if (out_h == 0 || out_w == 0) throw Error(ErrorCode::BadShape, "attenuation", "empty target shape");
  const std::size_t in_h = src.shape[0], in_w = src.shape[1];
  RealArray out(Shape{out_h, out_w}, 0.0);
  auto source = [](std::size_t dst, std::size_t in, std::size_t outn) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, in - 1);
    return std::tuple{lo, hi, s - static_cast<double>(lo)};
  };
  for (std::size_t r = 0; r < out_h; ++r) {
    const auto [r0, r1, fr] = source(r, in_h, out_h);
    for (std::size_t c = 0; c < out_w; ++c) {
      const auto [c0, c1, fc] = source(c, in_w, out_w);
      const double top = src.at(r0, c0) + fc * (src.at(r0, c1) - src.at(r0, c0));
      const double bottom = src.at(r1, c0) + fc * (src.at(r1, c1) - src.at(r1, c0));
      out.at(r, c) = fr == 0.0 ? top : top + fr * (bottom - top);
    }
  }
  return out;
}

/// W~ = W / (max|W| + eps); S = alpha where W~ < 0, beta otherwise;
/// A = 1 - W~ * S. W is RCS* resampled to the feature resolution.
inline AttenuationMask build_mask(const RealArray& rcs_star, std::size_t feat_h, std::size_t feat_w, double alpha,
                                  double beta) {
  if (!(alpha >= 0.0) || !(beta >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "attenuation", "alpha and beta must be >= 0");
  for (double v : rcs_star.data)
    if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "attenuation", "RCS* map has non-finite values");
  RealArray w = resize_bilinear(rcs_star, feat_h, feat_w);
  double max_abs = 0.0;
  for (double v : w.data) max_abs = std::max(max_abs, std::abs(v));
  AttenuationMask mask;
  mask.alpha = alpha;
  mask.beta = beta;
  mask.weights = RealArray(w.shape, 1.0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double wt = w.data[i] / (max_abs + kMaskEpsilon);
    const double s = wt < 0.0 ? alpha : beta;
    mask.weights.data[i] = 1.0 - wt * s;
  }
  return mask;
}

/// z_{b,c} = sum(A * F) / (sum(A) + eps), then logits = z W^T + bias. Returns B x K.
inline RealArray weighted_pool_and_classify(const FeatureBundle& fb, const AttenuationMask& mask) {
  if (fb.features.ndim() != 4) throw Error(ErrorCode::ShapeMismatch, "attenuation", "features must be B x C x H x W");
  if (mask.weights.shape != Shape{fb.height(), fb.width()})
    throw Error(ErrorCode::ShapeMismatch, "attenuation",
                "mask " + shape_string(mask.weights.shape) + " vs features " + std::to_string(fb.height()) + "x" +
                    std::to_string(fb.width()));
  const std::size_t B = fb.batch(), C = fb.channels(), HW = fb.height() * fb.width(), K = fb.classes();
  double wsum = 0.0;
  for (double v : mask.weights.data) wsum += v;
  const double denom = wsum + mask.epsilon;
  RealArray logits(Shape{B, K}, 0.0);
  std::vector<double> z(C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* f = fb.features.data.data() + (b * C + c) * HW;
      double s = 0.0;
      for (std::size_t p = 0; p < HW; ++p) s += mask.weights.data[p] * f[p];
      z[c] = s / denom;
    }
    for (std::size_t k = 0; k < K; ++k) {
      double s = fb.bias[k];
      for (std::size_t c = 0; c < C; ++c) s += z[c] * fb.weights.at(k, c);
      logits.at(b, k) = s;
    }
  }
  return logits;
}

/// Plain global average pooling followed by the linear head.
inline RealArray pooled_logits(const FeatureBundle& fb) {
  const std::size_t B = fb.batch(), C = fb.channels(), HW = fb.height() * fb.width(), K = fb.classes();
  RealArray logits(Shape{B, K}, 0.0);
  std::vector<double> z(C);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* f = fb.features.data.data() + (b * C + c) * HW;
      z[c] = std::accumulate(f, f + HW, 0.0) / static_cast<double>(HW);
    }
    for (std::size_t k = 0; k < K; ++k) {
      double s = fb.bias[k];
      for (std::size_t c = 0; c < C; ++c) s += z[c] * fb.weights.at(k, c);
      logits.at(b, k) = s;
    }
  }
  return logits;
}

inline std::vector<int> argmax_rows(const RealArray& logits) {
  std::vector<int> pred(logits.shape[0]);
  for (std::size_t b = 0; b < pred.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.shape[1]; ++k)
      if (logits.at(b, k) > logits.at(b, best)) best = k;
    pred[b] = static_cast<int>(best);
  }
  return pred;
}

/// Accuracies of the (y, a) groups in the order (0,0), (0,1), (1,0), (1,1).
struct GroupMetrics {
  std::array<double, 4> group_accuracy{};
  double balanced_accuracy = 0.0;
  double worst_group_accuracy = 0.0;
};

/// Metrics over the selected samples.
inline GroupMetrics group_metrics(std::span<const int> predictions, const GroupLabels& labels,
                                  std::span<const std::size_t> subset) {
  if (predictions.size() != labels.size())
    throw Error(ErrorCode::LengthMismatch, "attenuation", "predictions and labels differ in length");
  std::array<std::size_t, 4> total{}, correct{};
  std::array<std::size_t, 2> y_total{}, y_correct{};
  auto visit = [&](std::size_t i) {
    const int y = labels.y[i], a = labels.a[i];
    const auto g = static_cast<std::size_t>(2 * y + a);
    const bool ok = predictions[i] == y;
    ++total[g];
    ++y_total[static_cast<std::size_t>(y)];
    if (ok) {
      ++correct[g];
      ++y_correct[static_cast<std::size_t>(y)];
    }
  };
  for (std::size_t i : subset) visit(i);
  GroupMetrics m;
  for (std::size_t g = 0; g < 4; ++g) {
    if (total[g] == 0)
      throw Error(ErrorCode::EmptyGroup, "attenuation",
                  "group (y=" + std::to_string(g / 2) + ", a=" + std::to_string(g % 2) + ") has no samples");
    m.group_accuracy[g] = static_cast<double>(correct[g]) / static_cast<double>(total[g]);
  }
  m.balanced_accuracy = 0.5 * (static_cast<double>(y_correct[0]) / static_cast<double>(y_total[0]) +
                               static_cast<double>(y_correct[1]) / static_cast<double>(y_total[1]));
  m.worst_group_accuracy = *std::min_element(m.group_accuracy.begin(), m.group_accuracy.end());
  return m;
}

inline GroupMetrics group_metrics(std::span<const int> predictions, const GroupLabels& labels) {
  std::vector<std::size_t> all(predictions.size());
  std::iota(all.begin(), all.end(), 0);
  return group_metrics(predictions, labels, all);
}

struct GridPoint {
  double alpha = 0.0;
  double beta = 0.0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

/// "start:stop:step" (inclusive) or a comma-separated list of values.
inline std::vector<double> parse_grid_axis(const std::string& spec) {
  std::vector<double> values;
  try {
    if (spec.find(':') != std::string::npos) {
      const auto p1 = spec.find(':'), p2 = spec.find(':', p1 + 1);
      if (p2 == std::string::npos) throw Error(ErrorCode::BadConfig, "attenuation", "grid must be start:stop:step");
      const double start = std::stod(spec.substr(0, p1));
      const double stop = std::stod(spec.substr(p1 + 1, p2 - p1 - 1));
      const double step = std::stod(spec.substr(p2 + 1));
      if (!(step > 0.0) || stop < start) throw Error(ErrorCode::BadConfig, "attenuation", "bad grid range " + spec);
      const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
      for (std::size_t i = 0; i < count; ++i) values.push_back(start + static_cast<double>(i) * step);
    } else {
      std::size_t pos = 0;
      while (pos <= spec.size()) {
        const auto comma = spec.find(',', pos);
        const std::string tok = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (!tok.empty()) values.push_back(std::stod(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
    }
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::BadConfig, "attenuation", "cannot parse grid '" + spec + "'");
  }
  if (values.empty()) throw Error(ErrorCode::EmptyGrid, "attenuation", "grid '" + spec + "' has no values");
  return values;
}

inline std::vector<GridPoint> square_grid(const std::vector<double>& axis) {
  std::vector<GridPoint> grid;
  for (double a : axis)
    for (double b : axis) grid.push_back({a, b});
  return grid;
}

/// Stratified fold assignment: members of each (y, a) group are shuffled and
/// dealt round-robin, so every fold sees every group when groups are large enough.
inline std::vector<std::size_t> stratified_folds(const GroupLabels& labels, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw Error(ErrorCode::InvalidArgument, "attenuation", "need at least 2 folds");
  std::vector<std::size_t> fold(labels.size(), 0);
  Rng rng = make_rng(seed);
  for (int g = 0; g < 4; ++g) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (2 * labels.y[i] + labels.a[i] == g) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < members.size(); ++k) fold[members[k]] = k % n_folds;
  }
  return fold;
}

struct SearchConstraints {
  double balanced_tolerance = 0.005;  // absolute, i.e. 0.5 percentage points
};

struct FoldResult {
  std::size_t fold = 0;
  GridPoint selected;
  bool feasible = true;
  GroupMetrics tuning_baseline;
  GroupMetrics tuning_selected;
  GroupMetrics test_baseline;
  GroupMetrics test_selected;
};

struct ShuffleSummary {
  std::size_t n_shuffles = 0;
  double min_frac = 0.5;
  std::vector<GroupMetrics> per_shuffle;  // fold-averaged test metrics
  double balanced_mean = 0.0, balanced_sd = 0.0;
  double worst_group_mean = 0.0, worst_group_sd = 0.0;
};

struct AttenuationReport {
  std::vector<GridPoint> grid;
  std::size_t n_folds = 0;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  GroupMetrics mean_test_baseline;
  GroupMetrics mean_test_selected;
  GridPoint overall;  // selection with all samples as tuning data
  bool overall_feasible = true;
  std::optional<ShuffleSummary> shuffled;
};

namespace detail {

inline GroupMetrics average_metrics(const std::vector<GroupMetrics>& ms) {
  GroupMetrics out;
  for (const auto& m : ms) {
    for (std::size_t g = 0; g < 4; ++g) out.group_accuracy[g] += m.group_accuracy[g];
    out.balanced_accuracy += m.balanced_accuracy;
    out.worst_group_accuracy += m.worst_group_accuracy;
  }
  const auto n = static_cast<double>(ms.size());
  for (auto& v : out.group_accuracy) v /= n;
  out.balanced_accuracy /= n;
  out.worst_group_accuracy /= n;
  return out;
}

// Chooses the grid point maximising tuning worst-group accuracy subject to
// (i) worst-group >= baseline and (ii) balanced >= max(baseline, best) - tol.
// Ties: smaller alpha + beta, then lexicographic (alpha, beta).
inline std::pair<std::size_t, bool> select_point(const std::vector<GridPoint>& grid,
                                                 const std::vector<GroupMetrics>& tuning, const GroupMetrics& baseline,
                                                 const SearchConstraints& cons) {
  double best_bacc = baseline.balanced_accuracy;
  for (const auto& m : tuning) best_bacc = std::max(best_bacc, m.balanced_accuracy);
  const double floor_bacc = best_bacc - cons.balanced_tolerance - 1e-12;
  std::optional<std::size_t> chosen;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto& m = tuning[g];
    if (m.worst_group_accuracy < baseline.worst_group_accuracy) continue;
    if (m.balanced_accuracy < floor_bacc) continue;
    if (!chosen) {
      chosen = g;
      continue;
    }
    const auto& c = tuning[*chosen];
    const auto& pg = grid[g];
    const auto& pc = grid[*chosen];
    if (m.worst_group_accuracy != c.worst_group_accuracy) {
      if (m.worst_group_accuracy > c.worst_group_accuracy) chosen = g;
      continue;
    }
    const double sg = pg.alpha + pg.beta, sc = pc.alpha + pc.beta;
    if (sg != sc) {
      if (sg < sc) chosen = g;
      continue;
    }
    if (std::pair(pg.alpha, pg.beta) < std::pair(pc.alpha, pc.beta)) chosen = g;
  }
  if (!chosen) return {grid.size(), false};
  return {*chosen, true};
}

inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

struct GridSearchOptions {
  std::size_t n_folds = 4;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  SearchConstraints constraints;
  std::size_t n_shuffles = 0;  // 0 disables the shuffled-RCS control
  double shuffle_min_frac = 0.5;
};

/// Fold-based (alpha, beta) selection. For each held-out fold the point is
/// chosen on the remaining folds and then scored on the held-out fold; test
/// metrics are averaged over folds. Infeasible folds fall back to the
/// baseline (0, 0) with feasible = false. Shuffled controls reuse each fold's
/// selected (alpha, beta) with displaced RCS* maps.
inline AttenuationReport grid_search_alpha_beta(const FeatureBundle& fb, const GroupLabels& labels,
                                                const RealArray& rcs_star, const std::vector<GridPoint>& grid,
                                                const GridSearchOptions& opt = {}) {
  if (grid.empty()) throw Error(ErrorCode::EmptyGrid, "attenuation", "grid has no points");
  if (labels.size() != fb.batch())
    throw Error(ErrorCode::LengthMismatch, "attenuation", "labels and features differ in sample count");
  const std::size_t fh = fb.height(), fw = fb.width();

  const auto folds = stratified_folds(labels, opt.n_folds, stage_seed(opt.seed, "folds"));
  std::vector<std::vector<std::size_t>> test_idx(opt.n_folds), tune_idx(opt.n_folds);
  for (std::size_t i = 0; i < folds.size(); ++i) {
    for (std::size_t f = 0; f < opt.n_folds; ++f) (f == folds[i] ? test_idx[f] : tune_idx[f]).push_back(i);
  }

  const auto baseline_pred = argmax_rows(weighted_pool_and_classify(fb, build_mask(rcs_star, fh, fw, 0.0, 0.0)));
  std::vector<std::vector<int>> preds(grid.size());
  parallel_for(grid.size(), opt.workers, [&](std::size_t g) {
    preds[g] = argmax_rows(weighted_pool_and_classify(fb, build_mask(rcs_star, fh, fw, grid[g].alpha, grid[g].beta)));
  });

  auto select_on = [&](std::span<const std::size_t> tune, GroupMetrics& base_out) {
    base_out = group_metrics(baseline_pred, labels, tune);
    std::vector<GroupMetrics> tuning(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) tuning[g] = group_metrics(preds[g], labels, tune);
    auto [idx, feasible] = detail::select_point(grid, tuning, base_out, opt.constraints);
    return std::tuple{idx, feasible, feasible ? tuning[idx] : base_out};
  };

  AttenuationReport rep;
  rep.grid = grid;
  rep.n_folds = opt.n_folds;
  rep.seed = opt.seed;
  std::vector<GroupMetrics> base_tests, sel_tests;
  for (std::size_t f = 0; f < opt.n_folds; ++f) {
    FoldResult fr;
    fr.fold = f;
    auto [idx, feasible, tuned] = select_on(tune_idx[f], fr.tuning_baseline);
    fr.feasible = feasible;
    fr.tuning_selected = tuned;
    fr.selected = feasible ? grid[idx] : GridPoint{0.0, 0.0};
    fr.test_baseline = group_metrics(baseline_pred, labels, test_idx[f]);
    fr.test_selected = feasible ? group_metrics(preds[idx], labels, test_idx[f]) : fr.test_baseline;
    base_tests.push_back(fr.test_baseline);
    sel_tests.push_back(fr.test_selected);
    rep.folds.push_back(fr);
  }
  rep.mean_test_baseline = detail::average_metrics(base_tests);
  rep.mean_test_selected = detail::average_metrics(sel_tests);
  {
    std::vector<std::size_t> all(labels.size());
    std::iota(all.begin(), all.end(), 0);
    GroupMetrics base_all;
    auto [idx, feasible, tuned] = select_on(all, base_all);
    rep.overall = feasible ? grid[idx] : GridPoint{0.0, 0.0};
    rep.overall_feasible = feasible;
  }

  if (opt.n_shuffles > 0) {
    if (rcs_star.ndim() != 2) throw Error(ErrorCode::BadShape, "attenuation", "RCS* map must be 2D");
    ShuffleSummary s;
    s.n_shuffles = opt.n_shuffles;
    s.min_frac = opt.shuffle_min_frac;
    s.per_shuffle.resize(opt.n_shuffles);
    const std::uint64_t shuffle_stage = stage_seed(opt.seed, "shuffle");
    parallel_for(opt.n_shuffles, opt.workers, [&](std::size_t k) {
      const RealArray shuffled = shuffle_rcs(rcs_star, opt.shuffle_min_frac, replica_seed(shuffle_stage, k));
      std::vector<GroupMetrics> per_fold;
      for (std::size_t f = 0; f < opt.n_folds; ++f) {
        const auto& sel = rep.folds[f].selected;
        const auto pred = argmax_rows(weighted_pool_and_classify(fb, build_mask(shuffled, fh, fw, sel.alpha, sel.beta)));
        per_fold.push_back(group_metrics(pred, labels, test_idx[f]));
      }
      s.per_shuffle[k] = detail::average_metrics(per_fold);
    });
    std::vector<double> bacc, wga;
    for (const auto& m : s.per_shuffle) {
      bacc.push_back(m.balanced_accuracy);
      wga.push_back(m.worst_group_accuracy);
    }
    s.balanced_mean = std::accumulate(bacc.begin(), bacc.end(), 0.0) / static_cast<double>(bacc.size());
    s.worst_group_mean = std::accumulate(wga.begin(), wga.end(), 0.0) / static_cast<double>(wga.size());
    s.balanced_sd = detail::sample_sd(bacc);
    s.worst_group_sd = detail::sample_sd(wga);
    rep.shuffled = std::move(s);
  }
  return rep;
}

}  // namespace oscar
