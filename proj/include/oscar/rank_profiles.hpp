#pragma once

// Per-image region ranks and their dataset-level aggregation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "oscar/error.hpp"
#include "oscar/interchange.hpp"
#include "oscar/parallel.hpp"
#include "oscar/partitioning.hpp"
#include "oscar/tensor.hpp"

namespace oscar {

enum class RegionStatistic { Mean, Saliency };
enum class Aggregation { Median, Mean };
enum class AggregationOrder { RankThenAggregate, AggregateThenRank };

inline RegionStatistic parse_region_statistic(const std::string& s) {
  if (s == "mean") return RegionStatistic::Mean;
  if (s == "saliency") return RegionStatistic::Saliency;
  throw Error(ErrorCode::InvalidArgument, "rank_profiles", "unknown statistic '" + s + "'");
}
inline std::string to_string(RegionStatistic s) { return s == RegionStatistic::Mean ? "mean" : "saliency"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "median") return Aggregation::Median;
  if (s == "mean") return Aggregation::Mean;
  throw Error(ErrorCode::InvalidArgument, "rank_profiles", "unknown aggregation '" + s + "'");
}
inline std::string to_string(Aggregation a) { return a == Aggregation::Median ? "median" : "mean"; }

inline AggregationOrder parse_aggregation_order(const std::string& s) {
  if (s == "rank-agg") return AggregationOrder::RankThenAggregate;
  if (s == "agg-rank") return AggregationOrder::AggregateThenRank;
  throw Error(ErrorCode::InvalidArgument, "rank_profiles", "unknown order '" + s + "'");
}
inline std::string to_string(AggregationOrder o) {
  return o == AggregationOrder::RankThenAggregate ? "rank-agg" : "agg-rank";
}

struct RankVector {
  std::string image_id;
  std::vector<double> ranks;
};

struct RankProfile {
  ModelTag model_tag = ModelTag::BA;
  std::vector<double> values;
  Aggregation aggregation = Aggregation::Median;
  std::size_t n_images = 0;
};

/// Linear-interpolation quantile over an unsorted sample (position q*(N-1)).
inline double quantile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "rank_profiles", "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// One score per region: the region's mean attribution, or its saliency
/// score (fraction of region pixels at or above the image-wide median of
/// foreground attributions).
inline std::vector<double> region_scores(const RealArray& map, const Partition& partition, RegionStatistic statistic) {
  if (map.shape != partition.shape)
    throw Error(ErrorCode::ShapeMismatch, "rank_profiles",
                "map shape " + shape_string(map.shape) + " differs from partition shape " + shape_string(partition.shape));
  const std::size_t n = partition.n_regions;
  std::vector<double> acc(n, 0.0);
  if (statistic == RegionStatistic::Mean) {
    for (std::size_t p = 0; p < map.size(); ++p) {
      const auto l = partition.labels[p];
      if (l >= 0) acc[static_cast<std::size_t>(l)] += map.data[p];
    }
  } else {
    std::vector<double> pool;
    pool.reserve(map.size());
    for (std::size_t p = 0; p < map.size(); ++p)
      if (partition.labels[p] >= 0) pool.push_back(map.data[p]);
    const double threshold = quantile_linear(std::move(pool), 0.5);
    for (std::size_t p = 0; p < map.size(); ++p) {
      const auto l = partition.labels[p];
      if (l >= 0 && map.data[p] >= threshold) acc[static_cast<std::size_t>(l)] += 1.0;
    }
  }
  for (std::size_t r = 0; r < n; ++r) acc[r] /= static_cast<double>(partition.region_sizes[r]);
  return acc;
}

/// Descending fractional ranks: 1 = largest score; tied scores share the
/// average of the positions they cover.
inline std::vector<double> rank_scores(std::span<const double> scores) {
  const std::size_t n = scores.size();
  for (double s : scores)
    if (!std::isfinite(s)) throw Error(ErrorCode::InvalidArgument, "rank_profiles", "non-finite region score");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of positions i+1..j
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = avg;
    i = j;
  }
  return ranks;
}

/// Ascending fractional ranks (1 = smallest), used for Spearman.
inline std::vector<double> rank_ascending(std::span<const double> values) {
  std::vector<double> neg(values.size());
  std::transform(values.begin(), values.end(), neg.begin(), [](double v) { return -v; });
  return rank_scores(neg);
}

/// m x n matrix of per-image rank vectors (row = image).
using RankMatrix = RealArray;

namespace detail {

inline double median_of(std::vector<double>& v) {
  const std::size_t m = v.size();
  const std::size_t mid = m / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (m % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace detail

/// Component-wise aggregate over the selected rows (all rows when `rows` is
/// empty). Rows may repeat, which is how bootstrap replicates are formed.
inline std::vector<double> aggregate_rows(const RankMatrix& ranks, Aggregation op,
                                          std::span<const std::size_t> rows = {}) {
  if (ranks.ndim() != 2 || ranks.shape[0] == 0)
    throw Error(ErrorCode::EmptyInput, "rank_profiles", "no rank vectors to aggregate");
  const std::size_t n = ranks.shape[1];
  const std::size_t m = rows.empty() ? ranks.shape[0] : rows.size();
  std::vector<double> out(n), column(m);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < m; ++i) column[i] = ranks.at(rows.empty() ? i : rows[i], r);
    if (op == Aggregation::Median) {
      out[r] = detail::median_of(column);
    } else {
      double s = 0.0;
      for (double v : column) s += v;
      out[r] = s / static_cast<double>(m);
    }
  }
  return out;
}

inline RankMatrix to_matrix(std::span<const RankVector> vectors) {
  if (vectors.empty()) throw Error(ErrorCode::EmptyInput, "rank_profiles", "no rank vectors to aggregate");
  const std::size_t n = vectors.front().ranks.size();
  RankMatrix mat(Shape{vectors.size(), n});
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].ranks.size() != n)
      throw Error(ErrorCode::LengthMismatch, "rank_profiles", "rank vectors differ in length");
    std::copy(vectors[i].ranks.begin(), vectors[i].ranks.end(), mat.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return mat;
}

inline RankProfile aggregate_profiles(std::span<const RankVector> vectors, Aggregation op,
                                      ModelTag tag = ModelTag::BA) {
  RankProfile p;
  p.model_tag = tag;
  p.values = aggregate_rows(to_matrix(vectors), op);
  p.aggregation = op;
  p.n_images = vectors.size();
  return p;
}

/// Raw region scores, one row per map.
inline RealArray score_matrix(std::span<const RealArray> maps, const Partition& partition, RegionStatistic statistic,
                              std::size_t workers = 1) {
  if (maps.empty()) throw Error(ErrorCode::EmptyInput, "rank_profiles", "no attribution maps");
  const std::size_t n = partition.n_regions;
  RealArray mat(Shape{maps.size(), n});
  parallel_for(maps.size(), workers, [&](std::size_t i) {
    const auto s = region_scores(maps[i], partition, statistic);
    std::copy(s.begin(), s.end(), mat.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  });
  return mat;
}

/// Scores every map and ranks its regions; row i of the result belongs to maps[i].
inline RankMatrix rank_matrix(std::span<const RealArray> maps, const Partition& partition, RegionStatistic statistic,
                              std::size_t workers = 1) {
  if (maps.empty()) throw Error(ErrorCode::EmptyInput, "rank_profiles", "no attribution maps");
  const std::size_t n = partition.n_regions;
  RankMatrix mat(Shape{maps.size(), n});
  parallel_for(maps.size(), workers, [&](std::size_t i) {
    const auto ranks = rank_scores(region_scores(maps[i], partition, statistic));
    std::copy(ranks.begin(), ranks.end(), mat.data.begin() + static_cast<std::ptrdiff_t>(i * n));
  });
  return mat;
}

/// Comparison mode: average region scores across images first, then rank once.
inline RankProfile aggregate_then_rank(std::span<const RealArray> maps, const Partition& partition,
                                       RegionStatistic statistic, ModelTag tag = ModelTag::BA) {
  if (maps.empty()) throw Error(ErrorCode::EmptyInput, "rank_profiles", "no attribution maps");
  std::vector<double> mean(partition.n_regions, 0.0);
  for (const auto& map : maps) {
    const auto s = region_scores(map, partition, statistic);
    for (std::size_t r = 0; r < s.size(); ++r) mean[r] += s[r];
  }
  for (double& v : mean) v /= static_cast<double>(maps.size());
  RankProfile p;
  p.model_tag = tag;
  p.values = rank_scores(mean);
  p.aggregation = Aggregation::Mean;
  p.n_images = maps.size();
  return p;
}

}  // namespace oscar
