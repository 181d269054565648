#pragma once

// Region-index permutation tests and image-level bootstrap intervals.
//
// Every replicate draws from its own engine seeded by (stage seed, replicate
// index), and reductions only count or sort, so results do not depend on
// the worker count.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "oscar/correlations.hpp"
#include "oscar/error.hpp"
#include "oscar/parallel.hpp"
#include "oscar/random.hpp"
#include "oscar/rank_profiles.hpp"

namespace oscar {

enum class PermuteMode { B, AB };

inline PermuteMode parse_permute_mode(const std::string& s) {
  if (s == "b") return PermuteMode::B;
  if (s == "ab") return PermuteMode::AB;
  throw Error(ErrorCode::InvalidArgument, "inference", "unknown permutation mode '" + s + "'");
}
inline std::string to_string(PermuteMode m) { return m == PermuteMode::B ? "b" : "ab"; }

struct PermutationOptions {
  std::size_t n_perm = 10000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  PermuteMode mode = PermuteMode::B;
  bool allow_exhaustive = true;
};

struct PermutationResult {
  double p_value = 1.0;
  std::optional<double> rho_obs;
  std::size_t n_evaluated = 0;  // permutations actually scored
  std::size_t n_degenerate = 0;
  bool exhaustive = false;
};

// |rho_perm| >= |rho_obs| is decided with this absolute slack so that
// permutations reproducing the observed statistic up to rounding count.
inline constexpr double kPermutationTieTolerance = 1e-12;

namespace detail {

inline std::size_t factorial_or_cap(std::size_t n, std::size_t cap) {
  std::size_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) {
    f *= i;
    if (f > cap) return cap + 1;
  }
  return f;
}

// k-th permutation of 0..n-1 in lexicographic order (factorial number system).
inline std::vector<std::size_t> nth_permutation(std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n), out;
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<std::size_t> fact(n + 1, 1);
  for (std::size_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * i;
  out.reserve(n);
  for (std::size_t i = n; i > 0; --i) {
    const std::size_t idx = k / fact[i - 1];
    k %= fact[i - 1];
    out.push_back(pool[idx]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
  }
  return out;
}

inline std::vector<double> apply_permutation(std::span<const double> x, std::span<const std::size_t> perm) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[perm[i]];
  return out;
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

}  // namespace detail

/// Two-sided region-index permutation test. Mode B permutes profile b only
/// (residualisation is recomputed per permutation); mode AB permutes a and b
/// independently. When n <= 8 and n! <= n_perm (mode B) all permutations are
/// enumerated and p is exact; otherwise p = (1 + #{|rho*| >= |rho|}) / (1 + n_perm).
/// A constant b makes the statistic permutation-invariant and yields p = 1.
inline PermutationResult permutation_test(std::span<const double> a, std::span<const double> b,
                                          std::span<const double> c, CorrelationKind kind, CorrelationMethod method,
                                          const PermutationOptions& opt) {
  if (opt.n_perm < 1) throw Error(ErrorCode::InvalidArgument, "inference", "n_perm must be >= 1");
  PermutationResult res;
  if (b.size() >= 1 && std::all_of(b.begin(), b.end(), [&](double v) { return v == b[0]; })) {
    res.p_value = 1.0;
    return res;
  }
  const double rho_obs = correlation(kind, a, b, c, method);
  res.rho_obs = rho_obs;
  const double threshold = std::abs(rho_obs) - kPermutationTieTolerance;
  const std::size_t n = b.size();

  // 1 = exceeds, 0 = does not, 2 = degenerate
  auto score = [&](std::span<const double> pa, std::span<const double> pb) -> unsigned char {
    try {
      return std::abs(correlation(kind, pa, pb, c, method)) >= threshold ? 1 : 0;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateProfile || e.code() == ErrorCode::ZeroVariance) return 2;
      throw;
    }
  };

  std::vector<unsigned char> outcome;
  const bool exhaustive = opt.allow_exhaustive && opt.mode == PermuteMode::B && n <= 8 &&
                          detail::factorial_or_cap(n, opt.n_perm) <= opt.n_perm;
  if (exhaustive) {
    const std::size_t total = detail::factorial_or_cap(n, opt.n_perm);
    outcome.resize(total);
    parallel_for(total, opt.workers, [&](std::size_t k) {
      const auto perm = detail::nth_permutation(n, k);
      outcome[k] = score(a, detail::apply_permutation(b, perm));
    });
  } else {
    outcome.resize(opt.n_perm);
    parallel_for(opt.n_perm, opt.workers, [&](std::size_t k) {
      Rng rng = make_rng(opt.seed, k);
      const auto pb = detail::apply_permutation(b, detail::random_permutation(n, rng));
      if (opt.mode == PermuteMode::AB) {
        const auto pa = detail::apply_permutation(a, detail::random_permutation(n, rng));
        outcome[k] = score(pa, pb);
      } else {
        outcome[k] = score(a, pb);
      }
    });
  }
  const auto exceed = static_cast<std::size_t>(std::count(outcome.begin(), outcome.end(), 1));
  res.n_degenerate = static_cast<std::size_t>(std::count(outcome.begin(), outcome.end(), 2));
  res.n_evaluated = outcome.size();
  res.exhaustive = exhaustive;
  res.p_value = exhaustive ? static_cast<double>(exceed) / static_cast<double>(outcome.size())
                           : static_cast<double>(1 + exceed) / static_cast<double>(1 + outcome.size());
  return res;
}

/// Percentile interval with linear interpolation between order statistics
/// (quantile position q * (N - 1) over the sorted sample).
inline std::pair<double, double> percentile_interval(std::vector<double> values, double level) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "inference", "no replicate statistics");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "inference", "level must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {q(0.5 * (1.0 - level)), q(0.5 * (1.0 + level))};
}

struct BootstrapOptions {
  std::size_t n_boot = 10000;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  Aggregation aggregation = Aggregation::Median;
  bool rerank = false;  // rows hold region scores; rank after aggregating
};

struct BootstrapResult {
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_dropped = 0;
};

/// Per-image rank matrices indexed by ModelTag; all share the image order.
using RankMatrixSet = std::array<RankMatrix, 3>;

/// Image-level bootstrap: each replicate resamples m image indices with
/// replacement (shared by all models), re-aggregates the profiles and
/// recomputes the statistic. Degenerate replicates are dropped and counted.
inline BootstrapResult bootstrap_ci(const RankMatrixSet& ranks, CorrelationKind kind, Roles roles,
                                    CorrelationMethod method, const BootstrapOptions& opt) {
  if (opt.n_boot < 1) throw Error(ErrorCode::InvalidArgument, "inference", "n_boot must be >= 1");
  if (kind == CorrelationKind::Pairwise) roles.c.reset();
  else if (!roles.c) throw Error(ErrorCode::InvalidArgument, "inference", "reference role C required");
  const std::size_t m = ranks[index_of(roles.a)].shape.empty() ? 0 : ranks[index_of(roles.a)].shape[0];
  if (m == 0) throw Error(ErrorCode::EmptyInput, "inference", "no rank vectors to resample");
  for (const auto& r : ranks)
    if (!r.shape.empty() && r.shape[0] != m)
      throw Error(ErrorCode::LengthMismatch, "inference", "rank matrices differ in image count");

  std::vector<double> stats(opt.n_boot, 0.0);
  std::vector<unsigned char> valid(opt.n_boot, 0);
  parallel_for(opt.n_boot, opt.workers, [&](std::size_t k) {
    Rng rng = make_rng(opt.seed, k);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::vector<std::size_t> rows(m);
    for (auto& r : rows) r = pick(rng);
    auto pa = aggregate_rows(ranks[index_of(roles.a)], opt.aggregation, rows);
    auto pb = aggregate_rows(ranks[index_of(roles.b)], opt.aggregation, rows);
    std::vector<double> pc;
    if (roles.c) pc = aggregate_rows(ranks[index_of(*roles.c)], opt.aggregation, rows);
    if (opt.rerank) {
      pa = rank_scores(pa);
      pb = rank_scores(pb);
      if (roles.c) pc = rank_scores(pc);
    }
    try {
      stats[k] = correlation(kind, pa, pb, pc, method);
      valid[k] = 1;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateProfile && e.code() != ErrorCode::ZeroVariance) throw;
    }
  });
  std::vector<double> kept;
  kept.reserve(opt.n_boot);
  for (std::size_t k = 0; k < opt.n_boot; ++k)
    if (valid[k]) kept.push_back(stats[k]);
  if (kept.empty()) throw Error(ErrorCode::AllDegenerate, "inference", "every bootstrap replicate was degenerate");
  BootstrapResult res;
  res.n_valid = kept.size();
  res.n_dropped = opt.n_boot - kept.size();
  std::tie(res.ci_low, res.ci_high) = percentile_interval(std::move(kept), opt.level);
  return res;
}

struct InferenceResult {
  CorrelationKind kind = CorrelationKind::Partial;
  CorrelationMethod method = CorrelationMethod::Pearson;
  Roles roles;
  double rho_obs = 0.0;
  double p_value = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_permutations = 0;
  std::size_t n_bootstrap = 0;
  std::size_t n_bootstrap_dropped = 0;
  std::size_t n_permutation_degenerate = 0;
  bool exhaustive = false;
  PermuteMode permute_mode = PermuteMode::B;
  std::uint64_t seed = 0;
  std::size_t n_regions = 0;
};

struct InferenceSettings {
  std::size_t n_perm = 10000;
  std::size_t n_boot = 10000;
  double level = 0.95;
  PermuteMode permute_mode = PermuteMode::B;
};

/// Observed statistic on the aggregated profiles, permutation p-value and
/// bootstrap interval. Sub-seeds for the two procedures derive from `seed`.
inline InferenceResult infer(const RankMatrixSet& ranks, const ProfileSet& profiles, CorrelationKind kind, Roles roles,
                             CorrelationMethod method, Aggregation aggregation, const InferenceSettings& settings,
                             std::uint64_t seed, std::size_t workers = 1, bool rerank = false) {
  const CorrelationResult obs = correlate(profiles, kind, roles, method);
  InferenceResult r;
  r.kind = kind;
  r.method = method;
  r.roles = obs.roles;
  r.rho_obs = obs.rho;
  r.seed = seed;
  r.permute_mode = settings.permute_mode;
  r.n_regions = profiles[index_of(roles.a)].size();

  const auto& a = profiles[index_of(obs.roles.a)];
  const auto& b = profiles[index_of(obs.roles.b)];
  const std::span<const double> c =
      obs.roles.c ? std::span<const double>(profiles[index_of(*obs.roles.c)]) : std::span<const double>();
  PermutationOptions popt;
  popt.n_perm = settings.n_perm;
  popt.seed = stage_seed(seed, "permutation");
  popt.workers = workers;
  popt.mode = settings.permute_mode;
  const auto perm = permutation_test(a, b, c, kind, method, popt);
  r.p_value = perm.p_value;
  r.n_permutations = perm.n_evaluated;
  r.n_permutation_degenerate = perm.n_degenerate;
  r.exhaustive = perm.exhaustive;

  BootstrapOptions bopt;
  bopt.n_boot = settings.n_boot;
  bopt.level = settings.level;
  bopt.seed = stage_seed(seed, "bootstrap");
  bopt.workers = workers;
  bopt.aggregation = aggregation;
  bopt.rerank = rerank;
  const auto boot = bootstrap_ci(ranks, kind, obs.roles, method, bopt);
  r.ci_low = boot.ci_low;
  r.ci_high = boot.ci_high;
  r.n_bootstrap = boot.n_valid + boot.n_dropped;
  r.n_bootstrap_dropped = boot.n_dropped;
  return r;
}

}  // namespace oscar
