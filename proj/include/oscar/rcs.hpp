#pragma once

// Region Contribution Scores: per-region terms of the partial correlation
// numerator, their l1-normalised form, the shortcut-minus-task combination
// (RCS*), a displaced shuffle used as a random control, and rasterisation.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "oscar/correlations.hpp"
#include "oscar/error.hpp"
#include "oscar/partitioning.hpp"
#include "oscar/random.hpp"
#include "oscar/tensor.hpp"

namespace oscar {

struct RcsMap {
  std::vector<double> raw;
  std::vector<double> normalised;
  Roles roles;
};

/// RCS(r) = z_A,r * z_B,r over the residuals of a and b on c, z-scored with
/// the n-1 sample standard deviation. Then sum(raw) / (n-1) equals the
/// partial correlation.
inline RcsMap compute_rcs(std::span<const double> a, std::span<const double> b, std::span<const double> c,
                          Roles roles = {}) {
  detail::require_partial_inputs(a, b, c);
  const auto ea = detail::checked_residual(a, c, "A");
  const auto eb = detail::checked_residual(b, c, "B");
  const std::size_t n = a.size();
  const double ma = detail::mean(ea), mb = detail::mean(eb);
  const double sa = std::sqrt(detail::centered_ss(ea, ma) / static_cast<double>(n - 1));
  const double sb = std::sqrt(detail::centered_ss(eb, mb) / static_cast<double>(n - 1));
  RcsMap out;
  out.roles = roles;
  out.raw.resize(n);
  double l1 = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    out.raw[r] = ((ea[r] - ma) / sa) * ((eb[r] - mb) / sb);
    l1 += std::abs(out.raw[r]);
  }
  out.normalised.resize(n, 0.0);
  if (l1 > 0.0)
    for (std::size_t r = 0; r < n; ++r) out.normalised[r] = out.raw[r] / l1;
#ifndef NDEBUG
  {
    double s = 0.0;
    for (double v : out.raw) s += v;
    const double rho = partial_corr(a, b, c);
    assert(std::abs(s / static_cast<double>(n - 1) - rho) < 1e-10);
  }
#endif
  return out;
}

/// RCS* = normalised RCS(TS, SA | BA) - normalised RCS(TS, BA | SA).
/// Positive entries are more aligned with SA, negative with BA. Identical SA
/// and BA profiles carry no distinguishing structure and give all zeros. A
/// term whose residuals vanish (e.g. TS fully explained by SA) contributes
/// zeros; if both terms vanish the result is DegenerateProfile.
inline std::vector<double> compute_rcs_star(std::span<const double> ts, std::span<const double> sa,
                                            std::span<const double> ba) {
  detail::require_partial_inputs(ts, sa, ba);
  if (std::equal(sa.begin(), sa.end(), ba.begin())) return std::vector<double>(sa.size(), 0.0);
  auto term = [&](std::span<const double> b, std::span<const double> c, Roles roles) -> std::optional<std::vector<double>> {
    try {
      return compute_rcs(ts, b, c, roles).normalised;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateProfile) throw;
      return std::nullopt;
    }
  };
  const auto shortcut = term(sa, ba, Roles{ModelTag::TS, ModelTag::SA, ModelTag::BA});
  const auto task = term(ba, sa, Roles{ModelTag::TS, ModelTag::BA, ModelTag::SA});
  if (!shortcut && !task) throw Error(ErrorCode::DegenerateProfile, "rcs", "both RCS* terms are degenerate");
  std::vector<double> star(ts.size(), 0.0);
  for (std::size_t r = 0; r < star.size(); ++r) star[r] = (shortcut ? (*shortcut)[r] : 0.0) - (task ? (*task)[r] : 0.0);
  return star;
}

/// Wrap-around Chebyshev distance between two cells of an h x w grid.
inline std::size_t toroidal_chebyshev(std::size_t h, std::size_t w, std::size_t p, std::size_t q) {
  const std::size_t pr = p / w, pc = p % w, qr = q / w, qc = q % w;
  const std::size_t dr = pr > qr ? pr - qr : qr - pr;
  const std::size_t dc = pc > qc ? pc - qc : qc - pc;
  return std::max(std::min(dr, h - dr), std::min(dc, w - dc));
}

inline std::size_t min_displacement(std::size_t h, std::size_t w, double min_frac) {
  return static_cast<std::size_t>(std::ceil(min_frac * static_cast<double>(std::max(h, w)) - 1e-12));
}

/// Bijection dest[p] over the cells of an h x w grid in which every cell
/// moves at least ceil(min_frac * max(h, w)) in toroidal Chebyshev distance.
/// A uniformly chosen valid cyclic shift is refined by constraint-preserving
/// random swaps. A valid bijection exists iff some cyclic shift is valid, so
/// feasibility is decided exactly.
inline std::vector<std::size_t> displaced_permutation(std::size_t h, std::size_t w, double min_frac,
                                                      std::uint64_t seed) {
  if (h == 0 || w == 0) throw Error(ErrorCode::BadShape, "rcs", "empty map");
  if (min_frac < 0.0) throw Error(ErrorCode::InvalidArgument, "rcs", "min_frac must be >= 0");
  const std::size_t n = h * w;
  const std::size_t d = min_displacement(h, w, min_frac);
  std::vector<std::pair<std::size_t, std::size_t>> shifts;
  for (std::size_t sr = 0; sr < h; ++sr)
    for (std::size_t sc = 0; sc < w; ++sc)
      if (std::max(std::min(sr, h - sr), std::min(sc, w - sc)) >= d) shifts.emplace_back(sr, sc);
  if (shifts.empty())
    throw Error(ErrorCode::Infeasible, "rcs",
                "no bijection moves every cell by >= " + std::to_string(d) + " on a " + std::to_string(h) + "x" +
                    std::to_string(w) + " map");
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<std::size_t> pick_shift(0, shifts.size() - 1);
  const auto [sr, sc] = shifts[pick_shift(rng)];
  std::vector<std::size_t> dest(n);
  for (std::size_t p = 0; p < n; ++p) dest[p] = ((p / w + sr) % h) * w + (p % w + sc) % w;
  std::uniform_int_distribution<std::size_t> pick_cell(0, n - 1);
  for (std::size_t it = 0; it < 4 * n; ++it) {
    const std::size_t p = pick_cell(rng), q = pick_cell(rng);
    if (p == q) continue;
    if (toroidal_chebyshev(h, w, p, dest[q]) >= d && toroidal_chebyshev(h, w, q, dest[p]) >= d)
      std::swap(dest[p], dest[q]);
  }
  return dest;
}

/// Moves every value of a 2D map to a distant cell (see displaced_permutation).
inline RealArray shuffle_rcs(const RealArray& map, double min_frac = 0.5, std::uint64_t seed = 0) {
  if (map.ndim() != 2) throw Error(ErrorCode::BadShape, "rcs", "shuffle expects a 2D map");
  const auto dest = displaced_permutation(map.shape[0], map.shape[1], min_frac, seed);
  RealArray out(map.shape, 0.0);
  for (std::size_t p = 0; p < dest.size(); ++p) out.data[dest[p]] = map.data[p];
  return out;
}

/// Paints each pixel with its region's value; background pixels get 0.
inline RealArray rasterize_rcs(std::span<const double> values, const Partition& partition) {
  if (values.size() != partition.n_regions)
    throw Error(ErrorCode::LengthMismatch, "rcs",
                "vector of length " + std::to_string(values.size()) + " for " + std::to_string(partition.n_regions) +
                    " regions");
  RealArray out(partition.shape, 0.0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    const auto l = partition.labels[p];
    if (l >= 0) out.data[p] = values[static_cast<std::size_t>(l)];
  }
  return out;
}

}  // namespace oscar
