#pragma once

// Pairwise, partial and deviation correlations between rank profiles.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oscar/error.hpp"
#include "oscar/interchange.hpp"
#include "oscar/rank_profiles.hpp"

namespace oscar {

enum class CorrelationKind { Pairwise, Partial, Deviation };
enum class CorrelationMethod { Pearson, Spearman };

inline CorrelationKind parse_correlation_kind(const std::string& s) {
  if (s == "pairwise") return CorrelationKind::Pairwise;
  if (s == "partial") return CorrelationKind::Partial;
  if (s == "deviation") return CorrelationKind::Deviation;
  throw Error(ErrorCode::InvalidArgument, "correlations", "unknown correlation kind '" + s + "'");
}
inline std::string to_string(CorrelationKind k) {
  switch (k) {
    case CorrelationKind::Pairwise: return "pairwise";
    case CorrelationKind::Partial: return "partial";
    case CorrelationKind::Deviation: return "deviation";
  }
  return "?";
}

inline CorrelationMethod parse_correlation_method(const std::string& s) {
  if (s == "pearson") return CorrelationMethod::Pearson;
  if (s == "spearman") return CorrelationMethod::Spearman;
  throw Error(ErrorCode::InvalidArgument, "correlations", "unknown correlation method '" + s + "'");
}
inline std::string to_string(CorrelationMethod m) { return m == CorrelationMethod::Pearson ? "pearson" : "spearman"; }

struct Roles {
  ModelTag a = ModelTag::TS;
  ModelTag b = ModelTag::SA;
  std::optional<ModelTag> c = ModelTag::BA;
};

struct CorrelationResult {
  CorrelationKind kind = CorrelationKind::Partial;
  CorrelationMethod method = CorrelationMethod::Pearson;
  double rho = 0.0;
  Roles roles;
};

namespace detail {

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double centered_ss(std::span<const double> x, double mx) {
  double s = 0.0;
  for (double v : x) s += (v - mx) * (v - mx);
  return s;
}

inline double raw_ss(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

// Variance is treated as zero when the centred sum of squares is negligible
// next to the raw magnitude of the data.
inline bool negligible_variance(std::span<const double> x) {
  const double ss = centered_ss(x, mean(x));
  return !(ss > 1e-28 * std::max(raw_ss(x), 1e-300));
}

inline void require_same_length(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size())
    throw Error(ErrorCode::LengthMismatch, "correlations",
                std::string(what) + ": lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

}  // namespace detail

/// Pearson product-moment correlation, or Spearman (Pearson of average ranks).
inline double corr(std::span<const double> x, std::span<const double> y,
                   CorrelationMethod method = CorrelationMethod::Pearson) {
  detail::require_same_length(x, y, "corr");
  if (x.size() < 3) throw Error(ErrorCode::InvalidArgument, "correlations", "corr needs at least 3 values");
  if (detail::negligible_variance(x) || detail::negligible_variance(y))
    throw Error(ErrorCode::ZeroVariance, "correlations", "input has zero variance");
  if (method == CorrelationMethod::Spearman) {
    const auto rx = rank_ascending(x), ry = rank_ascending(y);
    return detail::pearson(rx, ry);
  }
  return detail::pearson(x, y);
}

/// Residuals of the least-squares fit of x on c with intercept. A constant
/// regressor falls back to the intercept-only fit, x - mean(x).
inline std::vector<double> residualize(std::span<const double> x, std::span<const double> c) {
  detail::require_same_length(x, c, "residualize");
  if (x.empty()) throw Error(ErrorCode::InvalidArgument, "correlations", "residualize of an empty vector");
  const double mx = detail::mean(x), mc = detail::mean(c);
  std::vector<double> e(x.size());
  if (detail::negligible_variance(c)) {
    for (std::size_t i = 0; i < x.size(); ++i) e[i] = x[i] - mx;
    return e;
  }
  double sxc = 0.0, scc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxc += (x[i] - mx) * (c[i] - mc);
    scc += (c[i] - mc) * (c[i] - mc);
  }
  const double slope = sxc / scc;
  for (std::size_t i = 0; i < x.size(); ++i) e[i] = (x[i] - mx) - slope * (c[i] - mc);
  return e;
}

namespace detail {

inline std::vector<double> checked_residual(std::span<const double> x, std::span<const double> c, const char* role) {
  auto e = residualize(x, c);
  const double ss_x = centered_ss(x, mean(x));
  if (!(ss_x > 0.0) || !(centered_ss(e, mean(e)) > 1e-20 * ss_x))
    throw Error(ErrorCode::DegenerateProfile, "correlations",
                std::string("residual of ") + role + " on the reference profile has zero variance");
  return e;
}

inline void require_partial_inputs(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  require_same_length(a, b, "partial_corr");
  require_same_length(a, c, "partial_corr");
  if (a.size() < 4) throw Error(ErrorCode::InvalidArgument, "correlations", "partial correlation needs n >= 4");
}

}  // namespace detail

/// Correlation of the residuals of a and b after regressing each on c.
inline double partial_corr(std::span<const double> a, std::span<const double> b, std::span<const double> c,
                           CorrelationMethod method = CorrelationMethod::Pearson) {
  detail::require_partial_inputs(a, b, c);
  const auto ea = detail::checked_residual(a, c, "A");
  const auto eb = detail::checked_residual(b, c, "B");
  return corr(ea, eb, method);
}

/// Correlation of a's residual on c with the unresidualised b.
inline double deviation_corr(std::span<const double> a, std::span<const double> b, std::span<const double> c,
                             CorrelationMethod method = CorrelationMethod::Pearson) {
  detail::require_partial_inputs(a, b, c);
  const auto ea = detail::checked_residual(a, c, "A");
  if (detail::negligible_variance(b))
    throw Error(ErrorCode::DegenerateProfile, "correlations", "profile B has zero variance");
  return corr(ea, b, method);
}

/// Dispatches on the correlation kind; c is ignored for pairwise.
inline double correlation(CorrelationKind kind, std::span<const double> a, std::span<const double> b,
                          std::span<const double> c, CorrelationMethod method) {
  switch (kind) {
    case CorrelationKind::Pairwise: return corr(a, b, method);
    case CorrelationKind::Partial: return partial_corr(a, b, c, method);
    case CorrelationKind::Deviation: return deviation_corr(a, b, c, method);
  }
  return 0.0;
}

/// Profiles indexed by ModelTag (BA, TS, SA).
using ProfileSet = std::array<std::vector<double>, 3>;

inline CorrelationResult correlate(const ProfileSet& profiles, CorrelationKind kind, Roles roles,
                                   CorrelationMethod method = CorrelationMethod::Pearson) {
  if (kind != CorrelationKind::Pairwise && !roles.c)
    throw Error(ErrorCode::InvalidArgument, "correlations", to_string(kind) + " correlation needs a reference role C");
  if (kind == CorrelationKind::Pairwise) roles.c.reset();
  const auto& a = profiles[index_of(roles.a)];
  const auto& b = profiles[index_of(roles.b)];
  const std::span<const double> c = roles.c ? std::span<const double>(profiles[index_of(*roles.c)]) : std::span<const double>();
  CorrelationResult r;
  r.kind = kind;
  r.method = method;
  r.roles = roles;
  r.rho = correlation(kind, a, b, c, method);
  return r;
}

}  // namespace oscar
