#pragma once

// Raw SVI total variance with a time-linear term structure, w(t,k) = t * v(k),
// and the Dupire local volatility it implies.

#include <cmath>
#include <string>
#include <vector>

#include "deepis/errors.hpp"
#include "deepis/format.hpp"
#include "deepis/grad_engine.hpp"

namespace deepis {

struct SviParams {
    double a = 0.0;
    double b = 0.0;
    double rho = 0.0;
    double m = 0.0;
    double sigma = 1.0;
};

inline bool svi_is_valid(const SviParams& chi, std::string* why = nullptr) {
    auto fail = [&](const char* msg) {
        if (why) *why = msg;
        return false;
    };
    if (!std::isfinite(chi.a) || !std::isfinite(chi.b) || !std::isfinite(chi.rho) || !std::isfinite(chi.m) ||
        !std::isfinite(chi.sigma))
        return fail("svi: parameters must be finite");
    if (chi.b < 0.0) return fail("svi.b must be >= 0");
    if (!(std::fabs(chi.rho) < 1.0)) return fail("svi.rho must satisfy |rho| < 1");
    if (!(chi.sigma > 0.0)) return fail("svi.sigma must be > 0");
    if (chi.a + chi.b * chi.sigma * std::sqrt(1.0 - chi.rho * chi.rho) < 0.0)
        return fail("svi: a + b*sigma*sqrt(1-rho^2) must be >= 0");
    return true;
}

inline void validate(const SviParams& chi) {
    std::string why;
    if (!svi_is_valid(chi, &why)) throw ValidationError(why);
}

// Below this t the local volatility uses its t -> 0 limit.
inline constexpr double kLocalVolZeroTime = 1e-12;

namespace svi {

// v(k) = a + b{rho(k-m) + sqrt((k-m)^2 + sigma^2)}; equals dw/dt.
template <class S>
S variance_rate(const S& k, const SviParams& chi) {
    using std::sqrt;
    const S d = k - chi.m;
    return chi.a + chi.b * (chi.rho * d + sqrt(square(d) + chi.sigma * chi.sigma));
}

// dv/dk
template <class S>
S variance_rate_slope(const S& k, const SviParams& chi) {
    using std::sqrt;
    const S d = k - chi.m;
    return chi.b * (chi.rho + d / sqrt(square(d) + chi.sigma * chi.sigma));
}

// d2v/dk2 = b sigma^2 / ((k-m)^2 + sigma^2)^{3/2}
template <class S>
S variance_rate_curvature(const S& k, const SviParams& chi) {
    using std::sqrt;
    const S r2 = square(k - chi.m) + chi.sigma * chi.sigma;
    return (chi.b * chi.sigma * chi.sigma) / (r2 * sqrt(r2));
}

} // namespace svi

inline double svi_total_variance(double t, double k, const SviParams& chi) {
    validate(chi);
    if (!(t >= 0.0)) throw ValidationError("svi_total_variance: t must be >= 0");
    return t * svi::variance_rate(k, chi);
}

// With w linear in t the implied volatility does not depend on t; t = 0 returns the limit.
inline double implied_vol(double t, double k, const SviParams& chi) {
    validate(chi);
    if (!(t >= 0.0)) throw ValidationError("implied_vol: t must be >= 0");
    const double v = svi::variance_rate(k, chi);
    if (v < 0.0) throw NumericalError("implied_vol: negative implied variance at k=" + format_real(k));
    return std::sqrt(v);
}

struct DupireTerms {
    double dt_w;
    double dk_w;
    double dkk_w;
    double w;
    double denominator;
};

// Components of the Dupire ratio for t > 0, exposed for identity checks.
inline DupireTerms dupire_terms(double t, double k, const SviParams& chi) {
    const double v = svi::variance_rate(k, chi);
    DupireTerms d{};
    d.w = t * v;
    d.dt_w = v;
    d.dk_w = t * svi::variance_rate_slope(k, chi);
    d.dkk_w = t * svi::variance_rate_curvature(k, chi);
    d.denominator = 1.0 - (k / d.w) * d.dk_w + 0.25 * (-0.25 - 1.0 / d.w + k * k / (d.w * d.w)) * d.dk_w * d.dk_w +
                    0.5 * d.dkk_w;
    return d;
}

namespace detail {

[[noreturn]] inline void surface_arbitrage(const char* what, double t, double k) {
    throw NumericalError(std::string("local_vol: ") + what + " at (t=" + format_real(t) + ", k=" + format_real(k) + ")");
}

} // namespace detail

// Dupire local volatility sigma(t, k). Generic in k so the simulation can
// differentiate through it; t is always a grid time.
template <class S>
S local_vol_unchecked(double t, const S& k, const SviParams& chi) {
    using std::sqrt;
    const S v = svi::variance_rate(k, chi);
    const double kv = value_of(k);
    if (!(value_of(v) > 0.0)) detail::surface_arbitrage("non-positive total variance", t, kv);
    const S slope = svi::variance_rate_slope(k, chi);
    S denom;
    if (t < kLocalVolZeroTime) {
        // t -> 0 limit: only the (k dkw / w)^2 part of the quadratic term survives.
        const S ratio = slope / v;
        const S kr = k * ratio;
        denom = 1.0 - kr + 0.25 * square(kr);
    } else {
        const S w = t * v;
        const S dk_w = t * slope;
        const S dkk_w = t * svi::variance_rate_curvature(k, chi);
        const S k_over_w = k / w;
        denom = 1.0 - k_over_w * dk_w + 0.25 * ((-0.25 - 1.0 / w) + square(k_over_w)) * square(dk_w) + 0.5 * dkk_w;
    }
    if (!(value_of(denom) > 0.0)) detail::surface_arbitrage("non-positive Dupire denominator", t, kv);
    return sqrt(v / denom);
}

inline double local_vol(double t, double k, const SviParams& chi) {
    validate(chi);
    if (!(t >= 0.0)) throw ValidationError("local_vol: t must be >= 0");
    return local_vol_unchecked(t, k, chi);
}

struct VolGridRow {
    double t;
    double k;
    double implied_vol;
    double local_vol;
};

inline std::vector<VolGridRow> export_surfaces(const SviParams& chi, const std::vector<double>& t_grid,
                                               const std::vector<double>& k_grid) {
    validate(chi);
    detail::require(!t_grid.empty() && !k_grid.empty(), "volgrid: t and k grids must be non-empty");
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        detail::require(t_grid[i] > t_grid[i - 1], "volgrid: t grid must be strictly increasing");
    for (std::size_t i = 1; i < k_grid.size(); ++i)
        detail::require(k_grid[i] > k_grid[i - 1], "volgrid: k grid must be strictly increasing");
    detail::require(t_grid.front() >= 0.0, "volgrid: t grid must be >= 0");

    std::vector<VolGridRow> rows;
    rows.reserve(t_grid.size() * k_grid.size());
    for (double t : t_grid)
        for (double k : k_grid) rows.push_back({t, k, implied_vol(t, k, chi), local_vol(t, k, chi)});
    return rows;
}

inline std::string volgrid_csv(const std::vector<VolGridRow>& rows) {
    std::string out = "t,k,implied_vol,local_vol\n";
    for (const auto& r : rows) out += csv_row({r.t, r.k, r.implied_vol, r.local_vol});
    return out;
}

} // namespace deepis
