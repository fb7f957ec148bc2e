#pragma once

// Plain versus importance-sampled pricing, robustness sweeps with frozen
// networks, and tabular data for histograms and reference densities.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepis/diffusion.hpp"
#include "deepis/drift_nets.hpp"
#include "deepis/errors.hpp"
#include "deepis/format.hpp"
#include "deepis/payoff.hpp"
#include "deepis/rng.hpp"

namespace deepis {

struct EvalReport {
    double price_plain = 0.0;
    double std_plain = 0.0;
    double se_plain = 0.0;
    double price_is = 0.0;
    double std_is = 0.0;
    double se_is = 0.0;
    double variance_ratio = 1.0;
    double std_ratio = 1.0;
    std::size_t n_paths = 0;
};

struct EvalOptions {
    unsigned threads = 1;
    // Drive both estimators with the same Gaussian stream instead of
    // disjoint substreams.
    bool shared_noise = false;
};

inline double std_ratio_of(double std_plain, double std_is) {
    if (std_is == 0.0) return std_plain == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return std_plain / std_is;
}

// Importance-sampled estimate with a frozen stack (or the base measure when
// stack is null).
inline EstimatorStats price_with(const Model& model, const BoundPayoff& payoff, const TimeGrid& grid,
                                 const DriftStack* stack, std::size_t n_paths, std::uint64_t seed, std::uint32_t stream,
                                 unsigned threads) {
    if (stack) {
        detail::require(stack->compatible_with(grid), "stack was trained on a different time grid than the config");
        const auto batch = simulate(model, grid, stack->policy(), n_paths, seed, stream, threads);
        return is_estimator(batch, payoff.evaluate(batch));
    }
    const auto batch = simulate(model, grid, NoDrift{}, n_paths, seed, stream, threads);
    return is_estimator(batch, payoff.evaluate(batch));
}

inline EvalReport compare(const Model& model, const PayoffSpec& payoff_spec, const TimeGrid& grid,
                          const DriftStack* stack, std::size_t n_paths, std::uint64_t seed,
                          const EvalOptions& options = {}) {
    validate(model);
    detail::require(n_paths >= 2, "eval.n_paths must be >= 2");
    const BoundPayoff payoff(payoff_spec, grid);
    const auto plain = price_with(model, payoff, grid, nullptr, n_paths, seed, streams::kEvalPlain, options.threads);
    const auto is = price_with(model, payoff, grid, stack, n_paths, seed,
                               options.shared_noise ? streams::kEvalPlain : streams::kEvalImportance, options.threads);
    EvalReport r;
    r.price_plain = plain.mean;
    r.std_plain = plain.std;
    r.se_plain = plain.se;
    r.price_is = is.mean;
    r.std_is = is.std;
    r.se_is = is.se;
    r.std_ratio = std_ratio_of(plain.std, is.std);
    r.variance_ratio = r.std_ratio * r.std_ratio;
    r.n_paths = n_paths;
    return r;
}

// Base-measure price only.
inline EstimatorStats price_plain(const Model& model, const PayoffSpec& payoff_spec, const TimeGrid& grid,
                                  std::size_t n_paths, std::uint64_t seed, unsigned threads = 1) {
    validate(model);
    const BoundPayoff payoff(payoff_spec, grid);
    return price_with(model, payoff, grid, nullptr, n_paths, seed, streams::kEvalPlain, threads);
}

// Sample statistics of 1/Z_T under the drifted measure; the mean is 1 in expectation.
inline EstimatorStats inverse_weight_stats(const PathBatch& batch) {
    std::vector<double> w(batch.n_paths);
    for (std::size_t p = 0; p < batch.n_paths; ++p) w[p] = std::exp(-batch.log_weights[p]);
    return sample_stats(w);
}

inline bool unbiased_within(const EvalReport& r, double n_se = 3.0) {
    return std::fabs(r.price_is - r.price_plain) <= n_se * std::sqrt(r.se_is * r.se_is + r.se_plain * r.se_plain);
}

inline std::string report_csv(const EvalReport& r) {
    return "price_plain,std_plain,se_plain,price_is,std_is,se_is,variance_ratio,std_ratio,n_paths\n" +
           format_real(r.price_plain) + ',' + format_real(r.std_plain) + ',' + format_real(r.se_plain) + ',' +
           format_real(r.price_is) + ',' + format_real(r.std_is) + ',' + format_real(r.se_is) + ',' +
           format_real(r.variance_ratio) + ',' + format_real(r.std_ratio) + ',' + std::to_string(r.n_paths) + '\n';
}

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"price_plain", r.price_plain}, {"std_plain", r.std_plain},           {"se_plain", r.se_plain},
            {"price_is", r.price_is},       {"std_is", r.std_is},                 {"se_is", r.se_is},
            {"variance_ratio", r.variance_ratio}, {"std_ratio", r.std_ratio}, {"n_paths", r.n_paths}};
}

// ---- robustness sweeps -----------------------------------------------------

struct SweepSpec {
    std::string parameter;
    std::vector<double> relative = {-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
};

struct SweepRow {
    std::string parameter;
    double value = 0.0;
    EvalReport report;
    bool valid = true;
};

// Scales one named model parameter by (1 + relative). Returns the perturbed
// model and the new parameter value.
inline std::pair<Model, double> perturb(const Model& base, const std::string& name, double relative) {
    Model m = base;
    double* target = nullptr;
    if (auto* b = std::get_if<BachelierParams>(&m)) {
        if (name == "x0") target = &b->x0;
        else if (name == "sigma") target = &b->sigma;
        else throw ValidationError("sweep.parameter '" + name + "' is not a Bachelier parameter (x0, sigma)");
    } else {
        auto& lv = std::get<LocalVolParams>(m);
        if (name == "x0") target = &lv.x0;
        else if (name == "sigma") target = &lv.chi.sigma;
        else if (name == "a") target = &lv.chi.a;
        else if (name == "b") target = &lv.chi.b;
        else if (name == "m") target = &lv.chi.m;
        else if (name == "rho") target = &lv.chi.rho;
        else throw ValidationError("sweep.parameter '" + name + "' is not a local-vol parameter (x0, sigma, a, b, m, rho)");
    }
    *target = *target * (1.0 + relative);
    return {m, *target};
}

// One compare() per grid point with the frozen stack; networks are not retrained.
inline std::vector<SweepRow> sweep(const Model& base_model, const PayoffSpec& payoff, const TimeGrid& grid,
                                   const DriftStack* stack, const SweepSpec& spec, std::size_t n_paths,
                                   std::uint64_t seed, const EvalOptions& options = {}) {
    detail::require(!spec.relative.empty(), "sweep.relative must be non-empty");
    std::vector<SweepRow> rows;
    for (double r : spec.relative) {
        auto [model, value] = perturb(base_model, spec.parameter, r);
        SweepRow row;
        row.parameter = spec.parameter;
        row.value = value;
        try {
            validate(model);
            row.report = compare(model, payoff, grid, stack, n_paths, seed, options);
        } catch (const ValidationError&) {
            row.valid = false;
        } catch (const NumericalError&) {
            row.valid = false;
        }
        rows.push_back(row);
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "param,value,price_plain,std_plain,price_is,std_is,std_ratio,valid\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : rows) {
        const auto& e = r.report;
        out += r.parameter + ',' + format_real(r.value) + ',' +
               format_real(r.valid ? e.price_plain : nan) + ',' + format_real(r.valid ? e.std_plain : nan) + ',' +
               format_real(r.valid ? e.price_is : nan) + ',' + format_real(r.valid ? e.std_is : nan) + ',' +
               format_real(r.valid ? e.std_ratio : nan) + ',' + (r.valid ? "1" : "0") + '\n';
    }
    return out;
}

// ---- histograms and reference densities ------------------------------------

struct HistogramBin {
    double left;
    double right;
    std::size_t count;
};

// Equal-width bins over [min, max], in log10 space when log_scale is set
// (edges are reported in the original units). A degenerate range is widened
// to a unit interval centred on the single value.
inline std::vector<HistogramBin> histogram(std::span<const double> values, int n_bins, bool log_scale) {
    detail::require(n_bins >= 1, "hist: n_bins must be >= 1");
    detail::require(!values.empty(), "hist: no values");
    std::vector<double> xs(values.begin(), values.end());
    if (log_scale) {
        for (double& x : xs) {
            if (!(x > 0.0)) throw ValidationError("hist: log scale requires strictly positive values, got " + format_real(x));
            x = std::log10(x);
        }
    }
    double lo = xs[0], hi = xs[0];
    for (double x : xs) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double width = (hi - lo) / n_bins;
    std::vector<HistogramBin> bins(static_cast<std::size_t>(n_bins));
    for (int i = 0; i < n_bins; ++i) {
        const double l = lo + width * i;
        const double r = i + 1 == n_bins ? hi : lo + width * (i + 1);
        bins[i] = {log_scale ? std::pow(10.0, l) : l, log_scale ? std::pow(10.0, r) : r, 0};
    }
    for (double x : xs) {
        auto idx = static_cast<long>(std::floor((x - lo) / width));
        idx = std::clamp<long>(idx, 0, n_bins - 1);
        ++bins[static_cast<std::size_t>(idx)].count;
    }
    return bins;
}

inline std::string histogram_csv(const std::vector<HistogramBin>& bins) {
    std::string out = "bin_left,bin_right,count\n";
    for (const auto& b : bins) out += format_real(b.left) + ',' + format_real(b.right) + ',' + std::to_string(b.count) + '\n';
    return out;
}

struct DensityPoint {
    double x;
    double density;
};

// Closed-form terminal density of the simulated scheme under the base
// measure: Gaussian for Bachelier; lognormal for a flat smile (b = 0), whose
// log-Euler scheme is exact and has no Ito correction.
inline std::vector<DensityPoint> theoretical_terminal_density(const Model& model, const TimeGrid& grid,
                                                              std::span<const double> x_grid) {
    validate(model);
    std::vector<DensityPoint> out;
    out.reserve(x_grid.size());
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    if (const auto* b = std::get_if<BachelierParams>(&model)) {
        const double s = b->sigma * std::sqrt(grid.maturity());
        for (double x : x_grid) {
            const double z = (x - b->x0) / s;
            out.push_back({x, inv_sqrt_2pi * std::exp(-0.5 * z * z) / s});
        }
        return out;
    }
    const auto& lv = std::get<LocalVolParams>(model);
    if (lv.chi.b != 0.0)
        throw ValidationError("theoretical_terminal_density: no closed form for a local-vol model with b != 0");
    const double s = std::sqrt(lv.chi.a * grid.maturity());
    const double mu = std::log(lv.x0);
    for (double x : x_grid) {
        if (x <= 0.0) {
            out.push_back({x, 0.0});
            continue;
        }
        const double z = (std::log(x) - mu) / s;
        out.push_back({x, inv_sqrt_2pi * std::exp(-0.5 * z * z) / (x * s)});
    }
    return out;
}

inline std::string density_csv(const std::vector<DensityPoint>& pts) {
    std::string out = "x,density\n";
    for (const auto& p : pts) out += csv_row({p.x, p.density});
    return out;
}

} // namespace deepis
