#pragma once

// Euler simulation of Bachelier and local-volatility dynamics, under the base
// measure or under a drift-modified measure, with the Girsanov log-weight
// log Z_T accumulated along each path.

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "deepis/errors.hpp"
#include "deepis/format.hpp"
#include "deepis/grad_engine.hpp"
#include "deepis/parallel.hpp"
#include "deepis/rng.hpp"
#include "deepis/volsurface.hpp"

namespace deepis {

class TimeGrid {
public:
    TimeGrid(double maturity, int n_steps) : maturity_(maturity), n_steps_(n_steps) {
        detail::require(std::isfinite(maturity) && maturity > 0.0, "grid.T must be > 0");
        detail::require(n_steps >= 1, "grid.n_steps must be >= 1");
        dt_ = maturity / n_steps;
        sqrt_dt_ = std::sqrt(dt_);
    }

    double maturity() const { return maturity_; }
    int n_steps() const { return n_steps_; }
    double dt() const { return dt_; }
    double sqrt_dt() const { return sqrt_dt_; }
    double time(int i) const { return maturity_ * i / n_steps_; }

    bool operator==(const TimeGrid&) const = default;

private:
    double maturity_;
    int n_steps_;
    double dt_;
    double sqrt_dt_;
};

struct BachelierParams {
    double x0 = 1.0;
    double sigma = 0.2;
};

struct LocalVolParams {
    double x0 = 1.0;
    SviParams chi;
};

using Model = std::variant<BachelierParams, LocalVolParams>;

inline void validate(const BachelierParams& p) {
    detail::require(std::isfinite(p.x0), "model.x0 must be finite");
    detail::require(std::isfinite(p.sigma) && p.sigma > 0.0, "model.sigma must be > 0");
}

inline void validate(const LocalVolParams& p) {
    detail::require(std::isfinite(p.x0) && p.x0 > 0.0, "model.x0 must be > 0");
    validate(p.chi);
}

inline void validate(const Model& m) {
    std::visit([](const auto& p) { validate(p); }, m);
}

inline double initial_level(const Model& m) {
    return std::visit([](const auto& p) { return p.x0; }, m);
}

// Row-major simulation output. values: n_paths x (n_steps+1), gaussians and
// drift_evals: n_paths x n_steps.
struct PathBatch {
    std::size_t n_paths = 0;
    int n_steps = 0;
    std::vector<double> values;
    std::vector<double> gaussians;
    std::vector<double> log_weights;
    std::vector<double> drift_evals;

    std::span<const double> path(std::size_t p) const {
        return {values.data() + p * (n_steps + 1), static_cast<std::size_t>(n_steps + 1)};
    }
    double terminal(std::size_t p) const { return values[p * (n_steps + 1) + n_steps]; }
};

// Increment of log Z over one step when paths are driven by the drifted
// Brownian increments g * sqrt(dt).
template <class S>
S accumulate_log_weight(const S& a, double g, double dt) {
    return a * g * std::sqrt(dt) + 0.5 * square(a) * dt;
}

template <class S>
S log_weight_increment(const S& a, double g, const TimeGrid& grid) {
    return a * g * grid.sqrt_dt() + 0.5 * square(a) * grid.dt();
}

// Standard normal draws for a block of paths, row-major [n_paths x n_steps].
inline std::vector<double> gaussian_matrix(std::uint64_t seed, std::uint32_t stream, std::size_t n_paths, int n_steps,
                                           unsigned threads = 1) {
    std::vector<double> g(n_paths * n_steps);
    parallel_for_chunks(n_paths, kPathChunk, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t p = begin; p < end; ++p)
            for (int j = 0; j < n_steps; ++j)
                g[p * n_steps + j] = gaussian(seed, stream, p, static_cast<std::uint32_t>(j));
    });
    return g;
}

struct NoDrift {};

// Simulates one path. `drift(step, prefix)` returns the drift for step i given
// the levels (X_0..X_i); with NoDrift the base-measure scheme runs and the
// log-weight stays 0. Outputs are written into `values` (n_steps+1),
// `drift_out` (n_steps) and the returned log Z_T.
template <class S, class Drift>
S simulate_path(const Model& model, const TimeGrid& grid, const Drift& drift, std::span<const double> g,
                const S& x0, std::span<S> values, std::span<S> drift_out) {
    constexpr bool has_drift = !std::is_same_v<Drift, NoDrift>;
    const int n = grid.n_steps();
    const double dt = grid.dt();
    const double sqrt_dt = grid.sqrt_dt();
    values[0] = x0;
    S log_w = lift(x0, 0.0);

    if (const auto* bach = std::get_if<BachelierParams>(&model)) {
        const double sigma = bach->sigma;
        for (int i = 0; i < n; ++i) {
            if constexpr (has_drift) {
                const S a = drift(i, std::span<const S>(values.data(), static_cast<std::size_t>(i + 1)));
                drift_out[i] = a;
                values[i + 1] = values[i] + a * sigma * dt + g[i] * sigma * sqrt_dt;
                log_w = i == 0 ? log_weight_increment(a, g[i], grid) : log_w + log_weight_increment(a, g[i], grid);
            } else {
                drift_out[i] = lift(x0, 0.0);
                values[i + 1] = values[i] + g[i] * sigma * sqrt_dt;
            }
        }
        return log_w;
    }

    using std::exp;
    using std::log;
    const auto& lv = std::get<LocalVolParams>(model);
    const double log_spot = std::log(lv.x0);
    S y = lift(x0, log_spot);
    for (int i = 0; i < n; ++i) {
        const S vol = local_vol_unchecked(grid.time(i), y - log_spot, lv.chi);
        if constexpr (has_drift) {
            const S a = drift(i, std::span<const S>(values.data(), static_cast<std::size_t>(i + 1)));
            drift_out[i] = a;
            y = y + vol * (a * dt + sqrt_dt * g[i]);
            log_w = i == 0 ? log_weight_increment(a, g[i], grid) : log_w + log_weight_increment(a, g[i], grid);
        } else {
            drift_out[i] = lift(x0, 0.0);
            y = y + vol * (sqrt_dt * g[i]);
        }
        values[i + 1] = exp(y);
    }
    return log_w;
}

// Simulates every path of a frozen Gaussian matrix in double precision.
template <class Drift>
PathBatch simulate_with_gaussians(const Model& model, const TimeGrid& grid, const Drift& drift,
                                  std::vector<double> gaussians, unsigned threads = 1) {
    const int n = grid.n_steps();
    detail::require(!gaussians.empty() && gaussians.size() % n == 0, "simulate: gaussian matrix shape mismatch");
    PathBatch b;
    b.n_paths = gaussians.size() / n;
    b.n_steps = n;
    b.gaussians = std::move(gaussians);
    b.values.resize(b.n_paths * (n + 1));
    b.drift_evals.resize(b.n_paths * n);
    b.log_weights.resize(b.n_paths);
    const double x0 = initial_level(model);
    parallel_for_chunks(b.n_paths, kPathChunk, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t p = begin; p < end; ++p) {
            try {
                b.log_weights[p] = simulate_path<double>(
                    model, grid, drift, std::span<const double>(b.gaussians.data() + p * n, n), x0,
                    std::span<double>(b.values.data() + p * (n + 1), n + 1),
                    std::span<double>(b.drift_evals.data() + p * n, n));
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " [path " + std::to_string(p) + "]");
            }
            if (!std::isfinite(b.log_weights[p]))
                throw NumericalError("non-finite log-weight on path " + std::to_string(p));
        }
    });
    return b;
}

template <class Drift>
PathBatch simulate(const Model& model, const TimeGrid& grid, const Drift& drift, std::size_t n_paths,
                   std::uint64_t seed, std::uint32_t stream = streams::kDefault, unsigned threads = 1) {
    validate(model);
    detail::require(n_paths >= 1, "simulate: n_paths must be >= 1");
    return simulate_with_gaussians(model, grid, drift, gaussian_matrix(seed, stream, n_paths, grid.n_steps(), threads),
                                   threads);
}

template <class Drift = NoDrift>
PathBatch simulate_bachelier(const BachelierParams& params, const TimeGrid& grid, const Drift& drift,
                             std::size_t n_paths, std::uint64_t seed, std::uint32_t stream = streams::kDefault,
                             unsigned threads = 1) {
    return simulate(Model{params}, grid, drift, n_paths, seed, stream, threads);
}

template <class Drift = NoDrift>
PathBatch simulate_local_vol(const LocalVolParams& params, const TimeGrid& grid, const Drift& drift,
                             std::size_t n_paths, std::uint64_t seed, std::uint32_t stream = streams::kDefault,
                             unsigned threads = 1) {
    return simulate(Model{params}, grid, drift, n_paths, seed, stream, threads);
}

struct EstimatorStats {
    double mean = 0.0;
    double std = 0.0;  // per-sample, population convention
    double se = 0.0;
    std::size_t n = 0;
};

inline EstimatorStats sample_stats(std::span<const double> v) {
    EstimatorStats s;
    s.n = v.size();
    if (v.empty()) return s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size()));
    s.se = s.std / std::sqrt(static_cast<double>(v.size()));
    return s;
}

// Per-path summands g_p / Z_p of the re-weighted estimator.
inline std::vector<double> weighted_samples(const PathBatch& batch, std::span<const double> payoff_values) {
    detail::require(payoff_values.size() == batch.n_paths, "is_estimator: payoff vector length != n_paths");
    std::vector<double> v(batch.n_paths);
    for (std::size_t p = 0; p < batch.n_paths; ++p) v[p] = payoff_values[p] * std::exp(-batch.log_weights[p]);
    return v;
}

inline EstimatorStats is_estimator(const PathBatch& batch, std::span<const double> payoff_values) {
    const auto v = weighted_samples(batch, payoff_values);
    return sample_stats(v);
}

// Observation dates snapped to grid nodes.
struct NodeMapping {
    std::vector<int> nodes;
    bool snapped = false;  // some date was not exactly on a node
};

inline NodeMapping map_to_grid_nodes(std::span<const double> dates, const TimeGrid& grid) {
    NodeMapping m;
    const double tolerance = 0.5 * grid.dt() * (1.0 + 1e-9);
    for (double d : dates) {
        const double pos = d / grid.dt();
        const long node = std::lround(pos);
        if (node < 0 || node > grid.n_steps() || std::fabs(d - grid.time(static_cast<int>(node))) > tolerance)
            throw ValidationError("observation date " + format_real(d) + " does not map onto the time grid");
        if (std::fabs(d - grid.time(static_cast<int>(node))) > 1e-12 * std::max(1.0, grid.maturity())) m.snapped = true;
        m.nodes.push_back(static_cast<int>(node));
    }
    return m;
}

// Running log-weight per node, reconstructed from the stored drift and noise.
inline std::string path_dump_csv(const PathBatch& batch, const TimeGrid& grid, std::size_t max_paths) {
    std::string out = "path_id,step,t,x,log_weight_running\n";
    const std::size_t n_paths = std::min(max_paths, batch.n_paths);
    const int n = batch.n_steps;
    for (std::size_t p = 0; p < n_paths; ++p) {
        double running = 0.0;
        for (int i = 0; i <= n; ++i) {
            out += std::to_string(p) + ',' + std::to_string(i) + ',' +
                   csv_row({grid.time(i), batch.values[p * (n + 1) + i], running});
            if (i < n) running += log_weight_increment(batch.drift_evals[p * n + i], batch.gaussians[p * n + i], grid);
        }
    }
    return out;
}

} // namespace deepis
