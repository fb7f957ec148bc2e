#pragma once

// Terminal and path-dependent payoffs. All functions are generic in the
// scalar so training can differentiate through them; barrier indicators are
// replaced by piecewise-linear ramps.

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deepis/diffusion.hpp"
#include "deepis/errors.hpp"
#include "deepis/grad_engine.hpp"

namespace deepis {

struct CallSpec {
    double strike = 1.0;
};

struct CallsPutsSpec {
    double call_quantity = 1.0;
    double call_strike = 1.0;
    double put_quantity = 1.0;
    double put_strike = 1.0;
};

struct AutoCallSpec {
    std::vector<double> dates;       // observation dates, years
    std::vector<double> barriers;
    std::vector<double> smoothings;  // ramp widths of the barrier indicators
    std::vector<double> coupons;
    double pdi_strike = 0.5;
    double pdi_smoothing = 0.1;
};

using PayoffSpec = std::variant<CallSpec, CallsPutsSpec, AutoCallSpec>;

inline void validate(const CallSpec& s) {
    detail::require(std::isfinite(s.strike) && s.strike > 0.0, "payoff.K must be > 0");
}

inline void validate(const CallsPutsSpec& s) {
    detail::require(s.call_quantity >= 0.0 && s.put_quantity >= 0.0, "payoff.N1 and payoff.N2 must be >= 0");
    detail::require(s.call_strike > 0.0 && s.put_strike > 0.0, "payoff.K1 and payoff.K2 must be > 0");
}

inline void validate(const AutoCallSpec& s) {
    const std::size_t n = s.dates.size();
    detail::require(n >= 1, "payoff.dates must be non-empty");
    detail::require(s.barriers.size() == n && s.smoothings.size() == n && s.coupons.size() == n,
                    "payoff.dates, barriers, smoothings and coupons must have equal length");
    for (std::size_t i = 0; i < n; ++i) {
        detail::require(i == 0 || s.dates[i] > s.dates[i - 1], "payoff.dates must be strictly increasing");
        detail::require(s.barriers[i] > 0.0, "payoff.barriers must be > 0");
        detail::require(s.smoothings[i] > 0.0, "payoff.smoothings must be > 0");
        detail::require(std::isfinite(s.coupons[i]), "payoff.coupons must be finite");
    }
    detail::require(s.dates.front() > 0.0, "payoff.dates must be > 0");
    detail::require(s.pdi_strike > 0.0, "payoff.K_PDI must be > 0");
    detail::require(s.pdi_smoothing > 0.0, "payoff.S_PDI must be > 0");
}

inline void validate(const AutoCallSpec& s, const TimeGrid& grid) {
    validate(s);
    detail::require(std::fabs(s.dates.back() - grid.maturity()) <= 1e-12 * std::max(1.0, grid.maturity()),
                    "payoff.dates: last observation date must equal grid.T");
    map_to_grid_nodes(s.dates, grid);
}

inline void validate(const PayoffSpec& p, const TimeGrid& grid) {
    std::visit(
        [&](const auto& s) {
            if constexpr (std::is_same_v<std::decay_t<decltype(s)>, AutoCallSpec>)
                validate(s, grid);
            else
                validate(s);
        },
        p);
}

// 0 below b, 1 above b + width, linear in between.
template <class S>
S smooth_indicator(const S& x, double barrier, double width) {
    if (!(width > 0.0)) throw ValidationError("smooth_indicator: smoothing width must be > 0");
    // min(relu(x - B), S) / S written with relu; exact 0 and 1 outside the ramp.
    return (width - relu(width - relu(x - barrier))) / width;
}

template <class S>
S call_payoff(const S& x_T, const CallSpec& spec) {
    return relu(x_T - spec.strike);
}

template <class S>
S calls_puts_payoff(const S& x_T, const CallsPutsSpec& spec) {
    return spec.call_quantity * relu(x_T - spec.call_strike) + spec.put_quantity * relu(spec.put_strike - x_T);
}

// `nodes[i]` is the grid index observed at date i; the last one is maturity.
template <class S>
S autocall_payoff_at_nodes(std::span<const S> path, std::span<const int> nodes, const AutoCallSpec& spec) {
    const std::size_t n = spec.dates.size();
    S survival = lift(path[0], 1.0);
    S total = lift(path[0], 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const S hit = smooth_indicator(path[nodes[i]], spec.barriers[i], spec.smoothings[i]);
        const S coupon = (spec.coupons[i] * hit) * survival;
        total = i == 0 ? coupon : total + coupon;
        survival = survival * (1.0 - hit);
    }
    const double k = spec.pdi_strike;
    const double s = spec.pdi_smoothing;
    const double slope = (1.0 - k) / s;
    const S& x_T = path[path.size() - 1];
    const S pdi = (1.0 + slope) * relu(k + s - x_T) - slope * relu(k - x_T);
    return total - pdi * survival;
}

template <class S>
S autocall_payoff(std::span<const S> path, const TimeGrid& grid, const AutoCallSpec& spec) {
    detail::require(path.size() == static_cast<std::size_t>(grid.n_steps() + 1), "autocall: path length != grid size");
    const auto mapping = map_to_grid_nodes(spec.dates, grid);
    return autocall_payoff_at_nodes(path, std::span<const int>(mapping.nodes), spec);
}

// Payoff bound to a grid: AutoCall dates resolved to node indices once.
class BoundPayoff {
public:
    BoundPayoff(PayoffSpec spec, const TimeGrid& grid) : spec_(std::move(spec)), n_steps_(grid.n_steps()) {
        validate(spec_, grid);
        if (const auto* ac = std::get_if<AutoCallSpec>(&spec_)) nodes_ = map_to_grid_nodes(ac->dates, grid).nodes;
    }

    template <class S>
    S operator()(std::span<const S> path) const {
        if (const auto* c = std::get_if<CallSpec>(&spec_)) return call_payoff(path[n_steps_], *c);
        if (const auto* cp = std::get_if<CallsPutsSpec>(&spec_)) return calls_puts_payoff(path[n_steps_], *cp);
        return autocall_payoff_at_nodes(path, std::span<const int>(nodes_), std::get<AutoCallSpec>(spec_));
    }

    std::vector<double> evaluate(const PathBatch& batch) const {
        std::vector<double> out(batch.n_paths);
        for (std::size_t p = 0; p < batch.n_paths; ++p) out[p] = (*this)(batch.path(p));
        return out;
    }

    const PayoffSpec& spec() const { return spec_; }

private:
    PayoffSpec spec_;
    int n_steps_;
    std::vector<int> nodes_;
};

} // namespace deepis
