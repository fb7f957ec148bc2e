#pragma once

// The learned drift: a trainable constant for the first step and one
// 2x16 ReLU perceptron per later step. In full mode the network for step i
// sees the centred path prefix (X_0..X_i); in local mode only X_i.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepis/diffusion.hpp"
#include "deepis/errors.hpp"
#include "deepis/format.hpp"
#include "deepis/grad_engine.hpp"
#include "deepis/rng.hpp"

namespace deepis {

enum class DriftMode { Full, Local };

inline const char* to_string(DriftMode m) { return m == DriftMode::Full ? "full" : "local"; }

inline DriftMode parse_drift_mode(const std::string& s) {
    if (s == "full") return DriftMode::Full;
    if (s == "local") return DriftMode::Local;
    throw ValidationError("drift_mode must be \"full\" or \"local\", got \"" + s + "\"");
}

inline constexpr int kHiddenWidth = 16;

// Offsets of one network's blocks inside the flat parameter vector.
struct NetLayout {
    int input_dim;
    std::size_t w1;  // [input_dim x 16], row-major
    std::size_t b1;  // [16]
    std::size_t w2;  // [16 x 16]
    std::size_t b2;  // [16]
    std::size_t w3;  // [16], no output bias
    std::size_t end;

    bool operator==(const NetLayout&) const = default;
};

class DriftStack {
public:
    DriftStack(DriftMode mode, int n_steps, double maturity, double x0_reference)
        : mode_(mode), n_steps_(n_steps), maturity_(maturity), x0_reference_(x0_reference) {
        detail::require(n_steps >= 1, "drift stack: n_steps must be >= 1");
        detail::require(std::isfinite(x0_reference), "drift stack: x0_reference must be finite");
        std::size_t offset = 1;  // params_[0] is the step-0 constant
        for (int i = 1; i < n_steps; ++i) {
            NetLayout l{};
            l.input_dim = mode == DriftMode::Full ? i + 1 : 1;
            l.w1 = offset;
            l.b1 = l.w1 + static_cast<std::size_t>(l.input_dim) * kHiddenWidth;
            l.w2 = l.b1 + kHiddenWidth;
            l.b2 = l.w2 + kHiddenWidth * kHiddenWidth;
            l.w3 = l.b2 + kHiddenWidth;
            l.end = l.w3 + kHiddenWidth;
            offset = l.end;
            layouts_.push_back(l);
        }
        params_.assign(offset, 0.0);
    }

    DriftMode mode() const { return mode_; }
    int n_steps() const { return n_steps_; }
    double maturity() const { return maturity_; }
    double x0_reference() const { return x0_reference_; }
    void set_x0_reference(double x0) { x0_reference_ = x0; }

    std::size_t parameter_count() const { return params_.size(); }
    std::span<const double> parameters() const { return params_; }
    std::span<double> parameters() { return params_; }
    double step0() const { return params_[0]; }

    // Network for step i >= 1.
    const NetLayout& layout(int step) const { return layouts_.at(static_cast<std::size_t>(step - 1)); }

    int input_dim(int step) const {
        if (step == 0) return 0;
        return layout(step).input_dim;
    }

    bool compatible_with(const TimeGrid& grid) const {
        return grid.n_steps() == n_steps_ && std::fabs(grid.maturity() - maturity_) <= 1e-12 * std::max(1.0, maturity_);
    }

    // Drift at `step` from explicitly supplied parameters (double or tape
    // variables laid out like parameters()). `inputs` are uncentred levels:
    // the prefix X_0..X_step in full mode, X_step alone in local mode.
    template <class S>
    S forward(std::span<const S> params, int step, std::span<const S> inputs) const {
        if (step < 0 || step >= n_steps_)
            throw ValidationError("drift forward: step " + std::to_string(step) + " out of range");
        if (step == 0) return params[0];
        const NetLayout& l = layout(step);
        if (inputs.size() != static_cast<std::size_t>(l.input_dim))
            throw ValidationError("drift forward: step " + std::to_string(step) + " expects " +
                                  std::to_string(l.input_dim) + " inputs, got " + std::to_string(inputs.size()));
        std::array<S, kInlineInputs> inline_buf;
        std::vector<S> heap_buf;
        S* centred = inline_buf.data();
        if (l.input_dim > kInlineInputs) {
            heap_buf.resize(static_cast<std::size_t>(l.input_dim));
            centred = heap_buf.data();
        }
        for (int j = 0; j < l.input_dim; ++j) centred[j] = inputs[j] - x0_reference_;
        S h1[kHiddenWidth];
        S h2[kHiddenWidth];
        const std::span<const S> in(centred, static_cast<std::size_t>(l.input_dim));
        for (int c = 0; c < kHiddenWidth; ++c)
            h1[c] = relu(dot(&params[l.w1 + c], kHiddenWidth, in, params[l.b1 + c]));
        for (int c = 0; c < kHiddenWidth; ++c)
            h2[c] = relu(dot(&params[l.w2 + c], kHiddenWidth, std::span<const S>(h1, kHiddenWidth), params[l.b2 + c]));
        return dot(&params[l.w3], 1, std::span<const S>(h2, kHiddenWidth));
    }

    double forward(int step, std::span<const double> inputs) const { return forward<double>(params_, step, inputs); }

    // Adapter for simulate_path: receives the prefix X_0..X_i and feeds the
    // network the inputs its mode expects.
    template <class S>
    struct Policy {
        const DriftStack* stack;
        std::span<const S> params;

        S operator()(int step, std::span<const S> prefix) const {
            if (step == 0 || stack->mode_ == DriftMode::Full) return stack->forward<S>(params, step, prefix);
            return stack->forward<S>(params, step, prefix.subspan(prefix.size() - 1));
        }
    };

    Policy<double> policy() const { return Policy<double>{this, params_}; }

    template <class S>
    Policy<S> policy(std::span<const S> params) const {
        return Policy<S>{this, params};
    }

    static constexpr int kInlineInputs = 64;

    bool operator==(const DriftStack&) const = default;

private:
    DriftMode mode_;
    int n_steps_;
    double maturity_;
    double x0_reference_;
    std::vector<NetLayout> layouts_;
    std::vector<double> params_;
};

namespace detail {

inline void xavier_fill(std::span<double> block, int fan_in, int fan_out, std::uint64_t seed, std::size_t offset) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < block.size(); ++i)
        block[i] = bound * (2.0 * uniform(seed, streams::kInit, offset + i, 0) - 1.0);
}

} // namespace detail

// Xavier-uniform weights and biases (a bias vector counts as a [1 x fan_out]
// matrix), step-0 constant at zero. Deterministic in seed.
inline DriftStack init_stack(const TimeGrid& grid, DriftMode mode, std::uint64_t seed, double x0_reference) {
    DriftStack s(mode, grid.n_steps(), grid.maturity(), x0_reference);
    auto p = s.parameters();
    p[0] = 0.0;
    for (int i = 1; i < grid.n_steps(); ++i) {
        const NetLayout& l = s.layout(i);
        auto fill = [&](std::size_t begin, std::size_t count, int fan_in, int fan_out) {
            detail::xavier_fill(p.subspan(begin, count), fan_in, fan_out, seed, begin);
        };
        fill(l.w1, static_cast<std::size_t>(l.input_dim) * kHiddenWidth, l.input_dim, kHiddenWidth);
        fill(l.b1, kHiddenWidth, 1, kHiddenWidth);
        fill(l.w2, kHiddenWidth * kHiddenWidth, kHiddenWidth, kHiddenWidth);
        fill(l.b2, kHiddenWidth, 1, kHiddenWidth);
        fill(l.w3, kHiddenWidth, kHiddenWidth, 1);
    }
    return s;
}

inline std::vector<double> straight_line_prefix(double x0, int t_index, double x, const TimeGrid& grid) {
    if (t_index < 1 || t_index > grid.n_steps() - 1)
        throw ValidationError("straight_line_prefix: t_index " + std::to_string(t_index) + " outside [1, " +
                              std::to_string(grid.n_steps() - 1) + "]");
    std::vector<double> prefix(static_cast<std::size_t>(t_index) + 1);
    for (int j = 0; j <= t_index; ++j) prefix[j] = x0 + (static_cast<double>(j) / t_index) * (x - x0);
    return prefix;
}

struct SurfacePoint {
    double t;
    double x;
    double a;
};

// Drift on straight-line trajectories from (0, x0_reference) to (t_i, x)
// (full mode) or at level x (local mode). The first row is the step-0
// constant at (0, x0_reference).
inline std::vector<SurfacePoint> surface(const DriftStack& stack, const TimeGrid& grid, double x_min, double x_max,
                                         int n_x) {
    detail::require(n_x >= 2, "surface: n_x must be >= 2");
    detail::require(x_min < x_max, "surface: x_min must be < x_max");
    detail::require(stack.compatible_with(grid), "surface: stack was built for a different time grid");
    std::vector<SurfacePoint> rows;
    rows.push_back({0.0, stack.x0_reference(), stack.step0()});
    for (int i = 1; i < grid.n_steps(); ++i) {
        for (int j = 0; j < n_x; ++j) {
            const double x = x_min + (x_max - x_min) * j / (n_x - 1);
            double a;
            if (stack.mode() == DriftMode::Full) {
                const auto prefix = straight_line_prefix(stack.x0_reference(), i, x, grid);
                a = stack.forward(i, prefix);
            } else {
                a = stack.forward(i, std::span<const double>(&x, 1));
            }
            rows.push_back({grid.time(i), x, a});
        }
    }
    return rows;
}

inline std::string surface_csv(const std::vector<SurfacePoint>& rows) {
    std::string out = "t,x,a\n";
    for (const auto& r : rows) out += csv_row({r.t, r.x, r.a});
    return out;
}

// JSON form: mode, grid metadata, x0_reference, step0 and per-step networks
// with row-major weight matrices.
inline nlohmann::json to_json(const DriftStack& s) {
    using nlohmann::json;
    auto p = s.parameters();
    auto block = [&](std::size_t begin, std::size_t rows, std::size_t cols) {
        json m = json::array();
        for (std::size_t r = 0; r < rows; ++r) {
            json row = json::array();
            for (std::size_t c = 0; c < cols; ++c) row.push_back(p[begin + r * cols + c]);
            m.push_back(std::move(row));
        }
        return m;
    };
    auto vec = [&](std::size_t begin, std::size_t n) {
        json v = json::array();
        for (std::size_t i = 0; i < n; ++i) v.push_back(p[begin + i]);
        return v;
    };
    json nets = json::array();
    for (int i = 1; i < s.n_steps(); ++i) {
        const auto& l = s.layout(i);
        nets.push_back({{"step", i},
                        {"input_dim", l.input_dim},
                        {"W1", block(l.w1, l.input_dim, kHiddenWidth)},
                        {"b1", vec(l.b1, kHiddenWidth)},
                        {"W2", block(l.w2, kHiddenWidth, kHiddenWidth)},
                        {"b2", vec(l.b2, kHiddenWidth)},
                        {"W3", block(l.w3, kHiddenWidth, 1)}});
    }
    return {{"mode", to_string(s.mode())},
            {"grid", {{"T", s.maturity()}, {"n_steps", s.n_steps()}}},
            {"x0_reference", s.x0_reference()},
            {"hidden_width", kHiddenWidth},
            {"step0", s.step0()},
            {"nets", std::move(nets)}};
}

inline DriftStack stack_from_json(const nlohmann::json& j) {
    try {
        const auto mode = parse_drift_mode(j.at("mode").get<std::string>());
        const double maturity = j.at("grid").at("T").get<double>();
        const int n_steps = j.at("grid").at("n_steps").get<int>();
        detail::require(j.value("hidden_width", kHiddenWidth) == kHiddenWidth, "stack: unsupported hidden_width");
        DriftStack s(mode, n_steps, maturity, j.at("x0_reference").get<double>());
        auto p = s.parameters();
        p[0] = j.at("step0").get<double>();
        const auto& nets = j.at("nets");
        detail::require(nets.size() == static_cast<std::size_t>(n_steps - 1), "stack: expected n_steps-1 networks");
        auto read_block = [&](const nlohmann::json& m, std::size_t begin, std::size_t rows, std::size_t cols,
                              const char* name) {
            detail::require(m.size() == rows, std::string("stack: ") + name + " has wrong row count");
            for (std::size_t r = 0; r < rows; ++r) {
                detail::require(m[r].size() == cols, std::string("stack: ") + name + " has wrong column count");
                for (std::size_t c = 0; c < cols; ++c) p[begin + r * cols + c] = m[r][c].get<double>();
            }
        };
        auto read_vec = [&](const nlohmann::json& v, std::size_t begin, std::size_t n, const char* name) {
            detail::require(v.size() == n, std::string("stack: ") + name + " has wrong length");
            for (std::size_t i = 0; i < n; ++i) p[begin + i] = v[i].get<double>();
        };
        for (int i = 1; i < n_steps; ++i) {
            const auto& net = nets[static_cast<std::size_t>(i - 1)];
            const auto& l = s.layout(i);
            detail::require(net.at("input_dim").get<int>() == l.input_dim, "stack: input_dim does not match mode");
            read_block(net.at("W1"), l.w1, l.input_dim, kHiddenWidth, "W1");
            read_vec(net.at("b1"), l.b1, kHiddenWidth, "b1");
            read_block(net.at("W2"), l.w2, kHiddenWidth, kHiddenWidth, "W2");
            read_vec(net.at("b2"), l.b2, kHiddenWidth, "b2");
            read_block(net.at("W3"), l.w3, kHiddenWidth, 1, "W3");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("stack json: ") + e.what());
    }
}

} // namespace deepis
