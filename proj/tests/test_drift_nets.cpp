#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "deepis/drift_nets.hpp"
#include "deepis/errors.hpp"

using namespace deepis;

namespace {

const TimeGrid kGrid(1.0, 6);

double relu_d(double x) { return x > 0 ? x : 0.0; }

}  // namespace

TEST(DriftStack, Shapes) {
    const DriftStack full(DriftMode::Full, 6, 1.0, 1.0);
    const DriftStack local(DriftMode::Local, 6, 1.0, 1.0);
    for (int i = 1; i < 6; ++i) {
        EXPECT_EQ(full.input_dim(i), i + 1);
        EXPECT_EQ(local.input_dim(i), 1);
    }
    std::size_t expected_full = 1;
    for (int i = 1; i < 6; ++i) expected_full += (i + 1) * 16 + 16 + 256 + 16 + 16;
    EXPECT_EQ(full.parameter_count(), expected_full);
    EXPECT_EQ(local.parameter_count(), 1 + 5 * (16 + 16 + 256 + 16 + 16));
}

TEST(DriftStack, InitBoundsAndStep0) {
    for (DriftMode mode : {DriftMode::Full, DriftMode::Local}) {
        const auto s = init_stack(kGrid, mode, 123, 1.0);
        EXPECT_EQ(s.step0(), 0.0);
        const auto p = s.parameters();
        for (int i = 1; i < 6; ++i) {
            const auto& l = s.layout(i);
            auto check = [&](std::size_t begin, std::size_t n, int fan_in, int fan_out) {
                const double bound = std::sqrt(6.0 / (fan_in + fan_out));
                double max_abs = 0.0;
                for (std::size_t k = begin; k < begin + n; ++k) {
                    EXPECT_LE(std::fabs(p[k]), bound);
                    max_abs = std::max(max_abs, std::fabs(p[k]));
                }
                EXPECT_GT(max_abs, 0.5 * bound);  // actually spread over the interval
            };
            check(l.w1, l.input_dim * 16, l.input_dim, 16);
            check(l.b1, 16, 1, 16);
            check(l.w2, 256, 16, 16);
            check(l.b2, 16, 1, 16);
            check(l.w3, 16, 16, 1);
        }
    }
}

TEST(DriftStack, InitDeterministic) {
    EXPECT_EQ(init_stack(kGrid, DriftMode::Full, 5, 1.0), init_stack(kGrid, DriftMode::Full, 5, 1.0));
    EXPECT_FALSE(init_stack(kGrid, DriftMode::Full, 5, 1.0) == init_stack(kGrid, DriftMode::Full, 6, 1.0));
}

TEST(DriftStack, ZeroParametersGiveZero) {
    const DriftStack s(DriftMode::Full, 6, 1.0, 1.0);
    std::vector<double> prefix = {1.0, 1.3, 0.7};
    EXPECT_EQ(s.forward(2, prefix), 0.0);
    EXPECT_EQ(s.forward(0, std::vector<double>{1.0}), 0.0);
}

TEST(DriftStack, CentredInputsReduceToBiases) {
    const auto s = init_stack(kGrid, DriftMode::Full, 9, 1.1);
    const int step = 3;
    const auto& l = s.layout(step);
    const auto p = s.parameters();
    double h1[16], h2[16];
    for (int c = 0; c < 16; ++c) h1[c] = relu_d(p[l.b1 + c]);
    for (int c = 0; c < 16; ++c) {
        double z = p[l.b2 + c];
        for (int r = 0; r < 16; ++r) z += p[l.w2 + r * 16 + c] * h1[r];
        h2[c] = relu_d(z);
    }
    double out = 0.0;
    for (int r = 0; r < 16; ++r) out += p[l.w3 + r] * h2[r];
    std::vector<double> prefix(4, 1.1);
    EXPECT_NEAR(s.forward(step, prefix), out, 1e-14);
}

TEST(DriftStack, Step0IsSharedConstant) {
    auto s = init_stack(kGrid, DriftMode::Local, 2, 1.0);
    s.parameters()[0] = 0.37;
    EXPECT_EQ(s.forward(0, std::vector<double>{0.4}), 0.37);
    EXPECT_EQ(s.policy()(0, std::vector<double>{5.0}), 0.37);
}

TEST(DriftStack, ArityChecked) {
    const auto s = init_stack(kGrid, DriftMode::Full, 2, 1.0);
    EXPECT_THROW(s.forward(2, std::vector<double>{1.0, 1.0}), ValidationError);
    EXPECT_THROW(s.forward(6, std::vector<double>(7, 1.0)), ValidationError);
}

TEST(DriftStack, FullModeUsesEarlyCoordinates) {
    const auto s = init_stack(kGrid, DriftMode::Full, 31, 1.0);
    std::vector<double> a = {1.0, 1.0, 1.0, 1.0, 1.2};
    std::vector<double> b = {1.0, 0.6, 1.4, 0.9, 1.2};
    EXPECT_NE(s.forward(4, a), s.forward(4, b));
    const auto local = init_stack(kGrid, DriftMode::Local, 31, 1.0);
    EXPECT_EQ(local.policy()(4, a), local.policy()(4, b));
}

TEST(DriftStack, PiecewiseLinearSlices) {
    const auto s = init_stack(kGrid, DriftMode::Full, 44, 1.0);
    std::vector<double> prefix = {1.0, 0.95, 1.05, 1.1};
    const double h = 1e-3;
    int kinks = 0;
    const int n = 2000;
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) {
        prefix[3] = 0.0 + i * h;
        y[i] = s.forward(3, prefix);
    }
    for (int i = 1; i + 1 < n; ++i)
        if (std::fabs(y[i + 1] - 2 * y[i] + y[i - 1]) > 1e-9) ++kinks;
    EXPECT_LT(kinks, n / 20);
}

TEST(StraightLine, Prefixes) {
    EXPECT_EQ(straight_line_prefix(1.0, 3, 1.0, kGrid), (std::vector<double>{1.0, 1.0, 1.0, 1.0}));
    const auto p = straight_line_prefix(1.0, 2, 1.4, kGrid);
    ASSERT_EQ(p.size(), 3u);
    EXPECT_DOUBLE_EQ(p[1], 1.2);
    EXPECT_DOUBLE_EQ(p[2], 1.4);
    EXPECT_EQ(straight_line_prefix(1.0, 1, 0.8, kGrid), (std::vector<double>{1.0, 0.8}));
    EXPECT_THROW(straight_line_prefix(1.0, 0, 0.8, kGrid), ValidationError);
    EXPECT_THROW(straight_line_prefix(1.0, 6, 0.8, kGrid), ValidationError);
}

TEST(Surface, ZeroStackIsZero) {
    const DriftStack s(DriftMode::Full, 6, 1.0, 1.0);
    const auto rows = surface(s, kGrid, 0.5, 1.5, 11);
    EXPECT_EQ(rows.size(), 1u + 5 * 11);
    EXPECT_EQ(rows[0].t, 0.0);
    EXPECT_EQ(rows[0].x, 1.0);
    for (const auto& r : rows) EXPECT_EQ(r.a, 0.0);
    EXPECT_EQ(surface_csv(rows).substr(0, 6), "t,x,a\n");
}

TEST(Surface, LocalModeIgnoresDeclaredHistory) {
    auto s = init_stack(kGrid, DriftMode::Local, 3, 1.0);
    const auto rows_a = surface(s, kGrid, 0.5, 1.5, 5);
    // Local-mode networks see only the current level, so the straight-line
    // history is irrelevant; only the centring level matters.
    std::vector<double> direct;
    for (int i = 1; i < 6; ++i)
        for (int j = 0; j < 5; ++j) {
            const double x = 0.5 + 1.0 * j / 4;
            direct.push_back(s.forward(i, std::vector<double>{x}));
        }
    for (std::size_t r = 1; r < rows_a.size(); ++r) EXPECT_EQ(rows_a[r].a, direct[r - 1]);
}

TEST(Surface, RejectsWrongGrid) {
    const auto s = init_stack(kGrid, DriftMode::Full, 3, 1.0);
    EXPECT_THROW(surface(s, TimeGrid(1.0, 5), 0.5, 1.5, 5), ValidationError);
    EXPECT_THROW(surface(s, kGrid, 1.5, 0.5, 5), ValidationError);
}

TEST(Json, RoundTripIsExact) {
    for (DriftMode mode : {DriftMode::Full, DriftMode::Local}) {
        auto s = init_stack(kGrid, mode, 77, 1.0 / 3.0);
        s.parameters()[0] = 0.1 + 0.2;
        const auto text = to_json(s).dump();
        const auto back = stack_from_json(nlohmann::json::parse(text));
        EXPECT_EQ(back, s);
        EXPECT_EQ(to_json(back).dump(), text);
    }
}

TEST(Json, MalformedRejected) {
    auto j = to_json(init_stack(kGrid, DriftMode::Full, 1, 1.0));
    auto bad = j;
    bad["nets"][1]["W1"].erase(0);
    EXPECT_THROW(stack_from_json(bad), ValidationError);
    bad = j;
    bad["mode"] = "sideways";
    EXPECT_THROW(stack_from_json(bad), ValidationError);
    bad = j;
    bad.erase("step0");
    EXPECT_THROW(stack_from_json(bad), ValidationError);
}

TEST(DriftMode, Parse) {
    EXPECT_EQ(parse_drift_mode("full"), DriftMode::Full);
    EXPECT_EQ(parse_drift_mode("local"), DriftMode::Local);
    EXPECT_THROW(parse_drift_mode("global"), ValidationError);
}
