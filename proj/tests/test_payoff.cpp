#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "deepis/errors.hpp"
#include "deepis/payoff.hpp"
#include "deepis/rng.hpp"
#include "autocall_oracle.hpp"

using namespace deepis;

namespace {

AutoCallSpec multi_coupon() {
    return {{0.2, 0.4, 0.6, 0.8, 1.0}, {1.5, 1.5, 1.5, 1.5, 1.5}, {0.1, 0.1, 0.1, 0.1, 0.1},
            {1.8, 1.8, 1.8, 1.8, 1.8}, 0.5, 0.1};
}

}  // namespace

TEST(SmoothIndicator, Ramp) {
    EXPECT_EQ(smooth_indicator(1.5, 1.5, 0.1), 0.0);
    EXPECT_DOUBLE_EQ(smooth_indicator(1.6, 1.5, 0.1), 1.0);
    EXPECT_DOUBLE_EQ(smooth_indicator(1.55, 1.5, 0.1), 0.5);
    EXPECT_EQ(smooth_indicator(0.0, 1.5, 0.1), 0.0);
    EXPECT_EQ(smooth_indicator(9.0, 1.5, 0.1), 1.0);
    EXPECT_THROW(smooth_indicator(1.0, 1.0, 0.0), ValidationError);
}

TEST(SmoothIndicator, MonotoneBoundedLipschitz) {
    double prev = -1.0;
    for (double x = 1.0; x <= 2.0; x += 0.001) {
        const double h = smooth_indicator(x, 1.5, 0.1);
        EXPECT_GE(h, prev);
        EXPECT_GE(h, 0.0);
        EXPECT_LE(h, 1.0);
        if (prev >= 0.0) {
            EXPECT_LE(h - prev, 0.001 / 0.1 + 1e-12);
        }
        prev = h;
    }
}

TEST(Call, Values) {
    EXPECT_EQ(call_payoff(1.4, CallSpec{1.4}), 0.0);
    EXPECT_NEAR(call_payoff(1.5, CallSpec{1.4}), 0.1, 1e-15);
    EXPECT_EQ(call_payoff(0.0, CallSpec{1.4}), 0.0);
}

TEST(CallsPuts, AsymmetricValues) {
    const CallsPutsSpec asym{1.0, 1.2, 10.0, 0.6};
    EXPECT_EQ(calls_puts_payoff(0.9, asym), 0.0);
    EXPECT_NEAR(calls_puts_payoff(0.5, asym), 1.0, 1e-14);
    EXPECT_NEAR(calls_puts_payoff(1.3, asym), 0.1, 1e-15);
}

TEST(AutoCall, FirstDateCall) {
    const TimeGrid g(1.0, 10);
    std::vector<double> path = {1.0, 1.3, 1.7, 1.2, 0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1};
    EXPECT_DOUBLE_EQ(autocall_payoff<double>(path, g, multi_coupon()), 1.8);
}

TEST(AutoCall, SurvivesAboveProtection) {
    const TimeGrid g(1.0, 10);
    std::vector<double> path = {1.0, 1.1, 1.2, 1.1, 1.0, 0.9, 0.8, 0.9, 0.8, 0.75, 0.7};
    EXPECT_EQ(autocall_payoff<double>(path, g, multi_coupon()), 0.0);
}

TEST(AutoCall, SurvivesIntoDeepPut) {
    const TimeGrid g(1.0, 10);
    std::vector<double> path = {1.0, 1.1, 1.2, 1.1, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
    EXPECT_NEAR(autocall_payoff<double>(path, g, multi_coupon()), -0.7, 1e-14);
}

TEST(AutoCall, GridLengthChecked) {
    const TimeGrid g(1.0, 10);
    std::vector<double> path(5, 1.0);
    EXPECT_THROW(autocall_payoff<double>(path, g, multi_coupon()), ValidationError);
}

TEST(AutoCall, SpecValidation) {
    const TimeGrid g(1.0, 10);
    auto s = multi_coupon();
    s.dates.back() = 0.9;
    EXPECT_THROW(validate(s, g), ValidationError);
    s = multi_coupon();
    s.smoothings[2] = 0.0;
    EXPECT_THROW(validate(s, g), ValidationError);
    s = multi_coupon();
    s.coupons.pop_back();
    EXPECT_THROW(validate(s, g), ValidationError);
    s = multi_coupon();
    std::swap(s.dates[0], s.dates[1]);
    EXPECT_THROW(validate(s, g), ValidationError);
}

// On a dyadic lattice every operation is exact, so any algebraically
// equivalent evaluation must agree to the last bit.
TEST(AutoCall, MatchesEnumerationOnLattice) {
    const TimeGrid g(0.75, 3);
    const AutoCallSpec s{{0.25, 0.5, 0.75}, {1.25, 1.125, 1.0}, {0.25, 0.125, 0.5}, {0.5, 1.75, 3.0}, 0.5, 0.25};
    for (std::uint32_t trial = 0; trial < 1000; ++trial) {
        std::vector<double> path(4, 1.0);
        for (int i = 1; i <= 3; ++i) path[i] = std::floor(uniform(77, 0, trial, i) * 48.0) / 32.0;
        const double got = autocall_payoff<double>(path, g, s);
        const double want = oracle::enumerate_autocall({path[1], path[2], path[3]}, path[3], s);
        ASSERT_EQ(got, want) << "trial " << trial;
    }
}

TEST(AutoCall, HardIndicatorLimit) {
    const TimeGrid g(1.0, 10);
    auto s = multi_coupon();
    s.coupons = {1.0, 2.0, 3.0, 4.0, 5.0};
    for (auto& w : s.smoothings) w = 1e-9;
    s.pdi_smoothing = 1e-9;
    for (std::uint32_t trial = 0; trial < 500; ++trial) {
        std::vector<double> path(11, 1.0);
        for (int i = 1; i <= 10; ++i) {
            double x = 0.2 + 1.6 * uniform(5, 0, trial, i);
            if (std::fabs(x - 1.5) < 1e-6) x += 1e-5;
            if (std::fabs(x - 0.5) < 1e-6) x += 1e-5;
            path[i] = x;
        }
        const std::vector<double> observed = {path[2], path[4], path[6], path[8], path[10]};
        EXPECT_NEAR(autocall_payoff<double>(path, g, s), oracle::hard_autocall(observed, path[10], s), 1e-6);
    }
}

TEST(AutoCall, ContinuousInEveryCoordinate) {
    const TimeGrid g(1.0, 10);
    const auto s = multi_coupon();
    // |dg/dx| <= sum of coupon/S over dates + PDI slope bound
    double lip = 0.0;
    for (std::size_t i = 0; i < s.coupons.size(); ++i) lip += std::fabs(s.coupons[i]) / s.smoothings[i];
    lip += (1.0 + 2.0 * (1.0 - s.pdi_strike) / s.pdi_smoothing) * (1.0 + 5.0 / 0.1);
    const double eps = 1e-7;
    for (std::uint32_t trial = 0; trial < 200; ++trial) {
        std::vector<double> path(11, 1.0);
        for (int i = 1; i <= 10; ++i) path[i] = 0.3 + 1.5 * uniform(8, 0, trial, i);
        const double base = autocall_payoff<double>(path, g, s);
        for (int j = 1; j <= 10; ++j) {
            auto p = path;
            p[j] += eps;
            EXPECT_LE(std::fabs(autocall_payoff<double>(p, g, s) - base), lip * eps);
        }
    }
}

TEST(BoundPayoff, DispatchAndSnapping) {
    const TimeGrid g6(1.0, 6);
    const BoundPayoff call(PayoffSpec{CallSpec{1.4}}, g6);
    std::vector<double> path = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.5};
    EXPECT_NEAR(call(std::span<const double>(path)), 0.1, 1e-15);
    const BoundPayoff ac(PayoffSpec{multi_coupon()}, g6);
    path = {1.0, 1.7, 0.1, 0.1, 0.1, 0.1, 0.1};
    EXPECT_DOUBLE_EQ(ac(std::span<const double>(path)), 1.8);
}

TEST(BoundPayoff, TapeValueMatchesDouble) {
    const TimeGrid g(1.0, 10);
    const BoundPayoff ac(PayoffSpec{multi_coupon()}, g);
    std::vector<double> path = {1.0, 1.2, 1.55, 1.3, 1.52, 1.1, 0.9, 0.7, 0.6, 0.55, 0.45};
    ad::Tape t;
    std::vector<ad::Var> vp;
    for (double v : path) vp.push_back(t.parameter(v));
    const ad::Var y = ac(std::span<const ad::Var>(vp));
    EXPECT_EQ(y.value(), ac(std::span<const double>(path)));
    const auto grad = t.backward(y);
    // Only observation nodes and maturity carry sensitivity.
    for (int i : {1, 3, 5, 7, 9}) EXPECT_EQ(grad.at(vp[i]), 0.0);
}
