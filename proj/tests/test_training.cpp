#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "deepis/errors.hpp"
#include "deepis/training.hpp"

using namespace deepis;

namespace {

const Model kBachelier{BachelierParams{1.0, 0.2}};
const Model kLocalVol{LocalVolParams{1.0, SviParams{0.05, 0.15, 0.4, 0.3, 0.45}}};

double batch_mean(const std::vector<double>& v, std::size_t begin, std::size_t n) {
    return std::accumulate(v.begin() + begin, v.begin() + begin + n, 0.0) / n;
}

// Central differences of the double-precision loss, one parameter at a time.
void expect_gradient_matches_fd(const Model& model, const PayoffSpec& payoff_spec, const TimeGrid& grid,
                                const DriftStack& stack, const std::vector<double>& gs, double lambda, double c,
                                double floor = 1e-12) {
    const BoundPayoff payoff(payoff_spec, grid);
    const auto lg = loss_and_gradient(model, payoff, grid, stack, gs, lambda, c);
    EXPECT_EQ(lg.loss, loss_value(model, payoff, grid, stack, gs, lambda, c));
    const double eps = 1e-6;
    std::size_t nonzero = 0;
    for (std::size_t k = 0; k < stack.parameter_count(); ++k) {
        DriftStack up = stack, dn = stack;
        up.parameters()[k] += eps;
        dn.parameters()[k] -= eps;
        const double fd = (loss_value(model, payoff, grid, up, gs, lambda, c) -
                           loss_value(model, payoff, grid, dn, gs, lambda, c)) /
                          (2 * eps);
        const double g = lg.gradient[k];
        EXPECT_LE(std::fabs(g - fd) / std::max(floor, std::fabs(g)), 1e-5) << "parameter " << k << " tape " << g
                                                                            << " fd " << fd;
        if (g != 0.0) ++nonzero;
    }
    EXPECT_GT(nonzero, stack.parameter_count() / 4);
}

}  // namespace

TEST(Loss, NullDriftConstantPayoff) {
    std::vector<double> g(10, 0.3), lw(10, 0.0);
    EXPECT_DOUBLE_EQ(variance_loss<double>(g, lw, 1.0, 10.0), 0.09);
}

TEST(Loss, ZeroPayoff) {
    std::vector<double> g(4, 0.0), lw = {0.1, -0.2, 0.5, 1.0};
    EXPECT_EQ(variance_loss<double>(g, lw, 3.0, 10.0), 0.0);
}

TEST(Loss, SinglePathWithConstraint) {
    std::vector<double> g = {1.0}, lw = {-std::log(20.0)};
    EXPECT_NEAR(variance_loss<double>(g, lw, 1.0, 10.0), 400.0 + std::log(11.0), 1e-10);
    EXPECT_NEAR(400.0 + std::log(11.0), 402.3979, 1e-4);
}

TEST(Loss, TapeAndDoubleAgree) {
    ad::Tape t;
    std::vector<double> g = {0.2, 0.0, 1.5}, lw = {-2.5, 0.3, 0.1};
    std::vector<ad::Var> gv, lv;
    for (double x : g) gv.push_back(t.input(x));
    for (double x : lw) lv.push_back(t.parameter(x));
    const auto y = variance_loss<ad::Var>(gv, lv, 0.7, 10.0);
    EXPECT_NEAR(y.value(), variance_loss<double>(g, lw, 0.7, 10.0), 1e-13);
}

TEST(AutoLambda, Examples) {
    EXPECT_DOUBLE_EQ(auto_lambda(2.5, 0.3), 0.3);
    EXPECT_DOUBLE_EQ(auto_lambda(0.05, 0.3), 30.0);
    EXPECT_DOUBLE_EQ(auto_lambda(1.0, 1.0), 1.0);
    EXPECT_THROW(auto_lambda(0.0, 1.0), ValidationError);
}

TEST(Gradient, MatchesFiniteDifferencesBachelier) {
    const TimeGrid grid(1.0, 3);
    const auto stack = init_stack(grid, DriftMode::Full, 3, 1.0);
    auto s = stack;
    s.parameters()[0] = 0.4;
    const auto gs = gaussian_matrix(12, streams::kTrainBase, 8, 3);
    expect_gradient_matches_fd(kBachelier, CallSpec{1.0}, grid, s, gs, 0.001, 10.0);
}

TEST(Gradient, MatchesFiniteDifferencesLocalVolLocalMode) {
    const TimeGrid grid(1.0, 3);
    auto s = init_stack(grid, DriftMode::Local, 5, 1.0);
    s.parameters()[0] = -0.3;
    const auto gs = gaussian_matrix(13, streams::kTrainBase, 8, 3);
    expect_gradient_matches_fd(kLocalVol, CallsPutsSpec{1.0, 1.1, 2.0, 0.9}, grid, s, gs, 0.01, 10.0);
}

TEST(Gradient, ConstraintTermIsDifferentiated) {
    // Large negative drift with small C makes the (1/Z - C)^+ term active.
    const TimeGrid grid(1.0, 3);
    auto s = init_stack(grid, DriftMode::Full, 6, 1.0);
    s.parameters()[0] = 1.5;
    const auto gs = gaussian_matrix(14, streams::kTrainBase, 8, 3);
    const BoundPayoff payoff(PayoffSpec{CallSpec{1.0}}, grid);
    const auto batch = simulate_with_gaussians(kBachelier, grid, s.policy(), gs);
    int active = 0;
    for (double lw : batch.log_weights) active += std::exp(-lw) > 1.2;
    ASSERT_GT(active, 0);
    // The log(1 + .) term inflates the loss, so central-difference roundoff
    // (~|loss| * 1e-16 / eps) swamps components below ~1e-6; they are judged
    // against that floor instead of their own size.
    expect_gradient_matches_fd(kBachelier, CallSpec{1.0}, grid, s, gs, 0.5, 1.2, 1e-5);
}

TEST(Gradient, IndependentOfThreadCount) {
    const TimeGrid grid(1.0, 6);
    const auto s = init_stack(grid, DriftMode::Full, 3, 1.0);
    const auto gs = gaussian_matrix(1, streams::kTrainBase, 300, 6);
    const BoundPayoff payoff(PayoffSpec{CallSpec{1.2}}, grid);
    const auto one = loss_and_gradient(kLocalVol, payoff, grid, s, gs, 0.01, 10.0, 1);
    const auto four = loss_and_gradient(kLocalVol, payoff, grid, s, gs, 0.01, 10.0, 4);
    EXPECT_EQ(one.loss, four.loss);
    EXPECT_EQ(one.gradient, four.gradient);
}

TEST(Objective, SecondMomentIdentity) {
    const TimeGrid grid(1.0, 6);
    const auto s = init_stack(grid, DriftMode::Full, 10, 1.0);
    const BoundPayoff payoff(PayoffSpec{CallSpec{1.2}}, grid);
    const auto gs = gaussian_matrix(3, streams::kEvalImportance, 100000, 6);
    const double loss = loss_value(kBachelier, payoff, grid, s, gs, 0.0, 10.0);
    const auto batch = simulate_with_gaussians(kBachelier, grid, s.policy(), gs);
    const auto est = is_estimator(batch, payoff.evaluate(batch));
    EXPECT_NEAR(loss, est.std * est.std + est.mean * est.mean, 1e-12 * loss);
    // A fresh sample estimates the same second moment.
    const auto fresh = gaussian_matrix(4, streams::kEvalImportance, 100000, 6);
    const auto b2 = simulate_with_gaussians(kBachelier, grid, s.policy(), fresh);
    const auto w = weighted_samples(b2, payoff.evaluate(b2));
    std::vector<double> sq(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) sq[i] = w[i] * w[i];
    const auto m2 = sample_stats(sq);
    EXPECT_NEAR(loss, m2.mean, 3 * std::hypot(m2.se, m2.se));
}

TEST(Train, ZeroLearningRateKeepsInit) {
    const TimeGrid grid(1.0, 6);
    TrainConfig c;
    c.n_batches = 3;
    c.steps_per_batch = 4;
    c.batch_size = 64;
    c.learning_rate = 0.0;
    c.lambda = 0.001;
    c.seed = 17;
    const auto r = train(kBachelier, CallSpec{1.4}, grid, DriftMode::Full, c);
    EXPECT_EQ(r.stack, init_stack(grid, DriftMode::Full, 17, 1.0));
    ASSERT_EQ(r.loss_history.size(), 12u);
    for (int b = 0; b < 3; ++b)
        for (int s = 1; s < 4; ++s) EXPECT_EQ(r.loss_history[b * 4 + s], r.loss_history[b * 4]);
}

TEST(Train, DeskScaleLossDecreases) {
    const TimeGrid grid(1.0, 6);
    TrainConfig c;
    c.n_batches = 20;
    c.steps_per_batch = 20;
    c.batch_size = 256;
    c.learning_rate = 10.0;
    c.lambda = 0.001;
    c.constraint_c = 10.0;
    c.seed = 20240601;
    const auto r = train(kBachelier, CallSpec{1.4}, grid, DriftMode::Full, c);
    ASSERT_EQ(r.loss_history.size(), 400u);
    ASSERT_EQ(r.grad_norm_history.size(), 400u);
    EXPECT_LT(batch_mean(r.loss_history, 380, 20), batch_mean(r.loss_history, 0, 20));
}

TEST(Train, DescentOnFixedBatch) {
    const TimeGrid grid(1.0, 6);
    auto s = init_stack(grid, DriftMode::Full, 2, 1.0);
    const auto gs = gaussian_matrix(7, streams::kTrainBase, 256, 6);
    const BoundPayoff payoff(PayoffSpec{CallSpec{1.2}}, grid);
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 10; ++step) {
        const auto lg = loss_and_gradient(kBachelier, payoff, grid, s, gs, 0.001, 10.0);
        EXPECT_LE(lg.loss, prev + 1e-12);
        prev = lg.loss;
        auto p = s.parameters();
        for (std::size_t k = 0; k < p.size(); ++k) p[k] -= 1e-3 * lg.gradient[k];
    }
}

TEST(Train, FrozenNoiseDeterminism) {
    const TimeGrid grid(1.0, 6);
    TrainConfig c;
    c.n_batches = 2;
    c.steps_per_batch = 3;
    c.batch_size = 200;
    c.learning_rate = 0.3;
    c.lambda = std::nullopt;
    c.seed = 4;
    c.threads = 1;
    const auto a = train(kLocalVol, CallSpec{1.4}, grid, DriftMode::Full, c);
    c.threads = 3;
    const auto b = train(kLocalVol, CallSpec{1.4}, grid, DriftMode::Full, c);
    EXPECT_EQ(a.loss_history, b.loss_history);
    EXPECT_EQ(a.grad_norm_history, b.grad_norm_history);
    EXPECT_EQ(a.stack, b.stack);
    EXPECT_EQ(a.lambda, b.lambda);
    EXPECT_GT(a.lambda, 0.0);
}

TEST(Train, AutoLambdaFromPilot) {
    const TimeGrid grid(1.0, 6);
    TrainConfig c;
    c.n_batches = 1;
    c.steps_per_batch = 1;
    c.batch_size = 1000;
    c.lambda = std::nullopt;
    c.lambda_base = 0.3;
    c.seed = 8;
    const auto r = train(kBachelier, CallsPutsSpec{10.0, 1.4, 10.0, 0.6}, grid, DriftMode::Full, c);
    const auto pilot = simulate(kBachelier, grid, NoDrift{}, 1000, 8, streams::kPilot);
    const BoundPayoff payoff(PayoffSpec{CallsPutsSpec{10.0, 1.4, 10.0, 0.6}}, grid);
    EXPECT_EQ(r.lambda, auto_lambda(sample_stats(payoff.evaluate(pilot)).std, 0.3));
}

TEST(Train, ZeroSpreadPayoffRejectedForAutoLambda) {
    const TimeGrid grid(1.0, 6);
    TrainConfig c;
    c.lambda = std::nullopt;
    c.batch_size = 16;
    c.n_batches = 1;
    c.steps_per_batch = 1;
    EXPECT_THROW(train(kBachelier, CallSpec{50.0}, grid, DriftMode::Full, c), ValidationError);
}

TEST(Train, DivergenceIsReported) {
    const TimeGrid grid(1.0, 6);
    TrainConfig c;
    c.n_batches = 5;
    c.steps_per_batch = 20;
    c.batch_size = 64;
    c.learning_rate = 1e9;
    c.lambda = 0.1;
    c.seed = 1;
    try {
        train(kLocalVol, CallSpec{1.0}, grid, DriftMode::Full, c);
        FAIL() << "expected divergence";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("diverged at step"), std::string::npos);
    }
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    c.n_batches = 0;
    EXPECT_THROW(validate(c), ValidationError);
    c = {};
    c.learning_rate = -1;
    EXPECT_THROW(validate(c), ValidationError);
    c = {};
    c.lambda = -0.1;
    EXPECT_THROW(validate(c), ValidationError);
    c = {};
    c.constraint_c = 0.0;
    EXPECT_THROW(validate(c), ValidationError);
}
