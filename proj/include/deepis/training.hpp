#pragma once

// Variance minimisation of the re-weighted estimator by plain gradient
// descent on the drift parameters.
//
//   loss = mean_p (g_p / Z_p)^2 + lambda * ln(1 + mean_p (1/Z_p - C)^+)
//
// Paths are re-simulated on a fresh tape at every step from a Gaussian batch
// that stays frozen for steps_per_batch steps.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepis/diffusion.hpp"
#include "deepis/drift_nets.hpp"
#include "deepis/errors.hpp"
#include "deepis/grad_engine.hpp"
#include "deepis/parallel.hpp"
#include "deepis/payoff.hpp"
#include "deepis/rng.hpp"

namespace deepis {

struct TrainConfig {
    int n_batches = 100;
    int steps_per_batch = 100;
    int batch_size = 1000;
    double learning_rate = 1.0;
    std::optional<double> lambda = 0.0;  // nullopt: automatic rule
    double lambda_base = 1.0;
    double constraint_c = 10.0;
    std::uint64_t seed = 0;  // network initialisation, pilot and training batches
    unsigned threads = 1;
};

inline void validate(const TrainConfig& c) {
    detail::require(c.n_batches >= 1 && c.n_batches <= 100000000, "train.n_batches must be in [1, 1e8]");
    detail::require(c.steps_per_batch >= 1, "train.steps_per_batch must be >= 1");
    detail::require(c.batch_size >= 1, "train.batch_size must be >= 1");
    detail::require(std::isfinite(c.learning_rate) && c.learning_rate >= 0.0, "train.learning_rate must be >= 0");
    if (c.lambda) detail::require(std::isfinite(*c.lambda) && *c.lambda >= 0.0, "train.lambda must be >= 0 or \"auto\"");
    detail::require(std::isfinite(c.lambda_base) && c.lambda_base > 0.0, "train.lambda_base must be > 0");
    detail::require(std::isfinite(c.constraint_c) && c.constraint_c > 0.0, "train.constraint_C must be > 0");
}

struct TrainReport {
    std::vector<double> loss_history;
    std::vector<double> grad_norm_history;
    double lambda = 0.0;
    DriftStack stack;
};

// lambda = base * 10^(-floor(log10 sigma_hat))
inline double auto_lambda(double sigma_hat, double base) {
    if (!(sigma_hat > 0.0) || !std::isfinite(sigma_hat))
        throw ValidationError("automatic lambda: payoff has zero spread under the base measure; "
                              "importance sampling cannot reduce variance, price with plain Monte Carlo");
    return base * std::pow(10.0, -std::floor(std::log10(sigma_hat)));
}

// Generic form of the objective over one list of paths.
template <class S>
S variance_loss(std::span<const S> payoffs, std::span<const S> log_weights, double lambda, double c) {
    using std::exp;
    using std::log;
    const std::size_t n = payoffs.size();
    detail::require(n >= 1 && log_weights.size() == n, "loss: payoff/log-weight length mismatch");
    std::vector<S> second_moment(n);
    std::vector<S> excess(n);
    for (std::size_t p = 0; p < n; ++p) {
        const S inv_z = exp(-log_weights[p]);
        second_moment[p] = square(payoffs[p] * inv_z);
        excess[p] = relu(inv_z - c);
    }
    if constexpr (std::is_same_v<S, double>) {
        double m2 = 0.0, ex = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            m2 += second_moment[p];
            ex += excess[p];
        }
        return m2 / n + lambda * std::log(1.0 + ex / n);
    } else {
        return ad::mean(second_moment) + lambda * log(1.0 + ad::mean(excess));
    }
}

inline double variance_loss(const PathBatch& batch, std::span<const double> payoffs, double lambda, double c) {
    return variance_loss<double>(payoffs, batch.log_weights, lambda, c);
}

struct LossAndGradient {
    double loss = 0.0;
    std::vector<double> gradient;
};

// Loss value in double precision for a frozen Gaussian batch; the
// reference for finite-difference checks of loss_and_gradient.
inline double loss_value(const Model& model, const BoundPayoff& payoff, const TimeGrid& grid, const DriftStack& stack,
                         std::span<const double> gaussians, double lambda, double c) {
    const auto batch =
        simulate_with_gaussians(model, grid, stack.policy(), std::vector<double>(gaussians.begin(), gaussians.end()));
    const auto g = payoff.evaluate(batch);
    return variance_loss(batch, g, lambda, c);
}

// Loss and exact parameter gradient for a frozen Gaussian batch
// [n_paths x n_steps]. Paths are split into fixed chunks, each recorded on
// its own tape; the chunk sums are combined in chunk order so the result does
// not depend on the thread count.
inline LossAndGradient loss_and_gradient(const Model& model, const BoundPayoff& payoff, const TimeGrid& grid,
                                         const DriftStack& stack, std::span<const double> gaussians, double lambda,
                                         double c, unsigned threads = 1) {
    using ad::Tape;
    const int n_steps = grid.n_steps();
    detail::require(stack.compatible_with(grid), "loss: stack built for a different time grid");
    detail::require(!gaussians.empty() && gaussians.size() % n_steps == 0, "loss: gaussian matrix shape mismatch");
    const std::size_t n_paths = gaussians.size() / n_steps;
    const std::size_t n_chunks = (n_paths + kPathChunk - 1) / kPathChunk;
    const double x0 = initial_level(model);
    const auto theta = stack.parameters();

    struct Chunk {
        std::unique_ptr<Tape> tape;
        std::vector<Var> params;
        Var second_moment;
        Var excess;
    };
    std::vector<Chunk> chunks(n_chunks);

    parallel_for_chunks(n_paths, kPathChunk, threads, [&](std::size_t begin, std::size_t end, std::size_t ci) {
        Chunk& ch = chunks[ci];
        ch.tape = std::make_unique<Tape>();
        Tape& tape = *ch.tape;
        tape.reserve((end - begin) * n_steps * 120, (end - begin) * n_steps * 1200);
        ch.params.reserve(theta.size());
        for (double v : theta) ch.params.push_back(tape.parameter(v));
        const auto policy = stack.policy<Var>(ch.params);
        std::vector<Var> values(n_steps + 1);
        std::vector<Var> drifts(n_steps);
        std::vector<Var> m2(end - begin);
        std::vector<Var> ex(end - begin);
        for (std::size_t p = begin; p < end; ++p) {
            const Var lw = simulate_path<Var>(model, grid, policy, gaussians.subspan(p * n_steps, n_steps),
                                              tape.input(x0), std::span<Var>(values), std::span<Var>(drifts));
            const Var g = payoff(std::span<const Var>(values));
            const Var inv_z = exp(-lw);
            m2[p - begin] = square(g * inv_z);
            ex[p - begin] = relu(inv_z - c);
        }
        ch.second_moment = ad::sum(m2);
        ch.excess = ad::sum(ex);
    });

    double m2_total = 0.0;
    double ex_total = 0.0;
    for (const auto& ch : chunks) {
        m2_total += ch.second_moment.value();
        ex_total += ch.excess.value();
    }
    const double n = static_cast<double>(n_paths);
    LossAndGradient out;
    out.loss = m2_total / n + lambda * std::log(1.0 + ex_total / n);
    const double seed_m2 = 1.0 / n;
    const double seed_ex = lambda / (n * (1.0 + ex_total / n));

    std::vector<std::vector<double>> partial(n_chunks);
    parallel_for_chunks(n_chunks, 1, threads, [&](std::size_t ci, std::size_t, std::size_t) {
        Chunk& ch = chunks[ci];
        const Var outputs[2] = {ch.second_moment, ch.excess};
        const double seeds[2] = {seed_m2, seed_ex};
        ch.tape->propagate(outputs, seeds);
        partial[ci].resize(theta.size());
        for (std::size_t k = 0; k < theta.size(); ++k) partial[ci][k] = ch.tape->adjoint(ch.params[k]);
        ch.tape.reset();
    });
    out.gradient.assign(theta.size(), 0.0);
    for (const auto& g : partial)
        for (std::size_t k = 0; k < g.size(); ++k) out.gradient[k] += g[k];
    return out;
}

using TrainProgress = std::function<void(int step, double loss, double grad_norm)>;

inline TrainReport train(const Model& model, const PayoffSpec& payoff_spec, const TimeGrid& grid, DriftMode mode,
                         const TrainConfig& config, const TrainProgress& progress = {}) {
    validate(model);
    validate(config);
    const BoundPayoff payoff(payoff_spec, grid);
    TrainReport report{{}, {}, 0.0, init_stack(grid, mode, config.seed, initial_level(model))};

    if (config.lambda) {
        report.lambda = *config.lambda;
    } else {
        const auto pilot = simulate(model, grid, NoDrift{}, static_cast<std::size_t>(config.batch_size), config.seed,
                                    streams::kPilot, config.threads);
        const auto g = payoff.evaluate(pilot);
        report.lambda = auto_lambda(sample_stats(g).std, config.lambda_base);
    }

    const int total_steps = config.n_batches * config.steps_per_batch;
    report.loss_history.reserve(total_steps);
    report.grad_norm_history.reserve(total_steps);
    int step = 0;
    for (int b = 0; b < config.n_batches; ++b) {
        const auto gaussians = gaussian_matrix(config.seed, streams::kTrainBase + static_cast<std::uint32_t>(b),
                                               static_cast<std::size_t>(config.batch_size), grid.n_steps(),
                                               config.threads);
        for (int s = 0; s < config.steps_per_batch; ++s, ++step) {
            LossAndGradient lg;
            try {
                lg = loss_and_gradient(model, payoff, grid, report.stack, gaussians, report.lambda,
                                       config.constraint_c, config.threads);
            } catch (const NumericalError& e) {
                throw NumericalError("training diverged at step " + std::to_string(step) + ": " + e.what() +
                                     " (try a smaller learning rate)");
            }
            double norm2 = 0.0;
            for (double gk : lg.gradient) norm2 += gk * gk;
            if (!std::isfinite(lg.loss) || !std::isfinite(norm2))
                throw NumericalError("training diverged at step " + std::to_string(step) +
                                     ": non-finite loss or gradient (try a smaller learning rate)");
            report.loss_history.push_back(lg.loss);
            report.grad_norm_history.push_back(std::sqrt(norm2));
            if (progress) progress(step, lg.loss, std::sqrt(norm2));
            auto theta = report.stack.parameters();
            for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= config.learning_rate * lg.gradient[k];
        }
    }
    return report;
}

inline nlohmann::json to_json(const TrainReport& r) {
    return {{"loss_history", r.loss_history},
            {"grad_norm_history", r.grad_norm_history},
            {"lambda", r.lambda},
            {"stack", to_json(r.stack)}};
}

} // namespace deepis
