// Command-line driver: train, price, sweep, surface, hist, volgrid.
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "deepis/config.hpp"
#include "deepis/diffusion.hpp"
#include "deepis/drift_nets.hpp"
#include "deepis/errors.hpp"
#include "deepis/evaluation.hpp"
#include "deepis/format.hpp"
#include "deepis/training.hpp"
#include "deepis/volsurface.hpp"

namespace {

using namespace deepis;

struct Options {
    std::string config;
    std::string stack;
    std::string out;
    std::optional<std::uint64_t> seed;
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    bool plain = false;
    std::size_t dump_paths = 0;
    std::string sweep_param;
};

// Loads the config and warns when observation dates had to be moved onto grid nodes.
ExperimentConfig load(const Options& o) {
    auto c = load_config(o.config);
    if (const auto* ac = std::get_if<AutoCallSpec>(&c.payoff)) {
        if (map_to_grid_nodes(ac->dates, c.grid).snapped)
            std::fprintf(stderr, "warning: observation dates snapped to the nearest of %d grid steps\n",
                         c.grid.n_steps());
    }
    return c;
}

std::string output_dir(const Options& o, const ExperimentConfig& c) {
    const std::string dir = o.out.empty() ? c.output_dir : o.out;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

std::string join(const std::string& dir, const char* name) { return (std::filesystem::path(dir) / name).string(); }

void write_json(const std::string& path, const nlohmann::json& j) { write_text_file(path, j.dump(2) + "\n"); }

DriftStack load_stack(const std::string& path, const TimeGrid& grid) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open stack file '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("stack file '" + path + "' is not valid JSON: " + e.what());
    }
    // train_report.json embeds the stack under "stack".
    if (j.is_object() && j.contains("stack") && j.contains("loss_history")) j = j["stack"];
    DriftStack s = stack_from_json(j);
    if (!s.compatible_with(grid))
        throw ValidationError("stack '" + path + "' was trained on grid (T=" + format_real(s.maturity()) +
                              ", n_steps=" + std::to_string(s.n_steps()) + ") but the config has (T=" +
                              format_real(grid.maturity()) + ", n_steps=" + std::to_string(grid.n_steps()) + ")");
    return s;
}

// Either a stack from --stack or the null drift under --plain.
std::optional<DriftStack> stack_or_plain(const Options& o, const ExperimentConfig& c, const char* command) {
    if (o.plain) {
        if (!o.stack.empty()) throw ValidationError(std::string(command) + ": --stack and --plain are exclusive");
        return std::nullopt;
    }
    if (o.stack.empty()) throw ValidationError(std::string(command) + ": --stack is required (or pass --plain)");
    return load_stack(o.stack, c.grid);
}

int cmd_train(const Options& o) {
    auto c = load(o);
    if (o.seed) c.train.seed = *o.seed;
    c.train.threads = o.threads;
    const std::string dir = output_dir(o, c);
    const int total = c.train.n_batches * c.train.steps_per_batch;
    const int every = std::max(1, total / 20);
    const auto report = train(c.model, c.payoff, c.grid, c.drift_mode, c.train, [&](int step, double loss, double gn) {
        if (step % every == 0 || step + 1 == total)
            std::fprintf(stderr, "step %d/%d loss %.6g grad_norm %.6g\n", step + 1, total, loss, gn);
    });
    write_json(join(dir, "stack.json"), to_json(report.stack));
    write_json(join(dir, "train_report.json"), to_json(report));
    std::printf("lambda %s\nfinal loss %s\nwrote %s\n", format_real(report.lambda).c_str(),
                format_real(report.loss_history.back()).c_str(), join(dir, "stack.json").c_str());
    return 0;
}

int cmd_price(const Options& o) {
    auto c = load(o);
    if (o.seed) c.eval.seed = *o.seed;
    const auto stack = stack_or_plain(o, c, "price");
    const std::string dir = output_dir(o, c);
    if (!stack) {
        const auto s = price_plain(c.model, c.payoff, c.grid, c.eval.n_paths, c.eval.seed, o.threads);
        write_json(join(dir, "report.json"),
                   {{"price_plain", s.mean}, {"std_plain", s.std}, {"se_plain", s.se}, {"n_paths", s.n}});
        write_text_file(join(dir, "report.csv"), "price_plain,std_plain,se_plain,n_paths\n" + format_real(s.mean) +
                                                     ',' + format_real(s.std) + ',' + format_real(s.se) + ',' +
                                                     std::to_string(s.n) + '\n');
        std::printf("price_plain %s +- %s\n", format_real(s.mean).c_str(), format_real(s.se).c_str());
    } else {
        const auto r = compare(c.model, c.payoff, c.grid, &*stack, c.eval.n_paths, c.eval.seed, {o.threads, false});
        write_json(join(dir, "report.json"), to_json(r));
        write_text_file(join(dir, "report.csv"), report_csv(r));
        std::printf("price_plain %s +- %s\nprice_is %s +- %s\nstd_ratio %s\n", format_real(r.price_plain).c_str(),
                    format_real(r.se_plain).c_str(), format_real(r.price_is).c_str(), format_real(r.se_is).c_str(),
                    format_real(r.std_ratio).c_str());
    }
    if (o.dump_paths > 0) {
        const auto batch =
            stack ? simulate(c.model, c.grid, stack->policy(), o.dump_paths, c.eval.seed, streams::kEvalImportance,
                             o.threads)
                  : simulate(c.model, c.grid, NoDrift{}, o.dump_paths, c.eval.seed, streams::kEvalPlain, o.threads);
        write_text_file(join(dir, "paths.csv"), path_dump_csv(batch, c.grid, o.dump_paths));
    }
    return 0;
}

int cmd_sweep(const Options& o) {
    auto c = load(o);
    if (o.seed) c.eval.seed = *o.seed;
    SweepSpec spec = c.sweep.value_or(SweepSpec{});
    if (!o.sweep_param.empty()) spec.parameter = o.sweep_param;
    if (spec.parameter.empty()) throw ValidationError("sweep: no parameter given (config sweep.parameter or --param)");
    const auto stack = stack_or_plain(o, c, "sweep");
    const std::string dir = output_dir(o, c);
    const auto rows = sweep(c.model, c.payoff, c.grid, stack ? &*stack : nullptr, spec, c.eval.n_paths, c.eval.seed,
                            {o.threads, false});
    write_text_file(join(dir, "sweep.csv"), sweep_csv(rows));
    std::printf("wrote %zu rows to %s\n", rows.size(), join(dir, "sweep.csv").c_str());
    return 0;
}

int cmd_surface(const Options& o) {
    auto c = load(o);
    if (o.stack.empty()) throw ValidationError("surface: --stack is required");
    const auto stack = load_stack(o.stack, c.grid);
    const std::string dir = output_dir(o, c);
    write_text_file(join(dir, "surface.csv"),
                    surface_csv(surface(stack, c.grid, c.surface.x_min, c.surface.x_max, c.surface.n_x)));
    std::printf("wrote %s\n", join(dir, "surface.csv").c_str());
    return 0;
}

int cmd_hist(const Options& o) {
    auto c = load(o);
    if (o.seed) c.eval.seed = *o.seed;
    const auto stack = stack_or_plain(o, c, "hist");
    const std::string dir = output_dir(o, c);
    const auto batch = stack ? simulate(c.model, c.grid, stack->policy(), c.eval.n_paths, c.eval.seed,
                                        streams::kEvalImportance, o.threads)
                             : simulate(c.model, c.grid, NoDrift{}, c.eval.n_paths, c.eval.seed, streams::kEvalPlain,
                                        o.threads);
    std::vector<double> weights(batch.n_paths);
    std::vector<double> terminal(batch.n_paths);
    for (std::size_t p = 0; p < batch.n_paths; ++p) {
        weights[p] = std::exp(batch.log_weights[p]);
        terminal[p] = batch.terminal(p);
    }
    write_text_file(join(dir, "hist_weights.csv"), histogram_csv(histogram(weights, c.hist_bins, true)));
    const auto bins = histogram(terminal, c.hist_bins, false);
    write_text_file(join(dir, "hist_terminal.csv"), histogram_csv(bins));
    std::vector<double> xs;
    for (const auto& b : bins) xs.push_back(0.5 * (b.left + b.right));
    try {
        write_text_file(join(dir, "density.csv"), density_csv(theoretical_terminal_density(c.model, c.grid, xs)));
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "density.csv not written: %s\n", e.what());
    }
    std::printf("wrote histograms to %s\n", dir.c_str());
    return 0;
}

int cmd_volgrid(const Options& o) {
    auto c = load(o);
    const auto* lv = std::get_if<LocalVolParams>(&c.model);
    if (!lv) throw ValidationError("volgrid: requires a local_vol model");
    const std::string dir = output_dir(o, c);
    write_text_file(join(dir, "volgrid.csv"), volgrid_csv(export_surfaces(lv->chi, c.volgrid.t, c.volgrid.k)));
    std::printf("wrote %s\n", join(dir, "volgrid.csv").c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo pricing with learned importance-sampling drifts"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub, bool stack, bool plain, bool seed) {
        sub->add_option("--config", o.config, "experiment JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "output directory (overrides output_dir)");
        sub->add_option("--threads", o.threads, "worker threads; results do not depend on it")
            ->check(CLI::Range(1u, 1024u));
        if (stack) sub->add_option("--stack", o.stack, "trained stack.json or train_report.json");
        if (plain) sub->add_flag("--plain", o.plain, "plain Monte Carlo only, no stack");
        if (seed) sub->add_option("--seed", o.seed, "override the seed of the config");
    };

    auto* train = app.add_subcommand("train", "train the drift networks");
    common(train, false, false, true);
    auto* price = app.add_subcommand("price", "plain versus importance-sampled price");
    common(price, true, true, true);
    price->add_option("--dump-paths", o.dump_paths, "also write the first N simulated paths to paths.csv");
    auto* sweep_cmd = app.add_subcommand("sweep", "robustness sweep with a frozen stack");
    common(sweep_cmd, true, true, true);
    sweep_cmd->add_option("--param", o.sweep_param, "model parameter to sweep (overrides sweep.parameter)");
    auto* surface_cmd = app.add_subcommand("surface", "drift surface of a trained stack");
    common(surface_cmd, true, false, false);
    auto* hist = app.add_subcommand("hist", "histograms of weights and terminal values");
    common(hist, true, true, true);
    auto* volgrid = app.add_subcommand("volgrid", "implied and local volatility grid");
    common(volgrid, false, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*train) return cmd_train(o);
        if (*price) return cmd_price(o);
        if (*sweep_cmd) return cmd_sweep(o);
        if (*surface_cmd) return cmd_surface(o);
        if (*hist) return cmd_hist(o);
        if (*volgrid) return cmd_volgrid(o);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    }
    return 2;
}
