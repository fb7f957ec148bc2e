#pragma once

// JSON experiment configuration. Every violation is reported as a
// ValidationError naming the offending field by its dotted path.
// Keys starting with '_' are treated as comments and ignored.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepis/diffusion.hpp"
#include "deepis/drift_nets.hpp"
#include "deepis/errors.hpp"
#include "deepis/evaluation.hpp"
#include "deepis/payoff.hpp"
#include "deepis/training.hpp"

namespace deepis {

struct EvalConfig {
    std::size_t n_paths = 100000;
    std::uint64_t seed = 0;
};

struct SurfaceConfig {
    double x_min = 0.5;
    double x_max = 1.5;
    int n_x = 21;
};

struct VolGridConfig {
    std::vector<double> t = {0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<double> k = {-0.5, -0.25, 0.0, 0.25, 0.5};
};

struct ExperimentConfig {
    Model model;
    TimeGrid grid{1.0, 6};
    PayoffSpec payoff;
    DriftMode drift_mode = DriftMode::Full;
    TrainConfig train;
    EvalConfig eval;
    std::optional<SweepSpec> sweep;
    int hist_bins = 50;
    SurfaceConfig surface;
    VolGridConfig volgrid;
    std::string output_dir = ".";
};

namespace config_detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        const std::string& key = it.key();
        if (!key.empty() && key[0] == '_') continue;
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ValidationError(path + "." + key + ": unknown field");
    }
}

inline const json& object(const json& parent, const std::string& key, const std::string& path) {
    const auto it = parent.find(key);
    if (it == parent.end()) throw ValidationError(path + ": missing section");
    if (!it->is_object()) throw ValidationError(path + ": must be an object");
    return *it;
}

inline double number(const json& obj, const char* key, const std::string& prefix) {
    const std::string path = prefix + "." + key;
    const auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(path + ": missing field");
    if (!it->is_number()) throw ValidationError(path + ": must be a number");
    return it->get<double>();
}

inline double number_or(const json& obj, const char* key, const std::string& prefix, double fallback) {
    return obj.contains(key) ? number(obj, key, prefix) : fallback;
}

inline long long integer(const json& obj, const char* key, const std::string& prefix) {
    const std::string path = prefix + "." + key;
    const auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(path + ": missing field");
    if (!it->is_number_integer()) throw ValidationError(path + ": must be an integer");
    return it->get<long long>();
}

inline std::uint64_t seed(const json& obj, const std::string& prefix) {
    const std::string path = prefix + ".seed";
    const auto it = obj.find("seed");
    if (it == obj.end()) throw ValidationError(path + ": missing field (seeds are mandatory)");
    if (!it->is_number_unsigned()) throw ValidationError(path + ": must be a non-negative integer");
    return it->get<std::uint64_t>();
}

inline std::string text(const json& obj, const char* key, const std::string& prefix) {
    const std::string path = prefix + "." + key;
    const auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(path + ": missing field");
    if (!it->is_string()) throw ValidationError(path + ": must be a string");
    return it->get<std::string>();
}

inline std::vector<double> numbers(const json& obj, const char* key, const std::string& prefix) {
    const std::string path = prefix + "." + key;
    const auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(path + ": missing field");
    if (!it->is_array()) throw ValidationError(path + ": must be an array of numbers");
    std::vector<double> out;
    for (const auto& v : *it) {
        if (!v.is_number()) throw ValidationError(path + ": must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

// Re-throws a module validation message with the config section prepended.
template <class Fn>
void checked(const std::string& section, Fn&& fn) {
    try {
        fn();
    } catch (const ValidationError& e) {
        throw ValidationError(section + ": " + e.what());
    }
}

inline Model parse_model(const json& root) {
    const json& m = object(root, "model", "model");
    const std::string type = text(m, "type", "model");
    if (type == "bachelier") {
        reject_unknown(m, "model", {"type", "x0", "sigma"});
        BachelierParams p{number(m, "x0", "model"), number(m, "sigma", "model")};
        validate(p);
        return p;
    }
    if (type == "local_vol") {
        reject_unknown(m, "model", {"type", "x0", "svi"});
        const json& s = object(m, "svi", "model.svi");
        reject_unknown(s, "model.svi", {"a", "b", "rho", "m", "sigma"});
        LocalVolParams p;
        p.x0 = number(m, "x0", "model");
        p.chi = {number(s, "a", "model.svi"), number(s, "b", "model.svi"), number(s, "rho", "model.svi"),
                 number(s, "m", "model.svi"), number(s, "sigma", "model.svi")};
        checked("model.svi", [&] { validate(p.chi); });
        validate(p);
        return p;
    }
    throw ValidationError("model.type: expected \"bachelier\" or \"local_vol\", got \"" + type + "\"");
}

inline TimeGrid parse_grid(const json& root) {
    const json& g = object(root, "grid", "grid");
    reject_unknown(g, "grid", {"T", "n_steps"});
    const long long n = integer(g, "n_steps", "grid");
    detail::require(n >= 1 && n <= 100000, "grid.n_steps must be in [1, 100000]");
    return TimeGrid(number(g, "T", "grid"), static_cast<int>(n));
}

inline PayoffSpec parse_payoff(const json& root, const TimeGrid& grid) {
    const json& p = object(root, "payoff", "payoff");
    const std::string type = text(p, "type", "payoff");
    PayoffSpec spec;
    if (type == "call") {
        reject_unknown(p, "payoff", {"type", "K"});
        spec = CallSpec{number(p, "K", "payoff")};
    } else if (type == "calls_puts") {
        reject_unknown(p, "payoff", {"type", "N1", "K1", "N2", "K2"});
        spec = CallsPutsSpec{number(p, "N1", "payoff"), number(p, "K1", "payoff"), number(p, "N2", "payoff"),
                             number(p, "K2", "payoff")};
    } else if (type == "autocall") {
        reject_unknown(p, "payoff", {"type", "dates", "barriers", "smoothings", "coupons", "K_PDI", "S_PDI"});
        AutoCallSpec ac;
        ac.dates = numbers(p, "dates", "payoff");
        ac.barriers = numbers(p, "barriers", "payoff");
        ac.smoothings = numbers(p, "smoothings", "payoff");
        ac.coupons = numbers(p, "coupons", "payoff");
        ac.pdi_strike = number_or(p, "K_PDI", "payoff", ac.pdi_strike);
        ac.pdi_smoothing = number_or(p, "S_PDI", "payoff", ac.pdi_smoothing);
        spec = ac;
    } else {
        throw ValidationError("payoff.type: expected \"call\", \"calls_puts\" or \"autocall\", got \"" + type + "\"");
    }
    validate(spec, grid);
    return spec;
}

inline TrainConfig parse_train(const json& root) {
    const json& t = object(root, "train", "train");
    reject_unknown(t, "train",
                   {"n_batches", "steps_per_batch", "batch_size", "learning_rate", "lambda", "lambda_base",
                    "constraint_C", "seed"});
    TrainConfig c;
    c.n_batches = static_cast<int>(integer(t, "n_batches", "train"));
    c.steps_per_batch = static_cast<int>(integer(t, "steps_per_batch", "train"));
    c.batch_size = static_cast<int>(integer(t, "batch_size", "train"));
    c.learning_rate = number(t, "learning_rate", "train");
    const auto lam = t.find("lambda");
    if (lam == t.end()) throw ValidationError("train.lambda: missing field (number or \"auto\")");
    if (lam->is_string() && lam->get<std::string>() == "auto")
        c.lambda = std::nullopt;
    else if (lam->is_number())
        c.lambda = lam->get<double>();
    else
        throw ValidationError("train.lambda: must be a number or \"auto\"");
    c.lambda_base = number_or(t, "lambda_base", "train", c.lambda_base);
    c.constraint_c = number_or(t, "constraint_C", "train", c.constraint_c);
    c.seed = seed(t, "train");
    validate(c);
    return c;
}

inline EvalConfig parse_eval(const json& root) {
    const json& e = object(root, "eval", "eval");
    reject_unknown(e, "eval", {"n_paths", "seed"});
    const long long n = integer(e, "n_paths", "eval");
    detail::require(n >= 2, "eval.n_paths must be >= 2");
    return {static_cast<std::size_t>(n), seed(e, "eval")};
}

} // namespace config_detail

inline ExperimentConfig parse_config(const nlohmann::json& root) {
    using namespace config_detail;
    if (!root.is_object()) throw ValidationError("config: top level must be a JSON object");
    reject_unknown(root, "config",
                   {"model", "grid", "payoff", "drift_mode", "train", "eval", "sweep", "hist", "surface", "volgrid",
                    "output_dir"});
    ExperimentConfig c;
    c.model = parse_model(root);
    c.grid = parse_grid(root);
    c.payoff = parse_payoff(root, c.grid);
    checked("drift_mode", [&] { c.drift_mode = parse_drift_mode(text(root, "drift_mode", "config")); });
    c.train = parse_train(root);
    c.eval = parse_eval(root);
    if (root.contains("sweep")) {
        const json& s = object(root, "sweep", "sweep");
        reject_unknown(s, "sweep", {"parameter", "relative"});
        SweepSpec spec;
        spec.parameter = text(s, "parameter", "sweep");
        if (s.contains("relative")) spec.relative = numbers(s, "relative", "sweep");
        detail::require(!spec.relative.empty(), "sweep.relative must be non-empty");
        for (double r : spec.relative) detail::require(r > -1.0, "sweep.relative entries must be > -1");
        perturb(c.model, spec.parameter, 0.0);
        c.sweep = spec;
    }
    if (root.contains("hist")) {
        const json& h = object(root, "hist", "hist");
        reject_unknown(h, "hist", {"n_bins"});
        const long long n = integer(h, "n_bins", "hist");
        detail::require(n >= 1 && n <= 1000000, "hist.n_bins must be in [1, 1000000]");
        c.hist_bins = static_cast<int>(n);
    }
    if (root.contains("surface")) {
        const json& s = object(root, "surface", "surface");
        reject_unknown(s, "surface", {"x_min", "x_max", "n_x"});
        c.surface.x_min = number(s, "x_min", "surface");
        c.surface.x_max = number(s, "x_max", "surface");
        const long long n = integer(s, "n_x", "surface");
        detail::require(n >= 1 && n <= 1000000, "surface.n_x must be in [1, 1000000]");
        c.surface.n_x = static_cast<int>(n);
        detail::require(c.surface.x_max >= c.surface.x_min, "surface.x_max must be >= surface.x_min");
    }
    if (root.contains("volgrid")) {
        const json& v = object(root, "volgrid", "volgrid");
        reject_unknown(v, "volgrid", {"t", "k"});
        c.volgrid.t = numbers(v, "t", "volgrid");
        c.volgrid.k = numbers(v, "k", "volgrid");
    }
    if (root.contains("output_dir")) c.output_dir = text(root, "output_dir", "config");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(root);
}

} // namespace deepis
