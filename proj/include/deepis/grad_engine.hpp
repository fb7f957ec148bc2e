#pragma once

// Scalar reverse-mode differentiation on an append-only tape.
//
// Every recorded node stores its operand indices together with the local
// partial derivatives evaluated during the forward sweep, so the reverse
// sweep is one generic loop: adj[operand] += adj[node] * partial.
// Operands always precede the node that uses them.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepis/errors.hpp"

namespace deepis::ad {

enum class OpKind : std::uint8_t {
    Input,
    Parameter,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Square,
    Sqrt,
    Relu,
    Affine,
    Dot,
    Sum,
    Mean,
};

inline const char* op_name(OpKind op) {
    switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "neg";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "ln";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Relu: return "relu";
    case OpKind::Affine: return "affine";
    case OpKind::Dot: return "dot";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    }
    return "?";
}

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
class Var {
public:
    Var() = default;

    double value() const { return value_; }
    std::uint32_t index() const { return index_; }
    Tape* tape() const { return tape_; }

private:
    friend class Tape;
    Var(Tape* tape, std::uint32_t index, double value) : tape_(tape), index_(index), value_(value) {}

    Tape* tape_ = nullptr;
    std::uint32_t index_ = 0;
    double value_ = 0.0;
};

// d(loss)/d(parameter) for every parameter registered on the tape, in
// registration order.
struct GradientMap {
    std::vector<std::uint32_t> nodes;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }

    double at(const Var& parameter) const {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i] == parameter.index()) return values[i];
        throw ValidationError("gradient requested for node " + std::to_string(parameter.index()) +
                              " which is not a registered parameter");
    }
};

class Tape {
public:
    struct Node {
        OpKind op;
        std::uint32_t first;  // offset into operands/partials
        std::uint32_t count;
        double value;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void reserve(std::size_t nodes, std::size_t operands) {
        nodes_.reserve(nodes);
        operands_.reserve(operands);
        partials_.reserve(operands);
    }

    void clear() {
        nodes_.clear();
        operands_.clear();
        partials_.clear();
        adjoints_.clear();
        parameters_.clear();
    }

    std::size_t size() const { return nodes_.size(); }
    const Node& node(std::size_t i) const { return nodes_[i]; }
    std::span<const std::uint32_t> operands(const Node& n) const { return {operands_.data() + n.first, n.count}; }
    std::span<const std::uint32_t> parameters() const { return parameters_; }

    // Leaf that is not differentiated against (inputs, lifted constants).
    Var input(double value) { return leaf(OpKind::Input, value); }

    // Leaf reported by backward().
    Var parameter(double value) {
        Var v = leaf(OpKind::Parameter, value);
        parameters_.push_back(v.index_);
        return v;
    }

    // Incremental node construction used by the operator overloads.
    void push_operand(const Var& v, double partial) {
        check_owner(v);
        operands_.push_back(v.index_);
        partials_.push_back(partial);
    }

    Var finish_node(OpKind op, std::uint32_t first, double value) {
        const auto index = static_cast<std::uint32_t>(nodes_.size());
        if (!std::isfinite(value)) {
            operands_.resize(first);
            partials_.resize(first);
            throw NumericalError(std::string("non-finite value in ") + op_name(op) + " node " + std::to_string(index));
        }
        nodes_.push_back(Node{op, first, static_cast<std::uint32_t>(operands_.size()) - first, value});
        return Var(this, index, value);
    }

    std::uint32_t operand_cursor() const { return static_cast<std::uint32_t>(operands_.size()); }

    // Reverse sweep from several outputs at once: adjoint(outputs[i]) starts at seeds[i].
    void propagate(std::span<const Var> outputs, std::span<const double> seeds) {
        if (outputs.size() != seeds.size()) throw ValidationError("propagate: outputs/seeds length mismatch");
        adjoints_.assign(nodes_.size(), 0.0);
        std::size_t top = 0;
        for (std::size_t i = 0; i < outputs.size(); ++i) {
            if (outputs[i].tape_ != this) throw ValidationError("backward: output node does not belong to this tape");
            adjoints_[outputs[i].index_] += seeds[i];
            top = std::max<std::size_t>(top, outputs[i].index_ + 1);
        }
        for (std::size_t i = top; i-- > 0;) {
            const double bar = adjoints_[i];
            if (bar == 0.0) continue;
            const Node& n = nodes_[i];
            const std::uint32_t end = n.first + n.count;
            for (std::uint32_t j = n.first; j < end; ++j) adjoints_[operands_[j]] += bar * partials_[j];
        }
    }

    GradientMap backward(const Var& loss) {
        const double seed = 1.0;
        propagate(std::span<const Var>(&loss, 1), std::span<const double>(&seed, 1));
        return gradients();
    }

    // Parameter gradients after the last propagate().
    GradientMap gradients() const {
        GradientMap g;
        g.nodes = parameters_;
        g.values.reserve(parameters_.size());
        for (auto p : parameters_) g.values.push_back(p < adjoints_.size() ? adjoints_[p] : 0.0);
        return g;
    }

    double adjoint(const Var& v) const {
        check_owner(v);
        return v.index_ < adjoints_.size() ? adjoints_[v.index_] : 0.0;
    }

private:
    Var leaf(OpKind op, double value) { return finish_node(op, operand_cursor(), value); }

    void check_owner(const Var& v) const {
        if (v.tape_ != this) throw ValidationError("operand node does not belong to this tape");
    }

    std::vector<Node> nodes_;
    std::vector<std::uint32_t> operands_;
    std::vector<double> partials_;
    std::vector<double> adjoints_;
    std::vector<std::uint32_t> parameters_;
};

namespace detail {

inline Tape& tape_of(const Var& v) {
    if (v.tape() == nullptr) throw ValidationError("operation on a detached Var");
    return *v.tape();
}

inline Var unary(OpKind op, const Var& x, double value, double partial) {
    Tape& t = tape_of(x);
    const auto first = t.operand_cursor();
    t.push_operand(x, partial);
    return t.finish_node(op, first, value);
}

inline Var binary(OpKind op, const Var& x, const Var& y, double value, double dx, double dy) {
    Tape& t = tape_of(x);
    const auto first = t.operand_cursor();
    t.push_operand(x, dx);
    t.push_operand(y, dy);
    return t.finish_node(op, first, value);
}

[[noreturn]] inline void domain_error(OpKind op, const Tape& t, double x) {
    throw NumericalError(std::string("domain violation in ") + op_name(op) + " node " + std::to_string(t.size()) +
                         " (operand " + std::to_string(x) + ")");
}

} // namespace detail

inline Var operator+(const Var& x, const Var& y) { return detail::binary(OpKind::Add, x, y, x.value() + y.value(), 1.0, 1.0); }
inline Var operator-(const Var& x, const Var& y) { return detail::binary(OpKind::Sub, x, y, x.value() - y.value(), 1.0, -1.0); }
inline Var operator*(const Var& x, const Var& y) { return detail::binary(OpKind::Mul, x, y, x.value() * y.value(), y.value(), x.value()); }

inline Var operator/(const Var& x, const Var& y) {
    if (y.value() == 0.0) detail::domain_error(OpKind::Div, detail::tape_of(x), y.value());
    const double inv = 1.0 / y.value();
    const double q = x.value() / y.value();
    return detail::binary(OpKind::Div, x, y, q, inv, -q * inv);
}

inline Var operator-(const Var& x) { return detail::unary(OpKind::Neg, x, -x.value(), -1.0); }

inline Var operator+(const Var& x, double c) { return detail::unary(OpKind::Add, x, x.value() + c, 1.0); }
inline Var operator+(double c, const Var& x) { return detail::unary(OpKind::Add, x, c + x.value(), 1.0); }
inline Var operator-(const Var& x, double c) { return detail::unary(OpKind::Sub, x, x.value() - c, 1.0); }
inline Var operator-(double c, const Var& x) { return detail::unary(OpKind::Sub, x, c - x.value(), -1.0); }
inline Var operator*(const Var& x, double c) { return detail::unary(OpKind::Mul, x, x.value() * c, c); }
inline Var operator*(double c, const Var& x) { return detail::unary(OpKind::Mul, x, c * x.value(), c); }

inline Var operator/(const Var& x, double c) {
    if (c == 0.0) detail::domain_error(OpKind::Div, detail::tape_of(x), c);
    return detail::unary(OpKind::Div, x, x.value() / c, 1.0 / c);
}

inline Var operator/(double c, const Var& x) {
    if (x.value() == 0.0) detail::domain_error(OpKind::Div, detail::tape_of(x), x.value());
    const double q = c / x.value();
    return detail::unary(OpKind::Div, x, q, -q / x.value());
}

inline Var exp(const Var& x) {
    const double e = std::exp(x.value());
    return detail::unary(OpKind::Exp, x, e, e);
}

inline Var log(const Var& x) {
    if (!(x.value() > 0.0)) detail::domain_error(OpKind::Log, detail::tape_of(x), x.value());
    return detail::unary(OpKind::Log, x, std::log(x.value()), 1.0 / x.value());
}

inline Var square(const Var& x) { return detail::unary(OpKind::Square, x, x.value() * x.value(), 2.0 * x.value()); }

// sqrt has an unbounded derivative at 0, so the tape requires a strictly positive operand.
inline Var sqrt(const Var& x) {
    if (!(x.value() > 0.0)) detail::domain_error(OpKind::Sqrt, detail::tape_of(x), x.value());
    const double r = std::sqrt(x.value());
    return detail::unary(OpKind::Sqrt, x, r, 0.5 / r);
}

// max(x, 0); the subgradient at exactly 0 is 0. Also serves as the payoff positive part.
inline Var relu(const Var& x) {
    const bool active = x.value() > 0.0;
    return detail::unary(OpKind::Relu, x, active ? x.value() : 0.0, active ? 1.0 : 0.0);
}

// c0 + sum_i coeffs[i] * xs[i]
inline Var affine(std::span<const double> coeffs, std::span<const Var> xs, double c0 = 0.0) {
    if (coeffs.size() != xs.size() || xs.empty()) throw ValidationError("affine: coefficient/operand size mismatch");
    Tape& t = detail::tape_of(xs[0]);
    const auto first = t.operand_cursor();
    double acc = c0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        acc += coeffs[i] * xs[i].value();
        t.push_operand(xs[i], coeffs[i]);
    }
    return t.finish_node(OpKind::Affine, first, acc);
}

// bias + sum_i weights[i * stride] * xs[i], with weights, inputs and bias all differentiable.
inline Var dot(const Var* weights, std::size_t stride, std::span<const Var> xs, const Var& bias) {
    Tape& t = detail::tape_of(bias);
    const auto first = t.operand_cursor();
    double acc = bias.value();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Var& w = weights[i * stride];
        acc += w.value() * xs[i].value();
        t.push_operand(xs[i], w.value());
        t.push_operand(w, xs[i].value());
    }
    t.push_operand(bias, 1.0);
    return t.finish_node(OpKind::Dot, first, acc);
}

// sum_i weights[i * stride] * xs[i], no bias term.
inline Var dot(const Var* weights, std::size_t stride, std::span<const Var> xs) {
    if (xs.empty()) throw ValidationError("dot: empty operand list");
    Tape& t = detail::tape_of(xs[0]);
    const auto first = t.operand_cursor();
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const Var& w = weights[i * stride];
        acc += w.value() * xs[i].value();
        t.push_operand(xs[i], w.value());
        t.push_operand(w, xs[i].value());
    }
    return t.finish_node(OpKind::Dot, first, acc);
}

inline Var sum(std::span<const Var> xs) {
    if (xs.empty()) throw ValidationError("sum: empty operand list");
    Tape& t = detail::tape_of(xs[0]);
    const auto first = t.operand_cursor();
    double acc = 0.0;
    for (const auto& x : xs) {
        acc += x.value();
        t.push_operand(x, 1.0);
    }
    return t.finish_node(OpKind::Sum, first, acc);
}

inline Var mean(std::span<const Var> xs) {
    if (xs.empty()) throw ValidationError("mean: empty operand list");
    Tape& t = detail::tape_of(xs[0]);
    const auto first = t.operand_cursor();
    const double w = 1.0 / static_cast<double>(xs.size());
    double acc = 0.0;
    for (const auto& x : xs) {
        acc += x.value();
        t.push_operand(x, w);
    }
    return t.finish_node(OpKind::Mean, first, acc * w);
}

} // namespace deepis::ad

namespace deepis {

using ad::Var;

// Scalar-generic helpers so the simulation, payoff and network code can be
// written once for double (evaluation) and Var (training).
inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.value(); }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double square(double x) { return x * x; }

// A constant of the same scalar kind as `like` (a fresh input leaf for Var).
inline double lift(double /*like*/, double v) { return v; }
inline Var lift(const Var& like, double v) { return ad::detail::tape_of(like).input(v); }

inline double dot(const double* weights, std::size_t stride, std::span<const double> xs, const double& bias) {
    double acc = bias;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += weights[i * stride] * xs[i];
    return acc;
}

inline double dot(const double* weights, std::size_t stride, std::span<const double> xs) {
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) acc += weights[i * stride] * xs[i];
    return acc;
}

using ad::dot;
using ad::relu;
using ad::square;

} // namespace deepis
