#include "dfb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "dfb/error.hpp"

namespace dfb {

OneStageCost::OneStageCost(double a) : alpha(a) {
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("one-stage alpha must lie in (0, 1], got " + std::to_string(a));
}

TwoStageCost::TwoStageCost(double b) : beta(b) {
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("two-stage beta must be finite and >= 0, got " + std::to_string(b));
}

std::string describe(const LossSpec& spec) {
    return std::visit(
        [](const auto& s) -> std::string {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, CrossEntropyLoss>) return "cross_entropy";
            else if constexpr (std::is_same_v<T, OneStageCost>) return "one_stage(alpha=" + std::to_string(s.alpha) + ")";
            else return "two_stage(beta=" + std::to_string(s.beta) + ")";
        },
        spec);
}

bool uses_deferral_class(const LossSpec& spec) noexcept {
    return !std::holds_alternative<CrossEntropyLoss>(spec);
}

double log_sum_exp(std::span<const double> x) {
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

namespace {

void check_logits(std::span<const double> logits) {
    for (double v : logits)
        if (!std::isfinite(v)) throw NumericError("non-finite logit");
}

void check_plain(std::span<const double> logits, int target) {
    if (logits.size() < 2) throw ShapeError("need at least two logits");
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
        throw LabelError("target " + std::to_string(target) + " outside label space of width " +
                         std::to_string(logits.size()));
    check_logits(logits);
}

void check_deferral(std::span<const double> logits, int target) {
    if (logits.size() < 3) throw ShapeError("deferral losses need n + 1 >= 3 logits");
    const int defer = static_cast<int>(logits.size()) - 1;
    if (target == defer) throw LabelError("target equals the deferral class");
    if (target < 0 || target > defer) throw LabelError("target " + std::to_string(target) + " outside real classes");
    check_logits(logits);
}

// Softmax of `logits` written into `p`, returns log-sum-exp.
double softmax_into(std::span<const double> logits, std::span<double> p) {
    const double lse = log_sum_exp(logits);
    for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
    return lse;
}

// log(e^a + e^b)
double log_add_exp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

double loss_cross_entropy(std::span<const double> logits, int target) {
    check_plain(logits, target);
    return log_sum_exp(logits) - logits[target];
}

double loss_one_stage(std::span<const double> logits, int target, OneStageCost cost) {
    check_deferral(logits, target);
    const std::size_t d = logits.size() - 1;
    const double lse = log_sum_exp(logits);
    const double ce = lse - logits[target];
    const double pair = lse - log_add_exp(logits[target], logits[d]);
    return cost.alpha * ce + (1.0 - cost.alpha) * pair;
}

double loss_two_stage(std::span<const double> logits, int target, TwoStageCost cost) {
    check_deferral(logits, target);
    const std::size_t d = logits.size() - 1;
    const double lse = log_sum_exp(logits);
    return (lse - logits[target]) + cost.beta * (lse - logits[d]);
}

void grad_cross_entropy(std::span<const double> logits, int target, std::span<double> grad) {
    check_plain(logits, target);
    if (grad.size() != logits.size()) throw ShapeError("gradient buffer length mismatch");
    softmax_into(logits, grad);
    grad[target] -= 1.0;
}

void grad_one_stage(std::span<const double> logits, int target, OneStageCost cost, std::span<double> grad) {
    check_deferral(logits, target);
    if (grad.size() != logits.size()) throw ShapeError("gradient buffer length mismatch");
    const std::size_t d = logits.size() - 1;
    softmax_into(logits, grad);
    // Both terms contribute softmax; the indicator parts differ.
    const double pair = log_add_exp(logits[target], logits[d]);
    const double q_target = std::exp(logits[target] - pair);
    const double q_defer = std::exp(logits[d] - pair);
    const double a = cost.alpha;
    grad[target] -= a + (1.0 - a) * q_target;
    grad[d] -= (1.0 - a) * q_defer;
}

void grad_two_stage(std::span<const double> logits, int target, TwoStageCost cost, std::span<double> grad) {
    check_deferral(logits, target);
    if (grad.size() != logits.size()) throw ShapeError("gradient buffer length mismatch");
    const std::size_t d = logits.size() - 1;
    softmax_into(logits, grad);
    for (double& g : grad) g *= 1.0 + cost.beta;
    grad[target] -= 1.0;
    grad[d] -= cost.beta;
}

double loss_value(const LossSpec& spec, std::span<const double> logits, int target) {
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, CrossEntropyLoss>) return loss_cross_entropy(logits, target);
            else if constexpr (std::is_same_v<T, OneStageCost>) return loss_one_stage(logits, target, s);
            else return loss_two_stage(logits, target, s);
        },
        spec);
}

double loss_and_grad(const LossSpec& spec, std::span<const double> logits, int target, std::span<double> grad) {
    return std::visit(
        [&](const auto& s) -> double {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, CrossEntropyLoss>) {
                grad_cross_entropy(logits, target, grad);
                return log_sum_exp(logits) - logits[target];
            } else if constexpr (std::is_same_v<T, OneStageCost>) {
                grad_one_stage(logits, target, s, grad);
                return loss_one_stage(logits, target, s);
            } else {
                grad_two_stage(logits, target, s, grad);
                return loss_two_stage(logits, target, s);
            }
        },
        spec);
}

}  // namespace dfb
