#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>

namespace dfb {

// Label space of a classifier. When extended, index n (0-based) is the
// deferral class and real labels live in [0, n).
struct LabelSpace {
    int n = 2;
    bool extended = false;

    int deferral_index() const noexcept { return n; }
    int output_width() const noexcept { return extended ? n + 1 : n; }
};

// Weight on the plain cross-entropy term of the one-stage surrogate; the
// remaining 1 - alpha rewards putting mass on {target, defer}.
struct OneStageCost {
    double alpha = 1.0;
    explicit OneStageCost(double a = 1.0);
};

// Weight on the deferral-class log-likelihood of the two-stage surrogate.
struct TwoStageCost {
    double beta = 0.0;
    explicit TwoStageCost(double b = 0.0);
};

struct CrossEntropyLoss {};

using LossSpec = std::variant<CrossEntropyLoss, OneStageCost, TwoStageCost>;

std::string describe(const LossSpec& spec);

// Loss values. `logits` is one row; `target` is a 0-based real class.
// For the deferral losses the last logit belongs to the deferral class.
double loss_cross_entropy(std::span<const double> logits, int target);
double loss_one_stage(std::span<const double> logits, int target, OneStageCost cost);
double loss_two_stage(std::span<const double> logits, int target, TwoStageCost cost);

// Gradients with respect to the logits; `grad` must have the logits' length.
void grad_cross_entropy(std::span<const double> logits, int target, std::span<double> grad);
void grad_one_stage(std::span<const double> logits, int target, OneStageCost cost,
                    std::span<double> grad);
void grad_two_stage(std::span<const double> logits, int target, TwoStageCost cost,
                    std::span<double> grad);

double loss_value(const LossSpec& spec, std::span<const double> logits, int target);

// Computes the loss and writes its logit gradient into `grad`.
double loss_and_grad(const LossSpec& spec, std::span<const double> logits, int target,
                     std::span<double> grad);

// True when the loss expects a trailing deferral logit.
bool uses_deferral_class(const LossSpec& spec) noexcept;

// Numerically stable log(sum(exp(x))).
double log_sum_exp(std::span<const double> x);

}  // namespace dfb
