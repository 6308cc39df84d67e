#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace dfb {

enum class Decision : std::int8_t { Negative = 0, Positive = 1, Defer = -1 };

inline Decision decide_class(double positive_probability) {
    return positive_probability >= 0.5 ? Decision::Positive : Decision::Negative;
}

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

// Counts over non-deferred decisions only.
ConfusionCounts confusion(std::span<const Decision> decisions, std::span<const int> labels);

// (sensitivity + specificity) / 2, or nullopt when a class is absent.
std::optional<double> balanced_accuracy(const ConfusionCounts& c);

// Per-class accuracy: class 0 -> specificity, class 1 -> sensitivity.
std::optional<double> class_accuracy(const ConfusionCounts& c, int cls);

// Mann-Whitney AUC with half credit for ties; nullopt for single-class labels.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal area under the empirical ROC for FPR in [0, max_fpr], divided
// by max_fpr. nullopt for single-class labels.
std::optional<double> pauc(std::span<const double> scores, std::span<const int> labels, double max_fpr = 0.1);

enum class ParamKind { Threshold, Alpha, Beta };

std::string to_string(ParamKind k);
ParamKind parse_param_kind(const std::string& s);

struct CurvePoint {
    double deferral_rate = 0.0;
    std::optional<double> bacc;  // absent iff everything was deferred or a class is missing
    double positive_deferred_fraction = 0.0;
    std::optional<double> acc0;
    std::optional<double> acc1;
    std::size_t deferred = 0;
    std::size_t evaluated = 0;

    // Provenance, filled by the caller.
    std::string method;
    std::string condition;
    int level = 0;
    std::uint64_t seed = 0;
    ParamKind param_kind = ParamKind::Threshold;
    double param_value = 0.0;
};

// Throws ShapeError on empty or mismatched input.
CurvePoint deferral_curve_point(std::span<const Decision> decisions, std::span<const int> labels);

}  // namespace dfb
