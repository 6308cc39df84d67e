#include "dfb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dfb/error.hpp"

namespace dfb {

ConfusionCounts confusion(std::span<const Decision> decisions, std::span<const int> labels) {
    if (decisions.size() != labels.size()) throw ShapeError("decisions/labels length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (decisions[i] == Decision::Defer) continue;
        const bool pred = decisions[i] == Decision::Positive;
        if (labels[i] == 1) pred ? ++c.tp : ++c.fn;
        else pred ? ++c.fp : ++c.tn;
    }
    return c;
}

std::optional<double> class_accuracy(const ConfusionCounts& c, int cls) {
    if (cls == 1) {
        if (c.tp + c.fn == 0) return std::nullopt;
        return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    }
    if (c.tn + c.fp == 0) return std::nullopt;
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

std::optional<double> balanced_accuracy(const ConfusionCounts& c) {
    const auto sens = class_accuracy(c, 1);
    const auto spec = class_accuracy(c, 0);
    if (!sens || !spec) return std::nullopt;
    return 0.5 * (*sens + *spec);
}

namespace {

void check_scores(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores/labels length mismatch");
    for (double s : scores)
        if (std::isnan(s)) throw NumericError("NaN score");
}

// Indices sorted by descending score.
std::vector<std::size_t> order_desc(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
    check_scores(scores, labels);
    // Average ranks over tie groups (ascending), then Mann-Whitney U.
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[idx[k]] == 1) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double np = static_cast<double>(n_pos);
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(n_neg));
}

std::optional<double> pauc(std::span<const double> scores, std::span<const int> labels, double max_fpr) {
    check_scores(scores, labels);
    if (!(max_fpr > 0.0 && max_fpr <= 1.0)) throw DomainError("max_fpr must lie in (0, 1]");
    const std::size_t n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    const auto idx = order_desc(scores);
    double area = 0.0;
    double fpr_prev = 0.0, tpr_prev = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            labels[idx[j]] == 1 ? ++tp : ++fp;
            ++j;
        }
        i = j;
        const double fpr = static_cast<double>(fp) / static_cast<double>(n_neg);
        const double tpr = static_cast<double>(tp) / static_cast<double>(n_pos);
        if (fpr >= max_fpr) {
            // Interpolate the segment up to the band edge.
            if (fpr > fpr_prev) {
                const double t = (max_fpr - fpr_prev) / (fpr - fpr_prev);
                const double tpr_edge = tpr_prev + t * (tpr - tpr_prev);
                area += 0.5 * (max_fpr - fpr_prev) * (tpr_prev + tpr_edge);
            }
            return area / max_fpr;
        }
        area += 0.5 * (fpr - fpr_prev) * (tpr_prev + tpr);
        fpr_prev = fpr;
        tpr_prev = tpr;
    }
    return area / max_fpr;  // unreachable in practice: the final ROC point has fpr = 1
}

std::string to_string(ParamKind k) {
    switch (k) {
        case ParamKind::Threshold: return "threshold";
        case ParamKind::Alpha: return "alpha";
        case ParamKind::Beta: return "beta";
    }
    return "threshold";
}

ParamKind parse_param_kind(const std::string& s) {
    if (s == "threshold") return ParamKind::Threshold;
    if (s == "alpha") return ParamKind::Alpha;
    if (s == "beta") return ParamKind::Beta;
    throw ParseError("unknown param_kind '" + s + "'");
}

CurvePoint deferral_curve_point(std::span<const Decision> decisions, std::span<const int> labels) {
    if (decisions.empty()) throw ShapeError("empty decision set");
    if (decisions.size() != labels.size()) throw ShapeError("decisions/labels length mismatch");
    CurvePoint p;
    std::size_t pos_total = 0, pos_deferred = 0;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const bool d = decisions[i] == Decision::Defer;
        if (d) ++p.deferred;
        if (labels[i] == 1) {
            ++pos_total;
            if (d) ++pos_deferred;
        }
    }
    p.evaluated = decisions.size() - p.deferred;
    p.deferral_rate = static_cast<double>(p.deferred) / static_cast<double>(decisions.size());
    p.positive_deferred_fraction =
        pos_total == 0 ? 0.0 : static_cast<double>(pos_deferred) / static_cast<double>(pos_total);
    const auto counts = confusion(decisions, labels);
    p.bacc = balanced_accuracy(counts);
    p.acc0 = class_accuracy(counts, 0);
    p.acc1 = class_accuracy(counts, 1);
    return p;
}

}  // namespace dfb
