#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfb/data.hpp"
#include "dfb/metrics.hpp"
#include "dfb/pipelines.hpp"

namespace dfb {

// Test-time condition: in-distribution, or a corruption at level 1..5.
struct Condition {
    std::optional<CorruptionKind> kind;
    int level = 0;

    static Condition id() { return {}; }
    static Condition corrupted(CorruptionKind k, int level);

    // "id", "noise" or "blur"
    std::string name() const;
    // "id", "noise-3", ...
    std::string label() const;
    bool operator==(const Condition&) const = default;
};

Condition parse_condition(const std::string& label);
// id, noise 1..5, blur 1..5
std::vector<Condition> default_conditions();

std::vector<double> default_alpha_grid();
std::vector<double> default_beta_grid();

struct SweepPlan {
    std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
    std::size_t steps = 200;
    std::vector<double> alpha_grid = default_alpha_grid();
    std::vector<double> beta_grid = default_beta_grid();
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<Condition> conditions = default_conditions();
    // Anchor thresholds on the in-distribution score range instead of the
    // condition's own range.
    bool id_anchored_thresholds = false;
    CorruptionLevels levels;
    std::size_t jobs = 1;

    void validate() const;
    bool has(Method m) const;
};

// Evenly spaced thresholds from hi down to lo, `steps` of them. The last one
// is moved just below lo so the sweep ends in total deferral.
std::vector<double> sweep_thresholds(double hi, double lo, std::size_t steps);

struct UqSweep {
    std::vector<CurvePoint> points;
    // All scores identical: a single zero-deferral point.
    bool degenerate = false;
};

// One CurvePoint per threshold (defer iff uncertainty > threshold). `anchor`
// overrides the (max, min) observed score range.
UqSweep uq_sweep(const ScoreRecord& scores, std::span<const int> labels, std::size_t steps,
                 std::optional<std::pair<double, double>> anchor = std::nullopt);
UqSweep uq_sweep(const DeferralModel& model, const Matrix& x_test, std::span<const int> labels, std::size_t steps);

struct ResultRow {
    CurvePoint point;
    std::optional<double> auc;
    std::optional<double> pauc;
    // ok | total_deferral | class_absent | degenerate | failed
    std::string status = "ok";
    // Why a failed row failed; not part of the CSV.
    std::string reason;
};

struct ClassificationRow {
    std::string method;
    std::string condition;
    int level = 0;
    std::uint64_t seed = 0;
    ParamKind param_kind = ParamKind::Threshold;
    double param_value = 0.0;
    std::optional<double> auc, pauc, bacc, acc0, acc1;
};

// Retrains one learned model per grid value per seed and evaluates it on the
// test split. Divergence yields a failed row; the sweep continues.
std::vector<ResultRow> learned_sweep(const Dataset& data, Method method, const std::vector<double>& grid,
                                     const std::vector<std::uint64_t>& seeds, const MethodSettings& settings);

// Test split of `clean` under a condition. Noise uses one base draw per
// (global seed, kind) so levels are nested.
struct ConditionData {
    Matrix x_test;
    std::vector<int> y_test;
};
ConditionData condition_data(const Dataset& clean, const Condition& c, const CorruptionLevels& levels,
                             std::uint64_t global_seed);

struct ExperimentResult {
    std::vector<ResultRow> rows;
    std::vector<ClassificationRow> table;
    std::vector<std::string> failures;

    bool any_failed() const noexcept { return !failures.empty(); }
};

// Trains every requested model once per seed on the clean training split and
// evaluates all conditions. Threshold sweeps never retrain.
class Experiment {
public:
    Experiment(Dataset clean, SweepPlan plan, MethodSettings settings, std::uint64_t global_seed);

    void train();
    bool trained() const noexcept { return trained_; }

    // Rows and table entries for one condition, ordered by method, seed, parameter.
    ExperimentResult run_condition(const Condition& c) const;
    // train() if needed, then every planned condition in plan order.
    ExperimentResult run();

    // Trained models for visiting (e.g. saving bundles): method, seed, model.
    void for_each_model(const std::function<void(Method, std::uint64_t, const DeferralModel&)>& fn) const;

    const SweepPlan& plan() const noexcept { return plan_; }

private:
    struct Learned {
        double cost = 0.0;
        std::optional<DeferralModel> model;
        double val_deferral_rate = 1.0;
        std::string failure;
    };
    struct PerSeed {
        std::uint64_t seed = 0;
        std::vector<std::optional<DeferralModel>> uq;  // indexed by Method
        std::vector<std::string> uq_failure;
        std::vector<std::optional<Network>> members;
        std::string members_failure;
        std::vector<Learned> one_stage;
        std::vector<Learned> two_stage;
    };

    // Training seed for a plan seed, mixed with the global seed.
    std::uint64_t model_seed(std::uint64_t plan_seed) const;
    void evaluate_seed(const PerSeed& s, const Condition& c, const ConditionData& data, const ConditionData* id_data,
                       ExperimentResult& out) const;

    Dataset clean_;
    SweepPlan plan_;
    MethodSettings settings_;
    std::uint64_t global_seed_;
    TrainingData training_;
    std::vector<PerSeed> seeds_;
    bool trained_ = false;
};

inline constexpr const char* kResultsHeader =
    "method,condition,level,seed,param_kind,param_value,deferral_rate,bacc,auc,pauc,acc0,acc1,frac_pos_deferred,status";
inline constexpr const char* kClassificationHeader =
    "method,condition,level,seed,param_kind,param_value,auc,pauc,bacc,acc0,acc1";

std::string results_csv(const std::vector<ResultRow>& rows);
std::string classification_csv(const std::vector<ClassificationRow>& rows);
// Throws ParseError naming the offending row.
std::vector<ResultRow> parse_results_csv(const std::string& text);

// Linear interpolation of bAcc at a deferral rate along a curve whose rates are
// non-decreasing; nullopt when the curve does not bracket the rate with present values.
std::optional<double> bacc_at_rate(const std::vector<CurvePoint>& curve, double rate);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first exception.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace dfb
