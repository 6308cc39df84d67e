#include "dfb/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "dfb/error.hpp"
#include "dfb/text.hpp"

namespace dfb {

Condition Condition::corrupted(CorruptionKind k, int level) {
    if (level < 1 || level > 5) throw ConfigError("corruption condition level must lie in 1..5");
    return {k, level};
}

std::string Condition::name() const { return kind ? to_string(*kind) : "id"; }

std::string Condition::label() const { return kind ? name() + "-" + std::to_string(level) : "id"; }

Condition parse_condition(const std::string& label) {
    if (label == "id") return Condition::id();
    const auto dash = label.find('-');
    if (dash == std::string::npos) throw ConfigError("bad condition '" + label + "' (expected id, noise-N or blur-N)");
    const auto kind = parse_corruption_kind(label.substr(0, dash));
    return Condition::corrupted(kind, static_cast<int>(parse_u64(label.substr(dash + 1))));
}

std::vector<Condition> default_conditions() {
    std::vector<Condition> c{Condition::id()};
    for (auto kind : {CorruptionKind::Noise, CorruptionKind::Blur})
        for (int level = 1; level <= 5; ++level) c.push_back(Condition::corrupted(kind, level));
    return c;
}

std::vector<double> default_alpha_grid() { return {1.0, 0.3, 0.25, 0.2, 0.15, 0.12, 0.1, 0.07, 0.05, 0.03}; }

std::vector<double> default_beta_grid() { return {2.0, 1.5, 1.2, 1.0, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2}; }

void SweepPlan::validate() const {
    if (methods.empty()) throw ConfigError("plan has no methods");
    if (steps < 2) throw ConfigError("threshold step count must be >= 2");
    if (seeds.empty()) throw ConfigError("plan needs at least one seed");
    if (conditions.empty()) throw ConfigError("plan has no conditions");
    if (has(Method::LearnedOneStage)) {
        if (alpha_grid.empty()) throw ConfigError("empty alpha grid");
        for (double a : alpha_grid) (void)OneStageCost(a);
    }
    if (has(Method::LearnedTwoStage)) {
        if (beta_grid.empty()) throw ConfigError("empty beta grid");
        for (double b : beta_grid) (void)TwoStageCost(b);
    }
    if (jobs == 0) throw ConfigError("jobs must be >= 1");
    levels.validate();
}

bool SweepPlan::has(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

std::vector<double> sweep_thresholds(double hi, double lo, std::size_t steps) {
    if (steps < 2) throw ConfigError("threshold step count must be >= 2");
    if (!(hi >= lo)) throw DomainError("threshold range is inverted");
    std::vector<double> t(steps);
    const double span = hi - lo;
    for (std::size_t k = 0; k < steps; ++k)
        t[k] = hi - span * static_cast<double>(k) / static_cast<double>(steps - 1);
    t.front() = hi;
    t.back() = std::nextafter(lo, -std::numeric_limits<double>::infinity());
    return t;
}

UqSweep uq_sweep(const ScoreRecord& scores, std::span<const int> labels, std::size_t steps,
                 std::optional<std::pair<double, double>> anchor) {
    if (scores.uncertainty.empty()) throw ShapeError("no scores to sweep");
    if (scores.uncertainty.size() != labels.size()) throw ShapeError("scores/labels length mismatch");
    const auto [lo_it, hi_it] = std::minmax_element(scores.uncertainty.begin(), scores.uncertainty.end());
    const double hi = anchor ? anchor->first : *hi_it;
    const double lo = anchor ? anchor->second : *lo_it;

    UqSweep out;
    std::vector<double> thresholds;
    if (hi == lo) {
        out.degenerate = true;
        thresholds = {hi};
    } else {
        thresholds = sweep_thresholds(hi, lo, steps);
    }
    out.points.reserve(thresholds.size());
    for (double tau : thresholds) {
        auto p = deferral_curve_point(threshold_decisions(scores, tau), labels);
        p.param_kind = ParamKind::Threshold;
        p.param_value = tau;
        out.points.push_back(std::move(p));
    }
    return out;
}

UqSweep uq_sweep(const DeferralModel& model, const Matrix& x_test, std::span<const int> labels, std::size_t steps) {
    if (model.learned()) throw UsageError("threshold sweeps apply to UQ methods only");
    return uq_sweep(model.score(x_test), labels, steps);
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    const std::size_t workers = std::min(jobs, n);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!first) first = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

namespace {

ResultRow failed_row(Method m, const Condition& c, std::uint64_t seed, ParamKind kind, double value,
                     std::string reason) {
    ResultRow r;
    r.point.method = to_string(m);
    r.point.condition = c.name();
    r.point.level = c.level;
    r.point.seed = seed;
    r.point.param_kind = kind;
    r.point.param_value = value;
    r.point.deferral_rate = std::numeric_limits<double>::quiet_NaN();
    r.point.positive_deferred_fraction = std::numeric_limits<double>::quiet_NaN();
    r.status = "failed";
    r.reason = std::move(reason);
    return r;
}

std::string point_status(const CurvePoint& p) {
    if (p.bacc) return "ok";
    return p.evaluated == 0 ? "total_deferral" : "class_absent";
}

void stamp(CurvePoint& p, Method m, const Condition& c, std::uint64_t seed) {
    p.method = to_string(m);
    p.condition = c.name();
    p.level = c.level;
    p.seed = seed;
}

ClassificationRow table_row(Method m, const Condition& c, std::uint64_t seed, ParamKind kind, double value,
                            const ScoreRecord& scores, std::span<const int> labels) {
    ClassificationRow t{to_string(m), c.name(), c.level, seed, kind, value, {}, {}, {}, {}, {}};
    const auto counts = confusion(class_decisions(scores), labels);
    t.auc = auc(scores.positive_probability, labels);
    t.pauc = pauc(scores.positive_probability, labels);
    t.bacc = balanced_accuracy(counts);
    t.acc0 = class_accuracy(counts, 0);
    t.acc1 = class_accuracy(counts, 1);
    return t;
}

ParamKind learned_kind(Method m) { return m == Method::LearnedOneStage ? ParamKind::Alpha : ParamKind::Beta; }

std::size_t method_index(Method m) {
    return static_cast<std::size_t>(std::find(kAllMethods.begin(), kAllMethods.end(), m) - kAllMethods.begin());
}

double deferral_rate_of(const std::vector<Decision>& d) {
    const auto n = std::count(d.begin(), d.end(), Decision::Defer);
    return static_cast<double>(n) / static_cast<double>(d.size());
}

}  // namespace

std::vector<ResultRow> learned_sweep(const Dataset& data, Method method, const std::vector<double>& grid,
                                     const std::vector<std::uint64_t>& seeds, const MethodSettings& settings) {
    if (!is_learned(method)) throw UsageError("learned_sweep needs a learned deferral method");
    const auto training = TrainingData::from(data);
    const Matrix x_test = data.features_in(Split::Test);
    const auto y_test = data.labels_in(Split::Test);
    const Condition id = Condition::id();
    std::vector<ResultRow> rows;
    for (std::uint64_t seed : seeds) {
        std::vector<Network> members;
        std::string members_failure;
        if (method == Method::LearnedTwoStage) {
            try {
                members = train_ensemble_members(training, settings, seed);
            } catch (const Error& e) {
                members_failure = e.what();
            }
        }
        for (double value : grid) {
            try {
                if (!members_failure.empty()) throw Error(members_failure);
                const auto model = method == Method::LearnedOneStage
                                       ? train_one_stage(training, settings, value, seed)
                                       : train_two_stage(training, members, settings, value, seed);
                const auto scores = model.score(x_test);
                ResultRow r;
                r.point = deferral_curve_point(scores.argmax, y_test);
                stamp(r.point, method, id, seed);
                r.point.param_kind = learned_kind(method);
                r.point.param_value = value;
                r.auc = auc(scores.positive_probability, y_test);
                r.pauc = pauc(scores.positive_probability, y_test);
                r.status = point_status(r.point);
                rows.push_back(std::move(r));
            } catch (const Error& e) {
                rows.push_back(failed_row(method, id, seed, learned_kind(method), value, e.what()));
            }
        }
    }
    return rows;
}

ConditionData condition_data(const Dataset& clean, const Condition& c, const CorruptionLevels& levels,
                             std::uint64_t global_seed) {
    if (!c.kind) return {clean.features_in(Split::Test), clean.labels_in(Split::Test)};
    const auto spec = CorruptionSpec::resolve(*c.kind, c.level, levels);
    const auto corrupted = corrupt(clean, spec, derive_seed(global_seed, {tag_of("corruption"), tag_of(to_string(*c.kind))}));
    ConditionData d{corrupted.features_in(Split::Test), corrupted.labels_in(Split::Test)};
    if (d.y_test.empty()) throw StratificationError("condition " + c.label() + " has no test rows");
    return d;
}

Experiment::Experiment(Dataset clean, SweepPlan plan, MethodSettings settings, std::uint64_t global_seed)
    : clean_(std::move(clean)), plan_(std::move(plan)), settings_(std::move(settings)), global_seed_(global_seed) {
    plan_.validate();
    settings_.validate();
    clean_.validate();
    training_ = TrainingData::from(clean_);
    if (clean_.rows_in(Split::Test).empty()) throw StratificationError("dataset has no test rows");
    for (const auto& c : plan_.conditions)
        if (c.kind == CorruptionKind::Blur && !clean_.spatial)
            throw UnsupportedCorruption("plan includes blur but the dataset has no spatial shape");
}

std::uint64_t Experiment::model_seed(std::uint64_t plan_seed) const {
    return derive_seed(global_seed_, {tag_of("model"), plan_seed});
}

void Experiment::train() {
    const bool need_members = plan_.has(Method::Ensemble) || plan_.has(Method::LearnedTwoStage);
    seeds_.assign(plan_.seeds.size(), {});
    for (std::size_t si = 0; si < seeds_.size(); ++si) {
        auto& s = seeds_[si];
        s.seed = plan_.seeds[si];
        s.uq.resize(kAllMethods.size());
        s.uq_failure.resize(kAllMethods.size());
        if (need_members) s.members.resize(settings_.ensemble_size);
        if (plan_.has(Method::LearnedOneStage))
            for (double a : plan_.alpha_grid) s.one_stage.push_back({a, std::nullopt, 1.0, {}});
        if (plan_.has(Method::LearnedTwoStage))
            for (double b : plan_.beta_grid) s.two_stage.push_back({b, std::nullopt, 1.0, {}});
    }

    auto finish_learned = [&](Learned& l, DeferralModel model) {
        l.val_deferral_rate = deferral_rate_of(model.score(training_.x_val).argmax);
        l.model = std::move(model);
    };

    // Phase 1: everything that does not depend on ensemble members.
    std::vector<std::function<void()>> tasks;
    for (auto& s : seeds_) {
        const std::uint64_t seed = model_seed(s.seed);
        for (Method m : {Method::Softmax, Method::Swag, Method::McDropout, Method::Bnn}) {
            if (!plan_.has(m)) continue;
            tasks.emplace_back([this, &s, m, seed] {
                const auto i = method_index(m);
                try {
                    switch (m) {
                        case Method::Softmax: s.uq[i] = train_softmax(training_, settings_, seed); break;
                        case Method::Swag: s.uq[i] = train_swag(training_, settings_, seed); break;
                        case Method::McDropout: s.uq[i] = train_mc_dropout(training_, settings_, seed); break;
                        default: s.uq[i] = train_bnn(training_, settings_, seed); break;
                    }
                } catch (const Error& e) {
                    s.uq_failure[i] = e.what();
                }
            });
        }
        for (std::size_t k = 0; k < s.members.size(); ++k)
            tasks.emplace_back([this, &s, k, seed] {
                try {
                    s.members[k] = train_ensemble_member(training_, settings_, seed, k);
                } catch (const Error& e) {
                    s.members_failure = "ensemble member " + std::to_string(k) + ": " + e.what();
                }
            });
        for (auto& l : s.one_stage)
            tasks.emplace_back([this, &l, seed, finish_learned] {
                try {
                    finish_learned(l, train_one_stage(training_, settings_, l.cost, seed));
                } catch (const Error& e) {
                    l.failure = e.what();
                }
            });
    }
    parallel_for(tasks.size(), plan_.jobs, [&](std::size_t i) { tasks[i](); });

    // Phase 2: consumers of the ensemble members.
    tasks.clear();
    for (auto& s : seeds_) {
        std::vector<Network> members;
        if (s.members_failure.empty())
            for (auto& m : s.members) members.push_back(*m);
        if (plan_.has(Method::Ensemble)) {
            const auto i = method_index(Method::Ensemble);
            if (s.members_failure.empty()) s.uq[i] = make_ensemble(members, settings_, model_seed(s.seed));
            else s.uq_failure[i] = s.members_failure;
        }
        for (auto& l : s.two_stage) {
            if (!s.members_failure.empty()) {
                l.failure = s.members_failure;
                continue;
            }
            tasks.emplace_back([this, &l, members, seed = model_seed(s.seed), finish_learned] {
                try {
                    finish_learned(l, train_two_stage(training_, members, settings_, l.cost, seed));
                } catch (const Error& e) {
                    l.failure = e.what();
                }
            });
        }
    }
    parallel_for(tasks.size(), plan_.jobs, [&](std::size_t i) { tasks[i](); });
    trained_ = true;
}

void Experiment::evaluate_seed(const PerSeed& s, const Condition& c, const ConditionData& data,
                               const ConditionData* id_data, ExperimentResult& out) const {
    const auto& y = data.y_test;
    for (Method m : kAllMethods) {
        if (!plan_.has(m)) continue;
        if (!is_learned(m)) {
            const auto i = method_index(m);
            auto fail = [&](const std::string& reason) {
                out.rows.push_back(failed_row(m, c, s.seed, ParamKind::Threshold, 0.0, reason));
                out.table.push_back({to_string(m), c.name(), c.level, s.seed, ParamKind::Threshold,
                                     std::numeric_limits<double>::infinity(), {}, {}, {}, {}, {}});
                out.failures.push_back(to_string(m) + " seed " + std::to_string(s.seed) + ": " + reason);
            };
            if (!s.uq[i]) {
                fail(s.uq_failure[i]);
                continue;
            }
            const auto& model = *s.uq[i];
            ScoreRecord scores;
            std::optional<std::pair<double, double>> anchor;
            try {
                scores = model.score(data.x_test);
                if (id_data) {
                    const auto id_scores = model.score(id_data->x_test);
                    const auto [lo, hi] =
                        std::minmax_element(id_scores.uncertainty.begin(), id_scores.uncertainty.end());
                    anchor = std::make_pair(*hi, *lo);
                }
            } catch (const Error& e) {
                fail(e.what());
                continue;
            }
            const auto sweep = uq_sweep(scores, y, plan_.steps, anchor);
            const auto a = auc(scores.positive_probability, y);
            const auto pa = pauc(scores.positive_probability, y);
            for (auto p : sweep.points) {
                stamp(p, m, c, s.seed);
                ResultRow r{std::move(p), a, pa, {}, {}};
                r.status = sweep.degenerate ? "degenerate" : point_status(r.point);
                out.rows.push_back(std::move(r));
            }
            out.table.push_back(table_row(m, c, s.seed, ParamKind::Threshold, std::numeric_limits<double>::infinity(),
                                          scores, y));
            continue;
        }

        const auto& grid = m == Method::LearnedOneStage ? s.one_stage : s.two_stage;
        const ParamKind kind = learned_kind(m);
        std::optional<std::size_t> chosen;
        std::vector<std::optional<ScoreRecord>> all_scores(grid.size());
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const auto& l = grid[j];
            auto fail = [&](const std::string& reason) {
                out.rows.push_back(failed_row(m, c, s.seed, kind, l.cost, reason));
                out.failures.push_back(to_string(m) + " seed " + std::to_string(s.seed) + " " + to_string(kind) + "=" +
                                       format_double(l.cost) + ": " + reason);
            };
            if (!l.model) {
                fail(l.failure);
                continue;
            }
            try {
                all_scores[j] = l.model->score(data.x_test);
            } catch (const Error& e) {
                fail(e.what());
                continue;
            }
            const auto& scores = *all_scores[j];
            ResultRow r;
            r.point = deferral_curve_point(scores.argmax, y);
            stamp(r.point, m, c, s.seed);
            r.point.param_kind = kind;
            r.point.param_value = l.cost;
            r.auc = auc(scores.positive_probability, y);
            r.pauc = pauc(scores.positive_probability, y);
            r.status = point_status(r.point);
            out.rows.push_back(std::move(r));
            if (!chosen || l.val_deferral_rate < grid[*chosen].val_deferral_rate) chosen = j;
        }
        if (chosen)
            out.table.push_back(table_row(m, c, s.seed, kind, grid[*chosen].cost, *all_scores[*chosen], y));
        else
            out.table.push_back({to_string(m), c.name(), c.level, s.seed, kind, 0.0, {}, {}, {}, {}, {}});
    }
}

ExperimentResult Experiment::run_condition(const Condition& c) const {
    if (!trained_) throw UsageError("run_condition before train()");
    const auto data = condition_data(clean_, c, plan_.levels, global_seed_);
    std::optional<ConditionData> id_data;
    if (plan_.id_anchored_thresholds && c.kind) id_data = condition_data(clean_, Condition::id(), plan_.levels, global_seed_);

    std::vector<ExperimentResult> per_seed(seeds_.size());
    parallel_for(seeds_.size(), plan_.jobs, [&](std::size_t i) {
        evaluate_seed(seeds_[i], c, data, id_data ? &*id_data : nullptr, per_seed[i]);
    });

    // Merge by (method, seed position); within-curve order is preserved.
    ExperimentResult out;
    for (Method m : kAllMethods)
        for (auto& r : per_seed) {
            const auto name = to_string(m);
            for (auto& row : r.rows)
                if (row.point.method == name) out.rows.push_back(row);
            for (auto& t : r.table)
                if (t.method == name) out.table.push_back(t);
        }
    for (auto& r : per_seed)
        for (auto& f : r.failures) out.failures.push_back(c.label() + ": " + f);
    return out;
}

ExperimentResult Experiment::run() {
    if (!trained_) train();
    ExperimentResult all;
    for (const auto& c : plan_.conditions) {
        auto r = run_condition(c);
        std::move(r.rows.begin(), r.rows.end(), std::back_inserter(all.rows));
        std::move(r.table.begin(), r.table.end(), std::back_inserter(all.table));
        std::move(r.failures.begin(), r.failures.end(), std::back_inserter(all.failures));
    }
    return all;
}

void Experiment::for_each_model(const std::function<void(Method, std::uint64_t, const DeferralModel&)>& fn) const {
    for (const auto& s : seeds_) {
        for (Method m : kAllMethods)
            if (!is_learned(m) && s.uq[method_index(m)]) fn(m, s.seed, *s.uq[method_index(m)]);
        for (const auto& l : s.one_stage)
            if (l.model) fn(Method::LearnedOneStage, s.seed, *l.model);
        for (const auto& l : s.two_stage)
            if (l.model) fn(Method::LearnedTwoStage, s.seed, *l.model);
    }
}

namespace {

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> parse_opt(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return parse_double(s);
}

}  // namespace

std::string results_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << kResultsHeader << '\n';
    for (const auto& r : rows) {
        const auto& p = r.point;
        const bool failed = r.status == "failed";
        out << p.method << ',' << p.condition << ',' << p.level << ',' << p.seed << ',' << to_string(p.param_kind) << ','
            << format_double(p.param_value) << ',' << (failed ? "" : format_double(p.deferral_rate)) << ','
            << opt(p.bacc) << ',' << opt(r.auc) << ',' << opt(r.pauc) << ',' << opt(p.acc0) << ',' << opt(p.acc1) << ','
            << (failed ? "" : format_double(p.positive_deferred_fraction)) << ',' << r.status << '\n';
    }
    return out.str();
}

std::string classification_csv(const std::vector<ClassificationRow>& rows) {
    std::ostringstream out;
    out << kClassificationHeader << '\n';
    for (const auto& t : rows)
        out << t.method << ',' << t.condition << ',' << t.level << ',' << t.seed << ',' << to_string(t.param_kind) << ','
            << format_double(t.param_value) << ',' << opt(t.auc) << ',' << opt(t.pauc) << ',' << opt(t.bacc) << ','
            << opt(t.acc0) << ',' << opt(t.acc1) << '\n';
    return out.str();
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line).empty()) throw ParseError("empty results CSV");
    if (trim(line) != kResultsHeader) throw ParseError("row 1: unexpected header");
    std::vector<ResultRow> rows;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (trim(line).empty()) continue;
        try {
            const auto cells = split(line, ',');
            if (cells.size() != 14) throw ParseError("expected 14 columns, got " + std::to_string(cells.size()));
            ResultRow r;
            auto& p = r.point;
            p.method = cells[0];
            parse_method(p.method);
            p.condition = cells[1];
            if (p.condition != "id" && p.condition != "noise" && p.condition != "blur")
                throw ParseError("unknown condition '" + p.condition + "'");
            p.level = static_cast<int>(parse_u64(cells[2]));
            p.seed = parse_u64(cells[3]);
            p.param_kind = parse_param_kind(cells[4]);
            p.param_value = parse_double(cells[5]);
            r.status = cells[13];
            const bool failed = r.status == "failed";
            p.deferral_rate = failed ? std::numeric_limits<double>::quiet_NaN() : parse_double(cells[6]);
            p.bacc = parse_opt(cells[7]);
            r.auc = parse_opt(cells[8]);
            r.pauc = parse_opt(cells[9]);
            p.acc0 = parse_opt(cells[10]);
            p.acc1 = parse_opt(cells[11]);
            p.positive_deferred_fraction = failed ? std::numeric_limits<double>::quiet_NaN() : parse_double(cells[12]);
            rows.push_back(std::move(r));
        } catch (const Error& e) {
            throw ParseError("row " + std::to_string(row_no) + ": " + e.what());
        }
    }
    return rows;
}

std::optional<double> bacc_at_rate(const std::vector<CurvePoint>& curve, double rate) {
    for (const auto& p : curve)
        if (p.deferral_rate == rate && p.bacc) return p.bacc;
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
        const auto& a = curve[i];
        const auto& b = curve[i + 1];
        if (a.bacc && b.bacc && a.deferral_rate < rate && rate < b.deferral_rate) {
            const double t = (rate - a.deferral_rate) / (b.deferral_rate - a.deferral_rate);
            return *a.bacc + t * (*b.bacc - *a.bacc);
        }
    }
    return std::nullopt;
}

}  // namespace dfb
