#include "dfb/pipelines.hpp"

#include <cmath>
#include <limits>
#include <optional>

#include "dfb/error.hpp"

namespace dfb {

std::string to_string(Method m) {
    switch (m) {
        case Method::Softmax: return "softmax";
        case Method::Ensemble: return "ensemble";
        case Method::Swag: return "swag";
        case Method::McDropout: return "mc_dropout";
        case Method::Bnn: return "bnn";
        case Method::LearnedOneStage: return "learned_one_stage";
        case Method::LearnedTwoStage: return "learned_two_stage";
    }
    return "softmax";
}

Method parse_method(const std::string& s) {
    for (Method m : kAllMethods)
        if (to_string(m) == s) return m;
    throw ConfigError("unknown method '" + s + "'");
}

bool is_learned(Method m) noexcept { return m == Method::LearnedOneStage || m == Method::LearnedTwoStage; }

double binary_entropy(double p) {
    auto term = [](double q) { return q > 0.0 ? -q * std::log(q) : 0.0; };
    return term(p) + term(1.0 - p);
}

double diagnostic_entropy(std::span<const double> member_probabilities) {
    double mean = 0.0;
    for (double p : member_probabilities) mean += p;
    return binary_entropy(mean / static_cast<double>(member_probabilities.size()));
}

double model_entropy(std::span<const double> member_probabilities) {
    double s = 0.0;
    for (double p : member_probabilities) s += binary_entropy(p);
    return s / static_cast<double>(member_probabilities.size());
}

Matrix two_stage_features(const Matrix& member_probabilities) {
    const Eigen::Index b = member_probabilities.rows();
    const Eigen::Index n = member_probabilities.cols();
    if (n == 0) throw ShapeError("no ensemble members");
    Matrix f(b, n + 2);
    f.leftCols(n) = member_probabilities;
    std::vector<double> row(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < b; ++i) {
        for (Eigen::Index k = 0; k < n; ++k) row[static_cast<std::size_t>(k)] = member_probabilities(i, k);
        f(i, n) = diagnostic_entropy(row);
        f(i, n + 1) = model_entropy(row);
    }
    return f;
}

DeferralModel::DeferralModel(Artifacts artifacts, SamplerConfig sampler)
    : artifacts_(std::move(artifacts)), sampler_(sampler) {
    sampler_.validate();
}

Method DeferralModel::method() const noexcept {
    static constexpr std::array<Method, 7> order{Method::Softmax,   Method::Ensemble, Method::Swag,
                                                 Method::McDropout, Method::Bnn,      Method::LearnedOneStage,
                                                 Method::LearnedTwoStage};
    return order[artifacts_.index()];
}

void DeferralModel::set_threshold(double tau) {
    if (learned()) throw UsageError("learned deferral models have no uncertainty threshold");
    if (std::isnan(tau)) throw DomainError("threshold is NaN");
    threshold_ = tau;
}

std::optional<double> DeferralModel::cost() const noexcept {
    if (const auto* a = std::get_if<OneStage>(&artifacts_)) return a->cost.alpha;
    if (const auto* b = std::get_if<TwoStage>(&artifacts_)) return b->cost.beta;
    return std::nullopt;
}

namespace {

ScoreRecord from_sampled(SampledPrediction&& s) {
    ScoreRecord r;
    r.positive_probability = std::move(s.mean_probability);
    r.uncertainty = std::move(s.variance);
    return r;
}

ScoreRecord from_extended_logits(const Matrix& logits) {
    ScoreRecord r;
    r.positive_probability = positive_probabilities(logits);
    const Matrix p = softmax_rows(logits);
    const Eigen::Index d = logits.cols() - 1;
    r.uncertainty.resize(static_cast<std::size_t>(logits.rows()));
    r.argmax.resize(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        logits.row(i).maxCoeff(&best);  // first maximum on ties
        r.uncertainty[static_cast<std::size_t>(i)] = p(i, d);
        r.argmax[static_cast<std::size_t>(i)] =
            best == d ? Decision::Defer : (best == 1 ? Decision::Positive : Decision::Negative);
    }
    return r;
}

Matrix member_probability_matrix(const std::vector<Network>& members, const Matrix& batch) {
    // Exactly the ensemble_predict samples, transposed to B x N.
    return ensemble_predict(members, batch).samples.transpose();
}

}  // namespace

ScoreRecord DeferralModel::score(const Matrix& batch) const {
    auto r = std::visit(
        [&](const auto& a) -> ScoreRecord {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, Softmax>) {
                ScoreRecord r;
                r.positive_probability = positive_probabilities(a.net.forward(batch));
                r.uncertainty.reserve(r.positive_probability.size());
                for (double p : r.positive_probability) r.uncertainty.push_back(softmax_uncertainty(p));
                return r;
            } else if constexpr (std::is_same_v<T, Ensemble>) {
                return from_sampled(ensemble_predict(a.members, batch));
            } else if constexpr (std::is_same_v<T, Swag>) {
                return from_sampled(swag_predict(a.posterior, batch, sampler_));
            } else if constexpr (std::is_same_v<T, McDropout>) {
                Rng rng(sampler_.seed);
                return from_sampled(mc_dropout_predict(a.net, batch, sampler_.n_samples, rng));
            } else if constexpr (std::is_same_v<T, Bnn>) {
                return from_sampled(bnn_predict(a.posterior, batch, sampler_));
            } else if constexpr (std::is_same_v<T, OneStage>) {
                return from_extended_logits(a.net.forward(batch));
            } else {
                const Matrix features = two_stage_features(member_probability_matrix(a.stage1, batch));
                return from_extended_logits(a.stage2.forward(features));
            }
        },
        artifacts_);
    for (std::size_t i = 0; i < r.positive_probability.size(); ++i)
        if (std::isnan(r.positive_probability[i]) || std::isnan(r.uncertainty[i]))
            throw NumericError("model produced a NaN score");
    return r;
}

std::vector<Decision> threshold_decisions(const ScoreRecord& scores, double tau) {
    const auto mask = defer_by_threshold(scores.uncertainty, tau);
    std::vector<Decision> d(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        d[i] = mask[i] ? Decision::Defer : decide_class(scores.positive_probability[i]);
    return d;
}

std::vector<Decision> class_decisions(const ScoreRecord& scores) {
    std::vector<Decision> d(scores.positive_probability.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = decide_class(scores.positive_probability[i]);
    return d;
}

DeferralModel::Output DeferralModel::predict(const Matrix& batch) const {
    if (!learned() && !threshold_) throw UsageError("UQ model has no threshold set");
    Output out;
    out.scores = score(batch);
    out.decisions = learned() ? out.scores.argmax : threshold_decisions(out.scores, *threshold_);
    return out;
}

TrainingData TrainingData::from(const Dataset& data) {
    TrainingData t;
    t.x_train = data.features_in(Split::Train);
    t.y_train = data.labels_in(Split::Train);
    t.x_val = data.features_in(Split::Val);
    t.y_val = data.labels_in(Split::Val);
    if (t.y_train.empty() || t.y_val.empty()) throw StratificationError("dataset has no train or validation rows");
    t.w_train = oversample_weights(t.y_train);
    return t;
}

void MethodSettings::validate() const {
    sgd.validate();
    two_stage_sgd.validate();
    sampler.validate();
    swag.validate();
    bnn.validate();
    if (!(mc_dropout_rate > 0.0 && mc_dropout_rate < 1.0)) throw ConfigError("mc_dropout_rate must lie in (0, 1)");
    if (ensemble_size == 0) throw ConfigError("ensemble_size must be >= 1");
    for (auto h : net.hidden_dims)
        if (h == 0) throw ConfigError("hidden widths must be positive");
}

Vector select_by_pauc(const NetConfig& config, std::span<const Vector> checkpoints, const Matrix& x_val,
                      std::span<const int> y_val) {
    if (checkpoints.empty()) throw CollectionError("no checkpoints to select from");
    Network net(config);
    std::optional<std::size_t> best;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        net.set_params(checkpoints[i]);
        double score = 0.0;
        try {
            score = pauc(positive_probabilities(net.forward(x_val)), y_val).value_or(-1.0);
        } catch (const NumericError&) {
            continue;
        }
        if (!best || score > best_score) {
            best_score = score;
            best = i;
        }
    }
    if (!best) throw NumericError("every checkpoint gives non-finite validation outputs");
    return checkpoints[*best];
}

Vector select_by_loss(const NetConfig& config, std::span<const Vector> checkpoints, const Matrix& x_val,
                      std::span<const int> y_val, const LossSpec& loss) {
    if (checkpoints.empty()) throw CollectionError("no checkpoints to select from");
    const auto weights = oversample_weights(y_val);
    Network net(config);
    std::optional<std::size_t> best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        net.set_params(checkpoints[i]);
        double l = 0.0;
        try {
            const auto losses = net.row_losses(x_val, y_val, loss);
            for (std::size_t k = 0; k < losses.size(); ++k) l += weights[k] * losses[k];
        } catch (const NumericError&) {
            continue;
        }
        if (std::isnan(l)) continue;
        if (!best || l < best_loss) {
            best_loss = l;
            best = i;
        }
    }
    if (!best) throw NumericError("every checkpoint gives non-finite validation losses");
    return checkpoints[*best];
}

namespace {

NetConfig make_net(const NetConfig& base, std::size_t input_dim, std::size_t output_dim, double dropout,
                   std::uint64_t seed) {
    NetConfig c = base;
    c.input_dim = input_dim;
    c.output_dim = output_dim;
    c.dropout_rate = dropout;
    c.seed = seed;
    return c;
}

SgdConfig make_sgd(const SgdConfig& base, std::uint64_t seed) {
    SgdConfig c = base;
    c.seed = seed;
    return c;
}

SamplerConfig make_sampler(const SamplerConfig& base, std::uint64_t seed) {
    SamplerConfig c = base;
    c.seed = seed;
    return c;
}

std::uint64_t seed_for(std::uint64_t seed, Method m, std::uint64_t member, std::string_view role) {
    return derive_seed(seed, {tag_of(to_string(m)), member, tag_of(role)});
}

Network train_selected_by_pauc(const TrainingData& data, const NetConfig& net, const SgdConfig& sgd) {
    auto run = train(Network(net), data.x_train, data.y_train, CrossEntropyLoss{}, sgd, data.w_train);
    Network best(net);
    best.set_params(select_by_pauc(net, run.checkpoints, data.x_val, data.y_val));
    return best;
}

}  // namespace

DeferralModel train_softmax(const TrainingData& data, const MethodSettings& s, std::uint64_t seed) {
    const auto net = make_net(s.net, data.input_dim(), 2, 0.0, seed_for(seed, Method::Softmax, 0, "net"));
    const auto sgd = make_sgd(s.sgd, seed_for(seed, Method::Softmax, 0, "sgd"));
    return DeferralModel(DeferralModel::Softmax{train_selected_by_pauc(data, net, sgd)},
                         make_sampler(s.sampler, seed_for(seed, Method::Softmax, 0, "sampler")));
}

Network train_ensemble_member(const TrainingData& data, const MethodSettings& s, std::uint64_t seed,
                              std::size_t member) {
    const auto net = make_net(s.net, data.input_dim(), 2, 0.0, seed_for(seed, Method::Ensemble, member, "net"));
    const auto sgd = make_sgd(s.sgd, seed_for(seed, Method::Ensemble, member, "sgd"));
    return train_selected_by_pauc(data, net, sgd);
}

std::vector<Network> train_ensemble_members(const TrainingData& data, const MethodSettings& s, std::uint64_t seed) {
    std::vector<Network> members;
    members.reserve(s.ensemble_size);
    for (std::size_t k = 0; k < s.ensemble_size; ++k) members.push_back(train_ensemble_member(data, s, seed, k));
    return members;
}

DeferralModel make_ensemble(std::vector<Network> members, const MethodSettings& s, std::uint64_t seed) {
    if (members.empty()) throw ConfigError("ensemble needs at least one member");
    return DeferralModel(DeferralModel::Ensemble{std::move(members)},
                         make_sampler(s.sampler, seed_for(seed, Method::Ensemble, 0, "sampler")));
}

DeferralModel train_swag(const TrainingData& data, const MethodSettings& s, std::uint64_t seed) {
    const auto net = make_net(s.net, data.input_dim(), 2, 0.0, seed_for(seed, Method::Swag, 0, "net"));
    const auto sgd = make_sgd(s.sgd, seed_for(seed, Method::Swag, 0, "sgd"));
    auto run = train(Network(net), data.x_train, data.y_train, CrossEntropyLoss{}, sgd, data.w_train);
    return DeferralModel(DeferralModel::Swag{swag_collect(run.checkpoints, net, s.swag)},
                         make_sampler(s.sampler, seed_for(seed, Method::Swag, 0, "sampler")));
}

DeferralModel train_mc_dropout(const TrainingData& data, const MethodSettings& s, std::uint64_t seed) {
    const auto net =
        make_net(s.net, data.input_dim(), 2, s.mc_dropout_rate, seed_for(seed, Method::McDropout, 0, "net"));
    const auto sgd = make_sgd(s.sgd, seed_for(seed, Method::McDropout, 0, "sgd"));
    return DeferralModel(DeferralModel::McDropout{train_selected_by_pauc(data, net, sgd)},
                         make_sampler(s.sampler, seed_for(seed, Method::McDropout, 0, "sampler")));
}

DeferralModel train_bnn(const TrainingData& data, const MethodSettings& s, std::uint64_t seed) {
    const auto net = make_net(s.net, data.input_dim(), 2, 0.0, seed_for(seed, Method::Bnn, 0, "net"));
    const auto sgd = make_sgd(s.sgd, seed_for(seed, Method::Bnn, 0, "sgd"));
    auto run = bnn_train(data.x_train, data.y_train, data.w_train, net, sgd, s.bnn);
    // Select the epoch whose posterior mean has the best validation pAUC.
    std::vector<Vector> means;
    means.reserve(run.checkpoints.size());
    for (const auto& c : run.checkpoints) means.push_back(c.mean);
    const Vector best = select_by_pauc(net, means, data.x_val, data.y_val);
    std::size_t idx = 0;
    for (std::size_t i = 0; i < means.size(); ++i)
        if (means[i] == best) {
            idx = i;
            break;
        }
    return DeferralModel(DeferralModel::Bnn{run.checkpoints[idx]},
                         make_sampler(s.sampler, seed_for(seed, Method::Bnn, 0, "sampler")));
}

DeferralModel train_one_stage(const TrainingData& data, const NetConfig& net, const SgdConfig& sgd, double alpha) {
    const OneStageCost cost(alpha);
    if (net.output_dim != 3) throw ConfigError("one-stage deferral needs output_dim = n + 1 = 3");
    if (net.input_dim != data.input_dim()) throw ConfigError("net input_dim does not match the data");
    const LossSpec loss = cost;
    auto run = train(Network(net), data.x_train, data.y_train, loss, sgd, data.w_train);
    Network best(net);
    best.set_params(select_by_loss(net, run.checkpoints, data.x_val, data.y_val, loss));
    return DeferralModel(DeferralModel::OneStage{std::move(best), cost});
}

DeferralModel train_two_stage(const TrainingData& data, const std::vector<Network>& stage1, NetConfig mlp,
                              const SgdConfig& sgd, double beta, std::size_t expected_members) {
    const TwoStageCost cost(beta);
    if (stage1.size() != expected_members)
        throw ConfigError("two-stage features expect " + std::to_string(expected_members) + " ensemble members, got " +
                          std::to_string(stage1.size()));
    if (mlp.output_dim != 3) throw ConfigError("two-stage MLP needs output_dim = n + 1 = 3");
    mlp.input_dim = stage1.size() + 2;
    const Matrix f_train = two_stage_features(member_probability_matrix(stage1, data.x_train));
    const Matrix f_val = two_stage_features(member_probability_matrix(stage1, data.x_val));
    const LossSpec loss = cost;
    auto run = train(Network(mlp), f_train, data.y_train, loss, sgd, data.w_train);
    Network best(mlp);
    best.set_params(select_by_loss(mlp, run.checkpoints, f_val, data.y_val, loss));
    return DeferralModel(DeferralModel::TwoStage{stage1, std::move(best), cost});
}

DeferralModel train_one_stage(const TrainingData& data, const MethodSettings& s, double alpha, std::uint64_t seed) {
    const auto net = make_net(s.net, data.input_dim(), 3, 0.0, seed_for(seed, Method::LearnedOneStage, 0, "net"));
    const auto sgd = make_sgd(s.sgd, seed_for(seed, Method::LearnedOneStage, 0, "sgd"));
    return train_one_stage(data, net, sgd, alpha);
}

DeferralModel train_two_stage(const TrainingData& data, const std::vector<Network>& stage1, const MethodSettings& s,
                              double beta, std::uint64_t seed) {
    NetConfig mlp = s.two_stage_net;
    mlp.output_dim = 3;
    mlp.dropout_rate = 0.0;
    mlp.seed = seed_for(seed, Method::LearnedTwoStage, 0, "net");
    const auto sgd = make_sgd(s.two_stage_sgd, seed_for(seed, Method::LearnedTwoStage, 0, "sgd"));
    return train_two_stage(data, stage1, mlp, sgd, beta, s.ensemble_size);
}

}  // namespace dfb
