#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dfb/data.hpp"
#include "dfb/metrics.hpp"
#include "dfb/uq.hpp"

namespace dfb {

enum class Method { Softmax, Ensemble, Swag, McDropout, Bnn, LearnedOneStage, LearnedTwoStage };

inline constexpr std::array<Method, 7> kAllMethods{Method::Softmax,   Method::Ensemble,        Method::Swag,
                                                   Method::McDropout, Method::Bnn,             Method::LearnedOneStage,
                                                   Method::LearnedTwoStage};

std::string to_string(Method m);
Method parse_method(const std::string& s);
bool is_learned(Method m) noexcept;

// Per-input scores produced by a model.
struct ScoreRecord {
    std::vector<double> positive_probability;
    // UQ methods: the score thresholded for deferral. Learned methods: softmax
    // mass on the deferral class.
    std::vector<double> uncertainty;
    // Learned methods only: argmax over the n + 1 logits.
    std::vector<Decision> argmax;
};

// Entropy (nats) of a Bernoulli(p); 0 log 0 = 0.
double binary_entropy(double p);
// Entropy of the member-averaged prediction.
double diagnostic_entropy(std::span<const double> member_probabilities);
// Mean of the per-member entropies.
double model_entropy(std::span<const double> member_probabilities);

// B x N member probabilities -> B x (N + 2): probabilities in member order,
// then diagnostic entropy, then model entropy.
Matrix two_stage_features(const Matrix& member_probabilities);

class DeferralModel {
public:
    struct Softmax {
        Network net;
    };
    struct Ensemble {
        std::vector<Network> members;
    };
    struct Swag {
        SwagPosterior posterior;
    };
    struct McDropout {
        Network net;
    };
    struct Bnn {
        BnnPosterior posterior;
    };
    struct OneStage {
        Network net;
        OneStageCost cost;
    };
    struct TwoStage {
        std::vector<Network> stage1;
        Network stage2;
        TwoStageCost cost;
    };
    using Artifacts = std::variant<Softmax, Ensemble, Swag, McDropout, Bnn, OneStage, TwoStage>;

    explicit DeferralModel(Artifacts artifacts, SamplerConfig sampler = {});

    Method method() const noexcept;
    bool learned() const noexcept { return is_learned(method()); }
    const Artifacts& artifacts() const noexcept { return artifacts_; }
    const SamplerConfig& sampler() const noexcept { return sampler_; }

    // Uncertainty threshold; only meaningful for UQ methods.
    std::optional<double> threshold() const noexcept { return threshold_; }
    void set_threshold(double tau);

    // Training cost for learned methods.
    std::optional<double> cost() const noexcept;

    // Pure function of (model, batch): sampling methods reseed from the
    // sampler config on every call.
    ScoreRecord score(const Matrix& batch) const;

    struct Output {
        std::vector<Decision> decisions;
        ScoreRecord scores;
    };
    // UQ: defer iff uncertainty > threshold, else class at probability 0.5.
    // Learned: argmax over n + 1 logits.
    Output predict(const Matrix& batch) const;

private:
    Artifacts artifacts_;
    SamplerConfig sampler_;
    std::optional<double> threshold_;
};

// Decision rule for UQ scores at threshold tau.
std::vector<Decision> threshold_decisions(const ScoreRecord& scores, double tau);
// Classification with deferral ignored: positive iff probability >= 0.5.
std::vector<Decision> class_decisions(const ScoreRecord& scores);

struct TrainingData {
    Matrix x_train;
    std::vector<int> y_train;
    std::vector<double> w_train;  // oversampling weights
    Matrix x_val;
    std::vector<int> y_val;

    static TrainingData from(const Dataset& data);
    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(x_train.cols()); }
};

struct MethodSettings {
    NetConfig net;  // input/output width and seed are set per model
    SgdConfig sgd;
    SamplerConfig sampler;
    SwagConfig swag;
    BnnConfig bnn;
    double mc_dropout_rate = 0.2;
    std::size_t ensemble_size = 10;
    NetConfig two_stage_net{1, {16}, 3, 0.0, 0};
    SgdConfig two_stage_sgd;

    void validate() const;
};

// Checkpoint with the best validation pAUC (earliest on ties).
Vector select_by_pauc(const NetConfig& config, std::span<const Vector> checkpoints, const Matrix& x_val,
                      std::span<const int> y_val);
// Checkpoint with the lowest class-balanced validation loss (earliest on ties).
Vector select_by_loss(const NetConfig& config, std::span<const Vector> checkpoints, const Matrix& x_val,
                      std::span<const int> y_val, const LossSpec& loss);

// Every trainer derives its network, minibatch and sampling seeds from `seed`.
DeferralModel train_softmax(const TrainingData& data, const MethodSettings& s, std::uint64_t seed);
std::vector<Network> train_ensemble_members(const TrainingData& data, const MethodSettings& s, std::uint64_t seed);
Network train_ensemble_member(const TrainingData& data, const MethodSettings& s, std::uint64_t seed, std::size_t member);
DeferralModel make_ensemble(std::vector<Network> members, const MethodSettings& s, std::uint64_t seed);
DeferralModel train_swag(const TrainingData& data, const MethodSettings& s, std::uint64_t seed);
DeferralModel train_mc_dropout(const TrainingData& data, const MethodSettings& s, std::uint64_t seed);
DeferralModel train_bnn(const TrainingData& data, const MethodSettings& s, std::uint64_t seed);

// `net.output_dim` must be n + 1 = 3. Selection: minimum validation loss.
DeferralModel train_one_stage(const TrainingData& data, const NetConfig& net, const SgdConfig& sgd, double alpha);
// `stage1` must hold exactly `expected_members` networks; `mlp.input_dim` is
// overwritten with N + 2.
DeferralModel train_two_stage(const TrainingData& data, const std::vector<Network>& stage1, NetConfig mlp,
                              const SgdConfig& sgd, double beta, std::size_t expected_members);

// Convenience wrappers that derive configs from settings.
DeferralModel train_one_stage(const TrainingData& data, const MethodSettings& s, double alpha, std::uint64_t seed);
DeferralModel train_two_stage(const TrainingData& data, const std::vector<Network>& stage1, const MethodSettings& s,
                              double beta, std::uint64_t seed);

}  // namespace dfb
