#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dfb/nnet.hpp"

namespace dfb {

struct SamplerConfig {
    std::size_t n_samples = 10;
    std::uint64_t seed = 0;

    void validate() const;
};

// Mean and population variance over N sampled positive-class probabilities.
struct SampledPrediction {
    std::vector<double> mean_probability;
    std::vector<double> variance;
    Matrix samples;  // N x B, row k holds sample k
};

// 1 - 2|s1 - 0.5|; throws DomainError outside [0, 1].
double softmax_uncertainty(double s1);

// Positive-class softmax of a two-output network (or the first two outputs).
std::vector<double> positive_probabilities(const Matrix& logits);

// Reduces an N x B sample matrix to per-column mean and population variance.
SampledPrediction summarize_samples(Matrix samples);

SampledPrediction ensemble_predict(std::span<const Network> members, const Matrix& batch);

struct SwagConfig {
    // Fraction of epochs skipped before collection begins.
    double burn_in_fraction = 0.4;
    std::size_t max_rank = 20;

    void validate() const;
};

struct SwagPosterior {
    NetConfig config;
    Vector mean;
    Vector second_moment;
    Matrix deviations;  // P x K, columns are the last K collected vectors minus the mean
    std::size_t collected = 0;

    std::size_t rank() const noexcept { return static_cast<std::size_t>(deviations.cols()); }
    Vector diagonal_variance() const;
};

// Collects every checkpoint after floor(burn_in_fraction * count).
SwagPosterior swag_collect(std::span<const Vector> checkpoints, const NetConfig& config,
                           const SwagConfig& swag = {});

// mean + sqrt(diag / 2) * z1 + D z2 / sqrt(2 (K - 1)).
Vector swag_sample(const SwagPosterior& post, Rng& rng);

SampledPrediction swag_predict(const SwagPosterior& post, const Matrix& batch, const SamplerConfig& sampler);

// N forward passes with dropout active.
SampledPrediction mc_dropout_predict(const Network& net, const Matrix& batch, std::size_t n_samples, Rng& rng);

struct BnnConfig {
    double prior_stddev = 1.0;
    double init_log_stddev = -5.0;
    // Multiplier on the summed KL per step; defaults to 1 / n_train.
    std::optional<double> kl_weight;

    void validate() const;
};

inline constexpr double kMinLogStddev = -30.0;
inline constexpr double kMaxLogStddev = 2.0;

struct BnnPosterior {
    NetConfig config;
    Vector mean;
    Vector log_stddev;
    double prior_stddev = 1.0;

    Vector stddev() const;
};

// KL(N(mu, sigma^2) || N(0, prior^2)) for one coordinate.
double kl_gaussian(double mu, double sigma, double prior_stddev);
double kl_divergence(const BnnPosterior& post);

struct BnnTrainResult {
    BnnPosterior posterior;
    std::vector<BnnPosterior> checkpoints;
    std::vector<double> epoch_losses;  // mean sampled cross-entropy per epoch
    std::vector<double> epoch_kl;
};

// Mean-field Gaussian VI: one reparameterised weight sample per step,
// loss = cross-entropy + kl_weight * KL, KL in closed form.
BnnTrainResult bnn_train(const Matrix& x, std::span<const int> labels, std::span<const double> sample_weights,
                         const NetConfig& net, const SgdConfig& sgd, const BnnConfig& bnn);

Vector bnn_sample(const BnnPosterior& post, Rng& rng);

SampledPrediction bnn_predict(const BnnPosterior& post, const Matrix& batch, const SamplerConfig& sampler);

// Mask: input i deferred iff score_i > tau.
std::vector<bool> defer_by_threshold(std::span<const double> scores, double tau);

}  // namespace dfb
