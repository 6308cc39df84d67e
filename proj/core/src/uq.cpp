#include "dfb/uq.hpp"

#include <algorithm>
#include <cmath>

#include "dfb/error.hpp"

namespace dfb {

void SamplerConfig::validate() const {
    if (n_samples == 0) throw ConfigError("n_samples must be >= 1");
}

double softmax_uncertainty(double s1) {
    if (!(s1 >= 0.0 && s1 <= 1.0)) throw DomainError("positive-class probability outside [0, 1]");
    return 1.0 - 2.0 * std::abs(s1 - 0.5);
}

std::vector<double> positive_probabilities(const Matrix& logits) {
    if (logits.cols() < 2) throw ShapeError("need at least two logits");
    std::vector<double> p(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        // sigmoid(l1 - l0), the two-class softmax
        const double d = logits(i, 1) - logits(i, 0);
        p[static_cast<std::size_t>(i)] = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
    }
    return p;
}

SampledPrediction summarize_samples(Matrix samples) {
    if (samples.rows() == 0) throw ConfigError("no samples");
    SampledPrediction out;
    const auto b = static_cast<std::size_t>(samples.cols());
    out.mean_probability.resize(b);
    out.variance.resize(b);
    const double inv_n = 1.0 / static_cast<double>(samples.rows());
    for (Eigen::Index j = 0; j < samples.cols(); ++j) {
        const auto col = samples.col(j);
        double mean = col.sum() * inv_n;
        double var = (col.array() - mean).square().sum() * inv_n;
        // Identical samples: exact mean, exactly zero spread.
        if (col.minCoeff() == col.maxCoeff()) {
            mean = col(0);
            var = 0.0;
        }
        out.mean_probability[static_cast<std::size_t>(j)] = mean;
        out.variance[static_cast<std::size_t>(j)] = var;
    }
    out.samples = std::move(samples);
    return out;
}

namespace {

void set_row(Matrix& m, Eigen::Index row, const std::vector<double>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) m(row, static_cast<Eigen::Index>(j)) = v[j];
}

}  // namespace

SampledPrediction ensemble_predict(std::span<const Network> members, const Matrix& batch) {
    if (members.empty()) throw ConfigError("ensemble needs at least one member");
    const auto& ref = members.front().config();
    Matrix samples(static_cast<Eigen::Index>(members.size()), batch.rows());
    for (std::size_t k = 0; k < members.size(); ++k) {
        const auto& c = members[k].config();
        if (c.input_dim != ref.input_dim || c.output_dim != ref.output_dim)
            throw ConfigError("ensemble members disagree on input/output width");
        set_row(samples, static_cast<Eigen::Index>(k), positive_probabilities(members[k].forward(batch)));
    }
    return summarize_samples(std::move(samples));
}

void SwagConfig::validate() const {
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) throw ConfigError("burn_in_fraction must lie in [0, 1)");
    if (max_rank < 2) throw ConfigError("SWAG max_rank must be >= 2");
}

Vector SwagPosterior::diagonal_variance() const {
    return (second_moment.array() - mean.array().square()).max(0.0).matrix();
}

SwagPosterior swag_collect(std::span<const Vector> checkpoints, const NetConfig& config, const SwagConfig& swag) {
    swag.validate();
    const auto skip = static_cast<std::size_t>(std::floor(swag.burn_in_fraction * static_cast<double>(checkpoints.size())));
    if (checkpoints.size() <= skip) throw CollectionError("no checkpoints left after burn-in");
    const auto collected = checkpoints.subspan(skip);
    const Eigen::Index p = collected.front().size();

    SwagPosterior post;
    post.config = config;
    post.mean = Vector::Zero(p);
    post.second_moment = Vector::Zero(p);
    // Running moments, as an online collector would accumulate them.
    std::size_t n = 0;
    for (const auto& v : collected) {
        if (v.size() != p) throw ShapeError("checkpoint lengths differ");
        ++n;
        const double w = 1.0 / static_cast<double>(n);
        post.mean += w * (v - post.mean);
        post.second_moment += w * (v.array().square().matrix() - post.second_moment);
    }
    post.collected = n;
    const std::size_t k = std::min(swag.max_rank, n);
    post.deviations.resize(p, static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c)
        post.deviations.col(static_cast<Eigen::Index>(c)) = collected[n - k + c] - post.mean;
    return post;
}

Vector swag_sample(const SwagPosterior& post, Rng& rng) {
    const std::size_t k = post.rank();
    if (k < 2) throw RankError("SWAG sampling needs rank >= 2, have " + std::to_string(k));
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index p = post.mean.size();
    Vector z1(p), z2(static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < p; ++i) z1[i] = normal(rng);
    for (Eigen::Index i = 0; i < z2.size(); ++i) z2[i] = normal(rng);
    const Vector diag = post.diagonal_variance();
    Vector theta = post.mean;
    theta.array() += std::sqrt(0.5) * diag.array().sqrt() * z1.array();
    theta += (post.deviations * z2) / std::sqrt(2.0 * static_cast<double>(k - 1));
    return theta;
}

SampledPrediction swag_predict(const SwagPosterior& post, const Matrix& batch, const SamplerConfig& sampler) {
    sampler.validate();
    Rng rng(sampler.seed);
    Network net(post.config);
    Matrix samples(static_cast<Eigen::Index>(sampler.n_samples), batch.rows());
    for (std::size_t s = 0; s < sampler.n_samples; ++s) {
        net.set_params(swag_sample(post, rng));
        set_row(samples, static_cast<Eigen::Index>(s), positive_probabilities(net.forward(batch)));
    }
    return summarize_samples(std::move(samples));
}

SampledPrediction mc_dropout_predict(const Network& net, const Matrix& batch, std::size_t n_samples, Rng& rng) {
    if (n_samples == 0) throw ConfigError("n_samples must be >= 1");
    Matrix samples(static_cast<Eigen::Index>(n_samples), batch.rows());
    for (std::size_t s = 0; s < n_samples; ++s)
        set_row(samples, static_cast<Eigen::Index>(s), positive_probabilities(net.forward(batch, true, rng)));
    return summarize_samples(std::move(samples));
}

void BnnConfig::validate() const {
    if (!(prior_stddev > 0.0)) throw ConfigError("prior_stddev must be positive");
    if (kl_weight && !(*kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
    if (!std::isfinite(init_log_stddev)) throw ConfigError("init_log_stddev must be finite");
}

Vector BnnPosterior::stddev() const { return log_stddev.array().exp().matrix(); }

double kl_gaussian(double mu, double sigma, double prior_stddev) {
    const double r = sigma / prior_stddev;
    return 0.5 * (r * r + (mu * mu) / (prior_stddev * prior_stddev) - 1.0) - std::log(r);
}

double kl_divergence(const BnnPosterior& post) {
    double kl = 0.0;
    for (Eigen::Index i = 0; i < post.mean.size(); ++i)
        kl += kl_gaussian(post.mean[i], std::exp(post.log_stddev[i]), post.prior_stddev);
    return kl;
}

Vector bnn_sample(const BnnPosterior& post, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector w(post.mean.size());
    for (Eigen::Index i = 0; i < w.size(); ++i)
        w[i] = post.mean[i] + std::exp(post.log_stddev[i]) * normal(rng);
    return w;
}

BnnTrainResult bnn_train(const Matrix& x, std::span<const int> labels, std::span<const double> sample_weights,
                         const NetConfig& net_config, const SgdConfig& sgd, const BnnConfig& bnn) {
    sgd.validate();
    bnn.validate();
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ShapeError("labels/features row mismatch");
    if (sample_weights.size() != labels.size()) throw ShapeError("sample_weights length mismatch");

    Network net(net_config);
    BnnPosterior post{net_config, net.get_params(), Vector::Constant(static_cast<Eigen::Index>(net.parameter_count()),
                                                                     std::clamp(bnn.init_log_stddev, kMinLogStddev, kMaxLogStddev)),
                      bnn.prior_stddev};
    const double kl_weight = bnn.kl_weight.value_or(1.0 / static_cast<double>(labels.size()));
    const double prior_var = bnn.prior_stddev * bnn.prior_stddev;

    // Same sampling stream as plain training so trajectories are comparable.
    WeightedSampler sampler(sample_weights);
    Rng sample_rng(derive_seed(sgd.seed, {tag_of("sampling")}));
    Rng eps_rng(derive_seed(sgd.seed, {tag_of("bnn-eps")}));
    std::normal_distribution<double> normal(0.0, 1.0);

    const std::size_t n = labels.size();
    const std::size_t steps = (n + sgd.batch_size - 1) / sgd.batch_size;
    const Eigen::Index p = post.mean.size();
    Vector v_mean = Vector::Zero(p), v_rho = Vector::Zero(p);
    Vector eps(p), grad_w, g_mean(p), g_rho(p);
    std::vector<std::size_t> idx(sgd.batch_size);
    std::vector<int> batch_labels(sgd.batch_size);
    const LossSpec ce = CrossEntropyLoss{};

    BnnTrainResult result{post, {}, {}, {}};
    for (std::size_t epoch = 0; epoch < sgd.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            for (std::size_t k = 0; k < sgd.batch_size; ++k) {
                idx[k] = sampler.draw(sample_rng);
                batch_labels[k] = labels[idx[k]];
            }
            const Matrix batch = gather_rows(x, idx);
            for (Eigen::Index i = 0; i < p; ++i) eps[i] = normal(eps_rng);
            const Vector sigma = post.log_stddev.array().exp().matrix();
            net.set_params(post.mean + sigma.cwiseProduct(eps));
            double l = 0.0;
            try {
                l = net.loss_and_gradient(batch, batch_labels, ce, grad_w);
            } catch (const NumericError& e) {
                throw DivergenceError(epoch + 1, e.what());
            }
            if (!std::isfinite(l)) throw DivergenceError(epoch + 1, "non-finite ELBO");
            epoch_loss += l;

            // d/dmu = g + kl_w mu / s^2 ; d/drho = g eps sigma + kl_w (sigma^2 / s^2 - 1)
            g_mean = grad_w + (kl_weight / prior_var) * post.mean + sgd.weight_decay * post.mean;
            g_rho = grad_w.cwiseProduct(eps).cwiseProduct(sigma) +
                    kl_weight * (sigma.array().square() / prior_var - 1.0).matrix();
            v_mean = sgd.momentum * v_mean + g_mean;
            v_rho = sgd.momentum * v_rho + g_rho;
            post.mean -= sgd.learning_rate * v_mean;
            post.log_stddev -= sgd.learning_rate * v_rho;
            post.log_stddev = post.log_stddev.cwiseMax(kMinLogStddev).cwiseMin(kMaxLogStddev);
            if (!post.mean.allFinite()) throw DivergenceError(epoch + 1, "non-finite posterior mean");
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(steps));
        result.epoch_kl.push_back(kl_divergence(post));
        if (!std::isfinite(result.epoch_kl.back())) throw DivergenceError(epoch + 1, "non-finite KL");
        result.checkpoints.push_back(post);
    }
    result.posterior = post;
    return result;
}

SampledPrediction bnn_predict(const BnnPosterior& post, const Matrix& batch, const SamplerConfig& sampler) {
    sampler.validate();
    Rng rng(sampler.seed);
    Network net(post.config);
    Matrix samples(static_cast<Eigen::Index>(sampler.n_samples), batch.rows());
    for (std::size_t s = 0; s < sampler.n_samples; ++s) {
        net.set_params(bnn_sample(post, rng));
        set_row(samples, static_cast<Eigen::Index>(s), positive_probabilities(net.forward(batch)));
    }
    return summarize_samples(std::move(samples));
}

std::vector<bool> defer_by_threshold(std::span<const double> scores, double tau) {
    std::vector<bool> mask(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) mask[i] = scores[i] > tau;
    return mask;
}

}  // namespace dfb
