#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfb/losses.hpp"
#include "dfb/rng.hpp"

namespace dfb {

// Samples are rows.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct NetConfig {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden_dims{64, 64};
    std::size_t output_dim = 2;
    // Inverted dropout applied to the activations of the last hidden layer.
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;

    void validate() const;

    // "input_dim=..;hidden_dims=a,b;output_dim=..;dropout_rate=..;seed=.."
    // Byte-stable; used in checkpoint headers.
    std::string canonical() const;
    static NetConfig from_canonical(std::string_view text);

    bool operator==(const NetConfig&) const = default;
};

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t batch_size = 128;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;

    void validate() const;
};

// Dense ReLU network with a linear output layer. Value type; the flat
// parameter order is layer by layer, weights (column-major, out x in) then bias.
class Network {
public:
    explicit Network(NetConfig config);

    const NetConfig& config() const noexcept { return config_; }
    std::size_t parameter_count() const noexcept { return parameter_count_; }
    std::size_t layer_count() const noexcept { return layers_.size(); }

    Vector get_params() const;
    void set_params(const Eigen::Ref<const Vector>& params);

    // Deterministic pass (dropout off).
    Matrix forward(const Matrix& batch) const;
    Matrix forward(const Matrix& batch, bool dropout_on, Rng& rng) const;

    // Gradient of the mean batch loss with respect to the flat parameters.
    Vector backward(const Matrix& batch, std::span<const int> labels, const LossSpec& loss) const;

    // Mean batch loss; writes its gradient into `grad`. With `dropout_on` the
    // mask is drawn from `rng`.
    double loss_and_gradient(const Matrix& batch, std::span<const int> labels, const LossSpec& loss,
                             Vector& grad, bool dropout_on = false, Rng* rng = nullptr) const;

    std::vector<double> row_losses(const Matrix& batch, std::span<const int> labels,
                                   const LossSpec& loss) const;
    double mean_loss(const Matrix& batch, std::span<const int> labels, const LossSpec& loss) const;

private:
    struct Layer {
        Matrix weight;  // out x in
        Vector bias;
    };
    struct Cache {
        std::vector<Matrix> activations;  // post-activation of each hidden layer
        Matrix dropout_scale;             // entries in {0, 1/(1-p)}; empty when unused
    };

    Matrix run(const Matrix& batch, bool dropout_on, Rng* rng, Cache* cache) const;
    void check_input(const Matrix& batch) const;

    NetConfig config_;
    std::vector<Layer> layers_;
    std::size_t parameter_count_ = 0;
};

// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

// Draws indices with replacement, proportionally to fixed positive weights.
class WeightedSampler {
public:
    explicit WeightedSampler(std::span<const double> weights);
    std::size_t draw(Rng& rng);
    std::size_t size() const noexcept { return n_; }

private:
    std::discrete_distribution<std::size_t> dist_;
    std::size_t n_;
};

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows);

struct TrainResult {
    Network network;
    std::vector<Vector> checkpoints;  // parameters after each epoch
    std::vector<double> epoch_losses; // mean minibatch loss per epoch
};

// Momentum SGD over minibatches drawn by weighted sampling with replacement.
// One epoch is ceil(n / batch_size) steps. Dropout is active during training
// when the network has a non-zero rate.
TrainResult train(Network net, const Matrix& x, std::span<const int> labels, const LossSpec& loss,
                  const SgdConfig& sgd, std::span<const double> sample_weights);

// Applies one momentum step in place: v = momentum*v + grad + wd*params; params -= lr*v.
void sgd_step(Vector& params, Vector& velocity, const Vector& grad, const SgdConfig& sgd);

}  // namespace dfb
