#include "dfb/nnet.hpp"

#include <cmath>

#include "dfb/error.hpp"
#include "dfb/text.hpp"

namespace dfb {

void NetConfig::validate() const {
    if (input_dim == 0) throw ConfigError("input_dim must be positive");
    if (output_dim < 2) throw ConfigError("output_dim must be >= 2");
    for (auto h : hidden_dims)
        if (h == 0) throw ConfigError("hidden layer widths must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (dropout_rate > 0.0 && hidden_dims.empty()) throw ConfigError("dropout needs at least one hidden layer");
}

std::string NetConfig::canonical() const {
    return "input_dim=" + std::to_string(input_dim) +
           ";hidden_dims=" + join(hidden_dims, ",", [](std::size_t h) { return std::to_string(h); }) +
           ";output_dim=" + std::to_string(output_dim) + ";dropout_rate=" + format_double(dropout_rate) +
           ";seed=" + std::to_string(seed);
}

NetConfig NetConfig::from_canonical(std::string_view text) {
    NetConfig c;
    c.hidden_dims.clear();
    for (const auto& field : split(text, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw FormatError("bad NetConfig field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "input_dim") c.input_dim = parse_u64(value);
        else if (key == "hidden_dims") {
            if (!value.empty())
                for (const auto& h : split(value, ',')) c.hidden_dims.push_back(parse_u64(h));
        } else if (key == "output_dim") c.output_dim = parse_u64(value);
        else if (key == "dropout_rate") c.dropout_rate = parse_double(value);
        else if (key == "seed") c.seed = parse_u64(value);
        else throw FormatError("unknown NetConfig key '" + key + "'");
    }
    c.validate();
    return c;
}

void SgdConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
}

Network::Network(NetConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(derive_seed(config_.seed, {tag_of("init")}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t in = config_.input_dim;
    std::vector<std::size_t> widths = config_.hidden_dims;
    widths.push_back(config_.output_dim);
    for (std::size_t l = 0; l < widths.size(); ++l) {
        const std::size_t out = widths[l];
        const bool is_output = l + 1 == widths.size();
        // He init for ReLU layers, Glorot-style variance for the linear head.
        const double scale = is_output ? std::sqrt(1.0 / static_cast<double>(in))
                                       : std::sqrt(2.0 / static_cast<double>(in));
        Layer layer{Matrix(out, in), Vector::Zero(out)};
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = scale * normal(rng);
        parameter_count_ += out * in + out;
        layers_.push_back(std::move(layer));
        in = out;
    }
}

Vector Network::get_params() const {
    Vector flat(parameter_count_);
    Eigen::Index off = 0;
    for (const auto& layer : layers_) {
        const auto nw = layer.weight.size();
        flat.segment(off, nw) = Eigen::Map<const Vector>(layer.weight.data(), nw);
        off += nw;
        flat.segment(off, layer.bias.size()) = layer.bias;
        off += layer.bias.size();
    }
    return flat;
}

void Network::set_params(const Eigen::Ref<const Vector>& params) {
    if (static_cast<std::size_t>(params.size()) != parameter_count_)
        throw ShapeError("parameter vector has length " + std::to_string(params.size()) + ", expected " +
                         std::to_string(parameter_count_));
    Eigen::Index off = 0;
    for (auto& layer : layers_) {
        const auto nw = layer.weight.size();
        Eigen::Map<Vector>(layer.weight.data(), nw) = params.segment(off, nw);
        off += nw;
        layer.bias = params.segment(off, layer.bias.size());
        off += layer.bias.size();
    }
}

void Network::check_input(const Matrix& batch) const {
    if (static_cast<std::size_t>(batch.cols()) != config_.input_dim)
        throw ShapeError("input has " + std::to_string(batch.cols()) + " columns, network expects " +
                         std::to_string(config_.input_dim));
}

Matrix Network::run(const Matrix& batch, bool dropout_on, Rng* rng, Cache* cache) const {
    check_input(batch);
    const std::size_t last_hidden = layers_.size() - 1;  // index of output layer == #hidden
    const double p = config_.dropout_rate;
    const bool drop = dropout_on && p > 0.0;
    if (drop && rng == nullptr) throw UsageError("dropout requested without a generator");
    if (cache) cache->activations.clear();

    Matrix a;
    const Matrix* input = &batch;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        Matrix z = (*input) * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        if (l == last_hidden) return z;
        a = z.cwiseMax(0.0);
        if (drop && l + 1 == last_hidden) {
            std::bernoulli_distribution keep(1.0 - p);
            const double s = 1.0 / (1.0 - p);
            Matrix scale(a.rows(), a.cols());
            for (Eigen::Index j = 0; j < scale.cols(); ++j)
                for (Eigen::Index i = 0; i < scale.rows(); ++i) scale(i, j) = keep(*rng) ? s : 0.0;
            a.array() *= scale.array();
            if (cache) cache->dropout_scale = std::move(scale);
        }
        if (cache) {
            cache->activations.push_back(a);
            input = &cache->activations.back();
        } else {
            input = &a;
        }
    }
    return {};  // unreachable: the output layer returns above
}

Matrix Network::forward(const Matrix& batch) const { return run(batch, false, nullptr, nullptr); }

Matrix Network::forward(const Matrix& batch, bool dropout_on, Rng& rng) const {
    return run(batch, dropout_on, &rng, nullptr);
}

double Network::loss_and_gradient(const Matrix& batch, std::span<const int> labels, const LossSpec& loss,
                                  Vector& grad, bool dropout_on, Rng* rng) const {
    if (static_cast<std::size_t>(batch.rows()) != labels.size()) throw ShapeError("labels/batch row mismatch");
    if (batch.rows() == 0) throw ShapeError("empty batch");
    Cache cache;
    cache.activations.reserve(layers_.size());
    const Matrix logits = run(batch, dropout_on, rng, &cache);
    const bool drop = dropout_on && config_.dropout_rate > 0.0;

    const Eigen::Index rows = logits.rows();
    const Eigen::Index width = logits.cols();
    const double inv_b = 1.0 / static_cast<double>(rows);
    // Row-major scratch so each row is contiguous for the loss functions.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> lrow = logits;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grow(rows, width);
    double total = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        std::span<const double> row(lrow.row(i).data(), static_cast<std::size_t>(width));
        std::span<double> g(grow.row(i).data(), static_cast<std::size_t>(width));
        total += loss_and_grad(loss, row, labels[static_cast<std::size_t>(i)], g);
    }
    Matrix delta = grow * inv_b;

    grad.resize(static_cast<Eigen::Index>(parameter_count_));
    // Walk layers backwards; offsets computed from the end.
    Eigen::Index end = grad.size();
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const auto& layer = layers_[l];
        const Matrix& prev = l == 0 ? batch : cache.activations[l - 1];
        const Eigen::Index nb = layer.bias.size();
        const Eigen::Index nw = layer.weight.size();
        grad.segment(end - nb, nb) = delta.colwise().sum().transpose();
        Matrix dw = delta.transpose() * prev;
        grad.segment(end - nb - nw, nw) = Eigen::Map<const Vector>(dw.data(), nw);
        end -= nb + nw;
        if (l == 0) break;
        Matrix back = delta * layer.weight;
        // ReLU derivative: post-activation > 0, then the dropout scale.
        back.array() *= (prev.array() > 0.0).cast<double>();
        if (drop && l == layers_.size() - 1) back.array() *= cache.dropout_scale.array();
        delta = std::move(back);
    }
    return total * inv_b;
}

Vector Network::backward(const Matrix& batch, std::span<const int> labels, const LossSpec& loss) const {
    Vector grad;
    loss_and_gradient(batch, labels, loss, grad);
    return grad;
}

std::vector<double> Network::row_losses(const Matrix& batch, std::span<const int> labels,
                                        const LossSpec& loss) const {
    if (static_cast<std::size_t>(batch.rows()) != labels.size()) throw ShapeError("labels/batch row mismatch");
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> logits = forward(batch);
    std::vector<double> out(labels.size());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        std::span<const double> row(logits.row(i).data(), static_cast<std::size_t>(logits.cols()));
        out[static_cast<std::size_t>(i)] = loss_value(loss, row, labels[static_cast<std::size_t>(i)]);
    }
    return out;
}

double Network::mean_loss(const Matrix& batch, std::span<const int> labels, const LossSpec& loss) const {
    const auto losses = row_losses(batch, labels, loss);
    double s = 0.0;
    for (double v : losses) s += v;
    return s / static_cast<double>(losses.size());
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix p = logits;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double m = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - m).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

WeightedSampler::WeightedSampler(std::span<const double> weights) : n_(weights.size()) {
    if (weights.empty()) throw ShapeError("no sample weights");
    for (double w : weights)
        if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("sample weights must be positive and finite");
    dist_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
}

std::size_t WeightedSampler::draw(Rng& rng) { return dist_(rng); }

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

void sgd_step(Vector& params, Vector& velocity, const Vector& grad, const SgdConfig& sgd) {
    velocity = sgd.momentum * velocity + grad + sgd.weight_decay * params;
    params -= sgd.learning_rate * velocity;
}

TrainResult train(Network net, const Matrix& x, std::span<const int> labels, const LossSpec& loss,
                  const SgdConfig& sgd, std::span<const double> sample_weights) {
    sgd.validate();
    if (static_cast<std::size_t>(x.rows()) != labels.size()) throw ShapeError("labels/features row mismatch");
    if (sample_weights.size() != labels.size())
        throw ShapeError("sample_weights length " + std::to_string(sample_weights.size()) + " != training size " +
                         std::to_string(labels.size()));
    WeightedSampler sampler(sample_weights);
    Rng sample_rng(derive_seed(sgd.seed, {tag_of("sampling")}));
    Rng dropout_rng(derive_seed(sgd.seed, {tag_of("dropout")}));
    const bool dropout_on = net.config().dropout_rate > 0.0;

    const std::size_t n = labels.size();
    const std::size_t steps = (n + sgd.batch_size - 1) / sgd.batch_size;
    Vector params = net.get_params();
    Vector velocity = Vector::Zero(params.size());
    Vector grad;
    std::vector<std::size_t> idx(sgd.batch_size);
    std::vector<int> batch_labels(sgd.batch_size);

    TrainResult result{net, {}, {}};
    for (std::size_t epoch = 0; epoch < sgd.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t s = 0; s < steps; ++s) {
            for (std::size_t k = 0; k < sgd.batch_size; ++k) {
                idx[k] = sampler.draw(sample_rng);
                batch_labels[k] = labels[idx[k]];
            }
            const Matrix batch = gather_rows(x, idx);
            double l = 0.0;
            try {
                l = net.loss_and_gradient(batch, batch_labels, loss, grad, dropout_on, &dropout_rng);
            } catch (const NumericError& e) {
                throw DivergenceError(epoch + 1, e.what());
            }
            if (!std::isfinite(l)) throw DivergenceError(epoch + 1, "non-finite training loss");
            epoch_loss += l;
            sgd_step(params, velocity, grad, sgd);
            if (!params.allFinite()) throw DivergenceError(epoch + 1, "non-finite parameters");
            net.set_params(params);
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(steps));
        result.checkpoints.push_back(params);
    }
    result.network = std::move(net);
    return result;
}

}  // namespace dfb
