#include "dfb/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dfb/error.hpp"

namespace dfb {

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        case Split::Unassigned: return "unassigned";
    }
    return "unassigned";
}

std::size_t Dataset::positives() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::vector<std::size_t> Dataset::rows_in(Split s) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) rows.push_back(i);
    return rows;
}

Matrix Dataset::features_in(Split s) const {
    const auto rows = rows_in(s);
    return gather_rows(features, rows);
}

std::vector<int> Dataset::labels_in(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
        if (splits[i] == s) out.push_back(labels[i]);
    return out;
}

void Dataset::validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size())
        throw ShapeError("feature rows and labels disagree");
    if (splits.size() != labels.size()) throw ShapeError("split tags and labels disagree");
    if (spatial && spatial->size() != dim()) throw ShapeError("spatial shape does not match feature width");
    for (int y : labels)
        if (y != 0 && y != 1) throw LabelError("labels must be 0 or 1");
}

void SynthSpec::validate() const {
    if (n_samples < 10) throw ConfigError("n_samples must be at least 10");
    if (!(positive_fraction > 0.0 && positive_fraction < 0.5)) throw ConfigError("positive_fraction must lie in (0, 0.5)");
    if (!(overlap >= 0.0) || !(texture >= 0.0)) throw ConfigError("overlap and texture must be >= 0");
    if (overlap == 0.0 && texture == 0.0) throw ConfigError("degenerate geometry: zero overlap with zero variance");
    if (!(contrast > 0.0)) throw ConfigError("contrast must be positive");
    if (spatial && spatial->size() == 0) throw ConfigError("empty spatial shape");
    if (!spatial && dim < 2) throw ConfigError("dim must be >= 2");
}

namespace {

// Low-frequency blob: a broad Gaussian bump, per channel.
void draw_image(std::span<double> out, const SpatialShape& shape, int label, const SynthSpec& spec, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double h = static_cast<double>(shape.height);
    const double w = static_cast<double>(shape.width);
    const double cy = 0.5 * (h - 1.0) + 0.5 * normal(rng);
    const double cx = 0.5 * (w - 1.0) + 0.5 * normal(rng);
    const double radius = 0.18 * std::min(h, w);
    const double amplitude = spec.contrast * (static_cast<double>(label) + spec.overlap * normal(rng));
    const double base = 0.35 + 0.2 * uniform(rng);
    const double gy = 0.05 * normal(rng);
    const double gx = 0.05 * normal(rng);
    std::size_t k = 0;
    for (std::size_t c = 0; c < shape.channels; ++c) {
        for (std::size_t y = 0; y < shape.height; ++y) {
            for (std::size_t x = 0; x < shape.width; ++x, ++k) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                const double bump = std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                const double ramp = gy * (2.0 * static_cast<double>(y) / (h - 1.0) - 1.0) +
                                    gx * (2.0 * static_cast<double>(x) / (w - 1.0) - 1.0);
                const double v = base + ramp + amplitude * bump + spec.texture * normal(rng);
                out[k] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
}

// Two blob families per class along a nuisance direction.
struct VectorGeometry {
    Vector signal;
    Vector nuisance;
};

VectorGeometry vector_geometry(std::size_t dim, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector s(dim), n(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        s[static_cast<Eigen::Index>(i)] = normal(rng);
        n[static_cast<Eigen::Index>(i)] = normal(rng);
    }
    s.normalize();
    n -= n.dot(s) * s;
    n.normalize();
    return {s, n};
}

}  // namespace

Dataset generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, {tag_of("generate")}));
    const std::size_t n = spec.n_samples;
    const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.positive_fraction));

    Dataset d;
    d.labels.assign(n, 0);
    std::fill(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
    std::shuffle(d.labels.begin(), d.labels.end(), rng);
    d.splits.assign(n, Split::Unassigned);
    d.spatial = spec.spatial;
    const std::size_t dim = spec.spatial ? spec.spatial->size() : spec.dim;
    d.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));

    std::vector<double> row(dim);
    if (spec.spatial) {
        for (std::size_t i = 0; i < n; ++i) {
            draw_image(row, *spec.spatial, d.labels[i], spec, rng);
            for (std::size_t j = 0; j < dim; ++j) d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
        }
        d.provenance = "synthetic image patches " + std::to_string(spec.spatial->height) + "x" +
                       std::to_string(spec.spatial->width) + "x" + std::to_string(spec.spatial->channels);
    } else {
        const auto geo = vector_geometry(dim, rng);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::bernoulli_distribution family(0.5);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = spec.contrast * (static_cast<double>(d.labels[i]) + spec.overlap * normal(rng));
            const double f = family(rng) ? spec.contrast : -spec.contrast;
            for (std::size_t j = 0; j < dim; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                d.features(static_cast<Eigen::Index>(i), jj) =
                    0.5 + a * geo.signal[jj] + f * geo.nuisance[jj] + spec.texture * normal(rng);
            }
        }
        d.provenance = "synthetic vectors d=" + std::to_string(dim);
    }
    quantize_to_float(d.features);
    return d;
}

Dataset split(Dataset data, std::uint64_t seed) {
    const std::size_t n = data.size();
    if (data.splits.size() != n) data.splits.assign(n, Split::Unassigned);
    Rng rng(derive_seed(seed, {tag_of("split")}));

    auto portion = [](std::size_t count, double f) {
        return static_cast<std::size_t>(std::llround(static_cast<double>(count) * f));
    };
    const std::size_t n_train = portion(n, 0.7);
    const std::size_t n_val = portion(n, 0.2);
    const std::size_t n_pos = data.positives();
    const std::size_t p_train = std::min(portion(n_pos, 0.7), n_train);
    const std::size_t p_val = std::min(portion(n_pos, 0.2), n_val);

    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (data.labels[i] == 1 ? pos : neg).push_back(i);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    const std::size_t n_train_neg = n_train - p_train;
    const std::size_t n_val_neg = n_val - p_val;
    if (n_train_neg + n_val_neg > neg.size()) throw StratificationError("not enough negatives for the split");
    const std::size_t p_test = n_pos - p_train - p_val;
    const std::size_t n_test_neg = neg.size() - n_train_neg - n_val_neg;
    if (p_train == 0 || p_val == 0 || p_test == 0 || n_train_neg == 0 || n_val_neg == 0 || n_test_neg == 0)
        throw StratificationError("a split would be empty for one class (positives=" + std::to_string(n_pos) +
                                  ", negatives=" + std::to_string(neg.size()) + ")");

    for (std::size_t k = 0; k < pos.size(); ++k)
        data.splits[pos[k]] = k < p_train ? Split::Train : (k < p_train + p_val ? Split::Val : Split::Test);
    for (std::size_t k = 0; k < neg.size(); ++k)
        data.splits[neg[k]] = k < n_train_neg ? Split::Train : (k < n_train_neg + n_val_neg ? Split::Val : Split::Test);
    return data;
}

std::vector<double> oversample_weights(std::span<const int> labels) {
    std::array<std::size_t, 2> count{0, 0};
    for (int y : labels) {
        if (y != 0 && y != 1) throw LabelError("labels must be 0 or 1");
        ++count[static_cast<std::size_t>(y)];
    }
    if (count[0] == 0 || count[1] == 0) throw LabelError("a class has zero samples; cannot oversample");
    std::vector<double> w(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) w[i] = 1.0 / static_cast<double>(count[static_cast<std::size_t>(labels[i])]);
    return w;
}

std::string to_string(CorruptionKind k) { return k == CorruptionKind::Noise ? "noise" : "blur"; }

CorruptionKind parse_corruption_kind(const std::string& s) {
    if (s == "noise") return CorruptionKind::Noise;
    if (s == "blur") return CorruptionKind::Blur;
    throw ConfigError("unknown corruption kind '" + s + "'");
}

void CorruptionLevels::validate() const {
    for (const auto* arr : {&noise_stddev, &blur_sigma}) {
        double prev = 0.0;
        for (double v : *arr) {
            if (!(v > prev)) throw ConfigError("corruption parameters must be positive and strictly increasing");
            prev = v;
        }
    }
}

CorruptionSpec CorruptionSpec::resolve(CorruptionKind kind, int level, const CorruptionLevels& levels) {
    if (level < 0 || level > 5) throw ConfigError("corruption level must lie in 0..5");
    levels.validate();
    CorruptionSpec s{kind, level, 0.0};
    if (level > 0) {
        const auto& table = kind == CorruptionKind::Noise ? levels.noise_stddev : levels.blur_sigma;
        s.parameter = table[static_cast<std::size_t>(level - 1)];
    }
    return s;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("blur sigma must be positive");
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

namespace {

// Half-sample symmetric reflection: ... b a | a b c ... c b a | a ...
std::size_t reflect(long i, long n) {
    const long period = 2 * n;
    long m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace

std::vector<double> gaussian_blur(std::span<const double> image, const SpatialShape& shape, double sigma) {
    if (image.size() != shape.size()) throw ShapeError("image size does not match spatial shape");
    const auto kernel = gaussian_kernel(sigma);
    const long radius = static_cast<long>(kernel.size() / 2);
    const long h = static_cast<long>(shape.height);
    const long w = static_cast<long>(shape.width);
    std::vector<double> tmp(image.size()), out(image.size());
    for (std::size_t c = 0; c < shape.channels; ++c) {
        const std::size_t base = c * shape.height * shape.width;
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double s = 0.0;
                for (long t = -radius; t <= radius; ++t)
                    s += kernel[static_cast<std::size_t>(t + radius)] *
                         image[base + static_cast<std::size_t>(y * w) + reflect(x + t, w)];
                tmp[base + static_cast<std::size_t>(y * w + x)] = s;
            }
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double s = 0.0;
                for (long t = -radius; t <= radius; ++t)
                    s += kernel[static_cast<std::size_t>(t + radius)] *
                         tmp[base + reflect(y + t, h) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
                out[base + static_cast<std::size_t>(y * w + x)] = s;
            }
    }
    return out;
}

void quantize_to_float(Matrix& m) {
    m = m.cast<float>().cast<double>();
}

Dataset corrupt(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed) {
    if (spec.level < 0 || spec.level > 5) throw ConfigError("corruption level must lie in 0..5");
    if (spec.kind == CorruptionKind::Blur && !data.spatial)
        throw UnsupportedCorruption("blur requires a spatial shape; dataset is plain feature vectors");
    if (spec.level == 0) return data;

    std::vector<std::size_t> rows = data.rows_in(Split::Test);
    if (rows.empty()) {
        rows.resize(data.size());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    Dataset out = data;
    const std::size_t dim = data.dim();
    std::vector<double> image(dim);
    if (spec.kind == CorruptionKind::Noise) {
        Rng rng(derive_seed(seed, {tag_of("noise")}));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t r : rows)
            for (std::size_t j = 0; j < dim; ++j) {
                const auto ri = static_cast<Eigen::Index>(r);
                const auto ji = static_cast<Eigen::Index>(j);
                out.features(ri, ji) = std::clamp(data.features(ri, ji) + spec.parameter * normal(rng), 0.0, 1.0);
            }
    } else {
        for (std::size_t r : rows) {
            const auto ri = static_cast<Eigen::Index>(r);
            for (std::size_t j = 0; j < dim; ++j) image[j] = data.features(ri, static_cast<Eigen::Index>(j));
            const auto blurred = gaussian_blur(image, *data.spatial, spec.parameter);
            for (std::size_t j = 0; j < dim; ++j) out.features(ri, static_cast<Eigen::Index>(j)) = blurred[j];
        }
    }
    quantize_to_float(out.features);
    out.provenance = data.provenance + " | " + to_string(spec.kind) + " level " + std::to_string(spec.level);
    return out;
}

}  // namespace dfb
