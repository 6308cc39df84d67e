#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfb/nnet.hpp"

namespace dfb {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2, Unassigned = 255 };

std::string to_string(Split s);

// Height x width x channels; features are channel-planar, row-major inside a channel.
struct SpatialShape {
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t channels = 1;

    std::size_t size() const noexcept { return height * width * channels; }
    bool operator==(const SpatialShape&) const = default;
};

struct Dataset {
    Matrix features;  // S x D, values representable as float32
    std::optional<SpatialShape> spatial;
    std::vector<int> labels;  // 0 or 1
    std::vector<Split> splits;
    std::string provenance;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(features.cols()); }
    std::size_t positives() const noexcept;

    std::vector<std::size_t> rows_in(Split s) const;
    Matrix features_in(Split s) const;
    std::vector<int> labels_in(Split s) const;

    // Throws ShapeError/LabelError when fields disagree.
    void validate() const;
};

struct SynthSpec {
    std::size_t n_samples = 10000;
    double positive_fraction = 0.03;
    // Image mode when set; otherwise `dim`-dimensional vectors.
    std::optional<SpatialShape> spatial = SpatialShape{};
    std::size_t dim = 32;
    // Class-conditional spread of the class signal, in units of the signal
    // contrast. 0 gives separable classes.
    double overlap = 0.35;
    // Intensity of the class pattern.
    double contrast = 0.12;
    // Class-independent per-feature noise.
    double texture = 0.03;
    std::uint64_t seed = 0;

    void validate() const;
};

// Exactly round(n * positive_fraction) positives in shuffled order; no split tags.
Dataset generate(const SynthSpec& spec);

// Stratified 70/20/10 split. Totals are round(0.7 n), round(0.2 n) and the rest;
// positives are distributed the same way.
Dataset split(Dataset data, std::uint64_t seed);

// weight_i = 1 / count(label_i).
std::vector<double> oversample_weights(std::span<const int> labels);

enum class CorruptionKind { Noise, Blur };

std::string to_string(CorruptionKind k);
CorruptionKind parse_corruption_kind(const std::string& s);

struct CorruptionLevels {
    std::array<double, 5> noise_stddev{0.04, 0.08, 0.12, 0.16, 0.20};
    std::array<double, 5> blur_sigma{0.5, 1.0, 1.5, 2.0, 2.5};

    void validate() const;
};

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::Noise;
    int level = 0;
    double parameter = 0.0;  // noise stddev or blur sigma in pixels; 0 at level 0

    static CorruptionSpec resolve(CorruptionKind kind, int level, const CorruptionLevels& levels = {});
};

// Corrupts the test rows (every row when none is tagged test). Noise reuses
// one base draw per seed scaled by the level's stddev, so levels are nested.
Dataset corrupt(const Dataset& data, const CorruptionSpec& spec, std::uint64_t seed);

// Normalized 1-D Gaussian kernel of radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

// Separable blur of one channel-planar image, half-sample symmetric padding.
std::vector<double> gaussian_blur(std::span<const double> image, const SpatialShape& shape, double sigma);

// Rounds every entry to the nearest float32.
void quantize_to_float(Matrix& m);

}  // namespace dfb
