#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dfb/data.hpp"
#include "dfb/error.hpp"
#include "dfb/metrics.hpp"
#include "dfb/nnet.hpp"
#include "oracles.hpp"

using namespace dfb;

namespace {

SynthSpec small_spec(std::uint64_t seed = 1) {
    SynthSpec s;
    s.n_samples = 2000;
    s.seed = seed;
    return s;
}

Dataset constant_images(std::size_t rows, double value, SpatialShape shape = {}) {
    Dataset d;
    d.spatial = shape;
    d.features = Matrix::Constant(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(shape.size()), value);
    d.labels.assign(rows, 0);
    d.labels[0] = 1;
    d.splits.assign(rows, Split::Unassigned);
    return d;
}

std::size_t count_split(const Dataset& d, Split s) { return d.rows_in(s).size(); }

}  // namespace

TEST_CASE("synthetic spec validation") {
    SynthSpec s;
    CHECK_NOTHROW(s.validate());
    s.overlap = 0.0;
    CHECK_NOTHROW(s.validate());
    s.texture = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = SynthSpec{};
    s.positive_fraction = 0.5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.positive_fraction = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("generate") {
    SynthSpec s;
    s.seed = 3;
    const Dataset d = generate(s);
    CHECK(d.size() == 10000);
    CHECK(d.dim() == 256);
    CHECK(d.positives() >= 250);
    CHECK(d.positives() <= 350);
    CHECK(std::abs(static_cast<double>(d.positives()) / 10000.0 - 0.03) <= 0.005);
    CHECK(d.features.minCoeff() >= 0.0);
    CHECK(d.features.maxCoeff() <= 1.0);
    Matrix q = d.features;
    quantize_to_float(q);
    CHECK((q.array() == d.features.array()).all());
    for (auto sp : d.splits) CHECK(sp == Split::Unassigned);

    const Dataset again = generate(s);
    CHECK((again.features.array() == d.features.array()).all());
    CHECK(again.labels == d.labels);
    s.seed = 4;
    CHECK(!(generate(s).features.array() == d.features.array()).all());
}

TEST_CASE("vector mode") {
    SynthSpec s = small_spec();
    s.spatial.reset();
    s.dim = 12;
    const Dataset d = generate(s);
    CHECK(d.dim() == 12);
    CHECK(!d.spatial);
    CHECK(d.positives() == 60);
}

TEST_CASE("separable data is learned almost perfectly") {
    SynthSpec s;
    s.overlap = 0.0;
    s.seed = 8;
    Dataset d = split(generate(s), 2);
    const auto w = oversample_weights(d.labels_in(Split::Train));
    NetConfig c;
    c.input_dim = d.dim();
    c.seed = 1;
    SgdConfig sgd;
    sgd.seed = 2;
    const auto r = train(Network(c), d.features_in(Split::Train), d.labels_in(Split::Train), CrossEntropyLoss{}, sgd, w);
    const auto logits = r.network.forward(d.features_in(Split::Test));
    const auto yt = d.labels_in(Split::Test);
    std::vector<Decision> dec;
    for (Eigen::Index i = 0; i < logits.rows(); ++i)
        dec.push_back(logits(i, 1) > logits(i, 0) ? Decision::Positive : Decision::Negative);
    CHECK(*balanced_accuracy(confusion(dec, yt)) > 0.99);
}

TEST_CASE("stratified split") {
    SUBCASE("n = 100") {
        Dataset d = constant_images(100, 0.5);
        for (int i = 0; i < 10; ++i) d.labels[i] = 1;
        d = split(d, 1);
        CHECK(count_split(d, Split::Train) == 70);
        CHECK(count_split(d, Split::Val) == 20);
        CHECK(count_split(d, Split::Test) == 10);
    }
    SUBCASE("n = 101") {
        Dataset d = constant_images(101, 0.5);
        for (int i = 0; i < 10; ++i) d.labels[i] = 1;
        d = split(d, 1);
        CHECK(std::abs(static_cast<double>(count_split(d, Split::Train)) - 70.7) <= 1.0);
        CHECK(std::abs(static_cast<double>(count_split(d, Split::Val)) - 20.2) <= 1.0);
        CHECK(std::abs(static_cast<double>(count_split(d, Split::Test)) - 10.1) <= 1.0);
    }
    SUBCASE("positives follow the global fraction and every row is tagged once") {
        const Dataset d = split(generate(small_spec()), 5);
        const double frac = static_cast<double>(d.positives()) / static_cast<double>(d.size());
        for (Split s : {Split::Train, Split::Val, Split::Test}) {
            const auto y = d.labels_in(s);
            const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
            CHECK(std::abs(pos - frac * static_cast<double>(y.size())) <= 1.0);
            CHECK(pos >= 1);
        }
        CHECK(count_split(d, Split::Train) + count_split(d, Split::Val) + count_split(d, Split::Test) == d.size());
        for (auto s : d.splits) CHECK(s != Split::Unassigned);
    }
    SUBCASE("too few positives") {
        Dataset d = constant_images(100, 0.5);
        d.labels[1] = 1;
        CHECK_THROWS_AS(split(d, 1), StratificationError);
    }
    SUBCASE("deterministic under seed") {
        const Dataset g = generate(small_spec());
        CHECK(split(g, 7).splits == split(g, 7).splits);
        CHECK(split(g, 7).splits != split(g, 8).splits);
    }
}

TEST_CASE("oversampling weights") {
    std::vector<int> y(100, 0);
    std::fill(y.begin(), y.begin() + 3, 1);
    const auto w = oversample_weights(y);
    CHECK(w[0] == doctest::Approx(1.0 / 3));
    CHECK(w[50] == doctest::Approx(1.0 / 97));
    double s0 = 0, s1 = 0;
    for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? s1 : s0) += w[i];
    CHECK(s0 == doctest::Approx(1.0));
    CHECK(s1 == doctest::Approx(1.0));

    const std::vector<int> balanced{0, 1, 0, 1};
    const auto wb = oversample_weights(balanced);
    CHECK(std::all_of(wb.begin(), wb.end(), [&](double v) { return v == wb[0]; }));
    CHECK_THROWS_AS(oversample_weights(std::vector<int>{0, 0, 0}), LabelError);
}

TEST_CASE("corruption parameters") {
    const CorruptionLevels levels;
    double prev_n = 0, prev_b = 0;
    for (int l = 1; l <= 5; ++l) {
        const auto n = CorruptionSpec::resolve(CorruptionKind::Noise, l, levels);
        const auto b = CorruptionSpec::resolve(CorruptionKind::Blur, l, levels);
        CHECK(n.parameter > prev_n);
        CHECK(b.parameter > prev_b);
        prev_n = n.parameter;
        prev_b = b.parameter;
    }
    CHECK(CorruptionSpec::resolve(CorruptionKind::Noise, 3, levels).parameter == 0.12);
    CHECK(CorruptionSpec::resolve(CorruptionKind::Blur, 0, levels).parameter == 0.0);
    CHECK_THROWS_AS(CorruptionSpec::resolve(CorruptionKind::Blur, 6, levels), ConfigError);
    CHECK(parse_corruption_kind("blur") == CorruptionKind::Blur);
    CHECK_THROWS_AS(parse_corruption_kind("jpeg"), ConfigError);
}

TEST_CASE("corrupt") {
    const Dataset d = split(generate(small_spec()), 3);

    SUBCASE("level zero is the identity") {
        for (auto k : {CorruptionKind::Noise, CorruptionKind::Blur}) {
            const Dataset c = corrupt(d, CorruptionSpec::resolve(k, 0), 9);
            CHECK((c.features.array() == d.features.array()).all());
            CHECK(c.labels == d.labels);
            CHECK(c.splits == d.splits);
        }
    }
    SUBCASE("only test rows change and labels never do") {
        const Dataset c = corrupt(d, CorruptionSpec::resolve(CorruptionKind::Noise, 2), 9);
        CHECK(c.labels == d.labels);
        for (std::size_t r = 0; r < d.size(); ++r) {
            const bool same = (c.features.row(static_cast<Eigen::Index>(r)).array() ==
                               d.features.row(static_cast<Eigen::Index>(r)).array())
                                  .all();
            CHECK(same == (d.splits[r] != Split::Test));
        }
    }
    SUBCASE("deterministic and nested across noise levels") {
        const auto a = corrupt(d, CorruptionSpec::resolve(CorruptionKind::Noise, 1), 4);
        const auto b = corrupt(d, CorruptionSpec::resolve(CorruptionKind::Noise, 1), 4);
        CHECK((a.features.array() == b.features.array()).all());
        const auto e = corrupt(d, CorruptionSpec::resolve(CorruptionKind::Noise, 5), 4);
        int checked = 0;
        for (auto r : d.rows_in(Split::Test))
            for (Eigen::Index j = 0; j < 20; ++j) {
                const auto ri = static_cast<Eigen::Index>(r);
                const double d1 = a.features(ri, j) - d.features(ri, j);
                const double d5 = e.features(ri, j) - d.features(ri, j);
                if (e.features(ri, j) <= 0.0 || e.features(ri, j) >= 1.0 || std::abs(d1) < 1e-3) continue;
                CHECK(d5 == doctest::Approx(5.0 * d1).epsilon(1e-4));
                ++checked;
            }
        CHECK(checked > 100);
    }
    SUBCASE("blur needs a spatial shape") {
        Dataset v = d;
        v.spatial.reset();
        CHECK_THROWS_AS(corrupt(v, CorruptionSpec::resolve(CorruptionKind::Blur, 1), 1), UnsupportedCorruption);
        CHECK_NOTHROW(corrupt(v, CorruptionSpec::resolve(CorruptionKind::Noise, 1), 1));
    }
}

TEST_CASE("noise magnitude") {
    // 3907 images x 256 pixels > 1e6 draws around 0.5, where clamping at
    // 0 and 1 is more than four standard deviations away.
    const Dataset d = constant_images(3907, 0.5);
    const auto spec = CorruptionSpec::resolve(CorruptionKind::Noise, 3);
    const Dataset c = corrupt(d, spec, 77);
    std::vector<double> dev;
    dev.reserve(static_cast<std::size_t>(c.features.size()));
    for (Eigen::Index i = 0; i < c.features.rows(); ++i)
        for (Eigen::Index j = 0; j < c.features.cols(); ++j) dev.push_back(c.features(i, j) - 0.5);
    CHECK(dev.size() >= 1000000);
    CHECK(std::abs(oracle::sample_stddev(dev) / spec.parameter - 1.0) < 0.02);
}

TEST_CASE("gaussian blur") {
    const SpatialShape shape{16, 16, 1};
    SUBCASE("kernel") {
        for (double s : {0.5, 1.0, 2.5}) {
            const auto k = gaussian_kernel(s);
            CHECK(k.size() == 2 * static_cast<std::size_t>(std::ceil(3 * s)) + 1);
            CHECK(std::accumulate(k.begin(), k.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
            CHECK(k[k.size() / 2] == *std::max_element(k.begin(), k.end()));
        }
    }
    SUBCASE("constant image is unchanged") {
        const std::vector<double> img(256, 0.37);
        for (double s : {0.5, 2.5})
            for (double v : gaussian_blur(img, shape, s)) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
        const Dataset d = constant_images(4, 0.25);
        const Dataset c = corrupt(d, CorruptionSpec::resolve(CorruptionKind::Blur, 5), 1);
        CHECK((c.features.array() == d.features.array()).all());
    }
    SUBCASE("linearity") {
        const Matrix r = oracle::random_matrix(2, 256, 5);
        std::vector<double> x(256), y(256), z(256);
        for (int j = 0; j < 256; ++j) {
            x[j] = r(0, j);
            y[j] = r(1, j);
            z[j] = 0.7 * x[j] - 1.9 * y[j];
        }
        const auto bx = gaussian_blur(x, shape, 1.5), by = gaussian_blur(y, shape, 1.5), bz = gaussian_blur(z, shape, 1.5);
        for (int j = 0; j < 256; ++j) CHECK(std::abs(bz[j] - (0.7 * bx[j] - 1.9 * by[j])) < 1e-10);
    }
    SUBCASE("mass is preserved and channels do not mix") {
        const SpatialShape two{8, 8, 2};
        std::vector<double> img(128, 0.0);
        img[3 * 8 + 4] = 1.0;
        const auto b = gaussian_blur(img, two, 1.0);
        double first = 0, second = 0;
        for (int j = 0; j < 64; ++j) first += b[j];
        for (int j = 64; j < 128; ++j) second += b[j];
        CHECK(first == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(second == 0.0);
    }
    CHECK_THROWS_AS(gaussian_blur(std::vector<double>(10), shape, 1.0), ShapeError);
}

TEST_CASE("dataset validation") {
    Dataset d = constant_images(5, 0.1);
    CHECK_NOTHROW(d.validate());
    d.labels[2] = 2;
    CHECK_THROWS_AS(d.validate(), LabelError);
    d.labels[2] = 0;
    d.splits.pop_back();
    CHECK_THROWS_AS(d.validate(), ShapeError);
}
