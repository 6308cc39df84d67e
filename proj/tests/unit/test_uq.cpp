#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dfb/error.hpp"
#include "dfb/uq.hpp"
#include "oracles.hpp"

using namespace dfb;

namespace {

// Constant predictor: zero weights, biases chosen so the positive-class
// softmax equals p for every input.
Network constant_net(double p, std::size_t input_dim = 3) {
    NetConfig c;
    c.input_dim = input_dim;
    c.hidden_dims = {};
    Network net(c);
    Vector params = Vector::Zero(static_cast<Eigen::Index>(net.parameter_count()));
    params[params.size() - 1] = std::log(p / (1 - p));
    net.set_params(params);
    return net;
}

NetConfig dropout_config(double rate) {
    NetConfig c;
    c.input_dim = 3;
    c.hidden_dims = {8};
    c.dropout_rate = rate;
    c.seed = 5;
    return c;
}

std::vector<double> column(const Matrix& m, Eigen::Index j) {
    std::vector<double> v(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, j);
    return v;
}

void check_summary_consistent(const SampledPrediction& p) {
    for (Eigen::Index j = 0; j < p.samples.cols(); ++j) {
        const auto col = column(p.samples, j);
        double mean = 0;
        for (double v : col) mean += v;
        mean /= static_cast<double>(col.size());
        CHECK(p.mean_probability[j] == doctest::Approx(mean).epsilon(1e-12));
        CHECK(p.variance[j] == doctest::Approx(oracle::population_variance(col)).epsilon(1e-9).scale(1e-12));
        CHECK(p.variance[j] >= 0.0);
        CHECK(p.variance[j] <= 0.25);
    }
}

SwagPosterior toy_posterior() {
    SwagPosterior post;
    post.config.input_dim = 1;
    post.mean = Vector(3);
    post.mean << 0.5, -1.0, 2.0;
    Vector diag(3);
    diag << 0.04, 0.09, 0.01;
    post.second_moment = post.mean.cwiseProduct(post.mean) + diag;
    post.deviations = Matrix(3, 3);
    post.deviations << 0.3, -0.1, 0.2,  //
        0.0, 0.4, -0.2,                 //
        0.1, 0.1, 0.3;
    post.collected = 3;
    return post;
}

}  // namespace

TEST_CASE("softmax projection") {
    CHECK(softmax_uncertainty(0.5) == 1.0);
    CHECK(softmax_uncertainty(0.0) == 0.0);
    CHECK(softmax_uncertainty(1.0) == 0.0);
    CHECK(softmax_uncertainty(0.75) == 0.5);
    CHECK_THROWS_AS(softmax_uncertainty(1.01), DomainError);
    CHECK_THROWS_AS(softmax_uncertainty(-0.01), DomainError);
    CHECK_THROWS_AS(softmax_uncertainty(std::nan("")), DomainError);
}

TEST_CASE("positive probabilities renormalise over the real classes") {
    Matrix l(1, 3);
    l << 0.0, std::log(3.0), 5.0;
    CHECK(positive_probabilities(l)[0] == doctest::Approx(0.75));
}

TEST_CASE("ensemble prediction") {
    const Matrix x = oracle::random_matrix(4, 3, 1);
    SUBCASE("identical members have zero variance") {
        std::vector<Network> m(5, constant_net(0.3));
        const auto p = ensemble_predict(m, x);
        for (double v : p.variance) CHECK(v == 0.0);
        for (double v : p.mean_probability) CHECK(v == doctest::Approx(0.3));
    }
    SUBCASE("two members 0.4 and 0.6") {
        std::vector<Network> m{constant_net(0.4), constant_net(0.6)};
        const auto p = ensemble_predict(m, x);
        CHECK(p.mean_probability[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(p.variance[0] == doctest::Approx(0.01).epsilon(1e-10));
    }
    SUBCASE("member order is irrelevant") {
        NetConfig c;
        c.input_dim = 3;
        c.hidden_dims = {4};
        std::vector<Network> m;
        for (std::uint64_t s = 0; s < 4; ++s) {
            c.seed = s;
            m.emplace_back(c);
        }
        const auto a = ensemble_predict(m, x);
        std::reverse(m.begin(), m.end());
        const auto b = ensemble_predict(m, x);
        for (std::size_t i = 0; i < a.variance.size(); ++i) {
            CHECK(a.mean_probability[i] == doctest::Approx(b.mean_probability[i]).epsilon(1e-14));
            CHECK(a.variance[i] == doctest::Approx(b.variance[i]).epsilon(1e-12));
        }
        check_summary_consistent(a);
    }
    CHECK_THROWS_AS(ensemble_predict(std::vector<Network>{}, x), ConfigError);
    std::vector<Network> mixed{constant_net(0.4), constant_net(0.4, 5)};
    CHECK_THROWS_AS(ensemble_predict(mixed, x), Error);
}

TEST_CASE("swag collection") {
    NetConfig c;
    c.input_dim = 1;
    SwagConfig no_burn{0.0, 20};
    SUBCASE("identical checkpoints") {
        Vector v(4);
        v << 1, 2, 3, 4;
        std::vector<Vector> cps(5, v);
        const auto post = swag_collect(cps, c, no_burn);
        CHECK(post.diagonal_variance().cwiseAbs().maxCoeff() == 0.0);
        CHECK(post.deviations.cwiseAbs().maxCoeff() == 0.0);
        CHECK(post.rank() == 5);
    }
    SUBCASE("two opposite checkpoints") {
        Vector v(3);
        v << 0.5, -2.0, 3.0;
        const std::vector<Vector> cps{v, Vector(-v)};
        const auto post = swag_collect(cps, c, no_burn);
        CHECK(post.mean.cwiseAbs().maxCoeff() < 1e-15);
        for (Eigen::Index i = 0; i < 3; ++i) {
            CHECK(post.second_moment[i] == doctest::Approx(v[i] * v[i]).epsilon(1e-14));
            CHECK(post.diagonal_variance()[i] == doctest::Approx(v[i] * v[i]).epsilon(1e-14));
        }
    }
    SUBCASE("mean is the arithmetic mean; deviations are the last K minus it") {
        std::vector<Vector> cps;
        for (int k = 0; k < 30; ++k) cps.push_back(oracle::random_matrix(6, 1, 100 + k).col(0));
        const auto post = swag_collect(cps, c, SwagConfig{0.4, 5});
        // floor(0.4 * 30) = 12 skipped.
        CHECK(post.collected == 18);
        Vector mean = Vector::Zero(6);
        for (int k = 12; k < 30; ++k) mean += cps[k];
        mean /= 18.0;
        CHECK((post.mean - mean).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(post.rank() == 5);
        for (int j = 0; j < 5; ++j) CHECK((post.deviations.col(j) - (cps[25 + j] - post.mean)).norm() < 1e-12);
    }
    CHECK_THROWS_AS(swag_collect(std::vector<Vector>{}, c, no_burn), CollectionError);
    // Burn-in is floored, so a single checkpoint is always collected.
    std::vector<Vector> one(1, Vector::Zero(2));
    CHECK(swag_collect(one, c, SwagConfig{0.99, 20}).collected == 1);
}

TEST_CASE("swag sampling") {
    SUBCASE("degenerate posterior returns the mean bitwise") {
        auto post = toy_posterior();
        post.second_moment = post.mean.cwiseProduct(post.mean);
        post.deviations.setZero();
        Rng rng(1);
        CHECK((swag_sample(post, rng).array() == post.mean.array()).all());
    }
    SUBCASE("rank below two is rejected") {
        auto post = toy_posterior();
        post.deviations = post.deviations.leftCols(1);
        Rng rng(1);
        CHECK_THROWS_AS(swag_sample(post, rng), RankError);
    }
    SUBCASE("Monte-Carlo moments") {
        const auto post = toy_posterior();
        const Matrix& d = post.deviations;
        const double k = static_cast<double>(d.cols());
        const Matrix expected =
            0.5 * (Matrix(post.diagonal_variance().asDiagonal()) + d * d.transpose() / (k - 1.0));

        Rng rng(2024);
        const int draws = 10000;
        Matrix samples(3, draws);
        for (int s = 0; s < draws; ++s) samples.col(s) = swag_sample(post, rng);
        const Vector mean = samples.rowwise().mean();
        const Matrix centred = samples.colwise() - mean;
        const Matrix cov = centred * centred.transpose() / (draws - 1.0);

        for (Eigen::Index i = 0; i < 3; ++i) {
            const double se = std::sqrt(expected(i, i) / draws);
            CHECK(std::abs(mean[i] - post.mean[i]) < 3 * se);
        }
        CHECK((cov - expected).norm() / expected.norm() < 0.05);
    }
}

TEST_CASE("mc dropout prediction") {
    const Matrix x = oracle::random_matrix(6, 3, 3);
    SUBCASE("rate zero gives the deterministic output") {
        Network net(dropout_config(0.0));
        Rng rng(1);
        const auto p = mc_dropout_predict(net, x, 10, rng);
        const auto det = positive_probabilities(net.forward(x));
        for (std::size_t i = 0; i < det.size(); ++i) {
            CHECK(p.variance[i] == 0.0);
            CHECK(p.mean_probability[i] == doctest::Approx(det[i]).epsilon(1e-14));
        }
    }
    SUBCASE("seeded and recomputable") {
        Network net(dropout_config(0.5));
        Rng a(9), b(9);
        const auto p = mc_dropout_predict(net, x, 10, a);
        const auto q = mc_dropout_predict(net, x, 10, b);
        CHECK(p.variance == q.variance);
        CHECK(p.samples.rows() == 10);
        check_summary_consistent(p);
        CHECK(*std::max_element(p.variance.begin(), p.variance.end()) > 0.0);
    }
}

TEST_CASE("closed-form KL") {
    CHECK(kl_gaussian(0.0, 1.0, 1.0) == doctest::Approx(0.0).scale(1.0));
    CHECK(kl_gaussian(1.0, 1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-14));
    // Against the textbook expression 0.5 (s^2 + m^2 - 1 - ln s^2) for a unit prior.
    for (double mu : {-1.3, 0.0, 0.7})
        for (double s : {0.1, 0.9, 2.5}) {
            const double ref = 0.5 * (s * s + mu * mu - 1 - std::log(s * s));
            CHECK(kl_gaussian(mu, s, 1.0) == doctest::Approx(ref).epsilon(1e-12));
        }
    // Non-unit prior: ln(p/s) + (s^2 + m^2) / (2 p^2) - 1/2.
    CHECK(kl_gaussian(0.3, 0.5, 2.0) ==
          doctest::Approx(std::log(2.0 / 0.5) + (0.25 + 0.09) / 8.0 - 0.5).epsilon(1e-12));

    BnnPosterior post;
    post.mean = Vector::Zero(4);
    post.log_stddev = Vector::Zero(4);
    post.prior_stddev = 1.0;
    CHECK(kl_divergence(post) == doctest::Approx(0.0).scale(1.0));
    post.mean[2] = 1.0;
    CHECK(kl_divergence(post) == doctest::Approx(0.5));
}

TEST_CASE("bnn training and prediction") {
    const Matrix x = oracle::random_matrix(80, 3, 4);
    std::vector<int> y(80);
    for (Eigen::Index i = 0; i < 80; ++i) y[i] = x(i, 0) - x(i, 2) > 0;
    const std::vector<double> w(80, 1.0);
    NetConfig c;
    c.input_dim = 3;
    c.hidden_dims = {8};
    c.seed = 12;
    SgdConfig sgd;
    sgd.batch_size = 16;
    sgd.epochs = 8;
    sgd.seed = 6;

    SUBCASE("point-mass posterior without KL follows plain SGD") {
        BnnConfig b;
        b.init_log_stddev = kMinLogStddev;
        b.kl_weight = 0.0;
        const auto bnn = bnn_train(x, y, w, c, sgd, b);
        const auto plain = train(Network(c), x, y, CrossEntropyLoss{}, sgd, w);
        REQUIRE(bnn.epoch_losses.size() == plain.epoch_losses.size());
        for (std::size_t e = 0; e < plain.epoch_losses.size(); ++e)
            CHECK(std::abs(bnn.epoch_losses[e] - plain.epoch_losses[e]) <= 0.05 * plain.epoch_losses[e]);
        CHECK(bnn.checkpoints.size() == 8);
    }
    SUBCASE("prediction from a clamped posterior has no variance") {
        BnnPosterior post;
        post.config = c;
        post.mean = Network(c).get_params();
        post.log_stddev = Vector::Constant(post.mean.size(), kMinLogStddev);
        const auto p = bnn_predict(post, x, SamplerConfig{10, 3});
        for (double v : p.variance) CHECK(v < 1e-20);
    }
    SUBCASE("prediction is seeded and recomputable") {
        BnnConfig b;
        b.init_log_stddev = -1.0;
        const auto r = bnn_train(x, y, w, c, sgd, b);
        const auto p = bnn_predict(r.posterior, x, SamplerConfig{10, 8});
        const auto q = bnn_predict(r.posterior, x, SamplerConfig{10, 8});
        CHECK(p.variance == q.variance);
        check_summary_consistent(p);
        CHECK(r.epoch_kl.size() == 8);
        for (double k : r.epoch_kl) CHECK(k >= 0.0);
    }
}

TEST_CASE("summaries ignore sample order") {
    Matrix s = oracle::random_matrix(10, 5, 7).array().abs().min(1.0);
    const auto a = summarize_samples(s);
    Matrix r = s.colwise().reverse();
    const auto b = summarize_samples(r);
    for (int j = 0; j < 5; ++j) {
        CHECK(a.mean_probability[j] == doctest::Approx(b.mean_probability[j]).epsilon(1e-14));
        CHECK(a.variance[j] == doctest::Approx(b.variance[j]).epsilon(1e-12));
    }
}

TEST_CASE("threshold deferral") {
    const std::vector<double> s{0.1, 0.2, 0.3};
    CHECK(defer_by_threshold(s, 0.15) == std::vector<bool>{false, true, true});
    CHECK(defer_by_threshold(s, 0.3) == std::vector<bool>{false, false, false});
    CHECK(defer_by_threshold(s, 0.05) == std::vector<bool>{true, true, true});
    // Non-increasing in tau.
    const auto scores = column(oracle::random_matrix(200, 1, 5), 0);
    std::size_t prev = scores.size() + 1;
    for (double tau = -4; tau <= 4; tau += 0.05) {
        const auto m = defer_by_threshold(scores, tau);
        const auto n = static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
        CHECK(n <= prev);
        prev = n;
    }
}
