#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dfb/error.hpp"
#include "dfb/io.hpp"
#include "dfb/sweep.hpp"
#include "oracles.hpp"

using namespace dfb;

namespace {

NetConfig toy_config() {
    NetConfig c;
    c.input_dim = 5;
    c.hidden_dims = {7, 4};
    c.output_dim = 3;
    c.dropout_rate = 0.25;
    c.seed = 17;
    return c;
}

Dataset image_dataset() {
    SynthSpec s;
    s.n_samples = 600;
    s.positive_fraction = 0.1;
    s.spatial = SpatialShape{4, 5, 2};
    s.seed = 3;
    return split(generate(s), 3);
}

std::string bytes_of(const Dataset& d) {
    std::ostringstream out(std::ios::binary);
    write_dataset(out, d);
    return out.str();
}

template <class T>
T read_le(const std::string& s, std::size_t offset) {
    T v;
    std::memcpy(&v, s.data() + offset, sizeof(T));
    return v;
}

}  // namespace

TEST_CASE("network checkpoint round trip") {
    Network net(toy_config());
    const Matrix x = oracle::random_matrix(6, 5, 1, 1.0);
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_checkpoint(buf, to_checkpoint(net));
    const auto back = network_from(read_checkpoint(buf));
    CHECK(back.config().canonical() == net.config().canonical());
    CHECK(back.get_params() == net.get_params());
    CHECK(back.forward(x) == net.forward(x));
}

TEST_CASE("checkpoint sections") {
    Checkpoint c = to_checkpoint(Network(toy_config()));
    const Matrix m = oracle::random_matrix(3, 2, 4, 1.0);
    c.sections.push_back(Section::from("extra", m));
    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    write_checkpoint(buf, c);
    const auto back = read_checkpoint(buf);
    REQUIRE(back.find("extra"));
    CHECK(back.find("extra")->matrix() == m);
    CHECK(back.find("missing") == nullptr);
}

TEST_CASE("posterior checkpoints round trip") {
    const auto cfg = toy_config();
    const auto p = static_cast<Eigen::Index>(Network(cfg).parameter_count());
    SwagPosterior swag;
    swag.config = cfg;
    swag.mean = oracle::random_matrix(p, 1, 1, 1.0).col(0);
    swag.second_moment = swag.mean.cwiseAbs2() + Vector::Constant(p, 0.01);
    swag.deviations = oracle::random_matrix(p, 3, 2, 0.1);
    swag.collected = 9;
    const auto s2 = swag_from(to_checkpoint(swag));
    CHECK(s2.mean == swag.mean);
    CHECK(s2.second_moment == swag.second_moment);
    CHECK(s2.deviations == swag.deviations);
    CHECK(s2.collected == 9);

    BnnPosterior bnn;
    bnn.config = cfg;
    bnn.mean = swag.mean;
    bnn.log_stddev = Vector::Constant(p, -3.0);
    bnn.prior_stddev = 0.5;
    const auto b2 = bnn_from(to_checkpoint(bnn));
    CHECK(b2.mean == bnn.mean);
    CHECK(b2.log_stddev == bnn.log_stddev);
    CHECK(b2.prior_stddev == 0.5);
}

TEST_CASE("checkpoint format errors") {
    std::istringstream bad_magic("XXXX0000000000000000");
    CHECK_THROWS_AS(read_checkpoint(bad_magic), FormatError);
    std::ostringstream out(std::ios::binary);
    write_checkpoint(out, to_checkpoint(Network(toy_config())));
    const auto full = out.str();
    std::istringstream truncated(full.substr(0, full.size() / 2));
    CHECK_THROWS_AS(read_checkpoint(truncated), FormatError);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.dfb"), FormatError);
}

TEST_CASE("dataset file round trip") {
    const auto d = image_dataset();
    const auto bytes = bytes_of(d);
    CHECK(bytes.substr(0, 4) == "DFD1");
    const auto s = d.size();
    const auto dim = d.dim();
    CHECK(read_le<std::uint64_t>(bytes, 8) == s);
    CHECK(read_le<std::uint64_t>(bytes, 16) == dim);
    CHECK(read_le<std::uint64_t>(bytes, 37) == 45 + s * dim * 4);
    CHECK(bytes.size() == 45 + s * dim * 4 + 2 * s);
    CHECK(static_cast<unsigned char>(bytes[45 + s * dim * 4]) == d.labels[0]);

    std::istringstream in(bytes);
    const auto back = read_dataset(in);
    CHECK(back.features == d.features);
    CHECK(back.labels == d.labels);
    CHECK(back.splits == d.splits);
    REQUIRE(back.spatial);
    CHECK(*back.spatial == *d.spatial);
    CHECK(bytes_of(back) == bytes);

    const auto dir = oracle::scratch_dir("io_dataset");
    save_dataset(dir / "d.dfd", d);
    CHECK(oracle::read_file(dir / "d.dfd") == bytes);
    CHECK(sniff_magic(dir / "d.dfd") == "DFD1");
    CHECK(load_dataset(dir / "d.dfd").provenance == "d.dfd");
}

TEST_CASE("dataset without spatial shape or split tags") {
    SynthSpec spec;
    spec.n_samples = 50;
    spec.positive_fraction = 0.2;
    spec.spatial.reset();
    spec.dim = 3;
    const auto d = generate(spec);
    std::istringstream in(bytes_of(d));
    const auto back = read_dataset(in);
    CHECK_FALSE(back.spatial);
    CHECK(back.features == d.features);
    CHECK(back.splits == d.splits);
}

TEST_CASE("dataset format errors") {
    const auto bytes = bytes_of(image_dataset());
    auto corrupt_magic = bytes;
    corrupt_magic[3] = '9';
    std::istringstream a(corrupt_magic);
    CHECK_THROWS_AS(read_dataset(a), FormatError);
    std::istringstream b(bytes.substr(0, bytes.size() - 10));
    CHECK_THROWS_AS(read_dataset(b), FormatError);
    auto bad_label = bytes;
    const auto s = read_le<std::uint64_t>(bytes, 8);
    const auto dim = read_le<std::uint64_t>(bytes, 16);
    bad_label[45 + s * dim * 4] = 7;
    std::istringstream c(bad_label);
    CHECK_THROWS(read_dataset(c));
}

TEST_CASE("csv import") {
    std::istringstream in("f0,f1,label\n0.5,0.25,1\n\n1,0,0\n0.1,0.2,0\n");
    const auto d = import_csv(in, "mine");
    REQUIRE(d.size() == 3);
    CHECK(d.dim() == 2);
    CHECK(d.labels == std::vector<int>{1, 0, 0});
    CHECK(d.features(0, 1) == 0.25);
    CHECK(d.features(2, 0) == static_cast<double>(0.1f));
    CHECK(d.provenance == "mine");
    CHECK_FALSE(d.spatial);
    for (auto t : d.splits) CHECK(t == Split::Unassigned);

    auto expect_line = [](const std::string& text, const std::string& what) {
        std::istringstream s(text);
        try {
            import_csv(s);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find(what) != std::string::npos);
        }
    };
    expect_line("", "empty");
    expect_line("a,b,label\n", "f0");
    expect_line("f0,f1,y\n", "label");
    expect_line("f0,f1,label\n1,2,0\n1,2\n", "line 3");
    expect_line("f0,f1,label\n1,x,0\n", "line 2");
    expect_line("f0,f1,label\n1,2,0\n1,2,2\n", "line 3");
}

TEST_CASE("model bundles reproduce scores for every method") {
    const auto d = image_dataset();
    SweepPlan plan;
    plan.seeds = {0};
    plan.conditions = {Condition::id()};
    plan.alpha_grid = {0.3};
    plan.beta_grid = {0.5};
    MethodSettings s;
    s.net.hidden_dims = {8};
    s.sgd.epochs = 2;
    s.two_stage_sgd.epochs = 2;
    s.ensemble_size = 2;
    s.sampler.n_samples = 3;
    Experiment e(d, plan, s, 1);
    e.train();
    const Matrix x = d.features_in(Split::Test);
    const auto dir = oracle::scratch_dir("io_bundles");
    std::set<Method> seen;
    e.for_each_model([&](Method m, std::uint64_t, const DeferralModel& model) {
        CAPTURE(to_string(m));
        seen.insert(m);
        auto copy = model;
        if (!copy.learned()) copy.set_threshold(0.125);
        const auto path = dir / to_string(m);
        save_bundle(path, copy);
        CHECK(std::filesystem::exists(path / "manifest.txt"));
        const auto back = load_bundle(path);
        CHECK(back.method() == m);
        CHECK(back.threshold() == copy.threshold());
        CHECK(back.cost() == copy.cost());
        const auto a = copy.score(x);
        const auto b = back.score(x);
        CHECK(a.positive_probability == b.positive_probability);
        CHECK(a.uncertainty == b.uncertainty);
        CHECK(a.argmax == b.argmax);
        if (m == Method::Ensemble || m == Method::LearnedTwoStage)
            CHECK(std::filesystem::exists(path / "members.txt"));
    });
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(load_bundle(dir / "nothing"), FormatError);
    std::ofstream(dir / "junk.bin") << "JUNK";
    CHECK(sniff_magic(dir / "junk.bin") == "JUNK");
    CHECK(sniff_magic(dir / "missing.bin").empty());
}
