#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>

#include "dfb/config.hpp"
#include "dfb/io.hpp"
#include "dfb/sweep.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

// Runs dfbench with `args`, capturing stdout and stderr.
Outcome dfbench(const std::string& args, const fs::path& scratch) {
    const auto out = scratch / "stdout.txt";
    const auto err = scratch / "stderr.txt";
    const std::string cmd =
        std::string("\"") + DFBENCH_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = oracle::read_file(out);
    o.err = oracle::read_file(err);
    return o;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const char* kSmallRun = R"([dataset]
n_samples = 1200
positive_fraction = 0.1
image = none
dim = 6

[net]
hidden_dims = 8

[sgd]
epochs = 3

[sweep]
methods = softmax
seeds = 0,1
conditions = id
)";

}  // namespace

TEST_CASE("generate writes the dataset and a prevalence summary") {
    const auto dir = oracle::scratch_dir("cli_generate");
    const auto a = dir / "a";
    const auto b = dir / "b";
    fs::create_directories(a);
    fs::create_directories(b);
    const auto r = dfbench("generate --seed 5 --out " + q(a), dir);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("prevalence: 0.03\n") != std::string::npos);
    CHECK(r.out.find("samples: 10000\n") != std::string::npos);
    CHECK(oracle::read_file(a / "dataset_summary.txt") == r.out);

    const auto d = dfb::load_dataset(a / "dataset.dfd");
    CHECK(d.size() == 10000);
    CHECK(static_cast<double>(d.positives()) / static_cast<double>(d.size()) == 0.03);
    CHECK(d.rows_in(dfb::Split::Train).size() == 7000);
    CHECK(r.out.find("train: 7000 (210 positive)\n") != std::string::npos);

    REQUIRE(dfbench("generate --seed 5 --out " + q(b), dir).code == 0);
    CHECK(oracle::read_file(a / "dataset.dfd") == oracle::read_file(b / "dataset.dfd"));
    REQUIRE(dfbench("generate --seed 6 --out " + q(b), dir).code == 0);
    CHECK(oracle::read_file(a / "dataset.dfd") != oracle::read_file(b / "dataset.dfd"));
}

TEST_CASE("usage and config errors exit with 2") {
    const auto dir = oracle::scratch_dir("cli_usage");
    CHECK(dfbench("generate --out " + q(dir / "missing"), dir).code == 2);
    CHECK(dfbench("", dir).code == 2);
    CHECK(dfbench("frobnicate", dir).code == 2);
    CHECK(dfbench("run --jobs 0 --out " + q(dir), dir).code == 2);
    CHECK(dfbench("run --config " + q(dir / "nope.txt") + " --out " + q(dir), dir).code == 2);
    write(dir / "bad.txt", "[sgd]\nlearnig_rate = 1\n");
    const auto bad = dfbench("run --config " + q(dir / "bad.txt") + " --out " + q(dir), dir);
    CHECK(bad.code == 2);
    CHECK(bad.err.find("sgd.learnig_rate") != std::string::npos);
    write(dir / "nosrc.txt", "[dataset]\nsource = /nonexistent/data.csv\n");
    CHECK(dfbench("generate --config " + q(dir / "nosrc.txt") + " --out " + q(dir), dir).code == 2);
    CHECK(dfbench("--help", dir).code == 0);
}

TEST_CASE("run writes CSVs, config echo and bundles, reproducibly") {
    const auto dir = oracle::scratch_dir("cli_run");
    write(dir / "c.txt", kSmallRun);
    const auto a = dir / "a";
    const auto b = dir / "b";
    fs::create_directories(a);
    fs::create_directories(b);
    const auto r = dfbench("run --config " + q(dir / "c.txt") + " --out " + q(a), dir);
    REQUIRE_MESSAGE(r.code == 0, r.err);

    const auto csv = oracle::read_file(a / "results.csv");
    const auto rows = dfb::parse_results_csv(csv);
    CHECK(rows.size() == 400);
    std::size_t seed0 = 0;
    for (const auto& row : rows) {
        CHECK(row.point.method == "softmax");
        CHECK(row.point.param_kind == dfb::ParamKind::Threshold);
        seed0 += row.point.seed == 0;
    }
    CHECK(seed0 == 200);
    CHECK(oracle::read_file(a / "classification.csv").rfind(dfb::kClassificationHeader, 0) == 0);
    CHECK_FALSE(fs::exists(a / "failures.txt"));

    const auto echo = oracle::read_file(a / "config.txt");
    CHECK(echo == dfb::RunConfig::parse(kSmallRun).to_text());
    CHECK(fs::exists(a / "models" / "softmax_seed0" / "manifest.txt"));
    CHECK(fs::exists(a / "models" / "softmax_seed1" / "model.dfb"));

    // The echoed config alone reproduces the run.
    const auto again = dfbench("run --config " + q(a / "config.txt") + " --out " + q(b), dir);
    REQUIRE(again.code == 0);
    CHECK(oracle::read_file(b / "results.csv") == csv);
    CHECK(oracle::read_file(b / "classification.csv") == oracle::read_file(a / "classification.csv"));

    REQUIRE(dfbench("run --jobs 2 --config " + q(dir / "c.txt") + " --out " + q(b), dir).code == 0);
    CHECK(oracle::read_file(b / "results.csv") == csv);

    const auto inspect = dfbench("inspect " + q(a / "models" / "softmax_seed0"), dir);
    CHECK(inspect.code == 0);
    CHECK(inspect.out.find("bundle: softmax") != std::string::npos);
    const auto ck = dfbench("inspect " + q(a / "models" / "softmax_seed0" / "model.dfb"), dir);
    CHECK(ck.code == 0);
    CHECK(ck.out.find("checkpoint (DFB1)") != std::string::npos);
}

TEST_CASE("training failures become failed rows and exit 1") {
    const auto dir = oracle::scratch_dir("cli_fail");
    {
        std::ofstream csv(dir / "huge.csv");
        csv << "f0,f1,label\n";
        for (int i = 0; i < 300; ++i) csv << (i % 7) * 1e29 << "," << (i % 3) * 1e29 << "," << (i % 5 == 0) << "\n";
    }
    write(dir / "c.txt", "[dataset]\nsource = " + (dir / "huge.csv").string() +
                             "\n[sgd]\nepochs = 2\nlearning_rate = 1e30\nmomentum = 0\n"
                             "[sweep]\nmethods = softmax,learned_one_stage\nalpha_grid = 0.5\nseeds = 0\n"
                             "conditions = id\n[run]\nsave_models = false\n");
    const auto r = dfbench("run --config " + q(dir / "c.txt") + " --out " + q(dir), dir);
    CHECK(r.code == 1);
    const auto rows = dfb::parse_results_csv(oracle::read_file(dir / "results.csv"));
    REQUIRE(rows.size() == 2);
    for (const auto& row : rows) CHECK(row.status == "failed");
    const auto failures = oracle::read_file(dir / "failures.txt");
    CHECK(failures.find("softmax seed 0") != std::string::npos);
    CHECK(failures.find("diverged") != std::string::npos);
}

TEST_CASE("report renders one SVG per condition") {
    const auto dir = oracle::scratch_dir("cli_report");
    auto text = std::string(kSmallRun);
    text.replace(text.find("conditions = id"), 15, "conditions = id,noise-2");
    write(dir / "c2.txt", text);
    REQUIRE(dfbench("run --config " + q(dir / "c2.txt") + " --out " + q(dir), dir).code == 0);
    const auto svg_dir = dir / "svg";
    fs::create_directories(svg_dir);
    const auto r = dfbench("report " + q(dir / "results.csv") + " --out " + q(svg_dir), dir);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(svg_dir / "curves_id.svg"));
    CHECK(fs::exists(svg_dir / "curves_noise-2.svg"));
    const auto svg = oracle::read_file(svg_dir / "curves_id.svg");
    const std::regex line("<polyline data-method=\"softmax\"");
    CHECK(std::distance(std::sregex_iterator(svg.begin(), svg.end(), line), std::sregex_iterator()) == 4);

    write(dir / "empty.csv", std::string(dfb::kResultsHeader) + "\n");
    CHECK(dfbench("report " + q(dir / "empty.csv") + " --out " + q(svg_dir), dir).code == 1);
    write(dir / "bad.csv", std::string(dfb::kResultsHeader) + "\nsoftmax,id,0\n");
    const auto bad = dfbench("report " + q(dir / "bad.csv") + " --out " + q(svg_dir), dir);
    CHECK(bad.code == 1);
    CHECK(bad.err.find("row 2") != std::string::npos);
    CHECK(dfbench("report " + q(dir / "results.csv") + " --out " + q(dir / "nowhere"), dir).code == 2);
}

TEST_CASE("corrupt and inspect datasets") {
    const auto dir = oracle::scratch_dir("cli_corrupt");
    write(dir / "c.txt", "[dataset]\nn_samples = 500\npositive_fraction = 0.1\n");
    REQUIRE(dfbench("generate --config " + q(dir / "c.txt") + " --out " + q(dir), dir).code == 0);
    const auto src = dir / "dataset.dfd";
    REQUIRE(dfbench("corrupt " + q(src) + " --kind noise --level 0 --out " + q(dir / "n0.dfd"), dir).code == 0);
    CHECK(oracle::read_file(dir / "n0.dfd") == oracle::read_file(src));
    REQUIRE(dfbench("corrupt " + q(src) + " --kind blur --level 3 --out " + q(dir / "b3.dfd"), dir).code == 0);
    const auto clean = dfb::load_dataset(src);
    const auto blurred = dfb::load_dataset(dir / "b3.dfd");
    CHECK(blurred.labels == clean.labels);
    CHECK(blurred.features_in(dfb::Split::Train) == clean.features_in(dfb::Split::Train));
    CHECK(blurred.features_in(dfb::Split::Test) != clean.features_in(dfb::Split::Test));
    CHECK(dfbench("corrupt " + q(src) + " --kind fog --level 1 --out " + q(dir / "x.dfd"), dir).code == 2);
    CHECK(dfbench("corrupt " + q(src) + " --level 6 --out " + q(dir / "x.dfd"), dir).code == 2);

    const auto ins = dfbench("inspect " + q(src), dir);
    CHECK(ins.code == 0);
    CHECK(ins.out.find("dataset (DFD1)") != std::string::npos);
    CHECK(ins.out.find("positives: 50") != std::string::npos);
    write(dir / "x.csv", "f0,label\n0.5,1\n0.25,0\n");
    const auto csv = dfbench("inspect " + q(dir / "x.csv"), dir);
    CHECK(csv.code == 0);
    CHECK(csv.out.find("samples: 2") != std::string::npos);
    write(dir / "junk.bin", "JUNKJUNK");
    CHECK(dfbench("inspect " + q(dir / "junk.bin"), dir).code == 2);
}
