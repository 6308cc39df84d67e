// dfbench: generate datasets, run deferral sweeps and render curve reports.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "dfb/config.hpp"
#include "dfb/error.hpp"
#include "dfb/io.hpp"
#include "dfb/report.hpp"
#include "dfb/rng.hpp"
#include "dfb/sweep.hpp"
#include "dfb/text.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::string input;
    std::string kind = "noise";
    int level = 1;
};

dfb::RunConfig resolve_config(const Options& o) {
    dfb::RunConfig c = o.config.empty() ? dfb::RunConfig{} : dfb::RunConfig::load(o.config);
    if (o.seed) c.seed = *o.seed;
    if (o.jobs) c.plan.jobs = *o.jobs;
    c.validate();
    return c;
}

fs::path require_dir(const std::string& dir) {
    const fs::path p(dir);
    if (!fs::is_directory(p)) throw dfb::UsageError("output directory does not exist: " + dir);
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw dfb::Error("cannot write " + path.string());
    out << text;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw dfb::UsageError("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string dataset_summary(const dfb::Dataset& d) {
    std::ostringstream s;
    const auto n = d.labels.size();
    const auto pos = d.positives();
    s << "samples: " << n << "\n";
    s << "features: " << d.features.cols() << "\n";
    if (d.spatial) s << "image: " << d.spatial->height << "x" << d.spatial->width << "x" << d.spatial->channels << "\n";
    s << "positives: " << pos << "\n";
    s << "prevalence: " << dfb::format_double(n ? static_cast<double>(pos) / static_cast<double>(n) : 0.0) << "\n";
    for (auto [split, name] : {std::pair{dfb::Split::Train, "train"}, std::pair{dfb::Split::Val, "val"},
                               std::pair{dfb::Split::Test, "test"}}) {
        const auto rows = d.rows_in(split);
        std::size_t p = 0;
        for (auto r : rows) p += d.labels[r] == 1;
        s << name << ": " << rows.size() << " (" << p << " positive)\n";
    }
    s << "provenance: " << d.provenance << "\n";
    return s.str();
}

int cmd_generate(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto dir = require_dir(o.out);
    const auto data = cfg.build_dataset();
    dfb::save_dataset(dir / "dataset.dfd", data);
    const auto summary = dataset_summary(data);
    write_text(dir / "dataset_summary.txt", summary);
    std::cout << summary;
    return kOk;
}

std::string bundle_name(dfb::Method m, std::uint64_t seed, const dfb::DeferralModel& model) {
    std::string name = dfb::to_string(m) + "_seed" + std::to_string(seed);
    if (auto c = model.cost()) name += "_cost" + dfb::format_double(*c);
    return name;
}

int cmd_run(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto dir = require_dir(o.out);
    write_text(dir / "config.txt", cfg.to_text());

    dfb::Experiment exp(cfg.build_dataset(), cfg.plan, cfg.settings, cfg.seed);
    const auto result = exp.run();
    write_text(dir / "results.csv", dfb::results_csv(result.rows));
    write_text(dir / "classification.csv", dfb::classification_csv(result.table));

    if (cfg.save_models) {
        const auto models = dir / "models";
        fs::create_directories(models);
        exp.for_each_model([&](dfb::Method m, std::uint64_t seed, const dfb::DeferralModel& model) {
            const auto target = models / bundle_name(m, seed, model);
            fs::create_directories(target);
            dfb::save_bundle(target, model);
        });
    }

    if (result.any_failed()) {
        std::string text;
        for (const auto& f : result.failures) text += f + "\n";
        write_text(dir / "failures.txt", text);
        std::cerr << result.failures.size() << " failure(s); see failures.txt\n";
        return kFailure;
    }
    std::cout << result.rows.size() << " rows written to " << (dir / "results.csv").string() << "\n";
    return kOk;
}

int cmd_report(const Options& o) {
    const auto dir = require_dir(o.out);
    const auto rows = dfb::parse_results_csv(read_text(o.input));
    for (const auto& p : dfb::write_report(rows, dir)) std::cout << p.string() << "\n";
    return kOk;
}

int cmd_corrupt(const Options& o) {
    const auto cfg = resolve_config(o);
    const auto data = dfb::load_dataset(o.input);
    const auto spec = dfb::CorruptionSpec::resolve(dfb::parse_corruption_kind(o.kind), o.level, cfg.plan.levels);
    const auto seed = dfb::derive_seed(cfg.seed, {dfb::tag_of("corruption"), dfb::tag_of(o.kind)});
    const fs::path out(o.out);
    if (!out.parent_path().empty() && !fs::is_directory(out.parent_path()))
        throw dfb::UsageError("output directory does not exist: " + out.parent_path().string());
    dfb::save_dataset(out, dfb::corrupt(data, spec, seed));
    std::cout << "wrote " << out.string() << " (" << o.kind << " level " << o.level << ")\n";
    return kOk;
}

void print_checkpoint(const dfb::Checkpoint& c, const std::string& indent) {
    std::cout << indent << "config: " << c.config.canonical() << "\n";
    std::cout << indent << "parameters: " << c.params.size() << "\n";
    for (const auto& s : c.sections) std::cout << indent << "section " << s.name << ": " << s.rows << "x" << s.cols << "\n";
}

int cmd_inspect(const Options& o) {
    const fs::path p(o.input);
    if (fs::is_directory(p)) {
        if (!fs::exists(p / "manifest.txt")) throw dfb::UsageError("not a model bundle: " + o.input);
        const auto model = dfb::load_bundle(p);
        std::cout << "bundle: " << dfb::to_string(model.method()) << "\n" << read_text(p / "manifest.txt");
        return kOk;
    }
    const auto magic = dfb::sniff_magic(p);
    if (magic == std::string(dfb::kDatasetMagic, 4)) {
        std::cout << "dataset (DFD1)\n" << dataset_summary(dfb::load_dataset(p));
    } else if (magic == std::string(dfb::kCheckpointMagic, 4)) {
        std::cout << "checkpoint (DFB1)\n";
        print_checkpoint(dfb::load_checkpoint(p), "  ");
    } else if (p.extension() == ".csv") {
        std::cout << "dataset (CSV)\n" << dataset_summary(dfb::import_csv(p));
    } else {
        throw dfb::UsageError("unrecognized file: " + o.input);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deferral benchmark: learned deferral vs. uncertainty-based deferral"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub, bool with_jobs) {
        sub->add_option("--config", o.config, "run config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "global seed override");
        if (with_jobs) sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    };

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset and its summary");
    common(gen, false);
    gen->add_option("--out", o.out, "existing output directory");

    auto* run = app.add_subcommand("run", "train every planned model and write the result CSVs");
    common(run, true);
    run->add_option("--out", o.out, "existing output directory");

    auto* rep = app.add_subcommand("report", "render SVG curves from a results CSV");
    rep->add_option("results", o.input, "results CSV")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", o.out, "existing output directory");

    auto* cor = app.add_subcommand("corrupt", "apply a corruption to the test split of a DFD1 dataset");
    common(cor, false);
    cor->add_option("dataset", o.input, "input DFD1 file")->required()->check(CLI::ExistingFile);
    cor->add_option("--kind", o.kind, "noise or blur")->check(CLI::IsMember({"noise", "blur"}));
    cor->add_option("--level", o.level, "severity 0..5")->check(CLI::Range(0, 5));
    cor->add_option("--out", o.out, "output DFD1 file")->required();

    auto* ins = app.add_subcommand("inspect", "print dataset, checkpoint or bundle metadata");
    ins->add_option("path", o.input, "file or bundle directory")->required()->check(CLI::ExistingPath);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (gen->parsed()) return cmd_generate(o);
        if (run->parsed()) return cmd_run(o);
        if (rep->parsed()) return cmd_report(o);
        if (cor->parsed()) return cmd_corrupt(o);
        return cmd_inspect(o);
    } catch (const dfb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const dfb::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const dfb::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
}
