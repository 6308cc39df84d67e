#include "dfb/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "dfb/error.hpp"
#include "dfb/io.hpp"
#include "dfb/rng.hpp"
#include "dfb/text.hpp"

namespace dfb {

ConfigText ConfigText::parse(const std::string& text) {
    ConfigText c;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto t = std::string(trim(line.substr(0, line.find('#'))));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": unterminated section header");
            section = std::string(trim(std::string_view(t).substr(1, t.size() - 2)));
            c.sections_[section];
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside any section");
        const auto key = std::string(trim(std::string_view(t).substr(0, eq)));
        auto& slot = c.sections_[section];
        if (slot.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + section + "." + key);
        slot[key] = std::string(trim(std::string_view(t).substr(eq + 1)));
    }
    return c;
}

bool ConfigText::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key);
}

const std::string& ConfigText::get(const std::string& section, const std::string& key) const {
    return sections_.at(section).at(key);
}

namespace {

std::string list_of(const std::vector<double>& v) { return join(v, ",", [](double x) { return format_double(x); }); }
template <typename T>
std::string list_of(const std::vector<T>& v) {
    return join(v, ",", [](T x) { return std::to_string(x); });
}

std::vector<double> doubles(const std::string& s) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    for (const auto& x : split(s, ',')) out.push_back(parse_double(x));
    return out;
}

template <typename T>
std::vector<T> unsigneds(const std::string& s) {
    std::vector<T> out;
    if (trim(s).empty()) return out;
    for (const auto& x : split(s, ',')) out.push_back(static_cast<T>(parse_u64(x)));
    return out;
}

bool boolean(const std::string& s) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ParseError("expected true or false, got '" + s + "'");
}

std::string shape_text(const std::optional<SpatialShape>& s) {
    if (!s) return "none";
    return std::to_string(s->height) + "x" + std::to_string(s->width) + "x" + std::to_string(s->channels);
}

std::optional<SpatialShape> parse_shape(const std::string& s) {
    if (s == "none") return std::nullopt;
    const auto parts = split(s, 'x');
    if (parts.size() != 3) throw ParseError("image shape must be HxWxC or none");
    return SpatialShape{parse_u64(parts[0]), parse_u64(parts[1]), parse_u64(parts[2])};
}

template <std::size_t N>
std::array<double, N> fixed(const std::string& s) {
    const auto v = doubles(s);
    if (v.size() != N) throw ParseError("expected " + std::to_string(N) + " values");
    std::array<double, N> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return a;
}

using Writer = std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>>;

void write_sgd(std::vector<std::pair<std::string, std::string>>& kv, const SgdConfig& s) {
    kv.emplace_back("learning_rate", format_double(s.learning_rate));
    kv.emplace_back("momentum", format_double(s.momentum));
    kv.emplace_back("weight_decay", format_double(s.weight_decay));
    kv.emplace_back("batch_size", std::to_string(s.batch_size));
    kv.emplace_back("epochs", std::to_string(s.epochs));
}

}  // namespace

void RunConfig::validate() const {
    if (dataset_source == "synthetic") synth.validate();
    settings.validate();
    plan.validate();
}

std::string RunConfig::to_text() const {
    Writer w;
    {
        std::vector<std::pair<std::string, std::string>> kv;
        kv.emplace_back("source", dataset_source);
        kv.emplace_back("n_samples", std::to_string(synth.n_samples));
        kv.emplace_back("positive_fraction", format_double(synth.positive_fraction));
        kv.emplace_back("image", shape_text(synth.spatial));
        kv.emplace_back("dim", std::to_string(synth.dim));
        kv.emplace_back("overlap", format_double(synth.overlap));
        kv.emplace_back("contrast", format_double(synth.contrast));
        kv.emplace_back("texture", format_double(synth.texture));
        w.emplace_back("dataset", std::move(kv));
    }
    w.push_back({"net", {{"hidden_dims", list_of(settings.net.hidden_dims)}}});
    {
        std::vector<std::pair<std::string, std::string>> kv;
        write_sgd(kv, settings.sgd);
        w.emplace_back("sgd", std::move(kv));
    }
    {
        std::vector<std::pair<std::string, std::string>> kv;
        kv.emplace_back("n_samples", std::to_string(settings.sampler.n_samples));
        kv.emplace_back("ensemble_size", std::to_string(settings.ensemble_size));
        kv.emplace_back("mc_dropout_rate", format_double(settings.mc_dropout_rate));
        kv.emplace_back("swag_burn_in", format_double(settings.swag.burn_in_fraction));
        kv.emplace_back("swag_max_rank", std::to_string(settings.swag.max_rank));
        kv.emplace_back("bnn_prior_stddev", format_double(settings.bnn.prior_stddev));
        kv.emplace_back("bnn_init_log_stddev", format_double(settings.bnn.init_log_stddev));
        kv.emplace_back("bnn_kl_weight", settings.bnn.kl_weight ? format_double(*settings.bnn.kl_weight) : "auto");
        w.emplace_back("uq", std::move(kv));
    }
    {
        std::vector<std::pair<std::string, std::string>> kv;
        kv.emplace_back("hidden_dims", list_of(settings.two_stage_net.hidden_dims));
        write_sgd(kv, settings.two_stage_sgd);
        w.emplace_back("two_stage", std::move(kv));
    }
    {
        std::vector<std::pair<std::string, std::string>> kv;
        kv.emplace_back("methods", join(plan.methods, ",", [](Method m) { return to_string(m); }));
        kv.emplace_back("steps", std::to_string(plan.steps));
        kv.emplace_back("alpha_grid", list_of(plan.alpha_grid));
        kv.emplace_back("beta_grid", list_of(plan.beta_grid));
        kv.emplace_back("seeds", list_of(plan.seeds));
        kv.emplace_back("conditions", join(plan.conditions, ",", [](const Condition& c) { return c.label(); }));
        kv.emplace_back("threshold_anchor", plan.id_anchored_thresholds ? "id" : "condition");
        kv.emplace_back("noise_levels", list_of(std::vector<double>(plan.levels.noise_stddev.begin(), plan.levels.noise_stddev.end())));
        kv.emplace_back("blur_levels", list_of(std::vector<double>(plan.levels.blur_sigma.begin(), plan.levels.blur_sigma.end())));
        w.emplace_back("sweep", std::move(kv));
    }
    w.push_back({"run",
                 {{"seed", std::to_string(seed)},
                  {"jobs", std::to_string(plan.jobs)},
                  {"save_models", save_models ? "true" : "false"}}});

    std::string out;
    for (const auto& [section, kv] : w) {
        if (!out.empty()) out += '\n';
        out += "[" + section + "]\n";
        for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    }
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    const auto t = ConfigText::parse(text);
    RunConfig c;
    std::set<std::string> seen;

    auto apply = [&](const std::string& section, const std::string& key, auto&& fn) {
        if (!t.has(section, key)) return;
        seen.insert(section + "." + key);
        try {
            fn(t.get(section, key));
        } catch (const Error& e) {
            throw ConfigError(section + "." + key + ": " + e.what());
        }
    };
    auto sgd_keys = [&](const std::string& section, SgdConfig& s) {
        apply(section, "learning_rate", [&](const std::string& v) { s.learning_rate = parse_double(v); });
        apply(section, "momentum", [&](const std::string& v) { s.momentum = parse_double(v); });
        apply(section, "weight_decay", [&](const std::string& v) { s.weight_decay = parse_double(v); });
        apply(section, "batch_size", [&](const std::string& v) { s.batch_size = parse_u64(v); });
        apply(section, "epochs", [&](const std::string& v) { s.epochs = parse_u64(v); });
    };

    apply("dataset", "source", [&](const std::string& v) { c.dataset_source = v; });
    apply("dataset", "n_samples", [&](const std::string& v) { c.synth.n_samples = parse_u64(v); });
    apply("dataset", "positive_fraction", [&](const std::string& v) { c.synth.positive_fraction = parse_double(v); });
    apply("dataset", "image", [&](const std::string& v) { c.synth.spatial = parse_shape(v); });
    apply("dataset", "dim", [&](const std::string& v) { c.synth.dim = parse_u64(v); });
    apply("dataset", "overlap", [&](const std::string& v) { c.synth.overlap = parse_double(v); });
    apply("dataset", "contrast", [&](const std::string& v) { c.synth.contrast = parse_double(v); });
    apply("dataset", "texture", [&](const std::string& v) { c.synth.texture = parse_double(v); });

    apply("net", "hidden_dims", [&](const std::string& v) { c.settings.net.hidden_dims = unsigneds<std::size_t>(v); });
    sgd_keys("sgd", c.settings.sgd);

    apply("uq", "n_samples", [&](const std::string& v) { c.settings.sampler.n_samples = parse_u64(v); });
    apply("uq", "ensemble_size", [&](const std::string& v) { c.settings.ensemble_size = parse_u64(v); });
    apply("uq", "mc_dropout_rate", [&](const std::string& v) { c.settings.mc_dropout_rate = parse_double(v); });
    apply("uq", "swag_burn_in", [&](const std::string& v) { c.settings.swag.burn_in_fraction = parse_double(v); });
    apply("uq", "swag_max_rank", [&](const std::string& v) { c.settings.swag.max_rank = parse_u64(v); });
    apply("uq", "bnn_prior_stddev", [&](const std::string& v) { c.settings.bnn.prior_stddev = parse_double(v); });
    apply("uq", "bnn_init_log_stddev", [&](const std::string& v) { c.settings.bnn.init_log_stddev = parse_double(v); });
    apply("uq", "bnn_kl_weight", [&](const std::string& v) {
        if (v == "auto") c.settings.bnn.kl_weight.reset();
        else c.settings.bnn.kl_weight = parse_double(v);
    });

    apply("two_stage", "hidden_dims",
          [&](const std::string& v) { c.settings.two_stage_net.hidden_dims = unsigneds<std::size_t>(v); });
    sgd_keys("two_stage", c.settings.two_stage_sgd);

    apply("sweep", "methods", [&](const std::string& v) {
        c.plan.methods.clear();
        if (v == "all") c.plan.methods.assign(kAllMethods.begin(), kAllMethods.end());
        else
            for (const auto& m : split(v, ',')) c.plan.methods.push_back(parse_method(m));
    });
    apply("sweep", "steps", [&](const std::string& v) { c.plan.steps = parse_u64(v); });
    apply("sweep", "alpha_grid", [&](const std::string& v) { c.plan.alpha_grid = doubles(v); });
    apply("sweep", "beta_grid", [&](const std::string& v) { c.plan.beta_grid = doubles(v); });
    apply("sweep", "seeds", [&](const std::string& v) { c.plan.seeds = unsigneds<std::uint64_t>(v); });
    apply("sweep", "conditions", [&](const std::string& v) {
        c.plan.conditions.clear();
        if (v == "all") c.plan.conditions = default_conditions();
        else
            for (const auto& x : split(v, ',')) c.plan.conditions.push_back(parse_condition(x));
    });
    apply("sweep", "threshold_anchor", [&](const std::string& v) {
        if (v != "id" && v != "condition") throw ParseError("threshold_anchor must be id or condition");
        c.plan.id_anchored_thresholds = v == "id";
    });
    apply("sweep", "noise_levels", [&](const std::string& v) { c.plan.levels.noise_stddev = fixed<5>(v); });
    apply("sweep", "blur_levels", [&](const std::string& v) { c.plan.levels.blur_sigma = fixed<5>(v); });

    apply("run", "seed", [&](const std::string& v) { c.seed = parse_u64(v); });
    apply("run", "jobs", [&](const std::string& v) { c.plan.jobs = parse_u64(v); });
    apply("run", "save_models", [&](const std::string& v) { c.save_models = boolean(v); });

    static const std::set<std::string> known{"dataset", "net", "sgd", "uq", "two_stage", "sweep", "run"};
    for (const auto& [section, kv] : t.sections()) {
        if (!known.count(section)) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, value] : kv)
            if (!seen.count(section + "." + key)) throw ConfigError("unknown config key " + section + "." + key);
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

Dataset RunConfig::build_dataset() const {
    Dataset d;
    if (dataset_source == "synthetic") {
        SynthSpec s = synth;
        s.seed = derive_seed(seed, {tag_of("dataset")});
        d = generate(s);
    } else {
        const std::filesystem::path path(dataset_source);
        if (!std::filesystem::is_regular_file(path)) throw ConfigError("dataset.source: no such file " + dataset_source);
        d = sniff_magic(path) == std::string(kDatasetMagic, 4) ? load_dataset(path) : import_csv(path);
    }
    const bool unsplit = std::all_of(d.splits.begin(), d.splits.end(), [](Split s) { return s == Split::Unassigned; });
    if (unsplit) d = split(std::move(d), derive_seed(seed, {tag_of("split")}));
    return d;
}

}  // namespace dfb
