#include "dfb/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dfb/error.hpp"
#include "dfb/text.hpp"

namespace dfb {
namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* what) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError(std::string("truncated file reading ") + what);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void put_string64(std::ostream& out, const std::string& s) {
    put<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
    if (n > (1ULL << 32)) throw FormatError(std::string("implausible length for ") + what);
    std::string s(n, '\0');
    if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError(std::string("truncated ") + what);
    return s;
}

void expect_magic(std::istream& in, const char (&magic)[4]) {
    char m[4];
    if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0)
        throw FormatError("bad magic, expected " + std::string(magic, 4));
    const auto version = get<std::uint32_t>(in, "version");
    if (version != kFormatVersion) throw FormatError("unsupported format version " + std::to_string(version));
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return in;
}

}  // namespace

Matrix Section::matrix() const {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::memcpy(m.data(), data.data(), data.size() * sizeof(double));
    return m;
}

Section Section::from(std::string name, const Matrix& m) {
    Section s{std::move(name), static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols()), {}};
    s.data.assign(m.data(), m.data() + m.size());
    return s;
}

const Section* Checkpoint::find(const std::string& name) const {
    for (const auto& s : sections)
        if (s.name == name) return &s;
    return nullptr;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
    out.write(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(c.params.size()));
    put_string64(out, c.config.canonical());
    for (Eigen::Index i = 0; i < c.params.size(); ++i) put<double>(out, c.params[i]);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(c.sections.size()));
    for (const auto& s : c.sections) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(s.name.size()));
        out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
        put<std::uint64_t>(out, s.rows);
        put<std::uint64_t>(out, s.cols);
        for (double v : s.data) put<double>(out, v);
    }
    if (!out) throw FormatError("write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
    expect_magic(in, kCheckpointMagic);
    Checkpoint c;
    const auto count = get<std::uint64_t>(in, "parameter count");
    const auto text = get_bytes(in, get<std::uint64_t>(in, "config length"), "config text");
    c.config = NetConfig::from_canonical(text);
    if (count > (1ULL << 31)) throw FormatError("implausible parameter count");
    c.params.resize(static_cast<Eigen::Index>(count));
    for (std::uint64_t i = 0; i < count; ++i) c.params[static_cast<Eigen::Index>(i)] = get<double>(in, "parameters");
    const auto n_sections = get<std::uint32_t>(in, "section count");
    for (std::uint32_t k = 0; k < n_sections; ++k) {
        Section s;
        s.name = get_bytes(in, get<std::uint32_t>(in, "section name length"), "section name");
        s.rows = get<std::uint64_t>(in, "section rows");
        s.cols = get<std::uint64_t>(in, "section cols");
        if (s.rows * s.cols > (1ULL << 31)) throw FormatError("implausible section size");
        s.data.resize(s.rows * s.cols);
        for (double& v : s.data) v = get<double>(in, "section data");
        c.sections.push_back(std::move(s));
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    auto out = open_out(path);
    write_checkpoint(out, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_checkpoint(in);
}

Checkpoint to_checkpoint(const Network& net) { return {net.config(), net.get_params(), {}}; }

Network network_from(const Checkpoint& c) {
    Network net(c.config);
    net.set_params(c.params);
    return net;
}

Checkpoint to_checkpoint(const SwagPosterior& post) {
    Checkpoint c{post.config, post.mean, {}};
    c.sections.push_back(Section::from("second_moment", post.second_moment));
    c.sections.push_back(Section::from("deviations", post.deviations));
    Matrix collected(1, 1);
    collected(0, 0) = static_cast<double>(post.collected);
    c.sections.push_back(Section::from("collected", collected));
    return c;
}

SwagPosterior swag_from(const Checkpoint& c) {
    const auto* sm = c.find("second_moment");
    const auto* dev = c.find("deviations");
    const auto* col = c.find("collected");
    if (!sm || !dev || !col) throw FormatError("checkpoint lacks SWAG sections");
    SwagPosterior p;
    p.config = c.config;
    p.mean = c.params;
    p.second_moment = sm->matrix().col(0);
    p.deviations = dev->matrix();
    p.collected = static_cast<std::size_t>(col->data.at(0));
    if (p.second_moment.size() != p.mean.size() || p.deviations.rows() != p.mean.size())
        throw FormatError("SWAG sections disagree with parameter count");
    return p;
}

Checkpoint to_checkpoint(const BnnPosterior& post) {
    Checkpoint c{post.config, post.mean, {}};
    c.sections.push_back(Section::from("log_stddev", post.log_stddev));
    Matrix prior(1, 1);
    prior(0, 0) = post.prior_stddev;
    c.sections.push_back(Section::from("prior_stddev", prior));
    return c;
}

BnnPosterior bnn_from(const Checkpoint& c) {
    const auto* ls = c.find("log_stddev");
    const auto* pr = c.find("prior_stddev");
    if (!ls || !pr) throw FormatError("checkpoint lacks BNN sections");
    BnnPosterior p{c.config, c.params, ls->matrix().col(0), pr->data.at(0)};
    if (p.log_stddev.size() != p.mean.size()) throw FormatError("log_stddev length disagrees with parameter count");
    return p;
}

void write_dataset(std::ostream& out, const Dataset& d) {
    d.validate();
    const std::uint64_t s = d.size();
    const std::uint64_t dim = d.dim();
    out.write(kDatasetMagic, 4);
    put<std::uint32_t>(out, kFormatVersion);
    put<std::uint64_t>(out, s);
    put<std::uint64_t>(out, dim);
    put<std::uint8_t>(out, d.spatial ? 1 : 0);
    const SpatialShape shape = d.spatial.value_or(SpatialShape{0, 0, 0});
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.height));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.width));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.channels));
    constexpr std::uint64_t header = 4 + 4 + 8 + 8 + 1 + 12 + 8;
    put<std::uint64_t>(out, header + s * dim * 4);
    for (std::uint64_t i = 0; i < s; ++i)
        for (std::uint64_t j = 0; j < dim; ++j)
            put<float>(out, static_cast<float>(d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
    for (int y : d.labels) put<std::uint8_t>(out, static_cast<std::uint8_t>(y));
    for (Split t : d.splits) put<std::uint8_t>(out, static_cast<std::uint8_t>(t));
    if (!out) throw FormatError("write failed");
}

Dataset read_dataset(std::istream& in) {
    expect_magic(in, kDatasetMagic);
    Dataset d;
    const auto s = get<std::uint64_t>(in, "S");
    const auto dim = get<std::uint64_t>(in, "D");
    const auto has_spatial = get<std::uint8_t>(in, "spatial flag");
    SpatialShape shape;
    shape.height = get<std::uint32_t>(in, "H");
    shape.width = get<std::uint32_t>(in, "W");
    shape.channels = get<std::uint32_t>(in, "C");
    const auto label_offset = get<std::uint64_t>(in, "label offset");
    if (s * dim > (1ULL << 32)) throw FormatError("implausible dataset size");
    if (has_spatial) d.spatial = shape;
    d.features.resize(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(dim));
    for (std::uint64_t i = 0; i < s; ++i)
        for (std::uint64_t j = 0; j < dim; ++j)
            d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = get<float>(in, "features");
    if (static_cast<std::uint64_t>(in.tellg()) != label_offset) in.seekg(static_cast<std::streamoff>(label_offset));
    d.labels.resize(s);
    for (auto& y : d.labels) y = get<std::uint8_t>(in, "labels");
    d.splits.resize(s);
    for (auto& t : d.splits) {
        const auto v = get<std::uint8_t>(in, "split tags");
        if (v > 2 && v != 255) throw FormatError("bad split tag " + std::to_string(v));
        t = static_cast<Split>(v);
    }
    d.provenance = "DFD1 file";
    d.validate();
    return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
    auto out = open_out(path);
    write_dataset(out, d);
}

Dataset load_dataset(const std::filesystem::path& path) {
    auto in = open_in(path);
    auto d = read_dataset(in);
    d.provenance = path.filename().string();
    return d;
}

Dataset import_csv(std::istream& in, const std::string& provenance) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty CSV");
    const auto header = split(line, ',');
    if (header.size() < 2 || header.back() != "label") throw ParseError("CSV header must be f0..fD-1,label");
    const std::size_t dim = header.size() - 1;
    for (std::size_t j = 0; j < dim; ++j)
        if (header[j] != "f" + std::to_string(j)) throw ParseError("CSV header column " + std::to_string(j) + " must be f" + std::to_string(j));
    std::vector<std::vector<double>> rows;
    Dataset d;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != dim + 1) throw ParseError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) + " cells");
        std::vector<double> row(dim);
        try {
            for (std::size_t j = 0; j < dim; ++j) row[j] = parse_double(cells[j]);
            const auto y = parse_u64(cells[dim]);
            if (y > 1) throw ParseError("label must be 0 or 1");
            d.labels.push_back(static_cast<int>(y));
        } catch (const ParseError& e) {
            throw ParseError("CSV line " + std::to_string(line_no) + ": " + e.what());
        }
        rows.push_back(std::move(row));
    }
    d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    quantize_to_float(d.features);
    d.splits.assign(rows.size(), Split::Unassigned);
    d.provenance = provenance;
    return d;
}

Dataset import_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    return import_csv(in, path.filename().string());
}

namespace {

using Manifest = std::map<std::string, std::string>;

void write_manifest(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& kv) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ParseError("bad manifest line '" + std::string(t) + "'");
        m[std::string(trim(t.substr(0, eq)))] = std::string(trim(t.substr(eq + 1)));
    }
    return m;
}

const std::string& need(const Manifest& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("manifest lacks '" + key + "'");
    return it->second;
}

void save_members(const std::filesystem::path& dir, const std::vector<Network>& members, const std::string& prefix) {
    std::ofstream index(dir / "members.txt");
    for (std::size_t k = 0; k < members.size(); ++k) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%02zu.dfb", prefix.c_str(), k);
        save_checkpoint(dir / name, to_checkpoint(members[k]));
        index << name << '\n';
    }
}

std::vector<Network> load_members(const std::filesystem::path& dir) {
    std::ifstream index(dir / "members.txt");
    if (!index) throw FormatError("bundle lacks members.txt");
    std::vector<Network> members;
    std::string line;
    while (std::getline(index, line)) {
        const auto t = trim(line);
        if (!t.empty()) members.push_back(network_from(load_checkpoint(dir / std::string(t))));
    }
    return members;
}

}  // namespace

void save_bundle(const std::filesystem::path& dir, const DeferralModel& model) {
    std::filesystem::create_directories(dir);
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("method", to_string(model.method()));
    kv.emplace_back("threshold", model.threshold() ? format_double(*model.threshold()) : "none");
    kv.emplace_back("cost", model.cost() ? format_double(*model.cost()) : "none");
    kv.emplace_back("sampler_samples", std::to_string(model.sampler().n_samples));
    kv.emplace_back("sampler_seed", std::to_string(model.sampler().seed));
    std::visit(
        [&](const auto& a) {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, DeferralModel::Softmax> || std::is_same_v<T, DeferralModel::McDropout> ||
                          std::is_same_v<T, DeferralModel::OneStage>) {
                save_checkpoint(dir / "model.dfb", to_checkpoint(a.net));
                kv.emplace_back("config", a.net.config().canonical());
                kv.emplace_back("checkpoint", "model.dfb");
            } else if constexpr (std::is_same_v<T, DeferralModel::Ensemble>) {
                save_members(dir, a.members, "member");
                kv.emplace_back("config", a.members.front().config().canonical());
                kv.emplace_back("ensemble_index", "members.txt");
            } else if constexpr (std::is_same_v<T, DeferralModel::Swag>) {
                save_checkpoint(dir / "posterior.dfb", to_checkpoint(a.posterior));
                kv.emplace_back("config", a.posterior.config.canonical());
                kv.emplace_back("checkpoint", "posterior.dfb");
            } else if constexpr (std::is_same_v<T, DeferralModel::Bnn>) {
                save_checkpoint(dir / "posterior.dfb", to_checkpoint(a.posterior));
                kv.emplace_back("config", a.posterior.config.canonical());
                kv.emplace_back("checkpoint", "posterior.dfb");
            } else {
                save_members(dir, a.stage1, "stage1");
                save_checkpoint(dir / "stage2.dfb", to_checkpoint(a.stage2));
                kv.emplace_back("config", a.stage2.config().canonical());
                kv.emplace_back("ensemble_index", "members.txt");
                kv.emplace_back("checkpoint", "stage2.dfb");
            }
        },
        model.artifacts());
    write_manifest(dir / "manifest.txt", kv);
}

DeferralModel load_bundle(const std::filesystem::path& dir) {
    const auto m = read_manifest(dir / "manifest.txt");
    const Method method = parse_method(need(m, "method"));
    SamplerConfig sampler{parse_u64(need(m, "sampler_samples")), parse_u64(need(m, "sampler_seed"))};
    auto checkpoint = [&] { return load_checkpoint(dir / need(m, "checkpoint")); };
    auto cost = [&] { return parse_double(need(m, "cost")); };
    DeferralModel::Artifacts artifacts = [&]() -> DeferralModel::Artifacts {
        switch (method) {
            case Method::Softmax: return DeferralModel::Softmax{network_from(checkpoint())};
            case Method::Ensemble: return DeferralModel::Ensemble{load_members(dir)};
            case Method::Swag: return DeferralModel::Swag{swag_from(checkpoint())};
            case Method::McDropout: return DeferralModel::McDropout{network_from(checkpoint())};
            case Method::Bnn: return DeferralModel::Bnn{bnn_from(checkpoint())};
            case Method::LearnedOneStage:
                return DeferralModel::OneStage{network_from(checkpoint()), OneStageCost(cost())};
            case Method::LearnedTwoStage:
                return DeferralModel::TwoStage{load_members(dir), network_from(checkpoint()), TwoStageCost(cost())};
        }
        throw FormatError("unreachable method");
    }();
    DeferralModel model(std::move(artifacts), sampler);
    const auto& thr = need(m, "threshold");
    if (thr != "none") model.set_threshold(parse_double(thr));
    return model;
}

std::string sniff_magic(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    char m[4];
    if (!in || !in.read(m, 4)) return {};
    return std::string(m, 4);
}

}  // namespace dfb
