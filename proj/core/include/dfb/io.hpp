#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "dfb/data.hpp"
#include "dfb/nnet.hpp"
#include "dfb/pipelines.hpp"
#include "dfb/uq.hpp"

namespace dfb {

inline constexpr char kCheckpointMagic[4] = {'D', 'F', 'B', '1'};
inline constexpr char kDatasetMagic[4] = {'D', 'F', 'D', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

// Named matrix appended after the parameter block of a checkpoint.
struct Section {
    std::string name;
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    std::vector<double> data;  // column-major

    Matrix matrix() const;
    static Section from(std::string name, const Matrix& m);
};

// DFB1 layout, little-endian:
//   "DFB1" | u32 version | u64 parameter count | u64 config length | config text
//   | f64 x count | u32 section count | per section: u32 name length, name,
//   u64 rows, u64 cols, f64 x rows*cols
struct Checkpoint {
    NetConfig config;
    Vector params;
    std::vector<Section> sections;

    const Section* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& c);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const Network& net);
Network network_from(const Checkpoint& c);
Checkpoint to_checkpoint(const SwagPosterior& post);
SwagPosterior swag_from(const Checkpoint& c);
Checkpoint to_checkpoint(const BnnPosterior& post);
BnnPosterior bnn_from(const Checkpoint& c);

// DFD1 layout, little-endian:
//   "DFD1" | u32 version | u64 S | u64 D | u8 has_spatial | u32 H | u32 W | u32 C
//   | u64 label offset | f32 x S*D (row-major) | u8 x S labels | u8 x S split tags
void write_dataset(std::ostream& out, const Dataset& d);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

// Header "f0,...,f{D-1},label"; one row per sample. No split tags.
Dataset import_csv(std::istream& in, const std::string& provenance = "csv import");
Dataset import_csv(const std::filesystem::path& path);

// Model bundle directory: manifest.txt, checkpoint files and, for ensembles,
// an index (members.txt) listing member checkpoints in order.
void save_bundle(const std::filesystem::path& dir, const DeferralModel& model);
DeferralModel load_bundle(const std::filesystem::path& dir);

// Magic of a file, or empty if unreadable.
std::string sniff_magic(const std::filesystem::path& path);

}  // namespace dfb
