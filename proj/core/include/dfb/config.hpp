#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dfb/data.hpp"
#include "dfb/pipelines.hpp"
#include "dfb/sweep.hpp"

namespace dfb {

// Parsed "[section]" / "key = value" text. '#' starts a comment.
class ConfigText {
public:
    static ConfigText parse(const std::string& text);

    bool has(const std::string& section, const std::string& key) const;
    const std::string& get(const std::string& section, const std::string& key) const;
    const std::map<std::string, std::map<std::string, std::string>>& sections() const noexcept { return sections_; }

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

struct RunConfig {
    // "synthetic" or a path to a DFD1 or CSV file.
    std::string dataset_source = "synthetic";
    SynthSpec synth;
    MethodSettings settings;
    SweepPlan plan;
    std::uint64_t seed = 0;
    bool save_models = true;

    void validate() const;

    // Canonical text: fixed section/key order, shortest round-trip numbers.
    // parse(to_text()) reproduces the config and to_text is byte-stable.
    std::string to_text() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    // Materializes the dataset (generate or load) and assigns splits.
    Dataset build_dataset() const;
};

}  // namespace dfb
