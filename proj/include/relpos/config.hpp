#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "relpos/encoder.hpp"
#include "relpos/tasks.hpp"

namespace relpos {

/// Everything a CLI command needs. Loaded from `key = value` text with
/// command-line overrides; precedence is flag > file > default.
struct RunConfig {
    EncoderConfig model;
    TaskSpec task;
    TrainConfig train;
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "out";
    std::size_t workers = 1;
    std::vector<int> sweep_ks{2, 8, 16, 31};
    std::vector<std::uint64_t> sweep_seeds{1, 2, 3};

    /// Validates every field; throws ConfigError.
    void validate() const;
    /// Canonical `key = value` lines (sorted), suitable for reloading.
    std::string to_text() const;
};

/// Parses `key = value` lines; `#` starts a comment. Duplicate keys are errors.
std::map<std::string, std::string> parse_kv_text(const std::string& text);

/// Applies string settings in order to a config. Unknown keys are errors.
void apply_settings(RunConfig& config, const std::map<std::string, std::string>& settings);

/// Builds the effective config: defaults, then the file (if any), then overrides.
RunConfig load_run_config(const std::filesystem::path* file, const std::map<std::string, std::string>& overrides);

std::vector<std::size_t> parse_size_list(const std::string& csv, const std::string& key);
std::vector<int> parse_int_list(const std::string& csv, const std::string& key);

}  // namespace relpos
