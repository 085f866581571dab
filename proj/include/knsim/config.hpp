#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "knsim/harness.hpp"

namespace knsim {

// Config files are a TOML subset: [section] headers, `key = value` lines with
// bare numbers, true/false or double-quoted strings, and # comments.

struct ConfigEntry {
    std::string key;    // dotted, e.g. "simenv.max_pods"
    std::string value;  // raw scalar text, quotes included
    int line = 0;
};

std::vector<ConfigEntry> parse_config_text(std::string_view text, const std::string& origin = "<config>");

/// Applies entries in order, except that workload.profile is applied first so
/// explicit workload fields refine the chosen builtin.
void apply_entries(ExperimentConfig& cfg, const std::vector<ConfigEntry>& entries);

/// Built-in defaults overlaid with the file at `path`.
ExperimentConfig load_config(const std::filesystem::path& path);

void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Parses "dotted.key=value" and applies it.
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

std::string get_value(const ExperimentConfig& cfg, const std::string& key);

const std::vector<std::string>& config_keys();

/// Every key with its current value, in the file format, loadable by load_config.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace knsim
