#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "kfrecon/pipeline.hpp"

namespace kfrecon {

/// Flat `key = value` lines; '#' starts a comment.
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Throws kInvalidArgument for unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

}  // namespace kfrecon
