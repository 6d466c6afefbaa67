#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace loopscope {

// Write-to-temp-then-rename so partially written artifacts never appear
// under their final name.
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text_file(const std::string& path);

// Every subcommand drops a manifest next to its outputs: tool version,
// subcommand, seed, inputs, effective config, output names. No timestamps,
// so reruns are byte-identical.
void write_manifest(const std::string& out_dir, const std::string& subcommand, std::uint64_t seed,
                    const nlohmann::json& inputs, const nlohmann::json& config,
                    const std::vector<std::string>& outputs);

}  // namespace loopscope
