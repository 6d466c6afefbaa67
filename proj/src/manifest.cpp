#include "loopscope/manifest.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "loopscope/common.hpp"

namespace loopscope {

void write_text_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
        if (!file) throw std::runtime_error("cannot write file: " + tmp.string());
        file << content;
        if (!file) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_text_file(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << file.rdbuf();
    return buf.str();
}

void write_manifest(const std::string& out_dir, const std::string& subcommand, std::uint64_t seed,
                    const nlohmann::json& inputs, const nlohmann::json& config,
                    const std::vector<std::string>& outputs) {
    const nlohmann::json manifest{
        {"tool", kToolName},  {"version", kToolVersion}, {"subcommand", subcommand},
        {"seed", seed},       {"inputs", inputs},        {"config", config},
        {"outputs", outputs},
    };
    write_text_atomic(
        (std::filesystem::path(out_dir) / ("manifest." + subcommand + ".json")).string(),
        manifest.dump(2) + "\n");
}

}  // namespace loopscope
