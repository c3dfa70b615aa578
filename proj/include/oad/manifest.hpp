#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "oad/common.hpp"

namespace oad {

// Reproducibility record written next to every command's artifacts. The id
// hashes the resolved configuration (not the wall times), so a rerun of the
// same command produces the same id.
struct RunManifest {
    std::string command;
    std::string tool_version = std::string(kToolVersion);
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;  // resolved flag -> value
    std::vector<std::string> inputs;
    std::vector<std::string> artifacts;
    double wall_time_ms = 0.0;

    std::uint64_t id() const;
    void save(const std::filesystem::path& path) const;
};

}  // namespace oad
