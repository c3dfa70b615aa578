#include "oad/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace oad {

// Identity covers the resolved command, not its outputs or wall times, so a
// rerun of the same command carries the same id into every artifact.
std::uint64_t RunManifest::id() const {
    std::ostringstream os;
    os << "command=" << command << ";version=" << tool_version << ";seed=" << seed;
    for (const auto& [k, v] : config) os << ';' << k << '=' << v;
    for (const auto& p : inputs) os << ";in=" << p;
    return fnv1a64(os.str());
}

void RunManifest::save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["manifest_id"] = hex64(id());
    j["command"] = command;
    j["tool_version"] = tool_version;
    j["seed"] = seed;
    j["config"] = config;
    j["inputs"] = inputs;
    j["artifacts"] = artifacts;
    j["wall_time_ms"] = wall_time_ms;
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write manifest: " + path.string());
    os << j.dump(2) << "\n";
}

}  // namespace oad
