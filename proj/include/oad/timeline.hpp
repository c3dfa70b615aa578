#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oad/common.hpp"

namespace oad {

// Per-frame class probabilities produced by stride-1 online inference.
struct ScoreTimeline {
    std::string video_id;
    int T = 0;
    int K = 0;  // action classes; probability rows have K+1 entries (index 0 = background)
    std::vector<double> probs;  // T x (K+1)
    std::vector<int> predicted; // per-frame argmax
    std::uint64_t model_fingerprint = 0;
    std::uint64_t manifest_id = 0;

    std::span<const double> row(int t) const {
        return {probs.data() + static_cast<std::size_t>(t) * (K + 1), static_cast<std::size_t>(K + 1)};
    }
    void validate() const;
};

void save_timeline_csv(const std::filesystem::path& path, const ScoreTimeline& tl);
void save_timeline_binary(const std::filesystem::path& path, const ScoreTimeline& tl);
ScoreTimeline load_timeline_binary(const std::filesystem::path& path);

}  // namespace oad
