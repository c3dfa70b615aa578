#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oad/common.hpp"

namespace oad {

// One video's worth of pre-extracted unit features plus per-unit labels.
// Label 0 is background; actions are 1..K.
struct FeatureStream {
    std::string video_id;
    int T = 0;
    int d = 0;
    int K = 0;
    std::vector<float> features;  // T x d, row-major
    std::vector<int> labels;      // length T, each in [0, K]
    double unit_duration = 0.25;  // seconds per unit (metadata)

    void validate() const;
    const float* frame(int t) const { return features.data() + static_cast<std::size_t>(t) * d; }
};

enum class StreamFormat { binary, csv };

struct StreamLoadError : ValidationError {
    enum class Reason { bad_magic, bad_version, truncated, label_out_of_range, non_finite_feature, parse };
    Reason reason;
    StreamLoadError(Reason r, const std::string& msg) : ValidationError(msg), reason(r) {}
};

FeatureStream load_stream(const std::filesystem::path& path, StreamFormat format);
void save_stream(const std::filesystem::path& path, const FeatureStream& stream, StreamFormat format);
StreamFormat stream_format_from_path(const std::filesystem::path& path);

enum class SynthMode { order_sensitive, static_prototypes };

struct SynthSpec {
    int num_streams = 10;
    int T = 256;
    int d = 16;
    int K = 2;
    double noise = 0.1;
    SynthMode mode = SynthMode::order_sensitive;
    std::uint64_t seed = 1;

    void validate() const;
};

// Class prototypes shared by every stream of a dataset. In order-sensitive
// mode classes 1 and 2 emit the same orthonormal pair {u, v} in opposite
// orders, so their window contents agree as multisets and differ only in
// order; background is the zero vector. Extra classes (K > 2) fall back to
// static prototypes.
struct SynthPrototypes {
    std::vector<float> u;
    std::vector<float> v;
    std::vector<std::vector<float>> statics;  // per class 1..K in static mode / classes >= 3
};

SynthPrototypes synth_prototypes(const SynthSpec& spec);
std::vector<FeatureStream> generate_synthetic(const SynthSpec& spec);

}  // namespace oad
