#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "oad/data.hpp"
#include "oad/timeline.hpp"

namespace oad {

enum class MetricProtocol { map, mean_cap };

inline std::string to_string(MetricProtocol p) { return p == MetricProtocol::map ? "mAP" : "mean-cAP"; }

// Average precision over a frame ranking (descending confidence, ties broken
// by ascending frame index). Requires at least one positive label.
double per_frame_ap(std::span<const double> scores, std::span<const int> labels);

// Calibrated AP: precision is corrected by w = #neg/#pos before averaging.
// With no negatives, w is treated as infinite and the result is 1.
double per_frame_cap(std::span<const double> scores, std::span<const int> labels);

struct ClassMetrics {
    int cls = 0;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    double w = 0.0;  // negative-to-positive ratio
    double ap = 0.0;
    double cap = 0.0;
    bool defined = false;  // false when the class has no positive frames
};

struct EvalReport {
    MetricProtocol protocol = MetricProtocol::mean_cap;
    std::vector<ClassMetrics> per_class;  // classes 1..K, background excluded
    double map = 0.0;
    double mean_cap = 0.0;
    double frame_accuracy = 0.0;
    std::size_t total_frames = 0;
    int defined_classes = 0;
    std::uint64_t manifest_id = 0;

    double headline() const { return protocol == MetricProtocol::map ? map : mean_cap; }
};

// Concatenates frames across streams per class and scores both metrics.
// timelines[i] must line up with streams[i] frame-for-frame.
EvalReport evaluate(const std::vector<ScoreTimeline>& timelines,
                    const std::vector<const FeatureStream*>& streams, MetricProtocol protocol);

void write_report_text(const std::filesystem::path& path, const EvalReport& report);
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
// Static per-class bar chart of the selected metric.
void write_report_svg(const std::filesystem::path& path, const EvalReport& report);
std::string report_to_text(const EvalReport& report);

// Frame accuracy restricted to frames whose ground truth is in {cls_a, cls_b},
// predicting whichever of the two has the larger probability. This isolates
// order discrimination from background separation on the synthetic benchmark.
double pairwise_accuracy(const std::vector<ScoreTimeline>& timelines,
                         const std::vector<const FeatureStream*>& streams, int cls_a, int cls_b);

}  // namespace oad
