#include "oad/metrics.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace oad {

// --- timeline ---------------------------------------------------------------

void ScoreTimeline::validate() const {
    if (T < 1 || K < 1) throw ValidationError("timeline '" + video_id + "': empty or classless");
    if (probs.size() != static_cast<std::size_t>(T) * (K + 1) ||
        predicted.size() != static_cast<std::size_t>(T))
        throw ValidationError("timeline '" + video_id + "': buffer size mismatch");
    for (int t = 0; t < T; ++t) {
        double s = 0.0;
        for (double p : row(t)) s += p;
        if (std::abs(s - 1.0) > 1e-5)
            throw ValidationError("timeline '" + video_id + "': row " + std::to_string(t) +
                                  " does not sum to 1");
    }
}

void save_timeline_csv(const std::filesystem::path& path, const ScoreTimeline& tl) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write timeline: " + path.string());
    os << "# manifest " << hex64(tl.manifest_id) << "\n";
    os << "# model " << hex64(tl.model_fingerprint) << "\n";
    os << "frame";
    for (int c = 0; c <= tl.K; ++c) os << ",p" << c;
    os << ",argmax\n";
    os << std::setprecision(17);
    for (int t = 0; t < tl.T; ++t) {
        os << t;
        for (double p : tl.row(t)) os << ',' << p;
        os << ',' << tl.predicted[t] << '\n';
    }
}

namespace {
constexpr char kTimelineMagic[4] = {'O', 'A', 'D', 'T'};

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ValidationError(std::string("truncated timeline reading ") + what);
    return v;
}
}  // namespace

void save_timeline_binary(const std::filesystem::path& path, const ScoreTimeline& tl) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write timeline: " + path.string());
    os.write(kTimelineMagic, 4);
    write_pod(os, std::uint32_t{1});
    write_pod(os, tl.model_fingerprint);
    write_pod(os, tl.manifest_id);
    write_pod(os, static_cast<std::uint32_t>(tl.T));
    write_pod(os, static_cast<std::uint32_t>(tl.K + 1));
    for (int t = 0; t < tl.T; ++t) {
        for (double p : tl.row(t)) write_pod(os, p);
        write_pod(os, static_cast<std::uint32_t>(tl.predicted[t]));
    }
    if (!os) throw ValidationError("short write saving timeline: " + path.string());
}

ScoreTimeline load_timeline_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open timeline: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kTimelineMagic, 4) != 0)
        throw ValidationError("bad magic in timeline: " + path.string());
    const auto version = read_pod<std::uint32_t>(is, "version");
    if (version != 1) throw ValidationError("unsupported timeline version");
    ScoreTimeline tl;
    tl.video_id = path.stem().string();
    tl.model_fingerprint = read_pod<std::uint64_t>(is, "fingerprint");
    tl.manifest_id = read_pod<std::uint64_t>(is, "manifest");
    tl.T = static_cast<int>(read_pod<std::uint32_t>(is, "T"));
    const int cols = static_cast<int>(read_pod<std::uint32_t>(is, "columns"));
    tl.K = cols - 1;
    tl.probs.resize(static_cast<std::size_t>(tl.T) * cols);
    tl.predicted.resize(tl.T);
    for (int t = 0; t < tl.T; ++t) {
        for (int c = 0; c < cols; ++c) tl.probs[t * cols + c] = read_pod<double>(is, "probability");
        tl.predicted[t] = static_cast<int>(read_pod<std::uint32_t>(is, "argmax"));
    }
    tl.validate();
    return tl;
}

// --- ranking metrics ---------------------------------------------------------

namespace {

std::vector<std::size_t> ranked_indices(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;  // deterministic tie-break by frame index
    });
    return order;
}

void check_metric_input(std::span<const double> scores, std::span<const int> labels, std::size_t& pos,
                        std::size_t& neg) {
    if (scores.size() != labels.size())
        throw ValidationError("metric input: " + std::to_string(scores.size()) + " scores vs " +
                              std::to_string(labels.size()) + " labels");
    pos = neg = 0;
    for (int l : labels) (l != 0 ? pos : neg)++;
    if (pos == 0) throw ContractError("metric input has no positive frames");
}

}  // namespace

double per_frame_ap(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0, neg = 0;
    check_metric_input(scores, labels, pos, neg);
    const auto order = ranked_indices(scores);
    double sum = 0.0;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]] != 0) {
            ++tp;
            sum += static_cast<double>(tp) / static_cast<double>(k + 1);
        }
    }
    return sum / static_cast<double>(pos);
}

double per_frame_cap(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0, neg = 0;
    check_metric_input(scores, labels, pos, neg);
    if (neg == 0) return 1.0;  // w -> infinity, calibrated precision is identically 1
    const double w = static_cast<double>(neg) / static_cast<double>(pos);
    const auto order = ranked_indices(scores);
    double sum = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]] != 0) {
            ++tp;
            sum += static_cast<double>(tp) / (static_cast<double>(tp) + static_cast<double>(fp) / w);
        } else {
            ++fp;
        }
    }
    return sum / static_cast<double>(pos);
}

// --- evaluation --------------------------------------------------------------

EvalReport evaluate(const std::vector<ScoreTimeline>& timelines,
                    const std::vector<const FeatureStream*>& streams, MetricProtocol protocol) {
    if (timelines.empty() || timelines.size() != streams.size())
        throw ValidationError("evaluate: timelines and streams must align and be nonempty");
    const int K = timelines.front().K;
    for (std::size_t i = 0; i < timelines.size(); ++i) {
        if (timelines[i].K != K) throw ValidationError("evaluate: class count differs across timelines");
        if (timelines[i].T != streams[i]->T)
            throw ValidationError("evaluate: timeline '" + timelines[i].video_id + "' has " +
                                  std::to_string(timelines[i].T) + " frames, stream has " +
                                  std::to_string(streams[i]->T));
        if (streams[i]->K != K)
            throw ValidationError("evaluate: stream '" + streams[i]->video_id + "' class count mismatch");
    }

    EvalReport report;
    report.protocol = protocol;
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < timelines.size(); ++i) {
        for (int t = 0; t < timelines[i].T; ++t) {
            if (timelines[i].predicted[t] == streams[i]->labels[t]) ++correct;
            ++total;
        }
    }
    report.total_frames = total;
    report.frame_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

    double ap_sum = 0.0, cap_sum = 0.0;
    for (int c = 1; c <= K; ++c) {
        std::vector<double> scores;
        std::vector<int> labels;
        scores.reserve(total);
        labels.reserve(total);
        for (std::size_t i = 0; i < timelines.size(); ++i) {
            for (int t = 0; t < timelines[i].T; ++t) {
                scores.push_back(timelines[i].row(t)[c]);
                labels.push_back(streams[i]->labels[t] == c ? 1 : 0);
            }
        }
        ClassMetrics cm;
        cm.cls = c;
        cm.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
        cm.negatives = labels.size() - cm.positives;
        if (cm.positives > 0) {
            cm.defined = true;
            cm.w = cm.negatives ? static_cast<double>(cm.negatives) / static_cast<double>(cm.positives)
                                : std::numeric_limits<double>::infinity();
            cm.ap = per_frame_ap(scores, labels);
            cm.cap = per_frame_cap(scores, labels);
            ap_sum += cm.ap;
            cap_sum += cm.cap;
            ++report.defined_classes;
        }
        report.per_class.push_back(cm);
    }
    if (report.defined_classes > 0) {
        report.map = ap_sum / report.defined_classes;
        report.mean_cap = cap_sum / report.defined_classes;
    }
    return report;
}

double pairwise_accuracy(const std::vector<ScoreTimeline>& timelines,
                         const std::vector<const FeatureStream*>& streams, int cls_a, int cls_b) {
    if (timelines.size() != streams.size()) throw ValidationError("pairwise_accuracy: input mismatch");
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < timelines.size(); ++i) {
        for (int t = 0; t < timelines[i].T; ++t) {
            const int gt = streams[i]->labels[t];
            if (gt != cls_a && gt != cls_b) continue;
            const auto row = timelines[i].row(t);
            const int pick = row[cls_a] >= row[cls_b] ? cls_a : cls_b;
            if (pick == gt) ++correct;
            ++total;
        }
    }
    if (total == 0) throw ValidationError("pairwise_accuracy: no frames of either class");
    return static_cast<double>(correct) / static_cast<double>(total);
}

// --- report serialization ----------------------------------------------------

std::string report_to_text(const EvalReport& report) {
    std::ostringstream os;
    os << "# manifest " << hex64(report.manifest_id) << "\n";
    os << "protocol: " << to_string(report.protocol) << "\n";
    os << std::left << std::setw(8) << "class" << std::right << std::setw(10) << "P" << std::setw(12)
       << "w" << std::setw(12) << "AP" << std::setw(12) << "cAP" << "\n";
    os << std::fixed;
    for (const auto& cm : report.per_class) {
        os << std::left << std::setw(8) << cm.cls << std::right << std::setw(10) << cm.positives;
        if (!cm.defined) {
            os << std::setw(12) << "-" << std::setw(12) << "undefined" << std::setw(12) << "undefined"
               << "\n";
            continue;
        }
        os << std::setw(12) << std::setprecision(3) << cm.w << std::setw(12) << std::setprecision(6)
           << cm.ap << std::setw(12) << std::setprecision(6) << cm.cap << "\n";
    }
    os << std::setprecision(6);
    os << "mAP:            " << report.map << "\n";
    os << "mean cAP:       " << report.mean_cap << "\n";
    os << "frame accuracy: " << report.frame_accuracy << "\n";
    os << "frames:         " << report.total_frames << "\n";
    return os.str();
}

void write_report_text(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write report: " + path.string());
    os << report_to_text(report);
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write report: " + path.string());
    os << "# manifest " << hex64(report.manifest_id) << "\n";
    os << "class,positives,negatives,w,ap,cap,defined\n";
    os << std::setprecision(17);
    for (const auto& cm : report.per_class)
        os << cm.cls << ',' << cm.positives << ',' << cm.negatives << ',' << cm.w << ',' << cm.ap << ','
           << cm.cap << ',' << (cm.defined ? 1 : 0) << '\n';
    os << "summary,map," << report.map << "\n";
    os << "summary,mean_cap," << report.mean_cap << "\n";
    os << "summary,frame_accuracy," << report.frame_accuracy << "\n";
}

void write_report_svg(const std::filesystem::path& path, const EvalReport& report) {
    const bool use_cap = report.protocol == MetricProtocol::mean_cap;
    const int bar_w = 36, gap = 14, height = 220, base = 180, left = 50;
    const int width = left + static_cast<int>(report.per_class.size()) * (bar_w + gap) + 20;
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write svg: " + path.string());
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\">\n";
    os << "<!-- manifest " << hex64(report.manifest_id) << " -->\n";
    os << "<text x=\"6\" y=\"16\" font-size=\"12\">per-class " << (use_cap ? "cAP" : "AP") << "</text>\n";
    os << "<line x1=\"" << left - 6 << "\" y1=\"" << base << "\" x2=\"" << width - 10 << "\" y2=\"" << base
       << "\" stroke=\"black\"/>\n";
    int x = left;
    os << std::fixed << std::setprecision(3);
    for (const auto& cm : report.per_class) {
        const double value = cm.defined ? (use_cap ? cm.cap : cm.ap) : 0.0;
        const int h = static_cast<int>(value * 140);
        os << "<rect x=\"" << x << "\" y=\"" << base - h << "\" width=\"" << bar_w << "\" height=\"" << h
           << "\" fill=\"" << (cm.defined ? "#4878a8" : "#cccccc") << "\"/>\n";
        os << "<text x=\"" << x + 4 << "\" y=\"" << base + 14 << "\" font-size=\"11\">c" << cm.cls
           << "</text>\n";
        os << "<text x=\"" << x << "\" y=\"" << base - h - 4 << "\" font-size=\"10\">" << value
           << "</text>\n";
        x += bar_w + gap;
    }
    os << "</svg>\n";
}

}  // namespace oad
