#pragma once

#include <chrono>
#include <deque>
#include <span>
#include <vector>

#include "oad/data.hpp"
#include "oad/models.hpp"
#include "oad/timeline.hpp"

namespace oad {

namespace detail {

// Shared scoring path for whole-stream and incremental inference, so the two
// are bit-identical by construction: same window assembly, same graph. The
// store enters as frozen snapshots, so concurrent sessions can share it.
template <class S>
std::vector<double> score_window(const Model<S>& model, const ParamStore<S>& params,
                                 const std::vector<S>& window, int rows) {
    const int d = model.spec().feature_dim;
    Tape<S> tape;
    Tensor<S> F = tape.leaf({rows, d}, window);
    Tensor<S> probs = softmax_rows(model.logits(tape, params, F));
    auto pv = probs.value();
    return std::vector<double>(pv.begin(), pv.end());
}

}  // namespace detail

// Stride-1 sliding-window scoring: frame t is scored from frames
// [max(0, t-L+1) .. t]; the short windows at the stream start are passed
// as-is. Optionally records per-frame wall time in milliseconds.
template <class S>
ScoreTimeline infer_stream(const FeatureStream& stream, const Model<S>& model, const ParamStore<S>& params,
                           std::vector<double>* frame_ms = nullptr) {
    if (stream.T < 1) throw ValidationError("infer: empty stream '" + stream.video_id + "'");
    const ModelSpec& spec = model.spec();
    if (stream.d != spec.feature_dim)
        throw ValidationError("infer: stream '" + stream.video_id + "' has d=" + std::to_string(stream.d) +
                              ", model expects " + std::to_string(spec.feature_dim));
    ScoreTimeline tl;
    tl.video_id = stream.video_id;
    tl.T = stream.T;
    tl.K = spec.num_classes;
    tl.model_fingerprint = spec.fingerprint();
    tl.probs.resize(static_cast<std::size_t>(stream.T) * (spec.num_classes + 1));
    tl.predicted.resize(stream.T);
    std::vector<S> window;
    for (int t = 0; t < stream.T; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const int start = std::max(0, t - spec.seq_len + 1);
        const int rows = t - start + 1;
        window.assign(stream.frame(start), stream.frame(start) + static_cast<std::size_t>(rows) * stream.d);
        const auto row = detail::score_window(model, params, window, rows);
        std::copy(row.begin(), row.end(), tl.probs.begin() + static_cast<std::size_t>(t) * row.size());
        int best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = static_cast<int>(c);
        tl.predicted[t] = best;
        if (frame_ms)
            frame_ms->push_back(
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    return tl;
}

// Streaming form of the same contract: feeding frames one at a time
// reproduces infer_stream row-for-row. Holds at most L-1 past frames.
template <class S>
class InferSession {
  public:
    InferSession(const Model<S>& model, const ParamStore<S>& params) : model_(&model), params_(&params) {}

    std::vector<double> push(std::span<const float> frame) {
        const ModelSpec& spec = model_->spec();
        if (static_cast<int>(frame.size()) != spec.feature_dim)
            throw ValidationError("infer session: frame dim " + std::to_string(frame.size()) +
                                  ", model expects " + std::to_string(spec.feature_dim));
        const int rows = static_cast<int>(past_.size()) + 1;
        std::vector<S> window;
        window.reserve(static_cast<std::size_t>(rows) * spec.feature_dim);
        for (const auto& f : past_) window.insert(window.end(), f.begin(), f.end());
        for (float v : frame) window.push_back(static_cast<S>(v));
        auto row = detail::score_window(*model_, *params_, window, rows);

        past_.emplace_back(frame.begin(), frame.end());
        if (static_cast<int>(past_.size()) > spec.seq_len - 1) past_.pop_front();
        return row;
    }

    void reset() { past_.clear(); }
    int buffered() const { return static_cast<int>(past_.size()); }

  private:
    const Model<S>* model_;
    const ParamStore<S>* params_;
    std::deque<std::vector<float>> past_;
};

struct LatencySummary {
    double p50_ms = 0.0;
    double p99_ms = 0.0;
    double mean_ms = 0.0;
    std::size_t frames = 0;
};

inline LatencySummary summarize_latency(std::vector<double> frame_ms) {
    LatencySummary s;
    s.frames = frame_ms.size();
    if (frame_ms.empty()) return s;
    double total = 0.0;
    for (double v : frame_ms) total += v;
    s.mean_ms = total / frame_ms.size();
    std::sort(frame_ms.begin(), frame_ms.end());
    auto quantile = [&](double q) {
        const auto idx = static_cast<std::size_t>(q * (frame_ms.size() - 1));
        return frame_ms[idx];
    };
    s.p50_ms = quantile(0.5);
    s.p99_ms = quantile(0.99);
    return s;
}

}  // namespace oad
