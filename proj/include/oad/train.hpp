#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "oad/data.hpp"
#include "oad/models.hpp"

namespace oad {

struct TrainConfig {
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double decay_rate = 0.95;
    int epochs = 20;
    int batch_size = 32;
    std::uint64_t seed = 1;
    Precision precision = Precision::f32;
    double grad_clip = 0.0;  // 0 disables clipping

    void validate() const {
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
        if (decay_rate <= 0.0 || decay_rate > 1.0) throw ConfigError("decay_rate must be in (0,1]");
        if (epochs < 0 || batch_size < 1) throw ConfigError("epochs must be >= 0 and batch_size >= 1");
        if (grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
    }
};

// One supervised window: L frames, labeled by the last frame.
struct TrainWindow {
    std::vector<float> features;  // L x d
    int label = 0;
};

// Non-overlapping windows at 0, L, 2L, ...; a trailing remainder shorter
// than L is dropped. Only frames inside windows are ever touched.
inline std::vector<TrainWindow> make_training_windows(const FeatureStream& stream, int seq_len) {
    if (seq_len < 1) throw ConfigError("window length must be >= 1");
    std::vector<TrainWindow> windows;
    for (int start = 0; start + seq_len <= stream.T; start += seq_len) {
        TrainWindow w;
        w.features.assign(stream.frame(start), stream.frame(start) + static_cast<std::size_t>(seq_len) * stream.d);
        w.label = stream.labels[start + seq_len - 1];
        windows.push_back(std::move(w));
    }
    return windows;
}

// v <- momentum*v + grad; p <- p - lr*v; grads are zeroed afterwards.
// cfg.learning_rate is the rate for this step (the train loop decays it).
template <class S>
void sgd_step(ParamStore<S>& params, const TrainConfig& cfg) {
    cfg.validate();
    for (Storage<S>* p : params.entries())
        for (S g : p->grad)
            if (!std::isfinite(static_cast<double>(g)))
                throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    if (cfg.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (Storage<S>* p : params.entries())
            for (S g : p->grad) norm_sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.grad_clip) {
            const S factor = static_cast<S>(cfg.grad_clip / norm);
            for (Storage<S>* p : params.entries())
                for (S& g : p->grad) g *= factor;
        }
    }
    const S lr = static_cast<S>(cfg.learning_rate);
    const S mom = static_cast<S>(cfg.momentum);
    for (Storage<S>* p : params.entries()) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            p->momentum[i] = mom * p->momentum[i] + p->grad[i];
            p->value[i] -= lr * p->momentum[i];
        }
        p->zero_grad();
    }
}

struct EpochLog {
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double accuracy = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
};

// Plain-text log, one record per line: epoch=<n> loss=<v> lr=<v> acc=<v>
inline void save_train_log(const std::filesystem::path& path, const TrainLog& log,
                           std::uint64_t manifest_id) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot write training log: " + path.string());
    os << "# manifest " << hex64(manifest_id) << "\n";
    os.precision(17);
    for (const auto& e : log.epochs)
        os << "epoch=" << e.epoch << " loss=" << e.loss << " lr=" << e.lr << " acc=" << e.accuracy << "\n";
}

template <class S>
struct TrainResult {
    ParamStore<S> params;
    TrainLog log;
};

// Windowed supervised training: per epoch, shuffle all windows (seeded),
// minibatch, forward / cross-entropy / backward / SGD, then decay the
// learning rate. Deterministic for a fixed seed.
template <class S>
TrainResult<S> train(const ModelSpec& spec, const std::vector<FeatureStream>& streams,
                     const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    if (streams.empty()) throw ValidationError("train: no input streams");
    for (const auto& s : streams) {
        if (s.d != spec.feature_dim)
            throw ValidationError("train: stream '" + s.video_id + "' has d=" + std::to_string(s.d) +
                                  ", model expects " + std::to_string(spec.feature_dim));
        if (s.K != spec.num_classes)
            throw ValidationError("train: stream '" + s.video_id + "' has K=" + std::to_string(s.K) +
                                  ", model expects " + std::to_string(spec.num_classes));
    }

    std::vector<TrainWindow> windows;
    for (const auto& s : streams) {
        auto w = make_training_windows(s, spec.seq_len);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }

    TrainResult<S> result{init_params<S>(spec, cfg.seed), {}};
    if (windows.empty() || cfg.epochs == 0) return result;

    Model<S> model(spec);
    Rng rng(derive_seed(cfg.seed, "train"));
    ForwardCtx ctx{true, &rng};

    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainConfig step_cfg = cfg;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // lr after n epochs is lr0 * decay^n, computed via pow so the
        // schedule matches the closed form exactly
        step_cfg.learning_rate = cfg.learning_rate * std::pow(cfg.decay_rate, epoch - 1);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), at + cfg.batch_size);
            Tape<S> tape;
            std::vector<Tensor<S>> logit_rows;
            std::vector<int> labels;
            for (std::size_t k = at; k < end; ++k) {
                const TrainWindow& w = windows[order[k]];
                std::vector<S> vals(w.features.begin(), w.features.end());
                Tensor<S> F = tape.leaf({spec.seq_len, spec.feature_dim}, std::move(vals));
                logit_rows.push_back(model.logits(tape, result.params, F, ctx));
                labels.push_back(w.label);
            }
            Tensor<S> batch_logits = logit_rows.size() == 1 ? logit_rows[0] : concat_rows(logit_rows);
            Tensor<S> loss = cross_entropy(batch_logits, labels);
            loss_sum += static_cast<double>(loss.scalar()) * static_cast<double>(labels.size());
            const int klasses = spec.num_classes + 1;
            auto lv = batch_logits.value();
            for (std::size_t r = 0; r < labels.size(); ++r) {
                int best = 0;
                for (int c = 1; c < klasses; ++c)
                    if (lv[r * klasses + c] > lv[r * klasses + best]) best = c;
                if (best == labels[r]) ++correct;
            }
            tape.backward(loss);
            sgd_step(result.params, step_cfg);
        }
        result.log.epochs.push_back({epoch, loss_sum / windows.size(), step_cfg.learning_rate,
                                     static_cast<double>(correct) / windows.size()});
    }
    return result;
}

}  // namespace oad
