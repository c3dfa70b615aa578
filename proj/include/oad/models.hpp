#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "oad/model_spec.hpp"
#include "oad/params.hpp"
#include "oad/tensor.hpp"

namespace oad {

inline constexpr double kWindowNormEps = 1e-5;

enum class PoolKind { avg, max };

// ---------------------------------------------------------------------------
// Temporal operators. Windows are [l x d] matrices with l in [1, L]; every
// operator tolerates short windows so stream starts need no padding.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> pool_forward(PoolKind kind, Tensor<S> F) {
    detail::check_rank2(F, "pool_forward");
    return kind == PoolKind::avg ? mean_rows(F) : max_rows(F);
}

// Causal dilated temporal convolution: out_t = sum_i f_{t - r*i} . W_i + b,
// frames before the window start read as zero. Output length equals input
// length.
template <class S>
Tensor<S> tc_forward(Tensor<S> F, int rate, const std::vector<Tensor<S>>& taps, Tensor<S> bias) {
    if (rate < 1) throw ConfigError("dilation rate must be >= 1");
    if (taps.empty()) throw ConfigError("temporal convolution needs at least one tap");
    Tensor<S> acc = matmul(F, taps[0]);
    for (std::size_t i = 1; i < taps.size(); ++i)
        acc = add(acc, matmul(shift_rows(F, rate * static_cast<int>(i)), taps[i]));
    return add_bias_row(acc, bias);
}

template <class S>
struct ConvBranch {
    std::vector<Tensor<S>> taps;
    Tensor<S> bias;
};

// Parallel dilated branches, frame-wise concatenation, then a per-frame
// linear reduction back to the branch width.
template <class S>
Tensor<S> pdc_forward(Tensor<S> F, const std::vector<int>& rates, const std::vector<ConvBranch<S>>& branches,
                      Tensor<S> reduce_w, Tensor<S> reduce_b) {
    if (rates.empty() || rates.size() != branches.size())
        throw ConfigError("pdc_forward: rates and branches must align and be nonempty");
    std::vector<Tensor<S>> outs;
    outs.reserve(rates.size());
    for (std::size_t i = 0; i < rates.size(); ++i)
        outs.push_back(tc_forward(F, rates[i], branches[i].taps, branches[i].bias));
    Tensor<S> cat = outs.size() == 1 ? outs[0] : concat_cols(outs);
    return add_bias_row(matmul(cat, reduce_w), reduce_b);
}

template <class S>
struct DccLayer {
    std::vector<Tensor<S>> taps;
    Tensor<S> bias;
    Tensor<S> res_w;   // learned per-frame residual map
    Tensor<S> res_b;
};

// Stack of dilated causal layers, rate doubling per level, ReLU + dropout
// on the conv path and a learned 1x1 residual per layer.
template <class S>
Tensor<S> dcc_forward(Tensor<S> F, const std::vector<int>& rates, const std::vector<DccLayer<S>>& layers,
                      double dropout_rate = 0.0, Rng* rng = nullptr) {
    if (rates.size() != layers.size()) throw ConfigError("dcc_forward: rates and layers must align");
    Tensor<S> x = F;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Tensor<S> conv = relu(tc_forward(x, rates[i], layers[i].taps, layers[i].bias));
        if (dropout_rate > 0.0) {
            if (!rng) throw ContractError("dcc_forward: dropout requires an RNG");
            conv = dropout(conv, dropout_rate, *rng);
        }
        Tensor<S> res = add_bias_row(matmul(x, layers[i].res_w), layers[i].res_b);
        x = add(conv, res);
    }
    return x;
}

template <class S>
struct LstmCellParams {
    Tensor<S> W_i, U_i, V_i, b_i;
    Tensor<S> W_g, U_g, V_g, b_g;
    Tensor<S> W_c, U_c, b_c;
    Tensor<S> W_o, U_o, V_o, b_o;
};

// Peephole LSTM cell. The output gate reads the previous hidden state and
// the freshly updated cell.
template <class S>
std::pair<Tensor<S>, Tensor<S>> lstm_cell(Tensor<S> f, Tensor<S> h_prev, Tensor<S> c_prev,
                                          const LstmCellParams<S>& p) {
    auto gate_in = [&](Tensor<S> W, Tensor<S> U, Tensor<S> V, Tensor<S> b, Tensor<S> c) {
        return add(add(matmul(f, W), matmul(h_prev, U)), add(mul(c, V), b));
    };
    Tensor<S> i = sigmoid(gate_in(p.W_i, p.U_i, p.V_i, p.b_i, c_prev));
    Tensor<S> g = sigmoid(gate_in(p.W_g, p.U_g, p.V_g, p.b_g, c_prev));
    Tensor<S> cand = tanh(add(add(matmul(f, p.W_c), matmul(h_prev, p.U_c)), p.b_c));
    Tensor<S> c = add(mul(g, c_prev), mul(i, cand));
    Tensor<S> o = sigmoid(gate_in(p.W_o, p.U_o, p.V_o, p.b_o, c));
    Tensor<S> h = mul(o, tanh(c));
    return {h, c};
}

template <class S>
struct GruCellParams {
    Tensor<S> W_r, U_r;
    Tensor<S> W_h, U_h;
    Tensor<S> W_z, U_z;
};

template <class S>
Tensor<S> gru_cell(Tensor<S> f, Tensor<S> h_prev, const GruCellParams<S>& p) {
    Tensor<S> r = sigmoid(add(matmul(f, p.W_r), matmul(h_prev, p.U_r)));
    Tensor<S> cand = tanh(add(matmul(f, p.W_h), matmul(mul(r, h_prev), p.U_h)));
    Tensor<S> z = sigmoid(add(matmul(f, p.W_z), matmul(h_prev, p.U_z)));
    // h = (1 - z) (.) h_prev + z (.) cand
    return add(sub(h_prev, mul(z, h_prev)), mul(z, cand));
}

enum class RnnCell { lstm, gru };

template <class S>
struct RnnLayerParams {
    RnnCell cell;
    LstmCellParams<S> lstm;
    GruCellParams<S> gru;
    int hidden = 0;
};

// Runs the stacked recurrence from zero initial state and returns the top
// layer's full hidden sequence [l x D_h].
template <class S>
Tensor<S> rnn_seq(Tensor<S> F, const std::vector<RnnLayerParams<S>>& layers) {
    Tape<S>& tape = *F.tape;
    const int l = F.rows();
    Tensor<S> input = F;
    for (const auto& layer : layers) {
        Tensor<S> h = tape.leaf({1, layer.hidden});
        Tensor<S> c = tape.leaf({1, layer.hidden});
        std::vector<Tensor<S>> hs;
        hs.reserve(l);
        for (int t = 0; t < l; ++t) {
            Tensor<S> f_t = slice_rows(input, t, t + 1);
            if (layer.cell == RnnCell::lstm) {
                auto [hn, cn] = lstm_cell(f_t, h, c, layer.lstm);
                h = hn;
                c = cn;
            } else {
                h = gru_cell(f_t, h, layer.gru);
            }
            hs.push_back(h);
        }
        input = l == 1 ? hs[0] : concat_rows(hs);
    }
    return input;
}

template <class S>
Tensor<S> rnn_forward(Tensor<S> F, const std::vector<RnnLayerParams<S>>& layers, RnnOutput output) {
    Tensor<S> seq = rnn_seq(F, layers);
    if (output == RnnOutput::average_hidden) return mean_rows(seq);
    return slice_rows(seq, seq.rows() - 1, seq.rows());
}

// Attention weights from one linear score per frame; output is the
// weighted sum of the input frames.
template <class S>
Tensor<S> naive_sa(Tensor<S> F, Tensor<S> W, Tensor<S> b) {
    Tensor<S> scores = add_bias_row(matmul(F, W), b);      // [l x 1]
    Tensor<S> a = softmax_rows(transpose(scores));         // [1 x l]
    return matmul(a, F);
}

template <class S>
Tensor<S> nonlinear_sa(Tensor<S> F, Tensor<S> U1, Tensor<S> b1, Tensor<S> U2, Tensor<S> b2) {
    Tensor<S> hidden = tanh(add_bias_row(matmul(F, U1), b1));     // [l x d1]
    Tensor<S> scores = add_bias_row(matmul(hidden, U2), b2);      // [l x 1]
    Tensor<S> a = softmax_rows(transpose(scores));
    return matmul(a, F);
}

// Self-attention with Window-Norm'd ReLU projections for queries and keys,
// values taken from the raw frames, plus the skip connection; average
// pooling collapses the updated sequence.
template <class S>
Tensor<S> nonlocal_forward(Tensor<S> F, Tensor<S> Wq, Tensor<S> bq, Tensor<S> Wk, Tensor<S> bk) {
    const int dm = Wq.cols();
    auto project = [&](Tensor<S> W, Tensor<S> b) {
        return relu(standardize_cols(add_bias_row(matmul(F, W), b), static_cast<S>(kWindowNormEps)));
    };
    Tensor<S> Q = project(Wq, bq);
    Tensor<S> K = project(Wk, bk);
    Tensor<S> A = softmax_rows(scale(matmul(Q, transpose(K)), static_cast<S>(1.0 / std::sqrt(double(dm)))));
    Tensor<S> updated = add(matmul(A, F), F);
    return mean_rows(updated);
}

// The window's last frame queries the earlier frames; the skip adds the
// current frame back. A single-frame window short-circuits to that frame.
template <class S>
Tensor<S> transformer_q(Tensor<S> F, Tensor<S> Wq, Tensor<S> bq, Tensor<S> Wk, Tensor<S> bk) {
    const int l = F.rows();
    Tensor<S> f_last = slice_rows(F, l - 1, l);
    if (l == 1) return f_last;
    const int dm = Wq.cols();
    Tensor<S> history = slice_rows(F, 0, l - 1);
    Tensor<S> q = add_bias_row(matmul(f_last, Wq), bq);          // [1 x dm]
    Tensor<S> keys = add_bias_row(matmul(history, Wk), bk);      // [l-1 x dm]
    Tensor<S> a = softmax_rows(
        scale(matmul(q, transpose(keys)), static_cast<S>(1.0 / std::sqrt(double(dm)))));  // [1 x l-1]
    return add(matmul(a, history), f_last);
}

template <class S>
Tensor<S> classify(Tensor<S> s_out, Tensor<S> head_w, Tensor<S> head_b) {
    if (s_out.cols() != head_w.rows())
        throw ConfigError("classify: representation dim " + std::to_string(s_out.cols()) +
                          " does not match head input dim " + std::to_string(head_w.rows()));
    return add(matmul(s_out, head_w), head_b);
}

// ---------------------------------------------------------------------------
// Model runner: binds a ParamStore onto a tape and drives the stage chain
// described by the model spec.
// ---------------------------------------------------------------------------

struct ForwardCtx {
    bool training = false;
    Rng* rng = nullptr;
};

// How parameters enter a graph: a mutable store binds for gradient
// accumulation; a const store enters as frozen read-only snapshots, which
// is what lets concurrent inference sessions share one ParamStore.
template <class S>
class ParamSource {
  public:
    ParamSource(ParamStore<S>& trainable) : trainable_(&trainable) {}
    ParamSource(const ParamStore<S>& frozen) : frozen_(&frozen) {}

    Tensor<S> bind(Tape<S>& tape, const std::string& name) const {
        if (trainable_) return tape.use(trainable_->at(name));
        return tape.use_frozen(frozen_->at(name));
    }

  private:
    ParamStore<S>* trainable_ = nullptr;
    const ParamStore<S>* frozen_ = nullptr;
};

template <class S>
class Model {
  public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const ModelSpec& spec() const { return spec_; }

    // Window [l x d] -> final representation [1 x repr_dim].
    Tensor<S> represent(Tape<S>& tape, const ParamSource<S>& ps, Tensor<S> F,
                        const ForwardCtx& ctx = {}) const {
        if (F.cols() != spec_.feature_dim)
            throw ValidationError("window feature dim " + std::to_string(F.cols()) +
                                  " does not match model feature dim " + std::to_string(spec_.feature_dim));
        const auto chain = spec_.stages();
        Tensor<S> x = F;
        for (std::size_t i = 0; i < chain.size(); ++i) {
            const bool final_stage = (i + 1 == chain.size());
            x = run_stage(tape, ps, chain[i], stage_prefix(i, chain[i]), x, final_stage, ctx);
        }
        return x;
    }

    // Window -> class logits [1 x (K+1)].
    Tensor<S> logits(Tape<S>& tape, const ParamSource<S>& ps, Tensor<S> F,
                     const ForwardCtx& ctx = {}) const {
        Tensor<S> repr = represent(tape, ps, F, ctx);
        return classify(repr, ps.bind(tape, "head.W"), ps.bind(tape, "head.b"));
    }

  private:
    std::string stage_prefix(std::size_t i, StageKind kind) const {
        std::string prefix = to_string(kind) + ".";
        if (spec_.kind == ModelKind::Hybrid) prefix = "stage" + std::to_string(i) + "." + prefix;
        return prefix;
    }

    std::vector<Tensor<S>> conv_taps(Tape<S>& tape, const ParamSource<S>& ps,
                                     const std::string& prefix) const {
        std::vector<Tensor<S>> taps;
        for (int i = 0; i < spec_.kernel_size; ++i) taps.push_back(ps.bind(tape, prefix + "W" + std::to_string(i)));
        return taps;
    }

    std::vector<RnnLayerParams<S>> rnn_layers(Tape<S>& tape, const ParamSource<S>& ps,
                                              const std::string& prefix, RnnCell cell) const {
        std::vector<RnnLayerParams<S>> layers;
        for (int l = 0; l < spec_.num_layers; ++l) {
            const std::string lp = spec_.num_layers == 1 ? prefix : prefix + "l" + std::to_string(l) + ".";
            RnnLayerParams<S> layer;
            layer.cell = cell;
            layer.hidden = spec_.eff_hidden();
            if (cell == RnnCell::lstm) {
                layer.lstm = {ps.bind(tape, lp + "W_i"), ps.bind(tape, lp + "U_i"), ps.bind(tape, lp + "V_i"),
                              ps.bind(tape, lp + "b_i"), ps.bind(tape, lp + "W_g"), ps.bind(tape, lp + "U_g"),
                              ps.bind(tape, lp + "V_g"), ps.bind(tape, lp + "b_g"), ps.bind(tape, lp + "W_c"),
                              ps.bind(tape, lp + "U_c"), ps.bind(tape, lp + "b_c"), ps.bind(tape, lp + "W_o"),
                              ps.bind(tape, lp + "U_o"), ps.bind(tape, lp + "V_o"), ps.bind(tape, lp + "b_o")};
            } else {
                layer.gru = {ps.bind(tape, lp + "W_r"), ps.bind(tape, lp + "U_r"), ps.bind(tape, lp + "W_h"),
                             ps.bind(tape, lp + "U_h"), ps.bind(tape, lp + "W_z"), ps.bind(tape, lp + "U_z")};
            }
            layers.push_back(std::move(layer));
        }
        return layers;
    }

    Tensor<S> run_stage(Tape<S>& tape, const ParamSource<S>& ps, StageKind kind, const std::string& prefix,
                        Tensor<S> x, bool final_stage, const ForwardCtx& ctx) const {
        switch (kind) {
            case StageKind::AvgPool:
                if (!final_stage) throw ConfigError("avgpool is an aggregator and must be the final stage");
                return pool_forward(PoolKind::avg, x);
            case StageKind::MaxPool:
                if (!final_stage) throw ConfigError("maxpool is an aggregator and must be the final stage");
                return pool_forward(PoolKind::max, x);
            case StageKind::TC:
                return tc_forward(x, spec_.dilation_rates.front(), conv_taps(tape, ps, prefix),
                                  ps.bind(tape, prefix + "b"));
            case StageKind::PDC: {
                std::vector<ConvBranch<S>> branches;
                for (int r : spec_.dilation_rates) {
                    const std::string bp = prefix + "r" + std::to_string(r) + ".";
                    branches.push_back({conv_taps(tape, ps, bp), ps.bind(tape, bp + "b")});
                }
                return pdc_forward(x, spec_.dilation_rates, branches, ps.bind(tape, prefix + "reduce.W"),
                                   ps.bind(tape, prefix + "reduce.b"));
            }
            case StageKind::DCC: {
                std::vector<DccLayer<S>> layers;
                for (std::size_t i = 0; i < spec_.dilation_rates.size(); ++i) {
                    const std::string lp = prefix + "layer" + std::to_string(i) + ".";
                    layers.push_back({conv_taps(tape, ps, lp), ps.bind(tape, lp + "b"),
                                      ps.bind(tape, lp + "Wres"), ps.bind(tape, lp + "bres")});
                }
                const double rate = ctx.training ? spec_.dropout : 0.0;
                return dcc_forward(x, spec_.dilation_rates, layers, rate, ctx.rng);
            }
            case StageKind::LSTM:
            case StageKind::GRU: {
                auto layers = rnn_layers(tape, ps, prefix, kind == StageKind::LSTM ? RnnCell::lstm : RnnCell::gru);
                if (final_stage) return rnn_forward(x, layers, spec_.rnn_output);
                return rnn_seq(x, layers);
            }
            case StageKind::NaiveSA:
                if (!final_stage) throw ConfigError("naive-sa is an aggregator and must be the final stage");
                return naive_sa(x, ps.bind(tape, prefix + "W"), ps.bind(tape, prefix + "b"));
            case StageKind::NonlinearSA:
                if (!final_stage) throw ConfigError("nonlinear-sa is an aggregator and must be the final stage");
                return nonlinear_sa(x, ps.bind(tape, prefix + "U1"), ps.bind(tape, prefix + "b1"),
                                    ps.bind(tape, prefix + "U2"), ps.bind(tape, prefix + "b2"));
            case StageKind::NonLocal:
                if (!final_stage) throw ConfigError("nonlocal is an aggregator and must be the final stage");
                return nonlocal_forward(x, ps.bind(tape, prefix + "Wq"), ps.bind(tape, prefix + "bq"),
                                        ps.bind(tape, prefix + "Wk"), ps.bind(tape, prefix + "bk"));
            case StageKind::TransformerQ:
                if (!final_stage) throw ConfigError("transformer is an aggregator and must be the final stage");
                return transformer_q(x, ps.bind(tape, prefix + "Wq"), ps.bind(tape, prefix + "bq"),
                                     ps.bind(tape, prefix + "Wk"), ps.bind(tape, prefix + "bk"));
        }
        throw ContractError("unhandled stage kind");
    }

    ModelSpec spec_;
};

}  // namespace oad
