#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "oad/common.hpp"

namespace oad {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

template <class S>
class Tape;

// Persistent value+grad buffer that outlives any single computation graph.
// Trainable parameters live here; a momentum slot rides along for SGD.
template <class S>
struct Storage {
    std::string name;
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;
    std::vector<S> momentum;
    bool is_bias = false;
    Tape<S>* live_tape = nullptr;  // graph this storage is currently bound to, if any

    Storage() = default;
    Storage(std::string n, Shape sh, bool bias = false)
        : name(std::move(n)),
          shape(std::move(sh)),
          value(shape_numel(shape), S(0)),
          grad(shape_numel(shape), S(0)),
          momentum(shape_numel(shape), S(0)),
          is_bias(bias) {}

    std::size_t numel() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

// Lightweight handle into one tape's node table.
template <class S>
struct Tensor {
    Tape<S>* tape = nullptr;
    int id = -1;

    const Shape& shape() const;
    int rows() const { return shape().at(0); }
    int cols() const { return shape().size() > 1 ? shape().at(1) : 1; }
    std::size_t numel() const { return shape_numel(shape()); }
    std::span<S> value() const;
    std::span<S> grad() const;
    S scalar() const;
};

// Records the forward computation; backward() replays it once in reverse.
// A tape is single-use: after backward it is consumed and only node values
// and grads stay readable until reset().
template <class S>
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    ~Tape() { release_bindings(); }

    Tensor<S> leaf(Shape shape) {
        int id = add_node(std::move(shape), nullptr);
        return {this, id};
    }

    Tensor<S> leaf(Shape shape, std::initializer_list<S> vals) {
        return leaf(std::move(shape), std::vector<S>(vals));
    }

    Tensor<S> leaf(Shape shape, std::vector<S> vals) {
        if (vals.size() != shape_numel(shape))
            throw DimensionError("leaf value count " + std::to_string(vals.size()) +
                                 " does not match shape " + shape_str(shape));
        int id = add_node(std::move(shape), nullptr);
        std::copy(vals.begin(), vals.end(), val(id).begin());
        return {this, id};
    }

    // Binds external parameter storage as a leaf. The same storage re-enters
    // as the same node, and may not sit on two live tapes at once.
    Tensor<S> use(Storage<S>& st) {
        auto it = bound_.find(&st);
        if (it != bound_.end()) return {this, it->second};
        if (st.live_tape != nullptr && st.live_tape != this)
            throw ContractError("parameter '" + st.name + "' is already bound to another live graph");
        int id = add_node(st.shape, &st);
        bound_.emplace(&st, id);
        st.live_tape = this;
        return {this, id};
    }

    // Read-only snapshot of frozen storage as a tape-local leaf. Never
    // touches the storage's graph binding or gradients, so any number of
    // tapes (and threads) may read the same store at once.
    Tensor<S> use_frozen(const Storage<S>& st) {
        auto it = frozen_.find(&st);
        if (it != frozen_.end()) return {this, it->second};
        int id = add_node(st.shape, nullptr);
        auto dst = val(id);
        std::copy(st.value.begin(), st.value.end(), dst.begin());
        frozen_.emplace(&st, id);
        return {this, id};
    }

    void backward(Tensor<S> loss) {
        if (loss.tape != this) throw ContractError("backward: tensor does not belong to this tape");
        if (consumed_) throw ContractError("backward: tape already consumed (retained replay unsupported)");
        if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        grad(loss.id)[0] = S(1);
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
        ops_.clear();
        consumed_ = true;
        release_bindings();
    }

    void reset() {
        ops_.clear();
        nodes_.clear();
        release_bindings();
        frozen_.clear();
        consumed_ = false;
    }

    bool consumed() const { return consumed_; }
    std::size_t num_ops() const { return ops_.size(); }

    void zero_grad() {
        for (auto& n : nodes_)
            if (n.external == nullptr) std::fill(n.grad.begin(), n.grad.end(), S(0));
        for (auto& [st, id] : bound_) st->zero_grad();
    }

    // --- node access (used by the op layer) ---

    const Shape& node_shape(int id) const { return nodes_.at(id).shape; }

    std::span<S> val(int id) {
        Node& n = nodes_.at(id);
        return n.external ? std::span<S>(n.external->value) : std::span<S>(n.value);
    }

    std::span<S> grad(int id) {
        Node& n = nodes_.at(id);
        return n.external ? std::span<S>(n.external->grad) : std::span<S>(n.grad);
    }

    int add_node(Shape shape, Storage<S>* external) {
        if (consumed_) throw ContractError("tape already consumed; reset() before building a new graph");
        for (int d : shape)
            if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
        Node n;
        n.shape = std::move(shape);
        n.external = external;
        if (!external) {
            n.value.assign(shape_numel(n.shape), S(0));
            n.grad.assign(shape_numel(n.shape), S(0));
        }
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  private:
    struct Node {
        Shape shape;
        std::vector<S> value;
        std::vector<S> grad;
        Storage<S>* external = nullptr;
    };

    void release_bindings() {
        for (auto& [st, id] : bound_)
            if (st->live_tape == this) st->live_tape = nullptr;
        bound_.clear();
    }

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> ops_;
    std::unordered_map<Storage<S>*, int> bound_;
    std::unordered_map<const Storage<S>*, int> frozen_;
    bool consumed_ = false;
};

template <class S>
const Shape& Tensor<S>::shape() const {
    return tape->node_shape(id);
}
template <class S>
std::span<S> Tensor<S>::value() const {
    return tape->val(id);
}
template <class S>
std::span<S> Tensor<S>::grad() const {
    return tape->grad(id);
}
template <class S>
S Tensor<S>::scalar() const {
    if (numel() != 1) throw ContractError("scalar() on tensor of shape " + shape_str(shape()));
    return value()[0];
}

namespace detail {

template <class S>
void check_same_tape(Tensor<S> a, Tensor<S> b) {
    if (a.tape != b.tape) throw ContractError("operands belong to different graphs");
}

template <class S>
void check_same_shape(Tensor<S> a, Tensor<S> b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

template <class S>
void check_rank2(Tensor<S> x, const char* what) {
    if (x.shape().size() != 2)
        throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " + shape_str(x.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Row-vector convention: a "vector" is a 1xN matrix.
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
    detail::check_same_tape(a, b);
    detail::check_rank2(a, "matmul");
    detail::check_rank2(b, "matmul");
    const int m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Tape<S>& t = *a.tape;
    Tensor<S> out{&t, t.add_node({m, n}, nullptr)};
    auto av = a.value(), bv = b.value(), ov = out.value();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const S aip = av[i * k + p];
            if (aip == S(0)) continue;
            for (int j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
        }
    t.record([&t, ai = a.id, bi = b.id, oi = out.id, m, k, n]() {
        auto g = t.grad(oi);
        auto av = t.val(ai), bv = t.val(bi);
        auto ga = t.grad(ai), gb = t.grad(bi);
        // a.grad += g . b^T
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                S acc = 0;
                for (int j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                ga[i * k + p] += acc;
            }
        // b.grad += a^T . g
        for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j) {
                S acc = 0;
                for (int i = 0; i < m; ++i) acc += av[i * k + p] * g[i * n + j];
                gb[p * n + j] += acc;
            }
    });
    return out;
}

enum class EwKind { add, sub, mul };

template <class S>
Tensor<S> elementwise(EwKind kind, Tensor<S> a, Tensor<S> b) {
    detail::check_same_tape(a, b);
    detail::check_same_shape(a, b, "elementwise");
    Tape<S>& t = *a.tape;
    Tensor<S> out{&t, t.add_node(a.shape(), nullptr)};
    auto av = a.value(), bv = b.value(), ov = out.value();
    const std::size_t n = out.numel();
    switch (kind) {
        case EwKind::add:
            for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i];
            break;
        case EwKind::sub:
            for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
            break;
        case EwKind::mul:
            for (std::size_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
            break;
    }
    t.record([&t, kind, ai = a.id, bi = b.id, oi = out.id, n]() {
        auto g = t.grad(oi);
        auto ga = t.grad(ai), gb = t.grad(bi);
        auto av = t.val(ai), bv = t.val(bi);
        switch (kind) {
            case EwKind::add:
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            case EwKind::sub:
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            case EwKind::mul:
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i] += g[i] * bv[i];
                    gb[i] += g[i] * av[i];
                }
                break;
        }
    });
    return out;
}

template <class S>
Tensor<S> add(Tensor<S> a, Tensor<S> b) {
    return elementwise(EwKind::add, a, b);
}
template <class S>
Tensor<S> sub(Tensor<S> a, Tensor<S> b) {
    return elementwise(EwKind::sub, a, b);
}
template <class S>
Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
    return elementwise(EwKind::mul, a, b);
}

// The one sanctioned broadcast: a 1xN bias row over an MxN matrix.
template <class S>
Tensor<S> add_bias_row(Tensor<S> m, Tensor<S> bias) {
    detail::check_same_tape(m, bias);
    detail::check_rank2(m, "add_bias_row");
    detail::check_rank2(bias, "add_bias_row");
    if (bias.rows() != 1 || bias.cols() != m.cols())
        throw DimensionError("add_bias_row: bias " + shape_str(bias.shape()) + " does not broadcast over " +
                             shape_str(m.shape()));
    Tape<S>& t = *m.tape;
    const int r = m.rows(), c = m.cols();
    Tensor<S> out{&t, t.add_node({r, c}, nullptr)};
    auto mv = m.value(), bv = bias.value(), ov = out.value();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ov[i * c + j] = mv[i * c + j] + bv[j];
    t.record([&t, mi = m.id, bi = bias.id, oi = out.id, r, c]() {
        auto g = t.grad(oi);
        auto gm = t.grad(mi), gb = t.grad(bi);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) {
                gm[i * c + j] += g[i * c + j];
                gb[j] += g[i * c + j];
            }
    });
    return out;
}

template <class S>
Tensor<S> scale(Tensor<S> x, S factor) {
    Tape<S>& t = *x.tape;
    Tensor<S> out{&t, t.add_node(x.shape(), nullptr)};
    auto xv = x.value(), ov = out.value();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * factor;
    t.record([&t, xi = x.id, oi = out.id, factor, n]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * factor;
    });
    return out;
}

template <class S>
Tensor<S> sigmoid(Tensor<S> x) {
    Tape<S>& t = *x.tape;
    Tensor<S> out{&t, t.add_node(x.shape(), nullptr)};
    auto xv = x.value(), ov = out.value();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) ov[i] = S(1) / (S(1) + std::exp(-xv[i]));
    t.record([&t, xi = x.id, oi = out.id, n]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        auto y = t.val(oi);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (S(1) - y[i]);
    });
    return out;
}

template <class S>
Tensor<S> tanh(Tensor<S> x) {
    Tape<S>& t = *x.tape;
    Tensor<S> out{&t, t.add_node(x.shape(), nullptr)};
    auto xv = x.value(), ov = out.value();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) ov[i] = std::tanh(xv[i]);
    t.record([&t, xi = x.id, oi = out.id, n]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        auto y = t.val(oi);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (S(1) - y[i] * y[i]);
    });
    return out;
}

template <class S>
Tensor<S> relu(Tensor<S> x) {
    Tape<S>& t = *x.tape;
    Tensor<S> out{&t, t.add_node(x.shape(), nullptr)};
    auto xv = x.value(), ov = out.value();
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] > S(0) ? xv[i] : S(0);
    t.record([&t, xi = x.id, oi = out.id, n]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        auto xv = t.val(xi);
        for (std::size_t i = 0; i < n; ++i)
            if (xv[i] > S(0)) gx[i] += g[i];
    });
    return out;
}

// Row-wise softmax with per-row max subtraction. Backward uses the
// Jacobian-vector product, never the full Jacobian.
template <class S>
Tensor<S> softmax_rows(Tensor<S> x) {
    detail::check_rank2(x, "softmax_rows");
    Tape<S>& t = *x.tape;
    const int r = x.rows(), c = x.cols();
    Tensor<S> out{&t, t.add_node({r, c}, nullptr)};
    auto xv = x.value(), ov = out.value();
    for (int i = 0; i < r; ++i) {
        S mx = xv[i * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
        S sum = 0;
        for (int j = 0; j < c; ++j) {
            ov[i * c + j] = std::exp(xv[i * c + j] - mx);
            sum += ov[i * c + j];
        }
        for (int j = 0; j < c; ++j) ov[i * c + j] /= sum;
    }
    t.record([&t, xi = x.id, oi = out.id, r, c]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        auto y = t.val(oi);
        for (int i = 0; i < r; ++i) {
            S dot = 0;
            for (int j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
            for (int j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
        }
    });
    return out;
}

template <class S>
Tensor<S> sum(Tensor<S> x) {
    Tape<S>& t = *x.tape;
    Tensor<S> out{&t, t.add_node({1, 1}, nullptr)};
    auto xv = x.value();
    S acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += xv[i];
    out.value()[0] = acc;
    t.record([&t, xi = x.id, oi = out.id, n = x.numel()]() {
        auto g = t.grad(oi)[0];
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
    return out;
}

// Column means over rows: [r x c] -> [1 x c].
template <class S>
Tensor<S> mean_rows(Tensor<S> x) {
    detail::check_rank2(x, "mean_rows");
    Tape<S>& t = *x.tape;
    const int r = x.rows(), c = x.cols();
    Tensor<S> out{&t, t.add_node({1, c}, nullptr)};
    auto xv = x.value(), ov = out.value();
    for (int j = 0; j < c; ++j) {
        S acc = 0;
        for (int i = 0; i < r; ++i) acc += xv[i * c + j];
        ov[j] = acc / S(r);
    }
    t.record([&t, xi = x.id, oi = out.id, r, c]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        for (int j = 0; j < c; ++j) {
            const S share = g[j] / S(r);
            for (int i = 0; i < r; ++i) gx[i * c + j] += share;
        }
    });
    return out;
}

// Column max over rows: [r x c] -> [1 x c]; gradient routes to the first
// (lowest-index) attaining row per column.
template <class S>
Tensor<S> max_rows(Tensor<S> x) {
    detail::check_rank2(x, "max_rows");
    Tape<S>& t = *x.tape;
    const int r = x.rows(), c = x.cols();
    Tensor<S> out{&t, t.add_node({1, c}, nullptr)};
    auto xv = x.value(), ov = out.value();
    std::vector<int> arg(c, 0);
    for (int j = 0; j < c; ++j) {
        S best = xv[j];
        int bi = 0;
        for (int i = 1; i < r; ++i)
            if (xv[i * c + j] > best) {
                best = xv[i * c + j];
                bi = i;
            }
        ov[j] = best;
        arg[j] = bi;
    }
    t.record([&t, xi = x.id, oi = out.id, arg = std::move(arg), c]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        for (int j = 0; j < c; ++j) gx[arg[j] * c + j] += g[j];
    });
    return out;
}

template <class S>
Tensor<S> transpose(Tensor<S> x) {
    detail::check_rank2(x, "transpose");
    Tape<S>& t = *x.tape;
    const int r = x.rows(), c = x.cols();
    Tensor<S> out{&t, t.add_node({c, r}, nullptr)};
    auto xv = x.value(), ov = out.value();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) ov[j * r + i] = xv[i * c + j];
    t.record([&t, xi = x.id, oi = out.id, r, c]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
    return out;
}

// Rows [r0, r1) as a new tensor; backward scatters into the slice.
template <class S>
Tensor<S> slice_rows(Tensor<S> x, int r0, int r1) {
    detail::check_rank2(x, "slice_rows");
    if (r0 < 0 || r1 > x.rows() || r0 >= r1)
        throw DimensionError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                             ") for " + shape_str(x.shape()));
    Tape<S>& t = *x.tape;
    const int c = x.cols(), n = r1 - r0;
    Tensor<S> out{&t, t.add_node({n, c}, nullptr)};
    auto xv = x.value(), ov = out.value();
    std::copy(xv.begin() + r0 * c, xv.begin() + r1 * c, ov.begin());
    t.record([&t, xi = x.id, oi = out.id, r0, n, c]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        for (int i = 0; i < n * c; ++i) gx[r0 * c + i] += g[i];
    });
    return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty list");
    Tape<S>& t = *parts.front().tape;
    const int c = parts.front().cols();
    int r = 0;
    for (auto& p : parts) {
        detail::check_rank2(p, "concat_rows");
        if (p.tape != &t) throw ContractError("concat_rows: operands belong to different graphs");
        if (p.cols() != c)
            throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
        r += p.rows();
    }
    Tensor<S> out{&t, t.add_node({r, c}, nullptr)};
    auto ov = out.value();
    std::vector<int> ids;
    std::vector<int> rows;
    int at = 0;
    for (auto& p : parts) {
        auto pv = p.value();
        std::copy(pv.begin(), pv.end(), ov.begin() + at);
        at += static_cast<int>(pv.size());
        ids.push_back(p.id);
        rows.push_back(p.rows());
    }
    t.record([&t, oi = out.id, ids = std::move(ids), rows = std::move(rows), c]() {
        auto g = t.grad(oi);
        int at = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            auto gp = t.grad(ids[k]);
            for (int i = 0; i < rows[k] * c; ++i) gp[i] += g[at + i];
            at += rows[k] * c;
        }
    });
    return out;
}

// Frame-wise concatenation: all parts share the row count, columns append.
template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty list");
    Tape<S>& t = *parts.front().tape;
    const int r = parts.front().rows();
    int c = 0;
    for (auto& p : parts) {
        detail::check_rank2(p, "concat_cols");
        if (p.tape != &t) throw ContractError("concat_cols: operands belong to different graphs");
        if (p.rows() != r) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
        c += p.cols();
    }
    Tensor<S> out{&t, t.add_node({r, c}, nullptr)};
    auto ov = out.value();
    std::vector<int> ids, cols;
    int at = 0;
    for (auto& p : parts) {
        auto pv = p.value();
        const int pc = p.cols();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j) ov[i * c + at + j] = pv[i * pc + j];
        at += pc;
        ids.push_back(p.id);
        cols.push_back(pc);
    }
    t.record([&t, oi = out.id, ids = std::move(ids), cols = std::move(cols), r, c]() {
        auto g = t.grad(oi);
        int at = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            auto gp = t.grad(ids[k]);
            const int pc = cols[k];
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + at + j];
            at += pc;
        }
    });
    return out;
}

// Shift rows down by k with zero fill at the top: out[t] = x[t-k].
// This is the causal-padding workhorse for dilated temporal convolution.
template <class S>
Tensor<S> shift_rows(Tensor<S> x, int k) {
    detail::check_rank2(x, "shift_rows");
    if (k < 0) throw ContractError("shift_rows: negative shift");
    Tape<S>& t = *x.tape;
    const int r = x.rows(), c = x.cols();
    Tensor<S> out{&t, t.add_node({r, c}, nullptr)};
    auto xv = x.value(), ov = out.value();
    for (int i = k; i < r; ++i)
        for (int j = 0; j < c; ++j) ov[i * c + j] = xv[(i - k) * c + j];
    t.record([&t, xi = x.id, oi = out.id, k, r, c]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        for (int i = k; i < r; ++i)
            for (int j = 0; j < c; ++j) gx[(i - k) * c + j] += g[i * c + j];
    });
    return out;
}

// Per-column standardization over the rows (mean 0, variance 1, biased
// variance, epsilon inside the sqrt). Degenerates to all-zeros for r == 1.
template <class S>
Tensor<S> standardize_cols(Tensor<S> x, S eps) {
    detail::check_rank2(x, "standardize_cols");
    Tape<S>& t = *x.tape;
    const int r = x.rows(), c = x.cols();
    Tensor<S> out{&t, t.add_node({r, c}, nullptr)};
    auto xv = x.value(), ov = out.value();
    std::vector<S> inv(c);
    for (int j = 0; j < c; ++j) {
        S mean = 0;
        for (int i = 0; i < r; ++i) mean += xv[i * c + j];
        mean /= S(r);
        S var = 0;
        for (int i = 0; i < r; ++i) {
            const S d = xv[i * c + j] - mean;
            var += d * d;
        }
        var /= S(r);
        inv[j] = S(1) / std::sqrt(var + eps);
        for (int i = 0; i < r; ++i) ov[i * c + j] = (xv[i * c + j] - mean) * inv[j];
    }
    t.record([&t, xi = x.id, oi = out.id, inv = std::move(inv), r, c]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        auto y = t.val(oi);
        for (int j = 0; j < c; ++j) {
            S gmean = 0, gymean = 0;
            for (int i = 0; i < r; ++i) {
                gmean += g[i * c + j];
                gymean += g[i * c + j] * y[i * c + j];
            }
            gmean /= S(r);
            gymean /= S(r);
            for (int i = 0; i < r; ++i)
                gx[i * c + j] += inv[j] * (g[i * c + j] - gmean - y[i * c + j] * gymean);
        }
    });
    return out;
}

// Inverted dropout; identity when rate == 0. Mask is drawn from the caller's
// RNG so training runs stay reproducible.
template <class S>
Tensor<S> dropout(Tensor<S> x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must be in [0,1)");
    Tape<S>& t = *x.tape;
    Tensor<S> out{&t, t.add_node(x.shape(), nullptr)};
    auto xv = x.value(), ov = out.value();
    const std::size_t n = out.numel();
    if (rate == 0.0) {
        std::copy(xv.begin(), xv.end(), ov.begin());
        t.record([&t, xi = x.id, oi = out.id, n]() {
            auto g = t.grad(oi);
            auto gx = t.grad(xi);
            for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
        });
        return out;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const S inv_keep = S(1.0 / (1.0 - rate));
    std::vector<S> mask(n);
    for (std::size_t i = 0; i < n; ++i) mask[i] = keep(rng) ? inv_keep : S(0);
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i] * mask[i];
    t.record([&t, xi = x.id, oi = out.id, mask = std::move(mask), n]() {
        auto g = t.grad(oi);
        auto gx = t.grad(xi);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * mask[i];
    });
    return out;
}

// Mean cross-entropy over the batch; backward yields (softmax - onehot)/B.
template <class S>
Tensor<S> cross_entropy(Tensor<S> logits, const std::vector<int>& labels) {
    detail::check_rank2(logits, "cross_entropy");
    const int b = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != b)
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(b));
    for (int i = 0; i < b; ++i)
        if (labels[i] < 0 || labels[i] >= c)
            throw ValidationError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0," +
                                  std::to_string(c - 1) + "]");
    Tape<S>& t = *logits.tape;
    Tensor<S> out{&t, t.add_node({1, 1}, nullptr)};
    auto lv = logits.value();
    std::vector<S> probs(static_cast<std::size_t>(b) * c);
    S loss = 0;
    for (int i = 0; i < b; ++i) {
        S mx = lv[i * c];
        for (int j = 1; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
        S sum = 0;
        for (int j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(lv[i * c + j] - mx);
            sum += probs[i * c + j];
        }
        for (int j = 0; j < c; ++j) probs[i * c + j] /= sum;
        loss += (mx + std::log(sum)) - lv[i * c + labels[i]];
    }
    out.value()[0] = loss / S(b);
    t.record([&t, li = logits.id, oi = out.id, probs = std::move(probs), labels, b, c]() {
        const S g = t.grad(oi)[0] / S(b);
        auto gl = t.grad(li);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < c; ++j)
                gl[i * c + j] += g * (probs[i * c + j] - (labels[i] == j ? S(1) : S(0)));
    });
    return out;
}

enum class Activation { sigmoid, tanh, relu, softmax_rows };

template <class S>
Tensor<S> activation(Activation kind, Tensor<S> x) {
    switch (kind) {
        case Activation::sigmoid: return sigmoid(x);
        case Activation::tanh: return tanh(x);
        case Activation::relu: return relu(x);
        case Activation::softmax_rows: return softmax_rows(x);
    }
    throw ContractError("unknown activation");
}

}  // namespace oad
