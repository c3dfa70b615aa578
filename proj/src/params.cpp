#include "oad/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace oad {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace {

struct DefBuilder {
    const ModelSpec& spec;
    std::vector<ParamDef> defs;

    void weight(std::string name, int r, int c) { defs.push_back({std::move(name), {r, c}, false}); }
    void bias(std::string name, int c) { defs.push_back({std::move(name), {1, c}, true}); }

    void conv_taps(const std::string& prefix, int d_in, int d_out) {
        for (int i = 0; i < spec.kernel_size; ++i) weight(prefix + "W" + std::to_string(i), d_in, d_out);
        bias(prefix + "b", d_out);
    }

    // Emits one stage's parameters; returns the stage output dimension.
    int stage(StageKind kind, const std::string& prefix, int d_in) {
        switch (kind) {
            case StageKind::AvgPool:
            case StageKind::MaxPool: return d_in;
            case StageKind::TC: {
                conv_taps(prefix, d_in, d_in);
                return d_in;
            }
            case StageKind::PDC: {
                for (int r : spec.dilation_rates) conv_taps(prefix + "r" + std::to_string(r) + ".", d_in, d_in);
                const int n = static_cast<int>(spec.dilation_rates.size());
                weight(prefix + "reduce.W", n * d_in, d_in);
                bias(prefix + "reduce.b", d_in);
                return d_in;
            }
            case StageKind::DCC: {
                const auto widths = spec.dcc_layer_widths();
                int in = d_in;
                for (std::size_t i = 0; i < widths.size(); ++i) {
                    const std::string lp = prefix + "layer" + std::to_string(i) + ".";
                    conv_taps(lp, in, widths[i]);
                    weight(lp + "Wres", in, widths[i]);
                    bias(lp + "bres", widths[i]);
                    in = widths[i];
                }
                return in;
            }
            case StageKind::LSTM: {
                const int dh = spec.eff_hidden();
                int in = d_in;
                for (int l = 0; l < spec.num_layers; ++l) {
                    const std::string lp = spec.num_layers == 1 ? prefix : prefix + "l" + std::to_string(l) + ".";
                    for (const char* g : {"i", "g", "c", "o"}) {
                        weight(lp + "W_" + g, in, dh);
                        weight(lp + "U_" + g, dh, dh);
                        bias(lp + "b_" + g, dh);
                    }
                    for (const char* g : {"i", "g", "o"}) weight(lp + "V_" + std::string(g), 1, dh);
                    in = dh;
                }
                return dh;
            }
            case StageKind::GRU: {
                const int dh = spec.eff_hidden();
                int in = d_in;
                for (int l = 0; l < spec.num_layers; ++l) {
                    const std::string lp = spec.num_layers == 1 ? prefix : prefix + "l" + std::to_string(l) + ".";
                    for (const char* g : {"r", "h", "z"}) {
                        weight(lp + "W_" + g, in, dh);
                        weight(lp + "U_" + g, dh, dh);
                    }
                    in = dh;
                }
                return dh;
            }
            case StageKind::NaiveSA: {
                weight(prefix + "W", d_in, 1);
                bias(prefix + "b", 1);
                return d_in;
            }
            case StageKind::NonlinearSA: {
                const int d1 = spec.eff_attn_hidden();
                weight(prefix + "U1", d_in, d1);
                bias(prefix + "b1", d1);
                weight(prefix + "U2", d1, 1);
                bias(prefix + "b2", 1);
                return d_in;
            }
            case StageKind::NonLocal:
            case StageKind::TransformerQ: {
                const int dm = spec.eff_proj_dim(d_in);
                weight(prefix + "Wq", d_in, dm);
                bias(prefix + "bq", dm);
                weight(prefix + "Wk", d_in, dm);
                bias(prefix + "bk", dm);
                return d_in;
            }
        }
        throw ContractError("unhandled stage kind");
    }
};

}  // namespace

std::vector<ParamDef> param_defs(const ModelSpec& spec) {
    spec.validate();
    DefBuilder b{spec, {}};
    const auto chain = spec.stages();
    int dim = spec.feature_dim;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        std::string prefix = to_string(chain[i]) + ".";
        if (spec.kind == ModelKind::Hybrid) prefix = "stage" + std::to_string(i) + "." + prefix;
        dim = b.stage(chain[i], prefix, dim);
    }
    b.weight("head.W", dim, spec.num_classes + 1);
    b.bias("head.b", spec.num_classes + 1);
    return std::move(b.defs);
}

namespace {

constexpr char kMagic[4] = {'O', 'A', 'D', 'P'};

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ValidationError(std::string("truncated payload reading ") + what);
    return v;
}

}  // namespace

void save_checkpoint_raw(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open checkpoint for writing: " + path.string());
    os.write(kMagic, 4);
    write_pod(os, ckpt.version);
    write_pod(os, ckpt.fingerprint);
    write_pod(os, ckpt.manifest_id);
    write_pod(os, static_cast<std::uint32_t>(ckpt.params.size()));
    for (const CheckpointParam& p : ckpt.params) {
        write_pod(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(os, static_cast<std::uint32_t>(p.shape.size()));
        for (int d : p.shape) write_pod(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p.values.data()),
                 static_cast<std::streamsize>(p.values.size() * sizeof(double)));
    }
    if (!os) throw ValidationError("short write saving checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw ValidationError("bad magic in checkpoint file: " + path.string());
    Checkpoint ckpt;
    ckpt.version = read_pod<std::uint32_t>(is, "version");
    if (ckpt.version != 1)
        throw ValidationError("unsupported checkpoint version " + std::to_string(ckpt.version));
    ckpt.fingerprint = read_pod<std::uint64_t>(is, "fingerprint");
    ckpt.manifest_id = read_pod<std::uint64_t>(is, "manifest id");
    const auto count = read_pod<std::uint32_t>(is, "parameter count");
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointParam p;
        const auto name_len = read_pod<std::uint32_t>(is, "name length");
        p.name.resize(name_len);
        is.read(p.name.data(), name_len);
        if (!is) throw ValidationError("truncated payload reading parameter name");
        const auto rank = read_pod<std::uint32_t>(is, "rank");
        std::size_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = read_pod<std::uint32_t>(is, "dimension");
            if (d == 0) throw ValidationError("zero dimension in checkpoint parameter '" + p.name + "'");
            p.shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        p.values.resize(numel);
        is.read(reinterpret_cast<char*>(p.values.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw ValidationError("truncated payload reading values of '" + p.name + "'");
        ckpt.params.push_back(std::move(p));
    }
    return ckpt;
}

}  // namespace oad
