#include "oad/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace oad {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

void FeatureStream::validate() const {
    if (T < 1) throw ValidationError("stream '" + video_id + "': T must be >= 1");
    if (d < 1) throw ValidationError("stream '" + video_id + "': d must be >= 1");
    if (K < 1) throw ValidationError("stream '" + video_id + "': K must be >= 1");
    if (features.size() != static_cast<std::size_t>(T) * d)
        throw ValidationError("stream '" + video_id + "': feature buffer size mismatch");
    if (labels.size() != static_cast<std::size_t>(T))
        throw ValidationError("stream '" + video_id + "': label count mismatch");
    for (float f : features)
        if (!std::isfinite(f))
            throw StreamLoadError(StreamLoadError::Reason::non_finite_feature,
                                  "stream '" + video_id + "': non-finite feature value");
    for (int l : labels)
        if (l < 0 || l > K)
            throw StreamLoadError(StreamLoadError::Reason::label_out_of_range,
                                  "stream '" + video_id + "': label " + std::to_string(l) +
                                      " outside [0," + std::to_string(K) + "]");
}

namespace {

constexpr char kMagic[4] = {'O', 'A', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is)
        throw StreamLoadError(StreamLoadError::Reason::truncated,
                              std::string("truncated payload reading ") + what);
    return v;
}

FeatureStream load_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open stream file: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw StreamLoadError(StreamLoadError::Reason::bad_magic, "bad magic in " + path.string());
    const auto version = read_pod<std::uint32_t>(is, "version");
    if (version != kVersion)
        throw StreamLoadError(StreamLoadError::Reason::bad_version,
                              "unsupported stream version " + std::to_string(version));
    FeatureStream s;
    s.video_id = path.stem().string();
    s.T = static_cast<int>(read_pod<std::uint32_t>(is, "T"));
    s.d = static_cast<int>(read_pod<std::uint32_t>(is, "d"));
    s.K = static_cast<int>(read_pod<std::uint32_t>(is, "K"));
    if (s.T < 1 || s.d < 1)
        throw StreamLoadError(StreamLoadError::Reason::parse, "degenerate header in " + path.string());
    s.features.resize(static_cast<std::size_t>(s.T) * s.d);
    is.read(reinterpret_cast<char*>(s.features.data()),
            static_cast<std::streamsize>(s.features.size() * sizeof(float)));
    if (!is)
        throw StreamLoadError(StreamLoadError::Reason::truncated, "truncated payload in " + path.string());
    s.labels.resize(s.T);
    for (int t = 0; t < s.T; ++t) s.labels[t] = static_cast<int>(read_pod<std::uint32_t>(is, "labels"));
    s.validate();
    return s;
}

void save_binary(const std::filesystem::path& path, const FeatureStream& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open stream file for writing: " + path.string());
    os.write(kMagic, 4);
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::uint32_t>(s.T));
    write_pod(os, static_cast<std::uint32_t>(s.d));
    write_pod(os, static_cast<std::uint32_t>(s.K));
    os.write(reinterpret_cast<const char*>(s.features.data()),
             static_cast<std::streamsize>(s.features.size() * sizeof(float)));
    for (int l : s.labels) write_pod(os, static_cast<std::uint32_t>(l));
    if (!os) throw ValidationError("short write saving stream: " + path.string());
}

FeatureStream load_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open stream file: " + path.string());
    std::string header;
    if (!std::getline(is, header))
        throw StreamLoadError(StreamLoadError::Reason::truncated, "empty csv: " + path.string());
    int d = 0;
    {
        std::stringstream ss(header);
        std::string col;
        std::vector<std::string> cols;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() < 3 || cols[0] != "t" || cols[1] != "label")
            throw StreamLoadError(StreamLoadError::Reason::parse,
                                  "csv header must be t,label,f0..: " + path.string());
        d = static_cast<int>(cols.size()) - 2;
    }
    FeatureStream s;
    s.video_id = path.stem().string();
    s.d = d;
    std::string line;
    int max_label = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ','))
            throw StreamLoadError(StreamLoadError::Reason::parse, "bad csv row in " + path.string());
        if (!std::getline(ss, cell, ','))
            throw StreamLoadError(StreamLoadError::Reason::truncated, "csv row missing label");
        const int label = std::stoi(cell);
        if (label < 0)
            throw StreamLoadError(StreamLoadError::Reason::label_out_of_range, "negative csv label");
        max_label = std::max(max_label, label);
        s.labels.push_back(label);
        for (int j = 0; j < d; ++j) {
            if (!std::getline(ss, cell, ','))
                throw StreamLoadError(StreamLoadError::Reason::truncated, "csv row missing feature column");
            s.features.push_back(std::stof(cell));
        }
    }
    s.T = static_cast<int>(s.labels.size());
    // csv carries no class-count field; take the largest label seen
    s.K = std::max(1, max_label);
    s.validate();
    return s;
}

void save_csv(const std::filesystem::path& path, const FeatureStream& s) {
    std::ofstream os(path);
    if (!os) throw ValidationError("cannot open stream file for writing: " + path.string());
    os << "t,label";
    for (int j = 0; j < s.d; ++j) os << ",f" << j;
    os << '\n';
    os.precision(9);  // float32 round-trips at 9 significant digits
    for (int t = 0; t < s.T; ++t) {
        os << t << ',' << s.labels[t];
        const float* row = s.frame(t);
        for (int j = 0; j < s.d; ++j) os << ',' << row[j];
        os << '\n';
    }
    if (!os) throw ValidationError("short write saving stream: " + path.string());
}

}  // namespace

FeatureStream load_stream(const std::filesystem::path& path, StreamFormat format) {
    return format == StreamFormat::binary ? load_binary(path) : load_csv(path);
}

void save_stream(const std::filesystem::path& path, const FeatureStream& stream, StreamFormat format) {
    stream.validate();
    if (format == StreamFormat::binary)
        save_binary(path, stream);
    else
        save_csv(path, stream);
}

StreamFormat stream_format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? StreamFormat::csv : StreamFormat::binary;
}

void SynthSpec::validate() const {
    if (num_streams < 1 || T < 1 || d < 1) throw UsageError("synth: num_streams, T and d must be >= 1");
    if (noise < 0.0) throw UsageError("synth: noise must be >= 0");
    if (K < 1) throw UsageError("synth: K must be >= 1");
    if (mode == SynthMode::order_sensitive && K < 2)
        throw UsageError("synth: order-sensitive mode requires K >= 2");
    if (mode == SynthMode::order_sensitive && d < 2)
        throw UsageError("synth: order-sensitive mode requires d >= 2");
}

namespace {

// Prototype entries are quantized to multiples of 1/1024: sums of up to 64
// such frames stay exact in float32, so equal window multisets pool to
// bit-identical representations regardless of frame order.
float quantize(double x) { return static_cast<float>(std::round(x * 1024.0) / 1024.0); }

std::vector<float> random_unit(Rng& rng, int d) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> x(d);
    double norm = 0.0;
    for (auto& xi : x) {
        xi = gauss(rng);
        norm += xi * xi;
    }
    norm = std::sqrt(norm);
    std::vector<float> out(d);
    for (int i = 0; i < d; ++i) out[i] = quantize(x[i] / norm);
    return out;
}

void orthogonalize(std::vector<float>& x, const std::vector<float>& against) {
    double dot = 0.0, nsq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += double(x[i]) * against[i];
        nsq += double(against[i]) * against[i];
    }
    if (nsq == 0.0) return;
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] - dot / nsq * against[i];
    double norm = 0.0;
    for (double yi : y) norm += yi * yi;
    norm = std::sqrt(norm);
    if (norm == 0.0) return;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = quantize(y[i] / norm);
}

// Segment geometry. Segments are kSegLen frames long and always start at
// even stream positions (gaps are even), so any even-length window grid
// slices segments into even-length pieces and the class-1/class-2 window
// multisets match exactly at sigma = 0.
constexpr int kSegLen = 4;

int even_gap(Rng& rng) { return 2 * (1 + static_cast<int>(rng() % 4)); }

}  // namespace

SynthPrototypes synth_prototypes(const SynthSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, "prototypes"));
    SynthPrototypes p;
    p.statics.assign(spec.K + 1, {});
    if (spec.mode == SynthMode::order_sensitive) {
        p.u = random_unit(rng, spec.d);
        p.v = random_unit(rng, spec.d);
        orthogonalize(p.v, p.u);
        for (int c = 3; c <= spec.K; ++c) {
            p.statics[c] = random_unit(rng, spec.d);
            orthogonalize(p.statics[c], p.u);
            orthogonalize(p.statics[c], p.v);
        }
    } else {
        std::vector<std::vector<float>> all;
        for (int c = 1; c <= spec.K; ++c) {
            auto w = random_unit(rng, spec.d);
            for (const auto& prev : all) orthogonalize(w, prev);
            all.push_back(w);
            p.statics[c] = w;
        }
    }
    return p;
}

std::vector<FeatureStream> generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    const SynthPrototypes protos = synth_prototypes(spec);
    const char* mode_tag = spec.mode == SynthMode::order_sensitive ? "order" : "static";

    std::vector<FeatureStream> streams;
    streams.reserve(spec.num_streams);
    for (int idx = 0; idx < spec.num_streams; ++idx) {
        Rng rng(fnv1a64(static_cast<std::uint64_t>(idx), fnv1a64(spec.seed)));
        FeatureStream s;
        s.video_id = std::string("synth-") + mode_tag + "-" + std::to_string(spec.seed) + "-" +
                     std::to_string(idx);
        s.T = spec.T;
        s.d = spec.d;
        s.K = spec.K;
        s.features.assign(static_cast<std::size_t>(spec.T) * spec.d, 0.0f);
        s.labels.assign(spec.T, 0);

        int pos = even_gap(rng);
        int cls = 1;
        while (pos + kSegLen <= spec.T) {
            for (int i = 0; i < kSegLen; ++i) {
                s.labels[pos + i] = cls;
                const std::vector<float>* proto = nullptr;
                if (spec.mode == SynthMode::order_sensitive && cls <= 2) {
                    const bool first = (i % 2 == 0);
                    proto = (cls == 1) == first ? &protos.u : &protos.v;
                } else {
                    proto = &protos.statics[cls];
                }
                float* row = s.features.data() + static_cast<std::size_t>(pos + i) * spec.d;
                std::copy(proto->begin(), proto->end(), row);
            }
            cls = cls % spec.K + 1;
            pos += kSegLen + even_gap(rng);
        }

        if (spec.noise > 0.0) {
            std::normal_distribution<double> gauss(0.0, spec.noise);
            for (auto& f : s.features) f = static_cast<float>(f + gauss(rng));
        }
        s.validate();
        streams.push_back(std::move(s));
    }
    return streams;
}

}  // namespace oad
