// oad: temporal modeling workbench for online action detection on
// pre-extracted feature streams. Synthesizes data, trains the operator zoo,
// scores streams online, evaluates mAP/cAP, and sweeps hyperparameter grids.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "oad/infer.hpp"
#include "oad/manifest.hpp"
#include "oad/metrics.hpp"
#include "oad/train.hpp"

namespace fs = std::filesystem;
using namespace oad;

namespace {

struct ModelFlags {
    std::string model = "avgpool";
    std::string chain;
    int L = 4;
    int kernel = 2;
    std::string rates = "1,2,4";
    int hidden = 4096;
    int layers = 1;
    std::string rnn_output = "last";
    int d1 = 512;
    int dm = 0;
    int dcc_width = 4096;
    double width_mult = 1.0;
    double dropout = 0.1;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
    cmd->add_option("--model", f.model, "model kind or preset m1..m6");
    cmd->add_option("--chain", f.chain, "stage list for --model hybrid, e.g. dcc,lstm,transformer");
    cmd->add_option("--L", f.L, "window length");
    cmd->add_option("--kernel", f.kernel, "convolution kernel size s");
    cmd->add_option("--rates", f.rates, "dilation rates, comma separated");
    cmd->add_option("--hidden", f.hidden, "RNN hidden size D_h (full scale)");
    cmd->add_option("--layers", f.layers, "number of recurrent layers");
    cmd->add_option("--rnn-output", f.rnn_output, "last | avg hidden-state strategy");
    cmd->add_option("--d1", f.d1, "nonlinear attention hidden width");
    cmd->add_option("--dm", f.dm, "attention projection width (0 = input dim / 2)");
    cmd->add_option("--dcc-width", f.dcc_width, "DCC outer layer width (full scale)");
    cmd->add_option("--width-mult", f.width_mult, "width multiplier for desk-scale runs");
    cmd->add_option("--dropout", f.dropout, "DCC dropout rate during training");
}

ModelSpec build_spec(const ModelFlags& f, int feature_dim, int num_classes) {
    ModelSpec spec = make_model_spec(f.model, f.chain);
    spec.seq_len = f.L;
    spec.feature_dim = feature_dim;
    spec.num_classes = num_classes;
    spec.kernel_size = f.kernel;
    spec.dilation_rates.clear();
    {
        std::stringstream ss(f.rates);
        std::string tok;
        while (std::getline(ss, tok, ',')) spec.dilation_rates.push_back(std::stoi(tok));
    }
    spec.hidden_size = f.hidden;
    spec.num_layers = f.layers;
    if (f.rnn_output == "last")
        spec.rnn_output = RnnOutput::last_hidden;
    else if (f.rnn_output == "avg" || f.rnn_output == "average")
        spec.rnn_output = RnnOutput::average_hidden;
    else
        throw UsageError("--rnn-output must be 'last' or 'avg'");
    spec.attn_hidden = f.d1;
    spec.proj_dim = f.dm;
    spec.dcc_width = f.dcc_width;
    spec.width_multiplier = f.width_mult;
    spec.dropout = f.dropout;
    spec.validate();
    return spec;
}

void record_model_config(RunManifest& m, const ModelFlags& f) {
    m.config["model"] = f.model;
    if (!f.chain.empty()) m.config["chain"] = f.chain;
    m.config["L"] = std::to_string(f.L);
    m.config["kernel"] = std::to_string(f.kernel);
    m.config["rates"] = f.rates;
    m.config["hidden"] = std::to_string(f.hidden);
    m.config["layers"] = std::to_string(f.layers);
    m.config["rnn_output"] = f.rnn_output;
    m.config["d1"] = std::to_string(f.d1);
    m.config["dm"] = std::to_string(f.dm);
    m.config["dcc_width"] = std::to_string(f.dcc_width);
    m.config["width_mult"] = std::to_string(f.width_mult);
    m.config["dropout"] = std::to_string(f.dropout);
}

std::vector<fs::path> collect_stream_files(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const auto& raw : inputs) {
        fs::path p(raw);
        if (fs::is_directory(p)) {
            std::vector<fs::path> children;
            for (const auto& entry : fs::directory_iterator(p)) {
                const auto ext = entry.path().extension();
                if (ext == ".oadf" || ext == ".csv") children.push_back(entry.path());
            }
            std::sort(children.begin(), children.end());
            files.insert(files.end(), children.begin(), children.end());
        } else if (fs::exists(p)) {
            files.push_back(p);
        } else {
            throw ValidationError("no such file or directory: " + raw);
        }
    }
    return files;
}

std::vector<FeatureStream> load_streams(const std::vector<fs::path>& files) {
    if (files.empty()) throw ValidationError("no input streams found");
    std::vector<FeatureStream> streams;
    streams.reserve(files.size());
    for (const auto& f : files) streams.push_back(load_stream(f, stream_format_from_path(f)));
    return streams;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Plain key=value config: flags given on the command line win, file values
// fill in the rest, built-in defaults cover the remainder.
void apply_config(CLI::App* cmd, const std::string& path) {
    if (path.empty()) return;
    std::ifstream is(path);
    if (!is) throw ValidationError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        CLI::Option* opt = cmd->get_option_no_throw("--" + key);
        if (opt == nullptr)
            throw UsageError(path + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
        if (opt->count() > 0) continue;  // command line takes precedence
        opt->add_result(value);
        opt->run_callback();
    }
}

// --------------------------------------------------------------------------
// synth
// --------------------------------------------------------------------------

struct SynthArgs {
    SynthSpec spec;
    std::string mode = "order";
    std::string out_dir = ".";
    std::string format = "bin";
};

int cmd_synth(const SynthArgs& args) {
    const auto t0 = std::chrono::steady_clock::now();
    SynthSpec spec = args.spec;
    if (args.mode == "order")
        spec.mode = SynthMode::order_sensitive;
    else if (args.mode == "static")
        spec.mode = SynthMode::static_prototypes;
    else
        throw UsageError("--mode must be 'order' or 'static'");
    spec.validate();

    RunManifest manifest;
    manifest.command = "synth";
    manifest.seed = spec.seed;
    manifest.config = {{"streams", std::to_string(spec.num_streams)}, {"T", std::to_string(spec.T)},
                       {"d", std::to_string(spec.d)},                 {"K", std::to_string(spec.K)},
                       {"sigma", std::to_string(spec.noise)},        {"mode", args.mode},
                       {"format", args.format}};

    fs::create_directories(args.out_dir);
    auto streams = generate_synthetic(spec);
    const StreamFormat fmt = args.format == "csv" ? StreamFormat::csv : StreamFormat::binary;
    for (const auto& s : streams) {
        fs::path path = fs::path(args.out_dir) / (s.video_id + (fmt == StreamFormat::csv ? ".csv" : ".oadf"));
        save_stream(path, s, fmt);
        manifest.artifacts.push_back(path.string());
    }
    manifest.wall_time_ms = elapsed_ms(t0);
    manifest.save(fs::path(args.out_dir) / "synth.manifest.json");

    std::cout << "wrote " << streams.size() << " streams (T=" << spec.T << ", d=" << spec.d
              << ", K=" << spec.K << ", mode=" << args.mode << ") to " << args.out_dir << "\n";
    std::cout << "manifest " << hex64(manifest.id()) << "\n";
    return 0;
}

// --------------------------------------------------------------------------
// train
// --------------------------------------------------------------------------

struct TrainArgs {
    ModelFlags model;
    std::vector<std::string> data;
    std::string out = "model.oadp";
    std::string log;
    TrainConfig cfg;
    std::string precision = "f32";
};

template <class S>
int run_train(const TrainArgs& args, const ModelSpec& spec, const std::vector<FeatureStream>& streams,
              RunManifest& manifest, std::chrono::steady_clock::time_point t0) {
    auto result = train<S>(spec, streams, args.cfg);
    save_checkpoint(args.out, result.params, spec.fingerprint(), manifest.id());
    const std::string log_path = args.log.empty() ? args.out + ".log" : args.log;
    save_train_log(log_path, result.log, manifest.id());
    manifest.artifacts = {args.out, log_path};
    manifest.wall_time_ms = elapsed_ms(t0);
    manifest.save(args.out + ".manifest.json");

    if (!result.log.epochs.empty()) {
        const auto& last = result.log.epochs.back();
        std::cout << "trained " << to_string(spec.kind) << " for " << last.epoch
                  << " epochs: loss=" << last.loss << " acc=" << last.accuracy << "\n";
    }
    std::cout << "checkpoint " << args.out << " (fingerprint " << hex64(spec.fingerprint()) << ")\n";
    std::cout << "manifest " << hex64(manifest.id()) << "\n";
    return 0;
}

int cmd_train(const TrainArgs& args) {
    const auto t0 = std::chrono::steady_clock::now();
    auto files = collect_stream_files(args.data);
    auto streams = load_streams(files);
    const ModelSpec spec = build_spec(args.model, streams.front().d, streams.front().K);

    RunManifest manifest;
    manifest.command = "train";
    manifest.seed = args.cfg.seed;
    record_model_config(manifest, args.model);
    manifest.config["lr"] = std::to_string(args.cfg.learning_rate);
    manifest.config["momentum"] = std::to_string(args.cfg.momentum);
    manifest.config["decay"] = std::to_string(args.cfg.decay_rate);
    manifest.config["epochs"] = std::to_string(args.cfg.epochs);
    manifest.config["batch"] = std::to_string(args.cfg.batch_size);
    manifest.config["clip"] = std::to_string(args.cfg.grad_clip);
    manifest.config["precision"] = args.precision;
    for (const auto& f : files) manifest.inputs.push_back(f.string());

    if (precision_from_string(args.precision) == Precision::f64)
        return run_train<double>(args, spec, streams, manifest, t0);
    return run_train<float>(args, spec, streams, manifest, t0);
}

// --------------------------------------------------------------------------
// eval
// --------------------------------------------------------------------------

struct EvalArgs {
    ModelFlags model;
    std::string ckpt;
    std::vector<std::string> data;
    std::string out = "report";
    std::string metric = "cap";
    bool svg = false;
    std::string precision = "f32";
};

template <class S>
int run_eval(const EvalArgs& args, const ModelSpec& spec, const std::vector<FeatureStream>& streams,
             const Checkpoint& ckpt, RunManifest& manifest, std::chrono::steady_clock::time_point t0) {
    auto params = init_params<S>(spec, 0);
    apply_checkpoint(params, ckpt, spec.fingerprint());
    Model<S> model(spec);

    std::vector<ScoreTimeline> timelines;
    std::vector<const FeatureStream*> gt;
    for (const auto& s : streams) {
        timelines.push_back(infer_stream(s, model, params));
        timelines.back().manifest_id = manifest.id();
        gt.push_back(&s);
    }
    const MetricProtocol protocol =
        args.metric == "map" ? MetricProtocol::map : MetricProtocol::mean_cap;
    EvalReport report = evaluate(timelines, gt, protocol);
    report.manifest_id = manifest.id();

    const std::string txt = args.out + ".txt";
    const std::string csv = args.out + ".csv";
    write_report_text(txt, report);
    write_report_csv(csv, report);
    manifest.artifacts = {txt, csv};
    if (args.svg) {
        write_report_svg(args.out + ".svg", report);
        manifest.artifacts.push_back(args.out + ".svg");
    }
    manifest.wall_time_ms = elapsed_ms(t0);
    manifest.save(args.out + ".manifest.json");

    std::cout << report_to_text(report);
    std::cout << "report written to " << txt << " / " << csv << "\n";
    return 0;
}

int cmd_eval(const EvalArgs& args) {
    const auto t0 = std::chrono::steady_clock::now();
    if (args.metric != "cap" && args.metric != "map") throw UsageError("--metric must be 'cap' or 'map'");
    auto files = collect_stream_files(args.data);
    auto streams = load_streams(files);
    const ModelSpec spec = build_spec(args.model, streams.front().d, streams.front().K);
    const Checkpoint ckpt = load_checkpoint(args.ckpt);

    RunManifest manifest;
    manifest.command = "eval";
    record_model_config(manifest, args.model);
    manifest.config["metric"] = args.metric;
    manifest.config["ckpt"] = args.ckpt;
    manifest.config["precision"] = args.precision;
    for (const auto& f : files) manifest.inputs.push_back(f.string());

    if (precision_from_string(args.precision) == Precision::f64)
        return run_eval<double>(args, spec, streams, ckpt, manifest, t0);
    return run_eval<float>(args, spec, streams, ckpt, manifest, t0);
}

// --------------------------------------------------------------------------
// infer
// --------------------------------------------------------------------------

struct InferArgs {
    ModelFlags model;
    std::string ckpt;
    std::string stream;
    std::string out = "timeline";
    std::string format = "both";
    std::string precision = "f32";
};

template <class S>
int run_infer(const InferArgs& args, const ModelSpec& spec, const FeatureStream& stream,
              const Checkpoint& ckpt, RunManifest& manifest, std::chrono::steady_clock::time_point t0) {
    auto params = init_params<S>(spec, 0);
    apply_checkpoint(params, ckpt, spec.fingerprint());
    Model<S> model(spec);

    std::vector<double> frame_ms;
    ScoreTimeline tl = infer_stream(stream, model, params, &frame_ms);
    tl.manifest_id = manifest.id();

    if (args.format == "csv" || args.format == "both") {
        save_timeline_csv(args.out + ".csv", tl);
        manifest.artifacts.push_back(args.out + ".csv");
    }
    if (args.format == "bin" || args.format == "both") {
        save_timeline_binary(args.out + ".oadt", tl);
        manifest.artifacts.push_back(args.out + ".oadt");
    }

    const LatencySummary lat = summarize_latency(frame_ms);
    {
        std::ofstream os(args.out + ".latency.txt");
        os << "# manifest " << hex64(manifest.id()) << "\n";
        os << "model " << to_string(spec.kind) << "\nframes " << lat.frames << "\np50_ms " << lat.p50_ms
           << "\np99_ms " << lat.p99_ms << "\nmean_ms " << lat.mean_ms << "\n";
        manifest.artifacts.push_back(args.out + ".latency.txt");
    }
    manifest.wall_time_ms = elapsed_ms(t0);
    manifest.save(args.out + ".manifest.json");

    std::cout << "scored " << tl.T << " frames with " << to_string(spec.kind) << ": p50=" << lat.p50_ms
              << "ms p99=" << lat.p99_ms << "ms\n";
    std::cout << "manifest " << hex64(manifest.id()) << "\n";
    return 0;
}

int cmd_infer(const InferArgs& args) {
    const auto t0 = std::chrono::steady_clock::now();
    if (args.format != "csv" && args.format != "bin" && args.format != "both")
        throw UsageError("--format must be csv, bin, or both");
    fs::path path(args.stream);
    if (!fs::exists(path)) throw ValidationError("no such stream file: " + args.stream);
    FeatureStream stream = load_stream(path, stream_format_from_path(path));
    const ModelSpec spec = build_spec(args.model, stream.d, stream.K);
    const Checkpoint ckpt = load_checkpoint(args.ckpt);

    RunManifest manifest;
    manifest.command = "infer";
    record_model_config(manifest, args.model);
    manifest.config["ckpt"] = args.ckpt;
    manifest.config["format"] = args.format;
    manifest.config["precision"] = args.precision;
    manifest.inputs = {args.stream};

    if (precision_from_string(args.precision) == Precision::f64)
        return run_infer<double>(args, spec, stream, ckpt, manifest, t0);
    return run_infer<float>(args, spec, stream, ckpt, manifest, t0);
}

// --------------------------------------------------------------------------
// grid
// --------------------------------------------------------------------------

struct GridArgs {
    std::string grid_file;
    std::vector<std::string> train_data;
    std::vector<std::string> test_data;
    std::string out_dir = "grid-out";
    std::string metric = "cap";
    std::string precision = "f32";
    int workers = static_cast<int>(std::thread::hardware_concurrency());
};

struct GridCell {
    std::string model;
    int L = 4;
    int hidden = 4096;
    int layers = 1;
    int d1 = 512;
    std::uint64_t seed = 1;
};

struct CellResult {
    GridCell cell;
    bool ok = false;
    std::string error;
    double map = 0, mean_cap = 0, frame_acc = 0;
    double wall_ms = 0;
};

template <class S>
CellResult run_cell(const GridCell& cell, const ModelFlags& base, const TrainConfig& base_cfg,
                    const std::vector<FeatureStream>& train_set, const std::vector<FeatureStream>& test_set,
                    MetricProtocol protocol) {
    CellResult res;
    res.cell = cell;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        ModelFlags flags = base;
        flags.model = cell.model;
        flags.L = cell.L;
        flags.hidden = cell.hidden;
        flags.layers = cell.layers;
        flags.d1 = cell.d1;
        const ModelSpec spec = build_spec(flags, train_set.front().d, train_set.front().K);
        TrainConfig cfg = base_cfg;
        cfg.seed = cell.seed;
        auto trained = train<S>(spec, train_set, cfg);

        Model<S> model(spec);
        std::vector<ScoreTimeline> timelines;
        std::vector<const FeatureStream*> gt;
        for (const auto& s : test_set) {
            timelines.push_back(infer_stream(s, model, trained.params));
            gt.push_back(&s);
        }
        EvalReport report = evaluate(timelines, gt, protocol);
        res.map = report.map;
        res.mean_cap = report.mean_cap;
        res.frame_acc = report.frame_accuracy;
        res.ok = true;
    } catch (const std::exception& e) {
        res.error = e.what();
    }
    res.wall_ms = elapsed_ms(t0);
    return res;
}

int cmd_grid(const GridArgs& args) {
    const auto t0 = std::chrono::steady_clock::now();
    std::ifstream gf(args.grid_file);
    if (!gf) throw ValidationError("cannot open grid file: " + args.grid_file);
    nlohmann::json grid;
    try {
        gf >> grid;
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("grid file is not valid JSON: " + std::string(e.what()));
    }

    auto int_list = [&](const char* key, int fallback) {
        std::vector<int> out;
        if (grid.contains(key))
            for (const auto& v : grid[key]) out.push_back(v.get<int>());
        if (out.empty()) out.push_back(fallback);
        return out;
    };
    std::vector<std::string> models;
    if (grid.contains("models"))
        for (const auto& v : grid["models"]) models.push_back(v.get<std::string>());
    if (models.empty()) models.push_back("avgpool");
    std::vector<std::uint64_t> seeds;
    if (grid.contains("seeds"))
        for (const auto& v : grid["seeds"]) seeds.push_back(v.get<std::uint64_t>());
    if (seeds.empty()) seeds.push_back(1);
    const auto Ls = int_list("L", 4);
    const auto hiddens = int_list("hidden", 4096);
    const auto layer_counts = int_list("layers", 1);
    const auto d1s = int_list("d1", 512);

    ModelFlags base;
    base.width_mult = grid.value("width_mult", 1.0);
    base.dcc_width = grid.value("dcc_width", 4096);
    base.kernel = grid.value("kernel", 2);
    base.rnn_output = grid.value("rnn_output", std::string("last"));
    base.dropout = grid.value("dropout", 0.1);
    TrainConfig base_cfg;
    base_cfg.epochs = grid.value("epochs", 20);
    base_cfg.batch_size = grid.value("batch", 32);
    base_cfg.learning_rate = grid.value("lr", 1e-3);
    base_cfg.momentum = grid.value("momentum", 0.9);
    base_cfg.decay_rate = grid.value("decay", 0.95);
    base_cfg.validate();

    const auto train_files = collect_stream_files(args.train_data);
    const auto test_files = collect_stream_files(args.test_data);
    const auto train_set = load_streams(train_files);
    const auto test_set = load_streams(test_files);
    const MetricProtocol protocol =
        args.metric == "map" ? MetricProtocol::map : MetricProtocol::mean_cap;

    std::vector<GridCell> cells;
    for (const auto& m : models)
        for (int L : Ls)
            for (int h : hiddens)
                for (int lay : layer_counts)
                    for (int d1 : d1s)
                        for (auto seed : seeds) cells.push_back({m, L, h, lay, d1, seed});

    RunManifest manifest;
    manifest.command = "grid";
    manifest.config["grid_file"] = args.grid_file;
    manifest.config["metric"] = args.metric;
    manifest.config["precision"] = args.precision;
    manifest.config["cells"] = std::to_string(cells.size());
    for (const auto& f : train_files) manifest.inputs.push_back(f.string());
    for (const auto& f : test_files) manifest.inputs.push_back(f.string());

    // cells run in a worker pool; each cell is an isolated deterministic run
    const bool f64 = precision_from_string(args.precision) == Precision::f64;
    std::vector<CellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    const int workers = std::max(1, std::min<int>(args.workers, static_cast<int>(cells.size())));
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) break;
            results[i] = f64 ? run_cell<double>(cells[i], base, base_cfg, train_set, test_set, protocol)
                             : run_cell<float>(cells[i], base, base_cfg, train_set, test_set, protocol);
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    // rank by the headline metric; ties break by cell definition order
    std::vector<std::size_t> order(results.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ha =
            results[a].ok ? (protocol == MetricProtocol::map ? results[a].map : results[a].mean_cap) : -1.0;
        const double hb =
            results[b].ok ? (protocol == MetricProtocol::map ? results[b].map : results[b].mean_cap) : -1.0;
        if (ha != hb) return ha > hb;
        return a < b;
    });

    fs::create_directories(args.out_dir);
    const fs::path csv_path = fs::path(args.out_dir) / "table.csv";
    const fs::path txt_path = fs::path(args.out_dir) / "table.txt";
    {
        std::ofstream csv(csv_path);
        csv << "# manifest " << hex64(manifest.id()) << "\n";
        csv << "rank,model,L,hidden,layers,d1,seed,map,mean_cap,frame_acc,status\n";
        csv << std::setprecision(17);
        int rank = 1;
        for (auto i : order) {
            const auto& r = results[i];
            csv << rank++ << ',' << r.cell.model << ',' << r.cell.L << ',' << r.cell.hidden << ','
                << r.cell.layers << ',' << r.cell.d1 << ',' << r.cell.seed << ',' << r.map << ','
                << r.mean_cap << ',' << r.frame_acc << ',' << (r.ok ? "ok" : "failed") << '\n';
        }
    }
    {
        std::ofstream txt(txt_path);
        txt << "# manifest " << hex64(manifest.id()) << "\n";
        txt << std::left << std::setw(5) << "rank" << std::setw(14) << "model" << std::setw(4) << "L"
            << std::setw(8) << "hidden" << std::setw(7) << "layers" << std::setw(6) << "d1" << std::setw(8)
            << "seed" << std::setw(10) << "mAP" << std::setw(10) << "mcAP" << std::setw(10) << "acc"
            << std::setw(10) << "wall_ms" << "status\n";
        txt << std::fixed << std::setprecision(4);
        int rank = 1;
        for (auto i : order) {
            const auto& r = results[i];
            txt << std::left << std::setw(5) << rank++ << std::setw(14) << r.cell.model << std::setw(4)
                << r.cell.L << std::setw(8) << r.cell.hidden << std::setw(7) << r.cell.layers
                << std::setw(6) << r.cell.d1 << std::setw(8) << r.cell.seed << std::setw(10) << r.map
                << std::setw(10) << r.mean_cap << std::setw(10) << r.frame_acc << std::setw(10)
                << std::setprecision(1) << r.wall_ms << std::setprecision(4)
                << (r.ok ? "ok" : ("failed: " + r.error)) << "\n";
        }
    }
    manifest.artifacts = {csv_path.string(), txt_path.string()};
    manifest.wall_time_ms = elapsed_ms(t0);
    manifest.save(fs::path(args.out_dir) / "grid.manifest.json");

    std::size_t failures = 0;
    for (const auto& r : results)
        if (!r.ok) ++failures;
    std::cout << "grid complete: " << results.size() << " cells, " << failures << " failed; table at "
              << csv_path.string() << "\n";
    std::cout << "manifest " << hex64(manifest.id()) << "\n";
    return 0;
}

// --------------------------------------------------------------------------
// inspect
// --------------------------------------------------------------------------

int cmd_inspect(const std::string& file) {
    fs::path path(file);
    if (!fs::exists(path)) throw ValidationError("no such file: " + file);
    if (path.extension() == ".csv") {
        auto s = load_stream(path, StreamFormat::csv);
        std::cout << "csv feature stream '" << s.video_id << "': T=" << s.T << " d=" << s.d
                  << " K=" << s.K << "\n";
        return 0;
    }
    std::ifstream is(path, std::ios::binary);
    char magic[4] = {};
    is.read(magic, 4);
    const std::string tag(magic, 4);
    if (tag == "OADF") {
        auto s = load_stream(path, StreamFormat::binary);
        std::vector<int> counts(s.K + 1, 0);
        for (int l : s.labels) counts[l]++;
        std::cout << "feature stream '" << s.video_id << "': T=" << s.T << " d=" << s.d << " K=" << s.K
                  << "\nlabel counts:";
        for (int c = 0; c <= s.K; ++c) std::cout << " " << c << ":" << counts[c];
        std::cout << "\n";
    } else if (tag == "OADP") {
        auto ckpt = load_checkpoint(path);
        std::size_t total = 0;
        for (const auto& p : ckpt.params) total += p.values.size();
        std::cout << "checkpoint: version " << ckpt.version << ", fingerprint "
                  << hex64(ckpt.fingerprint) << ", manifest " << hex64(ckpt.manifest_id) << "\n"
                  << ckpt.params.size() << " parameters, " << total << " values\n";
        for (const auto& p : ckpt.params) std::cout << "  " << p.name << " " << shape_str(p.shape) << "\n";
    } else if (tag == "OADT") {
        auto tl = load_timeline_binary(path);
        std::cout << "timeline '" << tl.video_id << "': T=" << tl.T << " classes=" << tl.K + 1
                  << " fingerprint " << hex64(tl.model_fingerprint) << " manifest "
                  << hex64(tl.manifest_id) << "\n";
    } else {
        throw ValidationError("unrecognized file type (magic '" + tag + "')");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"oad: temporal modeling workbench for online action detection"};
    app.require_subcommand(1);
    std::function<int()> action;

    SynthArgs synth;
    std::string synth_cfg;
    auto* s = app.add_subcommand("synth", "generate synthetic feature streams");
    s->add_option("--config", synth_cfg, "key=value config file (flags override)");
    s->add_option("--out", synth.out_dir, "output directory")->required();
    s->add_option("--streams", synth.spec.num_streams, "number of streams");
    s->add_option("--T", synth.spec.T, "frames per stream");
    s->add_option("--d", synth.spec.d, "feature dimension");
    s->add_option("--K", synth.spec.K, "number of action classes");
    s->add_option("--sigma", synth.spec.noise, "gaussian noise level");
    s->add_option("--mode", synth.mode, "order | static");
    s->add_option("--seed", synth.spec.seed, "generator seed");
    s->add_option("--format", synth.format, "bin | csv");
    s->callback([&]() {
        action = [&]() {
            apply_config(s, synth_cfg);
            return cmd_synth(synth);
        };
    });

    TrainArgs train_args;
    std::string train_cfg;
    auto* t = app.add_subcommand("train", "train a temporal model on feature streams");
    t->add_option("--config", train_cfg, "key=value config file (flags override)");
    add_model_flags(t, train_args.model);
    t->add_option("--data", train_args.data, "stream files or directories")->required();
    t->add_option("--out", train_args.out, "checkpoint path");
    t->add_option("--log", train_args.log, "training log path (default: <out>.log)");
    t->add_option("--lr", train_args.cfg.learning_rate, "learning rate");
    t->add_option("--momentum", train_args.cfg.momentum, "SGD momentum");
    t->add_option("--decay", train_args.cfg.decay_rate, "per-epoch lr decay");
    t->add_option("--epochs", train_args.cfg.epochs, "training epochs");
    t->add_option("--batch", train_args.cfg.batch_size, "minibatch size");
    t->add_option("--clip", train_args.cfg.grad_clip, "gradient clip threshold (0 = off)");
    t->add_option("--seed", train_args.cfg.seed, "training seed");
    t->add_option("--precision", train_args.precision, "f32 | f64");
    t->callback([&]() {
        action = [&]() {
            apply_config(t, train_cfg);
            return cmd_train(train_args);
        };
    });

    EvalArgs eval_args;
    std::string eval_cfg;
    auto* e = app.add_subcommand("eval", "evaluate a checkpoint on test streams");
    e->add_option("--config", eval_cfg, "key=value config file (flags override)");
    add_model_flags(e, eval_args.model);
    e->add_option("--ckpt", eval_args.ckpt, "checkpoint path")->required();
    e->add_option("--data", eval_args.data, "test stream files or directories")->required();
    e->add_option("--out", eval_args.out, "report path prefix");
    e->add_option("--metric", eval_args.metric, "cap | map headline metric");
    e->add_flag("--svg", eval_args.svg, "also write a per-class bar chart");
    e->add_option("--precision", eval_args.precision, "f32 | f64");
    e->callback([&]() {
        action = [&]() {
            apply_config(e, eval_cfg);
            return cmd_eval(eval_args);
        };
    });

    InferArgs infer_args;
    std::string infer_cfg;
    auto* i = app.add_subcommand("infer", "stride-1 online scoring of one stream");
    i->add_option("--config", infer_cfg, "key=value config file (flags override)");
    add_model_flags(i, infer_args.model);
    i->add_option("--ckpt", infer_args.ckpt, "checkpoint path")->required();
    i->add_option("--stream", infer_args.stream, "input stream file")->required();
    i->add_option("--out", infer_args.out, "timeline path prefix");
    i->add_option("--format", infer_args.format, "csv | bin | both");
    i->add_option("--precision", infer_args.precision, "f32 | f64");
    i->callback([&]() {
        action = [&]() {
            apply_config(i, infer_cfg);
            return cmd_infer(infer_args);
        };
    });

    GridArgs grid_args;
    std::string grid_cfg;
    auto* g = app.add_subcommand("grid", "train and evaluate a hyperparameter grid");
    g->add_option("--config", grid_cfg, "key=value config file (flags override)");
    g->add_option("--grid", grid_args.grid_file, "grid manifest (json)")->required();
    g->add_option("--train-data", grid_args.train_data, "training streams")->required();
    g->add_option("--test-data", grid_args.test_data, "test streams")->required();
    g->add_option("--out", grid_args.out_dir, "output directory");
    g->add_option("--metric", grid_args.metric, "cap | map ranking metric");
    g->add_option("--workers", grid_args.workers, "parallel cells");
    g->add_option("--precision", grid_args.precision, "f32 | f64");
    g->callback([&]() {
        action = [&]() {
            apply_config(g, grid_cfg);
            return cmd_grid(grid_args);
        };
    });

    std::string inspect_file;
    auto* n = app.add_subcommand("inspect", "describe an oad artifact file");
    n->add_option("file", inspect_file, "file to inspect")->required();
    n->callback([&]() { action = [&]() { return cmd_inspect(inspect_file); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        return action();
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << "\n";
        return 2;
    } catch (const ConfigError& err) {
        std::cerr << "configuration error: " << err.what() << "\n";
        return 2;
    } catch (const ValidationError& err) {
        std::cerr << "validation error: " << err.what() << "\n";
        return 3;
    } catch (const NumericError& err) {
        std::cerr << "numeric error: " << err.what() << "\n";
        return 4;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 4;
    }
}
