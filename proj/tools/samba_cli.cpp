// Command-line front end: dataset generation, training, translation,
// evaluation, interpretability exports, and ablation sweeps. Every artifact
// directory receives one run manifest (run.json); reruns with an unchanged
// input hash are no-ops unless --force.
#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "samba/common.hpp"
#include "samba/eval.hpp"
#include "samba/hrf.hpp"
#include "samba/io.hpp"
#include "samba/model.hpp"
#include "samba/synth.hpp"
#include "samba/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace samba;

namespace {

std::string to_hex16(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string text_hash(const std::string& text) { return to_hex16(fnv1a(text.data(), text.size())); }

std::string file_hash(const fs::path& file) { return text_hash(read_text(file)); }

std::string iso_utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::size_t thread_cap() {
    const char* env = std::getenv("SAMBA_THREADS");
    if (env == nullptr) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    return (end == env || v < 1) ? 1 : static_cast<std::size_t>(v);
}

// Index-addressed worker pool; results keyed by job index stay deterministic
// regardless of scheduling.
void parallel_for(std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(thread_cap(), jobs);
    if (workers <= 1) {
        for (std::size_t i = 0; i < jobs; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

struct RunInfo {
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    std::string content_hash;
    fs::path out;
    std::string created;
};

// True when the directory already holds a completed identical run.
bool prepare_out(const RunInfo& run, bool force) {
    const fs::path manifest = run.out / "run.json";
    if (fs::exists(manifest)) {
        const json j = json::parse(read_text(manifest), nullptr, true, true);
        if (!force && j.value("command", "") == run.command &&
            j.value("content_hash", "") == run.content_hash) {
            std::cout << "up to date: " << run.out.string() << " already holds this run (hash "
                      << run.content_hash << "); use --force to redo\n";
            return true;
        }
        if (!force)
            throw ConfigError("output directory " + run.out.string() +
                              " holds a different run; use --force to overwrite");
    } else if (fs::exists(run.out) && !fs::is_empty(run.out) && !force) {
        throw ConfigError("output directory " + run.out.string() +
                          " is not empty and has no run manifest; use --force to overwrite");
    }
    fs::create_directories(run.out);
    return false;
}

void finish_run(const RunInfo& run) {
    json j;
    j["command"] = run.command;
    j["config_path"] = run.config_path;
    j["seed"] = run.seed;
    j["content_hash"] = run.content_hash;
    j["out_dir"] = run.out.string();
    j["created_utc"] = run.created;
    j["completed_utc"] = iso_utc_now();
    write_text(run.out / "run.json", j.dump(2) + "\n");
}

// Shared {"model": ..., "train": ...} config file; both sections optional,
// unknown top-level keys rejected.
struct RunConfigs {
    ModelConfig model;
    TrainConfig train;
};

RunConfigs parse_run_configs(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : j.items())
        if (key != "model" && key != "train")
            throw ConfigError("config file: unknown top-level key '" + key +
                              "' (expected model, train)");
    RunConfigs rc;
    rc.model = model_config_from_json_text(j.contains("model") ? j["model"].dump() : "{}");
    rc.train = train_config_from_json_text(j.contains("train") ? j["train"].dump() : "{}");
    return rc;
}

std::string read_config_text(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file " + path + " does not exist");
    return read_text(path);
}

RunConfigs load_run_configs(const std::string& path) {
    if (path.empty()) return parse_run_configs("{}");
    return parse_run_configs(read_config_text(path));
}

std::string run_configs_text(const RunConfigs& rc) {
    json j;
    j["model"] = json::parse(model_config_to_json_text(rc.model));
    j["train"] = json::parse(train_config_to_json_text(rc.train));
    return j.dump(2) + "\n";
}

void check_dataset_geometry(const ModelConfig& mc, const SynthConfig& dc) {
    if (mc.sources != dc.sources || mc.targets != dc.targets)
        throw ConfigError("model expects " + std::to_string(mc.sources) + "x" +
                          std::to_string(mc.targets) + " parcels but the dataset has " +
                          std::to_string(dc.sources) + "x" + std::to_string(dc.targets));
    if (mc.electro_rate_hz != dc.electro_rate_hz || mc.tr_s != dc.tr_s)
        throw ConfigError("model sampling grid (rate " + format_double(mc.electro_rate_hz, 6) +
                          " Hz, TR " + format_double(mc.tr_s, 6) +
                          " s) does not match the dataset");
    if (mc.regions != dc.regions)
        throw ConfigError("model has " + std::to_string(mc.regions) + " regions, dataset has " +
                          std::to_string(dc.regions));
}

std::vector<const Window*> pick_split(const WindowSet& ws, const std::string& split) {
    std::vector<const Window*> out;
    const auto add = [&](const std::vector<Window>& v) {
        for (const Window& w : v) out.push_back(&w);
    };
    if (split == "train") add(ws.train);
    else if (split == "val") add(ws.val);
    else if (split == "test") add(ws.test);
    else if (split == "all") { add(ws.train); add(ws.val); add(ws.test); }
    else throw ConfigError("unknown split '" + split + "' (expected train, val, test, all)");
    return out;
}

std::vector<Window> copy_split(const WindowSet& ws, const std::string& split) {
    std::vector<Window> out;
    for (const Window* w : pick_split(ws, split)) out.push_back(*w);
    return out;
}

// ---------------------------------------------------------------- SVG helpers

std::string svg_begin(int w, int h) {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
       << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    return os.str();
}

const char* kPalette[10] = {"#4363d8", "#e6194b", "#3cb44b", "#f58231", "#911eb4",
                            "#46f0f0", "#f032e6", "#9a6324", "#008080", "#800000"};

std::string rgb(double r, double g, double b) {
    std::ostringstream os;
    os << "rgb(" << static_cast<int>(r * 255.0 + 0.5) << "," << static_cast<int>(g * 255.0 + 0.5)
       << "," << static_cast<int>(b * 255.0 + 0.5) << ")";
    return os.str();
}

// 0 -> near white, 1 -> deep orange.
std::string ramp_color(double t) {
    t = std::min(1.0, std::max(0.0, t));
    return rgb(1.0 - 0.1 * t, 1.0 - 0.55 * t, 1.0 - 0.9 * t);
}

// -1 -> blue, 0 -> white, +1 -> red.
std::string diverging_color(double t) {
    t = std::min(1.0, std::max(-1.0, t));
    if (t >= 0.0) return rgb(1.0, 1.0 - 0.8 * t, 1.0 - 0.8 * t);
    return rgb(1.0 + 0.8 * t, 1.0 + 0.8 * t, 1.0);
}

// Multi-series line plot over a shared x grid.
std::string svg_line_plot(const std::vector<std::vector<double>>& series,
                          const std::vector<std::string>& names, double x_step,
                          const std::string& x_label, const std::string& y_label) {
    const int w = 640, h = 400, ml = 50, mr = 140, mt = 20, mb = 40;
    const int pw = w - ml - mr, ph = h - mt - mb;
    double lo = 0.0, hi = 0.0;
    std::size_t longest = 0;
    for (const auto& s : series) {
        longest = std::max(longest, s.size());
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    const double span_x = x_step * static_cast<double>(longest > 1 ? longest - 1 : 1);
    const auto px = [&](double x) { return ml + x / span_x * pw; };
    const auto py = [&](double v) { return mt + (hi - v) / (hi - lo) * ph; };

    std::ostringstream os;
    os << svg_begin(w, h);
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#888\"/>\n";
    if (lo < 0.0 && hi > 0.0)
        os << "<line x1=\"" << ml << "\" y1=\"" << py(0.0) << "\" x2=\"" << ml + pw << "\" y2=\""
           << py(0.0) << "\" stroke=\"#ccc\"/>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        os << "<polyline fill=\"none\" stroke=\"" << kPalette[i % 10]
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t k = 0; k < series[i].size(); ++k)
            os << px(x_step * static_cast<double>(k)) << "," << py(series[i][k]) << " ";
        os << "\"/>\n";
        if (i < names.size()) {
            const double ty = mt + 14.0 * static_cast<double>(i + 1);
            os << "<line x1=\"" << ml + pw + 8 << "\" y1=\"" << ty - 4 << "\" x2=\"" << ml + pw + 28
               << "\" y2=\"" << ty - 4 << "\" stroke=\"" << kPalette[i % 10]
               << "\" stroke-width=\"2\"/>\n";
            os << "<text x=\"" << ml + pw + 32 << "\" y=\"" << ty
               << "\" font-size=\"11\" font-family=\"sans-serif\">" << names[i] << "</text>\n";
        }
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 10
       << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">" << x_label
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << mt + ph / 2
       << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 14 "
       << mt + ph / 2 << ")\">" << y_label << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << py(hi) + 4
       << "\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">"
       << format_double(hi, 3) << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << py(lo) + 4
       << "\" font-size=\"10\" text-anchor=\"end\" font-family=\"sans-serif\">"
       << format_double(lo, 3) << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

std::string svg_heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols,
                        bool diverging, const std::string& x_label, const std::string& y_label) {
    const int cell = std::max(4, static_cast<int>(480 / std::max(rows, cols)));
    const int ml = 50, mt = 20, mb = 40;
    const int w = ml + cell * static_cast<int>(cols) + 20;
    const int h = mt + cell * static_cast<int>(rows) + mb;
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) peak = 1.0;

    std::ostringstream os;
    os << svg_begin(w, h);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = values[r * cols + c];
            const std::string color =
                diverging ? diverging_color(v / peak) : ramp_color(std::max(0.0, v) / peak);
            os << "<rect x=\"" << ml + cell * static_cast<int>(c) << "\" y=\""
               << mt + cell * static_cast<int>(r) << "\" width=\"" << cell << "\" height=\"" << cell
               << "\" fill=\"" << color << "\" stroke=\"#eee\" stroke-width=\"0.5\"/>\n";
        }
    os << "<text x=\"" << ml + cell * static_cast<int>(cols) / 2 << "\" y=\"" << h - 12
       << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">" << x_label
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << mt + cell * static_cast<int>(rows) / 2
       << "\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\" transform=\"rotate(-90 14 "
       << mt + cell * static_cast<int>(rows) / 2 << ")\">" << y_label << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

// ---------------------------------------------------------------- commands

struct GenDataArgs {
    std::string config, out;
    std::int64_t seed = -1;
    bool force = false, print = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    SynthConfig cfg = a.config.empty() ? default_synth_config()
                                       : synth_config_from_json_text(read_config_text(a.config));
    if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
    cfg.validate();
    const std::string cfg_text = synth_config_to_json_text(cfg);
    if (a.print) {
        std::cout << cfg_text;
        return 0;
    }
    if (a.out.empty()) throw ConfigError("gen-data: --out is required");

    RunInfo run{"gen-data", a.config, cfg.seed, text_hash(cfg_text), fs::path(a.out),
                iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;

    const Dataset ds = generate(cfg);
    save_dataset(ds, run.out);
    finish_run(run);
    std::cout << "wrote " << ds.subjects.size() << " subject(s), " << cfg.sources << " electro x "
              << cfg.targets << " hemo parcels, " << format_double(cfg.duration_s, 6)
              << " s each to " << run.out.string() << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, direction, config, out, resume;
    std::int64_t seed = -1;
    double train_frac = 0.7, val_frac = 0.15;
    bool force = false, print = false;
};

int cmd_train(const TrainArgs& a) {
    RunConfigs rc = load_run_configs(a.config);
    rc.model.direction = direction_from_name(a.direction);
    if (a.seed >= 0) rc.train.seed = static_cast<std::uint64_t>(a.seed);
    rc.model.validate();
    rc.train.validate();
    if (a.print) {
        std::cout << run_configs_text(rc);
        return 0;
    }
    if (a.data.empty() || a.out.empty()) throw ConfigError("train: --data and --out are required");

    const Dataset ds = load_dataset(a.data);
    check_dataset_geometry(rc.model, ds.config);
    const WindowSet ws = split_windows(ds, rc.model.window_s, a.train_frac, a.val_frac);

    std::string input_hash = text_hash(run_configs_text(rc) + a.direction) + ":" +
                             file_hash(fs::path(a.data) / "manifest.json");
    if (!a.resume.empty()) input_hash += ":" + file_hash(a.resume);
    RunInfo run{"train", a.config, rc.train.seed, text_hash(input_hash), fs::path(a.out),
                iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;

    Model model = a.resume.empty() ? build_model(rc.model, rc.train.seed) : Model{};
    Adam opt = [&] {
        if (a.resume.empty()) return Adam(model.registry, rc.train.lr);
        LoadedCheckpoint lc = load_checkpoint(a.resume);
        if (!(lc.model.config == rc.model))
            throw ConfigError("resume checkpoint was trained with a different model config (" +
                              config_hash(lc.model.config, lc.train_config) + " vs " +
                              config_hash(rc.model, rc.train) + ")");
        model = std::move(lc.model);
        rc.train.first_epoch = model.epochs_completed;
        Adam o(model.registry, rc.train.lr);
        if (lc.has_optimizer) {
            for (auto& [path, mv] : lc.moments)
                o.restore(path, std::move(mv.first), std::move(mv.second));
            o.set_steps(lc.optimizer_steps);
        }
        return o;
    }();

    const TrainResult result = train(model, ws, rc.train, &opt);

    std::vector<std::vector<std::string>> rows;
    for (const EpochStats& e : result.history) {
        rows.push_back({std::to_string(e.epoch), format_double(e.total), format_double(e.l_match),
                        format_double(e.l_reg), format_double(e.val_spearman)});
        std::cout << "epoch " << e.epoch << ": total " << format_double(e.total, 6) << " match "
                  << format_double(e.l_match, 6) << " reg " << format_double(e.l_reg, 6)
                  << " val_spearman " << format_double(e.val_spearman, 6) << "\n";
    }
    write_csv(run.out / "history.csv", {"epoch", "total", "match", "reg", "val_spearman"}, rows);
    save_checkpoint(model, rc.train, &opt, run.out / "model.ckpt");
    finish_run(run);
    std::cout << "checkpoint: " << (run.out / "model.ckpt").string() << " (config hash "
              << config_hash(model.config, rc.train) << ")\n";
    return 0;
}

// Whole recordings translated window by window; trailing samples that do not
// fill a window are dropped, matching how windows are carved for training.
std::vector<Tensor> translate_recordings(const Model& model, const Dataset& ds) {
    const ModelConfig& mc = model.config;
    const bool e2h = mc.direction == Direction::E2H;
    const std::size_t t_win = mc.electro_window(), h_win = mc.hemo_window();

    struct Job {
        std::size_t subject, index;
    };
    std::vector<Job> jobs;
    std::vector<std::vector<Tensor>> parts(ds.subjects.size());
    for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
        const std::size_t count = e2h ? ds.subjects[s].electro.cols() / t_win
                                      : ds.subjects[s].hemo.cols() / h_win;
        parts[s].resize(count, Tensor::zeros(1, 1));
        for (std::size_t w = 0; w < count; ++w) jobs.push_back({s, w});
    }
    parallel_for(jobs.size(), [&](std::size_t i) {
        NoGradGuard no_grad;
        const auto [s, w] = jobs[i];
        const SubjectRecording& rec = ds.subjects[s];
        if (e2h) {
            const Tensor in = slice_cols(rec.electro, w * t_win, (w + 1) * t_win);
            parts[s][w] = forward_e2h(model, in);
        } else {
            const Tensor in = slice_cols(rec.hemo, w * h_win, (w + 1) * h_win);
            parts[s][w] = forward_h2e(model, in).prediction;
        }
    });
    std::vector<Tensor> out;
    out.reserve(parts.size());
    NoGradGuard no_grad;
    for (auto& p : parts) out.push_back(p.size() == 1 ? p[0] : concat_cols(p));
    return out;
}

void save_predictions(const fs::path& dir, const std::vector<Tensor>& preds, Direction direction,
                      double window_s, const std::string& hash) {
    json manifest;
    manifest["format_version"] = 1;
    manifest["kind"] = "predictions";
    manifest["direction"] = direction_name(direction);
    manifest["window_s"] = window_s;
    manifest["config_hash"] = hash;
    json files = json::object();
    for (std::size_t s = 0; s < preds.size(); ++s) {
        const std::string name = "subject" + std::to_string(s) + "_pred";
        write_f64(dir / (name + ".f64"), preds[s].values());
        files[name] = {{"rows", preds[s].rows()},
                       {"cols", preds[s].cols()},
                       {"checksum", checksum_hex(preds[s].values())}};
    }
    manifest["files"] = files;
    manifest["subjects"] = preds.size();
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

struct PredictionSet {
    std::vector<Tensor> recordings;
    Direction direction = Direction::E2H;
    double window_s = 0.0;
    std::string config_hash;
};

PredictionSet load_predictions(const fs::path& dir) {
    const json manifest = json::parse(read_text(dir / "manifest.json"));
    if (manifest.value("kind", "") != "predictions")
        throw DataError(dir.string() + " is not a predictions directory");
    if (manifest.value("format_version", 0) != 1)
        throw DataError("predictions directory uses an unknown format version");
    PredictionSet ps;
    ps.direction = direction_from_name(manifest.at("direction").get<std::string>());
    ps.window_s = manifest.at("window_s").get<double>();
    ps.config_hash = manifest.value("config_hash", "");
    const std::size_t subjects = manifest.at("subjects").get<std::size_t>();
    for (std::size_t s = 0; s < subjects; ++s) {
        const std::string name = "subject" + std::to_string(s) + "_pred";
        const json& meta = manifest.at("files").at(name);
        const auto rows = meta.at("rows").get<std::size_t>();
        const auto cols = meta.at("cols").get<std::size_t>();
        std::vector<double> values = read_f64(dir / (name + ".f64"), rows * cols);
        if (checksum_hex(values) != meta.at("checksum").get<std::string>())
            throw DataError("prediction file " + name + ".f64 is corrupt (checksum mismatch)");
        ps.recordings.push_back(Tensor::leaf(std::move(values), rows, cols));
    }
    return ps;
}

struct TranslateArgs {
    std::string ckpt, data, out, config;
    bool oracle = false, force = false;
};

int cmd_translate(const TranslateArgs& a) {
    const Dataset ds = load_dataset(a.data);

    if (a.oracle) {
        RunInfo run{"translate", a.config, 0,
                    text_hash("oracle:" + file_hash(fs::path(a.data) / "manifest.json")),
                    fs::path(a.out), iso_utc_now()};
        if (prepare_out(run, a.force)) return 0;
        std::vector<Tensor> preds;
        for (const SubjectRecording& rec : ds.subjects)
            preds.push_back(oracle_translate(ds, rec.electro));
        save_predictions(run.out, preds, Direction::E2H, 0.0, "oracle");
        finish_run(run);
        std::cout << "reference translation of " << preds.size() << " recording(s) written to "
                  << run.out.string() << "\n";
        return 0;
    }

    if (a.ckpt.empty()) throw ConfigError("translate: --ckpt or --oracle is required");
    if (!fs::exists(a.ckpt)) throw DataError("checkpoint " + a.ckpt + " does not exist");
    const LoadedCheckpoint lc = load_checkpoint(a.ckpt);
    const std::string ckpt_hash = config_hash(lc.model.config, lc.train_config);
    if (!a.config.empty()) {
        RunConfigs rc = load_run_configs(a.config);
        rc.model.direction = lc.model.config.direction;
        const std::string want = config_hash(rc.model, rc.train);
        if (want != ckpt_hash)
            throw ConfigError("config hash " + want + " does not match checkpoint hash " +
                              ckpt_hash + "; refusing to translate with mismatched settings");
    }
    check_dataset_geometry(lc.model.config, ds.config);

    RunInfo run{"translate", a.config, 0,
                text_hash(file_hash(a.ckpt) + ":" + file_hash(fs::path(a.data) / "manifest.json")),
                fs::path(a.out), iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;

    const std::vector<Tensor> preds = translate_recordings(lc.model, ds);
    save_predictions(run.out, preds, lc.model.config.direction, lc.model.config.window_s,
                     ckpt_hash);
    finish_run(run);
    std::cout << "translated " << preds.size() << " recording(s) ("
              << direction_name(lc.model.config.direction) << ") to " << run.out.string() << "\n";
    return 0;
}

struct EvaluateArgs {
    std::string data, ckpt, pred, out, split = "test", metric_windows = "60,15";
    double window_s = 64.0;
    double train_frac = 0.7, val_frac = 0.15;
    bool oracle = false, force = false;
};

std::vector<double> parse_metric_windows(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError("cannot parse metric window '" + item + "'");
        }
    }
    if (out.empty()) throw ConfigError("no metric windows given");
    return out;
}

int cmd_evaluate(const EvaluateArgs& a) {
    const int modes = static_cast<int>(!a.ckpt.empty()) + static_cast<int>(!a.pred.empty()) +
                      static_cast<int>(a.oracle);
    if (modes != 1)
        throw ConfigError("evaluate: pass exactly one of --ckpt, --pred, --oracle");
    const std::vector<double> metrics = parse_metric_windows(a.metric_windows);
    const Dataset ds = load_dataset(a.data);

    std::vector<EvalReport> reports;
    std::string hash;
    std::string source;
    if (a.oracle) {
        const WindowSet ws = split_windows(ds, a.window_s, a.train_frac, a.val_frac);
        const std::vector<Window> windows = copy_split(ws, a.split);
        for (double m : metrics) reports.push_back(evaluate_oracle(ds, windows, m));
        hash = "oracle";
        source = "oracle:" + file_hash(fs::path(a.data) / "manifest.json");
    } else if (!a.ckpt.empty()) {
        if (!fs::exists(a.ckpt)) throw DataError("checkpoint " + a.ckpt + " does not exist");
        const LoadedCheckpoint lc = load_checkpoint(a.ckpt);
        check_dataset_geometry(lc.model.config, ds.config);
        const WindowSet ws =
            split_windows(ds, lc.model.config.window_s, a.train_frac, a.val_frac);
        const std::vector<Window> windows = copy_split(ws, a.split);
        for (double m : metrics) reports.push_back(evaluate(lc.model, windows, m));
        hash = config_hash(lc.model.config, lc.train_config);
        source = file_hash(a.ckpt);
    } else {
        const PredictionSet ps = load_predictions(a.pred);
        const double win_s = ps.window_s > 0.0 ? ps.window_s : a.window_s;
        const WindowSet ws = split_windows(ds, win_s, a.train_frac, a.val_frac);
        const std::vector<Window> windows = copy_split(ws, a.split);
        for (double m : metrics)
            reports.push_back(
                evaluate_predictions(ps.recordings, ps.direction, ds.config, windows, m));
        hash = ps.config_hash;
        source = file_hash(fs::path(a.pred) / "manifest.json");
    }

    RunInfo run{"evaluate", "", 0,
                text_hash(source + ":" + a.split + ":" + a.metric_windows + ":" +
                          file_hash(fs::path(a.data) / "manifest.json")),
                fs::path(a.out), iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;
    write_eval_reports(reports, run.out / "eval.csv", run.out / "eval.json", hash);
    for (const EvalReport& r : reports) {
        std::cout << direction_name(r.direction) << " " << format_double(r.metric_window_s, 6)
                  << " s windows: mean spearman " << format_double(r.mean_spearman, 6) << " over "
                  << r.windows_evaluated << " metric windows";
        if (r.windows_skipped > 0) std::cout << " (" << r.windows_skipped << " skipped)";
        std::cout << "\n";
        for (const std::string& s : r.skipped) std::cerr << "note: " << s << "\n";
    }
    finish_run(run);
    return 0;
}

struct InspectArgs {
    std::string ckpt, out;
    bool force = false;
};

int cmd_inspect_hrf(const InspectArgs& a) {
    if (!fs::exists(a.ckpt)) throw DataError("checkpoint " + a.ckpt + " does not exist");
    const LoadedCheckpoint lc = load_checkpoint(a.ckpt);
    RunInfo run{"inspect-hrf", "", 0, text_hash("hrf:" + file_hash(a.ckpt)), fs::path(a.out),
                iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;

    NoGradGuard no_grad;
    const Tensor theta = lc.model.hrf_parameters();
    const auto& tv = theta.values();
    std::vector<std::vector<std::string>> rows;
    std::vector<std::vector<double>> curves;
    std::vector<std::string> names;
    const double duration = lc.model.config.hrf_duration_s;
    const double dt = duration / 256.0;
    for (std::size_t p = 0; p < theta.rows(); ++p) {
        const double* t = tv.data() + p * 6;
        const double p_r = t[1] * t[2], p_u = t[4] * t[5];
        if (p_r >= p_u)
            std::cerr << "warning: parcel " << p << " response peak " << format_double(p_r, 4)
                      << " s is not before undershoot peak " << format_double(p_u, 4) << " s\n";
        std::vector<std::string> row{std::to_string(p)};
        for (std::size_t k = 0; k < 6; ++k) row.push_back(format_double(t[k]));
        row.push_back(format_double(p_r));
        row.push_back(format_double(p_u));
        rows.push_back(std::move(row));

        const HRFKernel kernel = sample_hrf(slice_rows(theta, p, p + 1), dt, duration);
        curves.push_back(kernel.samples.values());
        names.push_back("parcel " + std::to_string(p));
    }
    write_csv(run.out / "hrf.csv",
              {"parcel_id", "theta1", "theta2", "theta3", "theta4", "theta5", "theta6", "p_r",
               "p_u"},
              rows);
    write_text(run.out / "hrf.svg",
               svg_line_plot(curves, names, dt, "time (s)", "response amplitude"));
    finish_run(run);
    std::cout << "wrote " << rows.size() << " parameter rows to "
              << (run.out / "hrf.csv").string() << "\n";
    return 0;
}

int cmd_inspect_attention(const InspectArgs& a) {
    if (!fs::exists(a.ckpt)) throw DataError("checkpoint " + a.ckpt + " does not exist");
    const LoadedCheckpoint lc = load_checkpoint(a.ckpt);
    RunInfo run{"inspect-attention", "", 0, text_hash("attention:" + file_hash(a.ckpt)),
                fs::path(a.out), iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;

    NoGradGuard no_grad;
    const Tensor alphas = lc.model.wavelet_alphas();
    const auto& av = alphas.values();
    const std::size_t bands = alphas.cols();
    std::vector<std::string> header{"parcel_id"};
    for (std::size_t b = 0; b + 1 < bands; ++b) header.push_back("band_" + std::to_string(b));
    header.push_back("approx");
    std::vector<std::vector<std::string>> rows;
    for (std::size_t r = 0; r < alphas.rows(); ++r) {
        std::vector<std::string> row{alphas.rows() == 1 ? std::string("shared")
                                                        : std::to_string(r)};
        for (std::size_t b = 0; b < bands; ++b) row.push_back(format_double(av[r * bands + b]));
        rows.push_back(std::move(row));
    }
    write_csv(run.out / "attention.csv", header, rows);
    write_text(run.out / "attention.svg",
               svg_heatmap(av, alphas.rows(), bands, false, "band (finest detail to approximation)",
                           "parcel"));
    finish_run(run);
    std::cout << "wrote " << rows.size() << " attention row(s), " << bands << " bands to "
              << (run.out / "attention.csv").string() << "\n";
    return 0;
}

int cmd_inspect_graph(const InspectArgs& a) {
    if (!fs::exists(a.ckpt)) throw DataError("checkpoint " + a.ckpt + " does not exist");
    const LoadedCheckpoint lc = load_checkpoint(a.ckpt);
    if (!lc.model.target_graph_set)
        throw DataError("checkpoint holds no frozen output graph (only forward-direction models "
                        "freeze one)");
    RunInfo run{"inspect-graph", "", 0, text_hash("graph:" + file_hash(a.ckpt)), fs::path(a.out),
                iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;

    const SimilarityGraph& g = lc.model.target_graph;
    std::vector<std::vector<std::string>> rows;
    for (std::size_t p = 0; p < g.nodes; ++p)
        for (std::size_t q : g.neighbors[p])
            rows.push_back({std::to_string(p), std::to_string(q), format_double(g.weight(p, q))});
    write_csv(run.out / "graph.csv", {"source", "target", "weight"}, rows);
    write_text(run.out / "graph.svg",
               svg_heatmap(g.weights, g.nodes, g.nodes, true, "parcel", "parcel"));
    finish_run(run);
    std::cout << "wrote " << rows.size() << " edges over " << g.nodes << " parcels to "
              << (run.out / "graph.csv").string() << "\n";
    return 0;
}

struct AblateArgs {
    std::string data, config, out;
    std::int64_t seed = -1;
    double metric_window = 60.0;
    double train_frac = 0.7, val_frac = 0.15;
    bool force = false, print = false;
};

int cmd_ablate(const AblateArgs& a) {
    if (a.config.empty()) throw ConfigError("ablate: --config is required");
    const std::string text = read_config_text(a.config);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("ablation config is not valid JSON: ") + e.what());
    }
    for (const auto& [key, value] : j.items())
        if (key != "train" && key != "cases")
            throw ConfigError("ablation config: unknown top-level key '" + key + "'");
    TrainConfig tc = train_config_from_json_text(j.contains("train") ? j["train"].dump() : "{}");
    if (a.seed >= 0) tc.seed = static_cast<std::uint64_t>(a.seed);
    if (!j.contains("cases") || !j["cases"].is_array() || j["cases"].empty())
        throw ConfigError("ablation config: need a non-empty 'cases' array");
    std::vector<AblationCase> grid;
    for (const json& jc : j["cases"]) {
        if (!jc.is_object() || !jc.contains("name"))
            throw ConfigError("ablation config: each case needs a 'name'");
        for (const auto& [key, value] : jc.items())
            if (key != "name" && key != "model")
                throw ConfigError("ablation config: unknown case key '" + key + "'");
        AblationCase c;
        c.name = jc["name"].get<std::string>();
        c.config = model_config_from_json_text(jc.contains("model") ? jc["model"].dump() : "{}");
        for (const AblationCase& prev : grid)
            if (prev.name == c.name)
                throw ConfigError("ablation config: duplicate case name '" + c.name + "'");
        grid.push_back(std::move(c));
    }
    if (a.print) {
        json eff;
        eff["train"] = json::parse(train_config_to_json_text(tc));
        eff["cases"] = json::array();
        for (const AblationCase& c : grid)
            eff["cases"].push_back({{"name", c.name},
                                    {"model", json::parse(model_config_to_json_text(c.config))}});
        std::cout << eff.dump(2) + "\n";
        return 0;
    }
    if (a.data.empty() || a.out.empty()) throw ConfigError("ablate: --data and --out are required");

    const Dataset ds = load_dataset(a.data);
    const WindowSet ws =
        split_windows(ds, grid.front().config.window_s, a.train_frac, a.val_frac);

    RunInfo run{"ablate", a.config, tc.seed,
                text_hash(text + ":" + std::to_string(tc.seed) + ":" +
                          file_hash(fs::path(a.data) / "manifest.json")),
                fs::path(a.out), iso_utc_now()};
    if (prepare_out(run, a.force)) return 0;

    const std::vector<AblationRow> rows = run_ablations(grid, ws, tc, a.metric_window);
    write_ablation_csv(rows, run.out / "ablations.csv");
    for (const AblationRow& r : rows) {
        if (r.skipped) {
            std::cout << r.name << ": skipped (" << r.reason << ")\n";
        } else {
            std::cout << r.name << ": total " << format_double(r.final_total, 6)
                      << " test_spearman " << format_double(r.test_spearman, 6)
                      << (r.finite ? "" : " [non-finite]") << "\n";
        }
    }
    finish_run(run);
    std::cout << "wrote " << rows.size() << " rows to " << (run.out / "ablations.csv").string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bidirectional electrophysiological/hemodynamic signal translation toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen;
    CLI::App* sg = app.add_subcommand("gen-data", "Generate a paired synthetic dataset");
    sg->add_option("--config", gen.config, "Generator config JSON");
    sg->add_option("--out", gen.out, "Output dataset directory");
    sg->add_option("--seed", gen.seed, "Override the config seed");
    sg->add_flag("--force", gen.force, "Overwrite an existing output directory");
    sg->add_flag("--print-config", gen.print, "Print the effective config and exit");

    TrainArgs tr;
    CLI::App* st = app.add_subcommand("train", "Train a translation model");
    st->add_option("--data", tr.data, "Dataset directory");
    st->add_option("--direction", tr.direction, "Translation direction")
        ->required()
        ->check(CLI::IsMember({"e2h", "h2e"}));
    st->add_option("--config", tr.config, "Run config JSON with model/train sections");
    st->add_option("--out", tr.out, "Output directory for checkpoint and history");
    st->add_option("--seed", tr.seed, "Override the training seed");
    st->add_option("--resume", tr.resume, "Checkpoint to continue from");
    st->add_option("--train-frac", tr.train_frac, "Training fraction of windows");
    st->add_option("--val-frac", tr.val_frac, "Validation fraction of windows");
    st->add_flag("--force", tr.force, "Overwrite an existing output directory");
    st->add_flag("--print-config", tr.print, "Print the effective config and exit");

    TranslateArgs tl;
    CLI::App* sx = app.add_subcommand("translate", "Translate whole recordings");
    sx->add_option("--ckpt", tl.ckpt, "Trained checkpoint");
    sx->add_option("--data", tl.data, "Dataset directory")->required();
    sx->add_option("--out", tl.out, "Output predictions directory")->required();
    sx->add_option("--config", tl.config, "Config to cross-check against the checkpoint");
    sx->add_flag("--oracle", tl.oracle, "Use the ground-truth reference translator");
    sx->add_flag("--force", tl.force, "Overwrite an existing output directory");

    EvaluateArgs ev;
    CLI::App* se = app.add_subcommand("evaluate", "Score translations against held-out truth");
    se->add_option("--data", ev.data, "Dataset directory")->required();
    se->add_option("--ckpt", ev.ckpt, "Trained checkpoint to evaluate");
    se->add_option("--pred", ev.pred, "Predictions directory from translate");
    se->add_flag("--oracle", ev.oracle, "Evaluate the ground-truth reference translator");
    se->add_option("--out", ev.out, "Output directory for eval reports")->required();
    se->add_option("--split", ev.split, "Window split: train, val, test, all");
    se->add_option("--metric-windows", ev.metric_windows, "Comma-separated metric windows (s)");
    se->add_option("--window-s", ev.window_s, "Model window length for oracle evaluation (s)");
    se->add_option("--train-frac", ev.train_frac, "Training fraction of windows");
    se->add_option("--val-frac", ev.val_frac, "Validation fraction of windows");
    se->add_flag("--force", ev.force, "Overwrite an existing output directory");

    InspectArgs ih, ia, ig;
    CLI::App* sh = app.add_subcommand("inspect-hrf", "Export learned response-kernel parameters");
    sh->add_option("--ckpt", ih.ckpt, "Trained checkpoint")->required();
    sh->add_option("--out", ih.out, "Output directory")->required();
    sh->add_flag("--force", ih.force, "Overwrite an existing output directory");
    CLI::App* sa = app.add_subcommand("inspect-attention", "Export wavelet band attention");
    sa->add_option("--ckpt", ia.ckpt, "Trained checkpoint")->required();
    sa->add_option("--out", ia.out, "Output directory")->required();
    sa->add_flag("--force", ia.force, "Overwrite an existing output directory");
    CLI::App* sgr = app.add_subcommand("inspect-graph", "Export the frozen output graph");
    sgr->add_option("--ckpt", ig.ckpt, "Trained checkpoint")->required();
    sgr->add_option("--out", ig.out, "Output directory")->required();
    sgr->add_flag("--force", ig.force, "Overwrite an existing output directory");

    AblateArgs ab;
    CLI::App* sb = app.add_subcommand("ablate", "Run a grid of architecture variants");
    sb->add_option("--data", ab.data, "Dataset directory");
    sb->add_option("--config", ab.config, "Ablation config JSON (cases + train)")->required();
    sb->add_option("--out", ab.out, "Output directory");
    sb->add_option("--seed", ab.seed, "Override the training seed");
    sb->add_option("--metric-window", ab.metric_window, "Metric window for test scoring (s)");
    sb->add_option("--train-frac", ab.train_frac, "Training fraction of windows");
    sb->add_option("--val-frac", ab.val_frac, "Validation fraction of windows");
    sb->add_flag("--force", ab.force, "Overwrite an existing output directory");
    sb->add_flag("--print-config", ab.print, "Print the effective config and exit");

    try {
        app.parse(argc, argv);
        if (sg->parsed()) return cmd_gen_data(gen);
        if (st->parsed()) return cmd_train(tr);
        if (sx->parsed()) return cmd_translate(tl);
        if (se->parsed()) return cmd_evaluate(ev);
        if (sh->parsed()) return cmd_inspect_hrf(ih);
        if (sa->parsed()) return cmd_inspect_attention(ia);
        if (sgr->parsed()) return cmd_inspect_graph(ig);
        if (sb->parsed()) return cmd_ablate(ab);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
