#include "samba/synth.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <set>

#include "samba/common.hpp"
#include "samba/hrf.hpp"
#include "samba/io.hpp"
#include "samba/rng.hpp"

namespace samba {

using nlohmann::json;

namespace {

constexpr int kDatasetVersion = 1;

bool near_integer(double v) { return std::abs(v - std::round(v)) < 1e-9; }

std::vector<double> zscore(std::vector<double> v) {
    const double n = static_cast<double>(v.size());
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / n);
    if (sd == 0.0) {
        for (double& x : v) x = 0.0;
        return v;
    }
    for (double& x : v) x = (x - mean) / sd;
    return v;
}

// Resonant AR(2) with a warmup span, normalized to unit variance.
std::vector<double> ar2_series(Rng& rng, double freq_hz, double rho, double rate_hz,
                               std::size_t length) {
    const double omega = 2.0 * 3.141592653589793 * freq_hz / rate_hz;
    const double phi1 = 2.0 * rho * std::cos(omega);
    const double phi2 = -rho * rho;
    const std::size_t warmup = 2000;
    std::vector<double> x(length + warmup, 0.0);
    for (std::size_t i = 2; i < x.size(); ++i)
        x[i] = phi1 * x[i - 1] + phi2 * x[i - 2] + rng.normal();
    std::vector<double> out(x.begin() + warmup, x.end());
    return zscore(std::move(out));
}

json config_to_json(const SynthConfig& c) {
    json j;
    j["sources"] = c.sources;
    j["targets"] = c.targets;
    j["regions"] = c.regions;
    j["subjects"] = c.subjects;
    j["duration_s"] = c.duration_s;
    j["electro_rate_hz"] = c.electro_rate_hz;
    j["tr_s"] = c.tr_s;
    j["segment_s"] = c.segment_s;
    j["classes"] = c.classes;
    j["electro_noise_sd"] = c.electro_noise_sd;
    j["hemo_noise_sd"] = c.hemo_noise_sd;
    j["mixing_leak"] = c.mixing_leak;
    j["region_detune"] = c.region_detune;
    j["hrf_duration_s"] = c.hrf_duration_s;
    j["seed"] = c.seed;
    j["components"] = json::array();
    for (const auto& comp : c.components)
        j["components"].push_back(
            {{"freq_hz", comp.freq_hz}, {"rho", comp.rho}, {"class_amps", comp.class_amps}});
    j["region_theta"] = json::array();
    for (const auto& th : c.region_theta) j["region_theta"].push_back(th);
    return j;
}

SynthConfig config_from_json(const json& j) {
    SynthConfig c = default_synth_config();
    for (const auto& [key, value] : j.items()) {
        if (key == "sources") c.sources = value.get<std::size_t>();
        else if (key == "targets") c.targets = value.get<std::size_t>();
        else if (key == "regions") c.regions = value.get<std::size_t>();
        else if (key == "subjects") c.subjects = value.get<std::size_t>();
        else if (key == "duration_s") c.duration_s = value.get<double>();
        else if (key == "electro_rate_hz") c.electro_rate_hz = value.get<double>();
        else if (key == "tr_s") c.tr_s = value.get<double>();
        else if (key == "segment_s") c.segment_s = value.get<double>();
        else if (key == "classes") c.classes = value.get<std::size_t>();
        else if (key == "electro_noise_sd") c.electro_noise_sd = value.get<double>();
        else if (key == "hemo_noise_sd") c.hemo_noise_sd = value.get<double>();
        else if (key == "mixing_leak") c.mixing_leak = value.get<double>();
        else if (key == "region_detune") c.region_detune = value.get<double>();
        else if (key == "hrf_duration_s") c.hrf_duration_s = value.get<double>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "components") {
            c.components.clear();
            for (const auto& comp : value) {
                LatentComponent lc;
                lc.freq_hz = comp.at("freq_hz").get<double>();
                lc.rho = comp.at("rho").get<double>();
                lc.class_amps = comp.at("class_amps").get<std::vector<double>>();
                c.components.push_back(std::move(lc));
            }
        } else if (key == "region_theta") {
            c.region_theta.clear();
            for (const auto& th : value) {
                if (th.size() != 6)
                    throw ConfigError("synth config: region_theta entries need 6 values");
                std::array<double, 6> a{};
                for (std::size_t i = 0; i < 6; ++i) a[i] = th[i].get<double>();
                c.region_theta.push_back(a);
            }
        } else {
            throw ConfigError("synth config: unknown key '" + key + "'");
        }
    }
    return c;
}

}  // namespace

SynthConfig synth_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("synth config is not valid JSON: " + std::string(e.what()));
    }
    try {
        return config_from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("synth config is malformed: " + std::string(e.what()));
    }
}

std::string synth_config_to_json_text(const SynthConfig& config) {
    return config_to_json(config).dump(2) + "\n";
}

void SynthConfig::validate() const {
    if (regions == 0 || sources < regions || targets < regions)
        throw ConfigError("synth config: need regions <= sources and regions <= targets");
    if (targets < sources) throw ConfigError("synth config: targets must be >= sources");
    if (subjects == 0) throw ConfigError("synth config: need at least one subject");
    if (classes == 0) throw ConfigError("synth config: need at least one class");
    if (electro_rate_hz <= 0 || tr_s <= 0 || duration_s <= 0 || segment_s <= 0 ||
        hrf_duration_s <= 0)
        throw ConfigError("synth config: rates and durations must be positive");
    if (!near_integer(electro_rate_hz * tr_s))
        throw ConfigError("synth config: electro_rate_hz * tr_s must be an integer sample stride");
    if (!near_integer(duration_s / tr_s) || !near_integer(duration_s * electro_rate_hz))
        throw ConfigError("synth config: duration must align with both sampling grids");
    if (!near_integer(duration_s / segment_s))
        throw ConfigError("synth config: duration must hold a whole number of segments");
    if (!near_integer(segment_s / tr_s) || !near_integer(segment_s * electro_rate_hz))
        throw ConfigError("synth config: segment length must align with both sampling grids");
    if (components.empty()) throw ConfigError("synth config: need at least one latent component");
    for (const auto& comp : components) {
        if (comp.class_amps.size() != classes)
            throw ConfigError("synth config: each component needs one amplitude per class");
        if (comp.freq_hz <= 0 || comp.freq_hz >= electro_rate_hz / 2)
            throw ConfigError("synth config: component frequency outside (0, Nyquist)");
        if (comp.rho <= 0 || comp.rho >= 1)
            throw ConfigError("synth config: component rho must lie in (0, 1)");
    }
    if (mixing_leak < 0 || mixing_leak >= 1)
        throw ConfigError("synth config: mixing_leak must lie in [0, 1)");
    if (region_detune < 0 || region_detune >= 1)
        throw ConfigError("synth config: region_detune must lie in [0, 1)");
    if (region_theta.size() != regions)
        throw ConfigError("synth config: need one ground-truth parameter row per region");
}

std::vector<std::size_t> SynthConfig::source_regions() const {
    std::vector<std::size_t> r(sources);
    for (std::size_t n = 0; n < sources; ++n) r[n] = n % regions;
    return r;
}

std::vector<std::size_t> SynthConfig::target_regions() const {
    std::vector<std::size_t> r(targets);
    for (std::size_t m = 0; m < targets; ++m) r[m] = m % regions;
    return r;
}

RegionMap SynthConfig::region_map() const {
    const auto src = source_regions();
    const auto tgt = target_regions();
    RegionMap map;
    map.source_count = sources;
    for (std::size_t m = 0; m < targets; ++m) {
        std::vector<std::size_t> chi;
        for (std::size_t n = 0; n < sources; ++n)
            if (src[n] == tgt[m]) chi.push_back(n);
        map.sources.push_back(std::move(chi));
        map.region_labels.push_back("region" + std::to_string(tgt[m]));
    }
    map.validate();
    return map;
}

SynthConfig default_synth_config() {
    SynthConfig c;
    c.duration_s = 1792.0;  // 28 windows of 64 s per subject
    c.components = {
        {0.06, 0.985, {1.00, 1.25, 1.00, 1.25, 1.00, 1.25, 1.00, 1.25}},
        {0.10, 0.985, {0.80, 0.80, 1.10, 1.10, 0.80, 0.80, 1.10, 1.10}},
        {0.16, 0.985, {0.60, 0.60, 0.60, 0.60, 0.90, 0.90, 0.90, 0.90}},
    };
    c.region_theta = {
        {1.0, 3.50, 1.00, 0.30, 14.0, 1.0},  // early peak near 3.5 s
        {1.0, 6.25, 0.80, 0.35, 15.0, 1.0},  // peak near 5 s
        {1.0, 7.00, 1.00, 0.40, 16.0, 1.0},  // peak near 7 s
        {1.0, 7.50, 1.20, 0.30, 17.0, 1.0},  // late peak near 9 s
    };
    return c;
}

SynthConfig spectral_synth_config() {
    SynthConfig c = default_synth_config();
    c.electro_rate_hz = 32.0;
    c.tr_s = 1.0;
    c.duration_s = 3840.0;  // 60 windows of 64 s per subject
    c.electro_noise_sd = 0.25;
    // A 5-level decomposition at 32 Hz puts the approximation band at [0, 0.5] Hz
    // and the lowest detail band at [0.5, 1] Hz; every component lives there,
    // with class-coded amplitude bits spread over the three resonances.
    c.components = {
        {0.22, 0.96, {1.0, 1.8, 1.0, 1.8, 1.0, 1.8, 1.0, 1.8}},
        {0.75, 0.96, {0.5, 0.5, 1.5, 1.5, 0.5, 0.5, 1.5, 1.5}},
        {0.38, 0.96, {0.6, 0.6, 0.6, 0.6, 1.5, 1.5, 1.5, 1.5}},
    };
    return c;
}

Dataset generate(const SynthConfig& config) {
    config.validate();
    const std::size_t t_len = config.electro_len();
    const std::size_t h_len = config.hemo_len();
    const std::size_t stride = config.stride();
    const std::size_t seg_count = config.segment_count();
    const std::size_t seg_samples = t_len / seg_count;
    const auto src_regions = config.source_regions();
    const auto tgt_regions = config.target_regions();
    const double dt = 1.0 / config.electro_rate_hz;

    Dataset ds;
    ds.config = config;

    // Ground-truth parameter rows and mixing are shared across subjects.
    std::vector<double> th_src(config.sources * 6), th_tgt(config.targets * 6);
    for (std::size_t n = 0; n < config.sources; ++n)
        for (std::size_t k = 0; k < 6; ++k) th_src[n * 6 + k] = config.region_theta[src_regions[n]][k];
    for (std::size_t m = 0; m < config.targets; ++m)
        for (std::size_t k = 0; k < 6; ++k) th_tgt[m * 6 + k] = config.region_theta[tgt_regions[m]][k];
    std::vector<double> mix(config.sources * config.regions, config.mixing_leak);
    for (std::size_t n = 0; n < config.sources; ++n) mix[n * config.regions + src_regions[n]] = 1.0;
    ds.truth.theta_sources = Tensor::leaf(th_src, config.sources, 6);
    ds.truth.theta_targets = Tensor::leaf(th_tgt, config.targets, 6);
    ds.truth.mixing = Tensor::leaf(mix, config.sources, config.regions);

    NoGradGuard no_grad;
    std::vector<HRFKernel> target_kernels;
    target_kernels.reserve(config.targets);
    for (std::size_t m = 0; m < config.targets; ++m) {
        Tensor theta = slice_rows(ds.truth.theta_targets, m, m + 1);
        target_kernels.push_back(sample_hrf(theta, dt, config.hrf_duration_s));
    }

    Rng master(config.seed);
    for (std::size_t s = 0; s < config.subjects; ++s) {
        Rng subject_rng = master.fork(1000 + s);

        // Balanced labels: each consecutive block of `classes` segments holds a
        // seeded permutation of all classes.
        std::vector<int> labels(seg_count);
        Rng label_rng = subject_rng.fork(555);
        std::vector<int> block(config.classes);
        std::iota(block.begin(), block.end(), 0);
        for (std::size_t seg = 0; seg < seg_count; ++seg) {
            if (seg % config.classes == 0) label_rng.shuffle(block);
            labels[seg] = block[seg % config.classes];
        }

        // Per-region latents: continuous component series, amplitude-switched by
        // the active class so segment changes introduce no transients.
        std::vector<double> latents(config.regions * t_len, 0.0);
        for (std::size_t r = 0; r < config.regions; ++r) {
            const double spread = config.regions > 1
                                      ? 2.0 * static_cast<double>(r) / (config.regions - 1.0) - 1.0
                                      : 0.0;
            const double detune = 1.0 + config.region_detune * spread;
            for (std::size_t j = 0; j < config.components.size(); ++j) {
                Rng series_rng = subject_rng.fork(10000 + r * 100 + j);
                const auto& comp = config.components[j];
                std::vector<double> series =
                    ar2_series(series_rng, comp.freq_hz * detune, comp.rho, config.electro_rate_hz, t_len);
                for (std::size_t i = 0; i < t_len; ++i) {
                    const std::size_t seg = std::min(i / seg_samples, seg_count - 1);
                    latents[r * t_len + i] += comp.class_amps[labels[seg]] * series[i];
                }
            }
        }

        SubjectRecording rec;
        rec.labels = labels;

        std::vector<double> electro(config.sources * t_len);
        for (std::size_t n = 0; n < config.sources; ++n) {
            Rng noise_rng = subject_rng.fork(20000 + n);
            std::vector<double> row(t_len, 0.0);
            for (std::size_t r = 0; r < config.regions; ++r) {
                const double a = mix[n * config.regions + r];
                for (std::size_t i = 0; i < t_len; ++i) row[i] += a * latents[r * t_len + i];
            }
            for (std::size_t i = 0; i < t_len; ++i) row[i] += config.electro_noise_sd * noise_rng.normal();
            row = zscore(std::move(row));
            std::copy(row.begin(), row.end(), electro.begin() + n * t_len);
        }
        rec.electro = Tensor::leaf(std::move(electro), config.sources, t_len);

        std::vector<double> hemo(config.targets * h_len);
        for (std::size_t m = 0; m < config.targets; ++m) {
            Rng noise_rng = subject_rng.fork(30000 + m);
            const std::size_t r = tgt_regions[m];
            Tensor latent_row =
                Tensor::leaf({latents.begin() + r * t_len, latents.begin() + (r + 1) * t_len}, 1, t_len);
            Tensor smoothed = smooth(latent_row, target_kernels[m], dt);
            const auto& sv = smoothed.values();
            std::vector<double> row(h_len);
            for (std::size_t k = 0; k < h_len; ++k) {
                double acc = 0.0;
                for (std::size_t i = 0; i < stride; ++i) acc += sv[k * stride + i];
                row[k] = acc / static_cast<double>(stride) + config.hemo_noise_sd * noise_rng.normal();
            }
            row = zscore(std::move(row));
            std::copy(row.begin(), row.end(), hemo.begin() + m * h_len);
        }
        rec.hemo = Tensor::leaf(std::move(hemo), config.targets, h_len);

        ds.truth.latents.push_back(Tensor::leaf(std::move(latents), config.regions, t_len));
        ds.subjects.push_back(std::move(rec));
    }
    return ds;
}

namespace {

void save_matrix(const std::filesystem::path& dir, json& files, const std::string& name,
                 const Tensor& t) {
    write_f64(dir / (name + ".f64"), t.values());
    files[name] = {{"rows", t.rows()}, {"cols", t.cols()}, {"checksum", checksum_hex(t.values())}};
}

Tensor load_matrix(const std::filesystem::path& dir, const json& files, const std::string& name) {
    if (!files.contains(name)) throw DataError("dataset manifest: missing file entry '" + name + "'");
    const json& meta = files.at(name);
    const auto rows = meta.at("rows").get<std::size_t>();
    const auto cols = meta.at("cols").get<std::size_t>();
    std::vector<double> values = read_f64(dir / (name + ".f64"), rows * cols);
    const std::string sum = checksum_hex(values);
    if (sum != meta.at("checksum").get<std::string>())
        throw DataError("dataset file " + name + ".f64 is corrupt (checksum mismatch)");
    return Tensor::leaf(std::move(values), rows, cols);
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format_version"] = kDatasetVersion;
    manifest["config"] = config_to_json(dataset.config);
    json files = json::object();
    json subjects = json::array();
    for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
        const auto& rec = dataset.subjects[s];
        save_matrix(dir, files, "subject" + std::to_string(s) + "_electro", rec.electro);
        save_matrix(dir, files, "subject" + std::to_string(s) + "_hemo", rec.hemo);
        save_matrix(dir, files, "latents" + std::to_string(s), dataset.truth.latents[s]);
        subjects.push_back({{"labels", rec.labels}});
    }
    save_matrix(dir, files, "theta_sources", dataset.truth.theta_sources);
    save_matrix(dir, files, "theta_targets", dataset.truth.theta_targets);
    save_matrix(dir, files, "mixing", dataset.truth.mixing);
    manifest["subjects"] = subjects;
    manifest["files"] = files;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw DataError("dataset manifest is not valid JSON: " + std::string(e.what()));
    }
    const int version = manifest.at("format_version").get<int>();
    if (version != kDatasetVersion)
        throw DataError("dataset format version " + std::to_string(version) +
                        " is not supported (expected " + std::to_string(kDatasetVersion) + ")");
    Dataset ds;
    try {
        ds.config = config_from_json(manifest.at("config"));
        ds.config.validate();
        const json& files = manifest.at("files");
        const json& subjects = manifest.at("subjects");
        for (std::size_t s = 0; s < subjects.size(); ++s) {
            SubjectRecording rec;
            rec.electro = load_matrix(dir, files, "subject" + std::to_string(s) + "_electro");
            rec.hemo = load_matrix(dir, files, "subject" + std::to_string(s) + "_hemo");
            rec.labels = subjects[s].at("labels").get<std::vector<int>>();
            ds.truth.latents.push_back(load_matrix(dir, files, "latents" + std::to_string(s)));
            ds.subjects.push_back(std::move(rec));
        }
        ds.truth.theta_sources = load_matrix(dir, files, "theta_sources");
        ds.truth.theta_targets = load_matrix(dir, files, "theta_targets");
        ds.truth.mixing = load_matrix(dir, files, "mixing");
    } catch (const json::exception& e) {
        throw DataError("dataset manifest is malformed: " + std::string(e.what()));
    }
    if (ds.subjects.size() != ds.config.subjects)
        throw DataError("dataset manifest lists " + std::to_string(ds.subjects.size()) +
                        " subjects, config expects " + std::to_string(ds.config.subjects));
    return ds;
}

WindowSet split_windows(const Dataset& dataset, double window_seconds, double train_frac,
                        double val_frac) {
    const SynthConfig& c = dataset.config;
    if (window_seconds <= 0) throw ConfigError("split: window length must be positive");
    if (!near_integer(window_seconds * c.electro_rate_hz) || !near_integer(window_seconds / c.tr_s))
        throw ConfigError("split: window length must align with both sampling grids");
    const double per_segment = c.segment_s / window_seconds;
    if (!near_integer(per_segment) || per_segment < 1.0)
        throw ConfigError("split: segment length must be a whole number of windows");
    if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1)
        throw ConfigError("split: invalid train/val fractions");

    const auto t_win = static_cast<std::size_t>(window_seconds * c.electro_rate_hz + 0.5);
    const auto h_win = static_cast<std::size_t>(window_seconds / c.tr_s + 0.5);
    const auto windows_per_segment = static_cast<std::size_t>(per_segment + 0.5);

    WindowSet out;
    NoGradGuard no_grad;
    for (std::size_t s = 0; s < dataset.subjects.size(); ++s) {
        const auto& rec = dataset.subjects[s];
        const std::size_t count = rec.electro.cols() / t_win;
        const std::size_t n_train = static_cast<std::size_t>(count * train_frac);
        const std::size_t n_val = static_cast<std::size_t>(count * val_frac);
        for (std::size_t w = 0; w < count; ++w) {
            Window win;
            win.electro = slice_cols(rec.electro, w * t_win, (w + 1) * t_win);
            win.hemo = slice_cols(rec.hemo, w * h_win, (w + 1) * h_win);
            win.label = rec.labels[std::min(w / windows_per_segment, rec.labels.size() - 1)];
            win.subject = s;
            win.start = w * t_win;
            auto& bucket = w < n_train ? out.train : (w < n_train + n_val ? out.val : out.test);
            bucket.push_back(std::move(win));
        }
    }
    return out;
}

}  // namespace samba
