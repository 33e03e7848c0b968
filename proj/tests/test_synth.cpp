#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "samba/common.hpp"
#include "samba/hrf.hpp"
#include "samba/io.hpp"
#include "samba/synth.hpp"

using namespace samba;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("samba_synth_" + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Small, fast variant of the translation preset.
SynthConfig tiny_config() {
    SynthConfig c = default_synth_config();
    c.sources = 4;
    c.targets = 6;
    c.regions = 2;
    c.subjects = 2;
    c.duration_s = 256.0;
    c.region_theta = {{1.0, 4.0, 1.0, 0.3, 14.0, 1.0}, {1.0, 7.0, 1.0, 0.35, 16.0, 1.0}};
    return c;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
    const auto& v = t.values();
    return {v.begin() + r * t.cols(), v.begin() + (r + 1) * t.cols()};
}

std::vector<double> zscore(std::vector<double> v) {
    const double n = static_cast<double>(v.size());
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / n);
    for (double& x : v) x = sd == 0.0 ? 0.0 : (x - mean) / sd;
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double autocorr(const std::vector<double>& v, std::size_t lag) {
    const std::size_t n = v.size();
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) den += (v[i] - mean) * (v[i] - mean);
    for (std::size_t i = lag; i < n; ++i) num += (v[i] - mean) * (v[i - lag] - mean);
    return num / den;
}

// Two-sample Kolmogorov-Smirnov distance.
double ks_distance(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) ++i;
        else ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

// Power in [f_lo, f_hi) Hz via a direct DFT over the needed bins only.
double band_power(const std::vector<double>& seg, double rate_hz, double f_lo, double f_hi) {
    const std::size_t n = seg.size();
    const double df = rate_hz / static_cast<double>(n);
    double power = 0.0;
    for (std::size_t k = 1; k <= n / 2; ++k) {
        const double f = static_cast<double>(k) * df;
        if (f < f_lo || f >= f_hi) continue;
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * 3.141592653589793 * static_cast<double>(k * t) / static_cast<double>(n);
            re += seg[t] * std::cos(ang);
            im += seg[t] * std::sin(ang);
        }
        power += re * re + im * im;
    }
    return power;
}

}  // namespace

TEST_CASE("presets validate and expose consistent geometry") {
    for (SynthConfig c : {default_synth_config(), spectral_synth_config(), tiny_config()}) {
        c.validate();
        CHECK(c.electro_len() == c.hemo_len() * c.stride());
        CHECK(c.electro_len() % c.segment_count() == 0);
        for (const auto& comp : c.components) CHECK(comp.class_amps.size() == c.classes);
    }
    CHECK(default_synth_config().stride() == 400);
    CHECK(spectral_synth_config().stride() == 32);
}

TEST_CASE("invalid configs are rejected") {
    auto broken = [](auto mutate) {
        SynthConfig c = tiny_config();
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    broken([](SynthConfig& c) { c.duration_s = 250.0; });           // not whole segments
    broken([](SynthConfig& c) { c.tr_s = 0.3; });                   // fractional sample stride
    broken([](SynthConfig& c) { c.targets = 2; });                  // fewer targets than sources
    broken([](SynthConfig& c) { c.regions = 5; });                  // more regions than sources
    broken([](SynthConfig& c) { c.components[0].class_amps.pop_back(); });
    broken([](SynthConfig& c) { c.components[0].freq_hz = 150.0; });  // above Nyquist
    broken([](SynthConfig& c) { c.components[0].rho = 1.0; });
    broken([](SynthConfig& c) { c.region_theta.pop_back(); });
    broken([](SynthConfig& c) { c.components.clear(); });
    broken([](SynthConfig& c) { c.subjects = 0; });
}

TEST_CASE("round-robin region assignment and source-to-target map") {
    const SynthConfig c = default_synth_config();
    CHECK(c.source_regions() == std::vector<std::size_t>{0, 1, 2, 3, 0, 1});
    CHECK(c.target_regions()[0] == 0);
    CHECK(c.target_regions()[7] == 3);
    const RegionMap map = c.region_map();
    CHECK(map.source_count == 6);
    CHECK(map.sources.size() == 20);
    CHECK(map.sources[0] == std::vector<std::size_t>{0, 4});
    CHECK(map.sources[1] == std::vector<std::size_t>{1, 5});
    CHECK(map.sources[2] == std::vector<std::size_t>{2});
    CHECK(map.region_labels[4] == "region0");
}

TEST_CASE("generation is deterministic per seed and shaped as configured") {
    SynthConfig c = tiny_config();
    const Dataset a = generate(c);
    const Dataset b = generate(c);
    c.seed = 1;
    const Dataset d = generate(c);

    REQUIRE(a.subjects.size() == 2);
    CHECK(a.subjects[0].electro.rows() == 4);
    CHECK(a.subjects[0].electro.cols() == 256 * 200);
    CHECK(a.subjects[0].hemo.rows() == 6);
    CHECK(a.subjects[0].hemo.cols() == 128);
    CHECK(a.subjects[0].labels.size() == 4);
    CHECK(a.truth.latents[0].rows() == 2);
    CHECK(a.truth.theta_sources.rows() == 4);
    CHECK(a.truth.theta_targets.rows() == 6);
    CHECK(a.truth.mixing.rows() == 4);
    CHECK(a.truth.mixing.cols() == 2);

    CHECK(a.subjects[0].electro.values() == b.subjects[0].electro.values());
    CHECK(a.subjects[1].hemo.values() == b.subjects[1].hemo.values());
    CHECK(a.truth.latents[1].values() == b.truth.latents[1].values());
    CHECK(a.subjects[0].labels == b.subjects[0].labels);
    CHECK(a.subjects[0].electro.values() != d.subjects[0].electro.values());
    CHECK(a.subjects[0].electro.values() != a.subjects[1].electro.values());
}

TEST_CASE("every block of `classes` segments is a balanced permutation") {
    SynthConfig c = tiny_config();
    c.duration_s = 2048.0;  // 32 segments, 4 full blocks
    const Dataset ds = generate(c);
    for (const auto& rec : ds.subjects) {
        REQUIRE(rec.labels.size() == 32);
        for (std::size_t block = 0; block + 8 <= rec.labels.size(); block += 8) {
            std::vector<int> got(rec.labels.begin() + block, rec.labels.begin() + block + 8);
            std::sort(got.begin(), got.end());
            CHECK(got == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
        }
    }
}

TEST_CASE("rows are z-scored") {
    const Dataset ds = generate(tiny_config());
    for (const auto* t : {&ds.subjects[0].electro, &ds.subjects[0].hemo}) {
        for (std::size_t r = 0; r < t->rows(); ++r) {
            const auto row = row_of(*t, r);
            const double n = static_cast<double>(row.size());
            const double mean = std::accumulate(row.begin(), row.end(), 0.0) / n;
            double ss = 0.0;
            for (double x : row) ss += (x - mean) * (x - mean);
            CHECK(std::abs(mean) < 1e-12);
            CHECK(std::abs(std::sqrt(ss / n) - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("noiseless recordings match an oracle recomputed from the truth sidecar") {
    SynthConfig c = tiny_config();
    c.electro_noise_sd = 0.0;
    c.hemo_noise_sd = 0.0;
    c.subjects = 1;
    const Dataset ds = generate(c);
    const auto& rec = ds.subjects[0];
    const auto src_regions = c.source_regions();
    const auto tgt_regions = c.target_regions();
    const std::size_t t_len = c.electro_len();
    const double dt = 1.0 / c.electro_rate_hz;

    // Electro row n = zscore(sum_r mixing[n][r] * latent_r).
    for (std::size_t n = 0; n < c.sources; ++n) {
        std::vector<double> expect(t_len, 0.0);
        for (std::size_t r = 0; r < c.regions; ++r) {
            const double a = ds.truth.mixing.values()[n * c.regions + r];
            CHECK(a == (r == src_regions[n] ? 1.0 : c.mixing_leak));
            const auto lat = row_of(ds.truth.latents[0], r);
            for (std::size_t i = 0; i < t_len; ++i) expect[i] += a * lat[i];
        }
        CHECK(max_abs_diff(zscore(std::move(expect)), row_of(rec.electro, n)) < 1e-10);
    }

    // Hemo row m = zscore(binmean(response-smoothed latent of its region)).
    NoGradGuard no_grad;
    for (std::size_t m = 0; m < c.targets; ++m) {
        Tensor theta = slice_rows(ds.truth.theta_targets, m, m + 1);
        for (std::size_t k = 0; k < 6; ++k)
            CHECK(theta.values()[k] == c.region_theta[tgt_regions[m]][k]);
        const HRFKernel kernel = sample_hrf(theta, dt, c.hrf_duration_s);
        Tensor lat = Tensor::leaf(row_of(ds.truth.latents[0], tgt_regions[m]), 1, t_len);
        const Tensor smoothed = smooth(lat, kernel, dt);
        std::vector<double> binned(c.hemo_len(), 0.0);
        for (std::size_t k = 0; k < binned.size(); ++k) {
            for (std::size_t i = 0; i < c.stride(); ++i)
                binned[k] += smoothed.values()[k * c.stride() + i];
            binned[k] /= static_cast<double>(c.stride());
        }
        CHECK(max_abs_diff(zscore(std::move(binned)), row_of(rec.hemo, m)) < 1e-10);
    }
}

TEST_CASE("doubling every class amplitude doubles latents and leaves z-scored data unchanged") {
    SynthConfig c = tiny_config();
    c.electro_noise_sd = 0.0;
    c.hemo_noise_sd = 0.0;
    c.subjects = 1;
    SynthConfig doubled = c;
    for (auto& comp : doubled.components)
        for (double& a : comp.class_amps) a *= 2.0;
    const Dataset da = generate(c);
    const Dataset db = generate(doubled);
    const auto& la = da.truth.latents[0].values();
    const auto& lb = db.truth.latents[0].values();
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(lb[i] == doctest::Approx(2.0 * la[i]).epsilon(1e-14));
    CHECK(max_abs_diff(da.subjects[0].electro.values(), db.subjects[0].electro.values()) < 1e-12);
    CHECK(max_abs_diff(da.subjects[0].hemo.values(), db.subjects[0].hemo.values()) < 1e-12);
}

TEST_CASE("hemodynamic rows are smoother than electro rows at matched lag") {
    const SynthConfig c = tiny_config();
    const Dataset ds = generate(c);
    double hemo_ac = 0.0, electro_ac = 0.0;
    for (std::size_t m = 0; m < c.targets; ++m) hemo_ac += autocorr(row_of(ds.subjects[0].hemo, m), 1);
    for (std::size_t n = 0; n < c.sources; ++n)
        electro_ac += autocorr(row_of(ds.subjects[0].electro, n), c.stride());
    hemo_ac /= static_cast<double>(c.targets);
    electro_ac /= static_cast<double>(c.sources);
    CHECK(hemo_ac > electro_ac + 0.2);
}

TEST_CASE("class pairs separate in per-segment band powers") {
    SynthConfig c = spectral_synth_config();
    c.duration_s = 2048.0;  // 32 segments per subject, 96 total
    c.targets = 8;
    const Dataset ds = generate(c);
    const auto seg_samples = static_cast<std::size_t>(c.segment_s * c.electro_rate_hz + 0.5);

    // log power per segment in the two informative bands, pooled over subjects.
    std::vector<std::vector<double>> low(c.classes), high(c.classes);
    for (const auto& rec : ds.subjects) {
        const auto row = row_of(rec.electro, 0);
        for (std::size_t seg = 0; seg * seg_samples < row.size(); ++seg) {
            std::vector<double> chunk(row.begin() + seg * seg_samples,
                                      row.begin() + (seg + 1) * seg_samples);
            const int label = rec.labels[seg];
            low[label].push_back(std::log(band_power(chunk, c.electro_rate_hz, 0.0, 0.5)));
            high[label].push_back(std::log(band_power(chunk, c.electro_rate_hz, 0.5, 1.0)));
        }
    }
    for (std::size_t a = 0; a < c.classes; ++a) {
        REQUIRE(low[a].size() >= 8);
        for (std::size_t b = a + 1; b < c.classes; ++b) {
            const double d = std::max(ks_distance(low[a], low[b]), ks_distance(high[a], high[b]));
            CAPTURE(a);
            CAPTURE(b);
            CHECK(d > 0.2);
        }
    }
}

TEST_CASE("datasets survive a save/load round trip bit-exactly") {
    TempDir dir;
    SynthConfig c = tiny_config();
    c.seed = 7;
    const Dataset ds = generate(c);
    save_dataset(ds, dir.path);
    const Dataset back = load_dataset(dir.path);

    CHECK(back.config.seed == 7);
    CHECK(back.config.sources == c.sources);
    CHECK(back.config.region_theta == c.region_theta);
    CHECK(back.config.components[1].class_amps == c.components[1].class_amps);
    REQUIRE(back.subjects.size() == ds.subjects.size());
    for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
        CHECK(back.subjects[s].electro.values() == ds.subjects[s].electro.values());
        CHECK(back.subjects[s].hemo.values() == ds.subjects[s].hemo.values());
        CHECK(back.subjects[s].labels == ds.subjects[s].labels);
        CHECK(back.truth.latents[s].values() == ds.truth.latents[s].values());
    }
    CHECK(back.truth.theta_sources.values() == ds.truth.theta_sources.values());
    CHECK(back.truth.theta_targets.values() == ds.truth.theta_targets.values());
    CHECK(back.truth.mixing.values() == ds.truth.mixing.values());
}

TEST_CASE("corrupt or foreign dataset directories are rejected") {
    TempDir dir;
    SynthConfig c = tiny_config();
    c.subjects = 1;
    c.duration_s = 64.0;
    save_dataset(generate(c), dir.path);
    REQUIRE_NOTHROW(load_dataset(dir.path));

    SUBCASE("flipping one byte of a matrix fails the checksum") {
        std::fstream f(dir.path / "subject0_electro.f64",
                       std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(100);
        f.put(static_cast<char>(0x5A));
        f.close();
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }
    SUBCASE("truncating a matrix fails the size check") {
        fs::resize_file(dir.path / "latents0.f64", 64);
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }
    SUBCASE("unknown format versions are rejected") {
        std::string manifest = read_text(dir.path / "manifest.json");
        const auto pos = manifest.find("\"format_version\": 1");
        REQUIRE(pos != std::string::npos);
        manifest.replace(pos, 19, "\"format_version\": 2");
        write_text(dir.path / "manifest.json", manifest);
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }
    SUBCASE("missing manifest entries are reported") {
        std::string manifest = read_text(dir.path / "manifest.json");
        const auto pos = manifest.find("theta_sources");
        REQUIRE(pos != std::string::npos);
        manifest.replace(pos, 13, "theta_sourceZ");
        write_text(dir.path / "manifest.json", manifest);
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }
    SUBCASE("garbage manifests are data errors") {
        write_text(dir.path / "manifest.json", "not json {");
        CHECK_THROWS_AS(load_dataset(dir.path), DataError);
    }
}

TEST_CASE("config json round trips, accepts partial overrides, rejects unknown keys") {
    const SynthConfig c = spectral_synth_config();
    const SynthConfig back = synth_config_from_json_text(synth_config_to_json_text(c));
    CHECK(back.electro_rate_hz == c.electro_rate_hz);
    CHECK(back.tr_s == c.tr_s);
    CHECK(back.duration_s == c.duration_s);
    CHECK(back.components.size() == c.components.size());
    CHECK(back.components[2].freq_hz == c.components[2].freq_hz);
    CHECK(back.region_theta == c.region_theta);

    const SynthConfig partial = synth_config_from_json_text(R"({"sources": 5, "seed": 42})");
    CHECK(partial.sources == 5);
    CHECK(partial.seed == 42);
    CHECK(partial.targets == default_synth_config().targets);
    CHECK(partial.duration_s == default_synth_config().duration_s);

    CHECK_THROWS_AS(synth_config_from_json_text(R"({"sauces": 5})"), ConfigError);
    CHECK_THROWS_AS(synth_config_from_json_text("[1,2]"), ConfigError);
    CHECK_THROWS_AS(synth_config_from_json_text("{\"region_theta\": [[1,2]]}"), ConfigError);
}

TEST_CASE("window split is contiguous per subject with aligned labels") {
    SynthConfig c = tiny_config();  // 4 segments of 64 s per subject
    const Dataset ds = generate(c);
    const WindowSet ws = split_windows(ds, 32.0, 0.7, 0.15);

    // 8 windows per subject: 5 train, 1 val, 2 test.
    CHECK(ws.train.size() == 10);
    CHECK(ws.val.size() == 2);
    CHECK(ws.test.size() == 4);
    for (const auto& w : ws.train) {
        CHECK(w.electro.rows() == c.sources);
        CHECK(w.electro.cols() == 32 * 200);
        CHECK(w.hemo.rows() == c.targets);
        CHECK(w.hemo.cols() == 16);
    }
    // Train precedes val precedes test in time: window w of subject s starts at
    // column w * 6400; check against the source recording.
    const auto& rec = ds.subjects[0];
    CHECK(ws.train[0].electro.values()[0] == rec.electro.values()[0]);
    CHECK(ws.val[0].electro.values()[0] == rec.electro.values()[5 * 6400]);
    CHECK(ws.test[0].electro.values()[0] == rec.electro.values()[6 * 6400]);
    CHECK(ws.test[0].subject == 0);
    CHECK(ws.test[2].subject == 1);

    // Two windows per segment share its label.
    for (std::size_t w = 0; w < 8; ++w) {
        const Window& win = w < 5 ? ws.train[w] : (w == 5 ? ws.val[0] : ws.test[w - 6]);
        CHECK(win.label == rec.labels[w / 2]);
    }
}

TEST_CASE("window split validates alignment and fractions") {
    const Dataset ds = generate(tiny_config());
    CHECK_THROWS_AS(split_windows(ds, 30.0), ConfigError);   // does not tile the segment
    CHECK_THROWS_AS(split_windows(ds, 17.0), ConfigError);   // does not tile the TR grid
    CHECK_THROWS_AS(split_windows(ds, 128.0), ConfigError);  // longer than a segment
    CHECK_THROWS_AS(split_windows(ds, 0.0), ConfigError);
    CHECK_THROWS_AS(split_windows(ds, 64.0, 0.9, 0.2), ConfigError);
    CHECK_THROWS_AS(split_windows(ds, 64.0, 0.0, 0.5), ConfigError);
    REQUIRE_NOTHROW(split_windows(ds, 64.0));
}
