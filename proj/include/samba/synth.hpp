#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "samba/graph.hpp"
#include "samba/tensor.hpp"

namespace samba {

// One narrowband latent ingredient: a resonant second-order autoregression
// whose amplitude is switched per stimulus class.
struct LatentComponent {
    double freq_hz = 0.1;
    double rho = 0.97;                     // pole radius, controls bandwidth
    std::vector<double> class_amps;        // one amplitude per stimulus class
};

struct SynthConfig {
    std::size_t sources = 6;   // coarse electrophysiological parcels
    std::size_t targets = 20;  // fine hemodynamic parcels
    std::size_t regions = 4;
    std::size_t subjects = 3;
    double duration_s = 1920.0;
    double electro_rate_hz = 200.0;
    double tr_s = 2.0;
    double segment_s = 64.0;  // one stimulus class per segment
    std::size_t classes = 8;
    double electro_noise_sd = 0.1;
    double hemo_noise_sd = 0.1;
    double mixing_leak = 0.1;     // off-region weight in the region-to-source mixing
    double region_detune = 0.05;  // relative resonance spread across regions
    std::vector<LatentComponent> components;
    std::vector<std::array<double, 6>> region_theta;  // ground-truth response params per region
    double hrf_duration_s = 32.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t electro_len() const { return static_cast<std::size_t>(duration_s * electro_rate_hz + 0.5); }
    std::size_t hemo_len() const { return static_cast<std::size_t>(duration_s / tr_s + 0.5); }
    std::size_t stride() const { return static_cast<std::size_t>(electro_rate_hz * tr_s + 0.5); }
    std::size_t segment_count() const { return static_cast<std::size_t>(duration_s / segment_s + 0.5); }
    std::vector<std::size_t> source_regions() const;  // parcel -> region, round robin
    std::vector<std::size_t> target_regions() const;
    RegionMap region_map() const;
};

// Translation-scale preset: 200 Hz, TR 2 s, sub-0.25 Hz latents.
SynthConfig default_synth_config();
// JSON round trip. Parsing starts from the translation preset, overrides the
// keys present, and rejects unknown keys.
SynthConfig synth_config_from_json_text(const std::string& text);
std::string synth_config_to_json_text(const SynthConfig& config);
// Band-structure preset: 32 Hz, TR 1 s, class information confined to the two
// lowest wavelet bands of a 5-level decomposition.
SynthConfig spectral_synth_config();

struct SubjectRecording {
    Tensor electro;           // N x T, z-scored per parcel
    Tensor hemo;              // M x T_hemo, z-scored per parcel
    std::vector<int> labels;  // stimulus class per segment
};

struct GroundTruth {
    std::vector<Tensor> latents;  // per subject, regions x T (amplitude-modulated)
    Tensor theta_sources;         // N x 6
    Tensor theta_targets;         // M x 6
    Tensor mixing;                // N x regions
};

struct Dataset {
    SynthConfig config;
    std::vector<SubjectRecording> subjects;
    GroundTruth truth;
};

Dataset generate(const SynthConfig& config);

// Directory layout: manifest.json (format version, config, per-file shapes and
// checksums, labels) plus little-endian f64 matrices. Loading verifies sizes
// and checksums and rejects unknown format versions.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// One training example: aligned electro/hemo excerpts with a stimulus label.
struct Window {
    Tensor electro;  // N x T_window
    Tensor hemo;     // M x T_hemo_window
    int label = 0;
    std::size_t subject = 0;
    std::size_t start = 0;  // electro sample offset within the subject recording
};

struct WindowSet {
    std::vector<Window> train, val, test;
};

// Non-overlapping windows, split contiguously per subject so evaluation uses
// withheld time intervals.
WindowSet split_windows(const Dataset& dataset, double window_seconds, double train_frac = 0.7,
                        double val_frac = 0.15);

}  // namespace samba
