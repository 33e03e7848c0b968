#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "samba/graph.hpp"
#include "samba/hrf.hpp"
#include "samba/recurrent.hpp"
#include "samba/synth.hpp"
#include "samba/tensor.hpp"
#include "samba/wavelet.hpp"

namespace samba {

enum class Direction { E2H, H2E };

std::string direction_name(Direction d);
Direction direction_from_name(const std::string& name);

// Architecture toggles used by the ablation study. Each one keeps the rest of
// the pipeline intact.
struct AblationFlags {
    bool no_wavelet = false;          // skip decompose/attend, feed raw strided samples
    bool no_lstm = false;             // replace the recurrent head by a linear readout
    bool fixed_hrf = false;           // freeze response kernels at the canonical shape
    bool mse_loss = false;            // mean squared error instead of cosine matching
    bool no_skip_loss = false;        // h2e trains on the match loss alone
    bool no_pseudo_hrf = false;       // h2e upsamples by zero-order hold, no learned kernel
    bool transformer_decoder = false; // causal self-attention instead of the LSTM (e2h)

    bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
    std::size_t sources = 6;   // electro parcels N
    std::size_t targets = 20;  // hemo parcels M
    std::size_t regions = 4;   // round-robin parcel-to-region assignment
    double electro_rate_hz = 200.0;
    double tr_s = 2.0;
    double window_s = 64.0;
    Wavelet family = Wavelet::Db4;
    std::size_t levels = 5;
    std::size_t embed_dim = 8;     // parcel embedding width feeding the response net
    std::size_t hrf_hidden = 16;
    std::size_t gat_heads = 2;
    std::size_t gat_dim = 16;      // per-head output width
    std::size_t lift_dim = 16;     // region-lift output width
    std::size_t down_dim = 16;     // spatial-downsample output width
    std::size_t top_k = 4;         // graph neighborhood size
    std::size_t lstm_hidden = 32;
    std::size_t chunk_len = 1600;  // truncated-backprop span for the h2e refiner
    double hrf_duration_s = 32.0;
    Direction direction = Direction::E2H;
    AblationFlags ablation;
    bool per_parcel_attention = false;  // own band weights per parcel instead of shared

    std::size_t electro_window() const {
        return static_cast<std::size_t>(window_s * electro_rate_hz + 0.5);
    }
    std::size_t hemo_window() const { return static_cast<std::size_t>(window_s / tr_s + 0.5); }
    std::size_t stride() const { return static_cast<std::size_t>(electro_rate_hz * tr_s + 0.5); }
    std::size_t padded_window() const { return next_pow2(electro_window()); }
    std::size_t padded_hemo_window() const { return next_pow2(hemo_window()); }
    // Features handed to the source GAT at each output step.
    std::size_t step_features() const {
        return (ablation.no_wavelet ? electro_window() : padded_window()) / hemo_window();
    }
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Small geometry for finite-difference checks: 3 sources, 6 targets, 8 Hz,
// TR 1 s, 8 s windows (64 electro samples).
ModelConfig micro_model_config(Direction direction);

struct TrainConfig {
    double lambda = 0.5;  // match-loss weight in the h2e objective
    double lr = 1e-3;
    std::size_t epochs = 10;
    std::size_t batch = 1;  // windows per optimizer step
    double teacher_forcing_start = 1.0;  // decays linearly to 0 over the epochs
    std::uint64_t seed = 0;
    std::size_t first_epoch = 0;  // resume offset, history numbering continues

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

class Adam {
  public:
    explicit Adam(ParamRegistry& params, double lr = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);
    // Applies one update from the accumulated gradients, then clears them.
    void step();
    std::size_t steps_taken() const { return steps_; }

    // Moment access for checkpointing, keyed like the registry.
    const std::vector<double>& first_moment(const std::string& path) const;
    const std::vector<double>& second_moment(const std::string& path) const;
    void restore(const std::string& path, std::vector<double> m, std::vector<double> v);
    void set_steps(std::size_t steps) { steps_ = steps; }

  private:
    ParamRegistry& params_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t steps_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// All learnable state plus the frozen structures the pipelines need. Members
// are views of the registry tensors; the registry holds exactly the trainable
// set for the configured direction and flags.
struct Model {
    ModelConfig config;
    ParamRegistry registry;
    RegionMap map;

    HRFNet hrf;              // e2h, absent under fixed_hrf
    Tensor canonical_theta;  // constant fallback, always present
    Tensor wavelet_logits;   // 1 x bands, or sources x bands when per-parcel
    GATLayerParams gat_source;   // e2h, over the per-window electro graph
    RegionLifters lifters;       // e2h
    GATLayerParams gat_target;   // e2h, over the frozen target graph
    LSTMCellParams lstm;         // sequence head for the active direction
    Tensor readout_w, readout_b; // no_lstm linear head
    Tensor dec_wq, dec_wk, dec_wv, dec_wo, dec_readout_w, dec_readout_b;  // transformer head

    GATLayerParams gat_down;        // h2e, over the per-window hemo graph
    NodeProjections down_proj;      // h2e
    std::vector<std::pair<Tensor, Tensor>> fs_maps;  // h2e per-band coefficient heads
    Tensor direct_map_w, direct_map_b;  // h2e no_wavelet linear decoder
    Tensor deconv_kernels;          // sources x stride, constant under fixed_hrf

    bool target_graph_set = false;
    SimilarityGraph target_graph;  // frozen e2h graph over training hemo

    std::size_t epochs_completed = 0;

    // sources x 6 positive parameter rows: inferred, or canonical under fixed_hrf.
    Tensor hrf_parameters() const;
    Tensor wavelet_alphas() const;  // softmaxed band weights, rows match logits
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

// Freeze the e2h target-side graph from training hemo windows (concatenated
// along time). Required before forward_e2h.
void set_target_graph(Model& model, const std::vector<Window>& train_windows);

struct ForwardOptions {
    double teacher_forcing = 0.0;
    bool train = false;
    std::uint64_t seed = 0;
    const Tensor* teacher = nullptr;  // true output window, needed when forcing > 0
};

// Optional taps for the interpretability exports.
struct Introspection {
    Tensor wavelet_alpha;
    std::vector<Tensor> gat_source_beta;  // per head, last processed step
    std::vector<Tensor> gat_target_beta;
    std::vector<Tensor> gat_down_beta;
};

// electro (sources x T) -> hemo prediction (targets x T_hemo).
Tensor forward_e2h(const Model& model, const Tensor& electro, const ForwardOptions& opts = {},
                   Introspection* intro = nullptr);

struct H2EOutput {
    Tensor prediction;  // sources x T
    ScaleCoeffs coeffs; // estimated hemo-rate coefficients feeding the skip loss
};
// hemo (targets x T_hemo) -> electro prediction (sources x T).
H2EOutput forward_h2e(const Model& model, const Tensor& hemo, const ForwardOptions& opts = {},
                      Introspection* intro = nullptr);

// Skip-loss target: the true electro window pushed through the canonical
// kernel, binned to the hemo grid, and decomposed. Constant (no gradient).
ScaleCoeffs h2e_skip_target(const Model& model, const Tensor& electro);

// Sum over rows of 1 - cos(pred_row, truth_row); zero-norm truth rows
// contribute exactly 1. Range [0, 2 * rows].
Tensor cosine_match_loss(const Tensor& pred, const Tensor& truth);
// Cosine by default, mean squared error under mse_loss. For h2e the cosine is
// averaged over chunk_len spans so chunked training optimizes the same value.
Tensor match_loss(const Model& model, const Tensor& pred, const Tensor& truth);
double total_loss(double l_match, double l_reg, double lambda);

struct EpochStats {
    std::size_t epoch = 0;
    double l_match = 0.0;
    double l_reg = 0.0;
    double total = 0.0;
    double val_spearman = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
};

// Adam training over shuffled windows; deterministic per seed. Aborts with a
// numeric error naming the first non-finite tensor if the loss diverges.
// Pass an optimizer to keep its moments across calls (resumed runs); by
// default a fresh Adam with tc.lr is used.
TrainResult train(Model& model, const WindowSet& windows, const TrainConfig& tc,
                  Adam* optimizer = nullptr);

// Per-window spectral summary from the e2h front end: per band, mean |coeff|
// and log RMS, pooled over parcels and positions -> 1 x 2*(levels+1).
Tensor window_band_features(const Model& model, const Tensor& electro);

struct Classifier {
    Tensor weight, bias;  // feature_dim x classes, 1 x classes
    std::size_t classes = 8;
};
Classifier train_classifier(const Model& model, const std::vector<Window>& windows,
                            std::size_t classes, std::size_t epochs, double lr,
                            std::uint64_t seed);
std::vector<int> classify(const Model& model, const Classifier& head,
                          const std::vector<Window>& windows);
double classification_accuracy(const Model& model, const Classifier& head,
                               const std::vector<Window>& windows);

// Versioned container: magic "SMBA", u32 version, JSON header (configs, epoch
// counter, tensor manifest), then raw little-endian f64 blocks in manifest
// order. Loading rejects unknown versions and unknown header fields.
void save_checkpoint(const Model& model, const TrainConfig& tc, const Adam* optimizer,
                     const std::filesystem::path& file);
struct LoadedCheckpoint {
    Model model;
    TrainConfig train_config;
    bool has_optimizer = false;
    std::size_t optimizer_steps = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& file);

std::string model_config_to_json_text(const ModelConfig& config);
ModelConfig model_config_from_json_text(const std::string& text);
std::string train_config_to_json_text(const TrainConfig& config);
TrainConfig train_config_from_json_text(const std::string& text);
// FNV-1a over the canonical serialized config pair, as 16 hex digits.
std::string config_hash(const ModelConfig& mc, const TrainConfig& tc);

}  // namespace samba
