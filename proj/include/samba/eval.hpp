#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "samba/model.hpp"
#include "samba/synth.hpp"
#include "samba/tensor.hpp"

namespace samba {

// Pearson correlation of average-tied ranks. Inputs need at least 3 samples;
// a constant input yields 0 (with a one-line stderr warning).
double spearman(const std::vector<double>& pred, const std::vector<double>& truth);

// Translation quality over withheld windows: the model translates each
// model-sized window, metric windows of metric_window_s seconds are carved
// from the predictions, and each scores the mean over parcels of per-parcel
// Spearman. The report averages parcels first, then windows.
struct EvalReport {
    Direction direction = Direction::E2H;
    double metric_window_s = 60.0;
    double mean_spearman = 0.0;
    std::vector<double> per_parcel;  // mean over metric windows, one per output parcel
    std::size_t windows_evaluated = 0;
    std::size_t windows_skipped = 0;
    std::vector<std::string> skipped;  // one log line per skipped window
};
EvalReport evaluate(const Model& model, const std::vector<Window>& test_windows,
                    double metric_window_s);

// Scores already-translated recordings: each window reads its span from its
// subject's full prediction matrix (hemo grid for e2h predictions, electro
// grid for h2e) and is compared against the window's recorded truth.
EvalReport evaluate_predictions(const std::vector<Tensor>& predictions, Direction direction,
                                const SynthConfig& data_config, const std::vector<Window>& windows,
                                double metric_window_s);

// CSV schema: metric, direction, window_s, parcel_id (or ALL), value; the JSON
// mirror carries the same rows plus the config hash.
void write_eval_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& csv,
                        const std::filesystem::path& json, const std::string& config_hash);

// Physics-based reference translator: invert the true region mixing to
// recover the latents, convolve each target's region latent with that
// parcel's true response kernel, bin to the hemo grid, and z-score.
// Upper-bounds learned e2h models. evaluate_oracle translates whole subject
// recordings (matching how the data were produced) and reads each test
// window's span from the full prediction.
Tensor oracle_translate(const Dataset& dataset, const Tensor& electro);
EvalReport evaluate_oracle(const Dataset& dataset, const std::vector<Window>& test_windows,
                           double metric_window_s);

// Per-step multilayer perceptron baseline: TR-binned electro (sources) ->
// tanh hidden -> targets, shared across steps.
struct MLPBaseline {
    Tensor w1, b1, w2, b2;
    std::size_t stride = 0;
};
MLPBaseline train_mlp_baseline(const ModelConfig& config, const std::vector<Window>& train_windows,
                               std::size_t hidden, std::size_t epochs, double lr,
                               std::uint64_t seed);
Tensor mlp_translate(const MLPBaseline& baseline, const Tensor& electro);
EvalReport evaluate_mlp(const MLPBaseline& baseline, const ModelConfig& config,
                        const std::vector<Window>& test_windows, double metric_window_s);

// Recurrent baseline: one shared cell stepped over the TR grid; node features
// are the binned electro vector concatenated with a one-hot parcel identity.
struct LSTMBaseline {
    LSTMCellParams cell;
    std::size_t sources = 0, targets = 0, stride = 0;
};
LSTMBaseline train_lstm_baseline(const ModelConfig& config,
                                 const std::vector<Window>& train_windows, std::size_t hidden,
                                 std::size_t epochs, double lr, std::uint64_t seed);
Tensor lstm_translate(const LSTMBaseline& baseline, const Tensor& electro);
EvalReport evaluate_lstm(const LSTMBaseline& baseline, const ModelConfig& config,
                         const std::vector<Window>& test_windows, double metric_window_s);

// One short training run per named flag combination on a shared dataset and
// seed. Invalid combinations become rows marked skipped with the validation
// message; nothing throws out of the sweep.
struct AblationRow {
    std::string name;
    bool skipped = false;
    std::string reason;
    double final_total = 0.0;
    double final_match = 0.0;
    double final_reg = 0.0;
    double val_spearman = 0.0;
    double test_spearman = 0.0;
    bool finite = false;
};
struct AblationCase {
    std::string name;
    ModelConfig config;
};
std::vector<AblationRow> run_ablations(const std::vector<AblationCase>& grid,
                                       const WindowSet& windows, const TrainConfig& tc,
                                       double metric_window_s);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& csv);

}  // namespace samba
