#include "samba/eval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <numeric>

#include "samba/common.hpp"
#include "samba/io.hpp"
#include "samba/rng.hpp"

namespace samba {

namespace {

std::vector<double> average_tied_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

bool is_constant(const std::vector<double>& v) {
    for (double x : v)
        if (x != v.front()) return false;
    return true;
}

}  // namespace

double spearman(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size())
        throw DimensionError("spearman: series lengths " + std::to_string(pred.size()) + " vs " +
                             std::to_string(truth.size()));
    if (pred.size() < 3)
        throw ArgumentError("spearman: need at least 3 samples, got " +
                            std::to_string(pred.size()));
    if (is_constant(pred) || is_constant(truth)) {
        std::cerr << "spearman: constant input, correlation undefined, returning 0\n";
        return 0.0;
    }
    const std::vector<double> ra = average_tied_ranks(pred);
    const std::vector<double> rb = average_tied_ranks(truth);
    if (ra == rb) return 1.0;
    const double n = static_cast<double>(ra.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0.0, ssa = 0.0, ssb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double a = ra[i] - ma;
        const double b = rb[i] - mb;
        num += a * b;
        ssa += a * a;
        ssb += b * b;
    }
    const double den = std::sqrt(ssa * ssb);
    if (den == 0.0) return 0.0;
    return std::clamp(num / den, -1.0, 1.0);
}

namespace {

// Shared evaluation protocol: translate each test window, carve metric
// windows from the prediction span, score per parcel, average parcels first.
EvalReport evaluate_streams(Direction direction, double metric_window_s,
                            std::size_t metric_samples, std::size_t parcels,
                            const std::vector<Window>& test_windows,
                            const std::function<Tensor(const Window&)>& translate,
                            const std::function<const Tensor&(const Window&)>& truth_of) {
    EvalReport report;
    report.direction = direction;
    report.metric_window_s = metric_window_s;
    report.per_parcel.assign(parcels, 0.0);
    std::vector<std::size_t> parcel_counts(parcels, 0);
    double window_sum = 0.0;
    std::size_t window_count = 0;

    for (std::size_t wi = 0; wi < test_windows.size(); ++wi) {
        const Window& win = test_windows[wi];
        const Tensor& truth = truth_of(win);
        if (metric_samples < 3) {
            ++report.windows_skipped;
            report.skipped.push_back("window " + std::to_string(wi) + ": metric window of " +
                                     std::to_string(metric_samples) +
                                     " samples is too short to rank");
            continue;
        }
        if (metric_samples > truth.cols()) {
            ++report.windows_skipped;
            report.skipped.push_back("window " + std::to_string(wi) +
                                     ": metric window exceeds the prediction span");
            continue;
        }
        Tensor pred;
        {
            NoGradGuard no_grad;
            pred = translate(win);
        }
        const std::size_t sub_count = truth.cols() / metric_samples;
        for (std::size_t k = 0; k < sub_count; ++k) {
            const std::size_t lo = k * metric_samples;
            double parcel_sum = 0.0;
            for (std::size_t p = 0; p < parcels; ++p) {
                std::vector<double> a(metric_samples), b(metric_samples);
                const auto& pv = pred.values();
                const auto& tv = truth.values();
                for (std::size_t i = 0; i < metric_samples; ++i) {
                    a[i] = pv[p * pred.cols() + lo + i];
                    b[i] = tv[p * truth.cols() + lo + i];
                }
                const double rho = spearman(a, b);
                parcel_sum += rho;
                report.per_parcel[p] += rho;
                ++parcel_counts[p];
            }
            window_sum += parcel_sum / static_cast<double>(parcels);
            ++window_count;
        }
    }
    for (std::size_t p = 0; p < parcels; ++p)
        if (parcel_counts[p] > 0) report.per_parcel[p] /= static_cast<double>(parcel_counts[p]);
    report.windows_evaluated = window_count;
    report.mean_spearman = window_count == 0 ? 0.0 : window_sum / static_cast<double>(window_count);
    return report;
}

std::size_t metric_samples_for(Direction direction, const ModelConfig& config, double seconds) {
    return direction == Direction::E2H
               ? static_cast<std::size_t>(seconds / config.tr_s)
               : static_cast<std::size_t>(seconds * config.electro_rate_hz);
}

// TR-binned means of a raw electro window, transposed to steps x sources.
Tensor bin_electro(const Tensor& electro, std::size_t stride) {
    const std::size_t steps = electro.cols() / stride;
    std::vector<double> out(steps * electro.rows());
    const auto& v = electro.values();
    for (std::size_t n = 0; n < electro.rows(); ++n)
        for (std::size_t k = 0; k < steps; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < stride; ++i) acc += v[n * electro.cols() + k * stride + i];
            out[k * electro.rows() + n] = acc / static_cast<double>(stride);
        }
    return Tensor::leaf(std::move(out), steps, electro.rows());
}

}  // namespace

EvalReport evaluate(const Model& model, const std::vector<Window>& test_windows,
                    double metric_window_s) {
    const ModelConfig& cfg = model.config;
    const bool e2h = cfg.direction == Direction::E2H;
    return evaluate_streams(
        cfg.direction, metric_window_s, metric_samples_for(cfg.direction, cfg, metric_window_s),
        e2h ? cfg.targets : cfg.sources, test_windows,
        [&](const Window& w) {
            return e2h ? forward_e2h(model, w.electro) : forward_h2e(model, w.hemo).prediction;
        },
        [&](const Window& w) -> const Tensor& { return e2h ? w.hemo : w.electro; });
}

Tensor oracle_translate(const Dataset& dataset, const Tensor& electro) {
    const SynthConfig& cfg = dataset.config;
    if (electro.rows() != cfg.sources)
        throw DimensionError("oracle: electro window has the wrong parcel count");
    NoGradGuard no_grad;
    const double dt = 1.0 / cfg.electro_rate_hz;
    const std::size_t stride = cfg.stride();
    const std::size_t cols = electro.cols();
    const std::size_t t_hemo = cols / stride;
    const std::vector<std::size_t> source_region = cfg.source_regions();
    const std::vector<std::size_t> target_region = cfg.target_regions();
    if (dataset.truth.theta_targets.rows() != cfg.targets)
        throw DataError("oracle: dataset is missing the true response parameters");

    // Region means share one mixing row (own region 1, others leak), so the
    // leak matrix inverts in closed form and recovers each region's latent up
    // to a per-row affine map, which the final z-score cancels.
    std::vector<double> mixed(cfg.regions * cols, 0.0);
    std::vector<std::size_t> members(cfg.regions, 0);
    const auto& ev = electro.values();
    for (std::size_t n = 0; n < cfg.sources; ++n) {
        const std::size_t r = source_region[n];
        for (std::size_t i = 0; i < cols; ++i) mixed[r * cols + i] += ev[n * cols + i];
        ++members[r];
    }
    for (std::size_t r = 0; r < cfg.regions; ++r)
        for (std::size_t i = 0; i < cols; ++i) mixed[r * cols + i] /= static_cast<double>(members[r]);

    const double leak = cfg.mixing_leak;
    const double c = 1.0 - leak;
    const double shrink = leak / (c + leak * static_cast<double>(cfg.regions));
    std::vector<double> latents(cfg.regions * cols);
    for (std::size_t i = 0; i < cols; ++i) {
        double colsum = 0.0;
        for (std::size_t r = 0; r < cfg.regions; ++r) colsum += mixed[r * cols + i];
        for (std::size_t r = 0; r < cfg.regions; ++r)
            latents[r * cols + i] = (mixed[r * cols + i] - shrink * colsum) / c;
    }

    std::vector<double> out(cfg.targets * t_hemo);
    for (std::size_t m = 0; m < cfg.targets; ++m) {
        const std::size_t r = target_region[m];
        std::vector<double> latent_row(latents.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                       latents.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
        const Tensor theta_row = slice_rows(dataset.truth.theta_targets, m, m + 1);
        const HRFKernel kernel = sample_hrf(theta_row, dt, cfg.hrf_duration_s);
        const Tensor smoothed = smooth(Tensor::leaf(std::move(latent_row), 1, cols), kernel, dt);
        const auto& sv = smoothed.values();
        std::vector<double> binned(t_hemo);
        for (std::size_t k = 0; k < t_hemo; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < stride; ++i) acc += sv[k * stride + i];
            binned[k] = acc / static_cast<double>(stride);
        }
        double mean = 0.0;
        for (double x : binned) mean += x;
        mean /= static_cast<double>(t_hemo);
        double var = 0.0;
        for (double x : binned) var += (x - mean) * (x - mean);
        const double sd = std::sqrt(var / static_cast<double>(t_hemo));
        for (std::size_t k = 0; k < t_hemo; ++k)
            out[m * t_hemo + k] = sd > 0.0 ? (binned[k] - mean) / sd : 0.0;
    }
    return Tensor::leaf(std::move(out), cfg.targets, t_hemo);
}

EvalReport evaluate_predictions(const std::vector<Tensor>& predictions, Direction direction,
                                const SynthConfig& data_config, const std::vector<Window>& windows,
                                double metric_window_s) {
    const bool e2h = direction == Direction::E2H;
    const std::size_t stride = data_config.stride();
    const std::size_t parcels = e2h ? data_config.targets : data_config.sources;
    const auto metric_samples = static_cast<std::size_t>(
        e2h ? metric_window_s / data_config.tr_s : metric_window_s * data_config.electro_rate_hz);
    return evaluate_streams(
        direction, metric_window_s, metric_samples, parcels, windows,
        [&](const Window& w) {
            if (w.subject >= predictions.size())
                throw DataError("predictions: no matrix for subject " + std::to_string(w.subject));
            const Tensor& full = predictions[w.subject];
            if (full.rows() != parcels)
                throw DimensionError("predictions: parcel count does not match the direction");
            const std::size_t first = e2h ? w.start / stride : w.start;
            const std::size_t count = e2h ? w.hemo.cols() : w.electro.cols();
            if (first + count > full.cols())
                throw DataError("predictions: recording does not cover window span");
            return slice_cols(full, first, first + count);
        },
        [&](const Window& w) -> const Tensor& { return e2h ? w.hemo : w.electro; });
}

EvalReport evaluate_oracle(const Dataset& dataset, const std::vector<Window>& test_windows,
                           double metric_window_s) {
    const SynthConfig& cfg = dataset.config;
    const auto metric_samples = static_cast<std::size_t>(metric_window_s / cfg.tr_s);
    // The generator convolves whole recordings, so the reference translation
    // must too; each window then reads its span of the full prediction.
    std::vector<Tensor> full(dataset.subjects.size(), Tensor::zeros(1, 1));
    std::vector<char> ready(dataset.subjects.size(), 0);
    const std::size_t stride = cfg.stride();
    return evaluate_streams(
        Direction::E2H, metric_window_s, metric_samples, cfg.targets, test_windows,
        [&](const Window& w) {
            if (w.subject >= full.size()) throw DataError("oracle: window subject out of range");
            if (!ready[w.subject]) {
                full[w.subject] = oracle_translate(dataset, dataset.subjects[w.subject].electro);
                ready[w.subject] = 1;
            }
            const std::size_t first = w.start / stride;
            return slice_cols(full[w.subject], first, first + w.hemo.cols());
        },
        [](const Window& w) -> const Tensor& { return w.hemo; });
}

MLPBaseline train_mlp_baseline(const ModelConfig& config, const std::vector<Window>& train_windows,
                               std::size_t hidden, std::size_t epochs, double lr,
                               std::uint64_t seed) {
    if (train_windows.empty()) throw ConfigError("mlp baseline: no training windows");
    MLPBaseline b;
    b.stride = config.stride();
    ParamRegistry reg;
    Rng rng(seed);
    b.w1 = reg.add("mlp/w1",
                   rng.normal_vec(config.sources * hidden, 0.0, 1.0 / std::sqrt(config.sources)),
                   config.sources, hidden);
    b.b1 = reg.add("mlp/b1", std::vector<double>(hidden, 0.0), 1, hidden);
    b.w2 = reg.add("mlp/w2", rng.normal_vec(hidden * config.targets, 0.0, 1.0 / std::sqrt(hidden)),
                   hidden, config.targets);
    b.b2 = reg.add("mlp/b2", std::vector<double>(config.targets, 0.0), 1, config.targets);
    Adam optimizer(reg, lr);

    std::vector<Tensor> inputs;
    inputs.reserve(train_windows.size());
    for (const Window& w : train_windows) inputs.push_back(bin_electro(w.electro, b.stride));

    Rng shuffler(seed ^ 0x5bd1e995u);
    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order(train_windows.size());
        std::iota(order.begin(), order.end(), 0);
        Rng epoch_rng = shuffler.fork(e + 1);
        epoch_rng.shuffle(order);
        for (std::size_t i : order) {
            const Tensor h = tanh_t(add_rowvec(matmul(inputs[i], b.w1), b.b1));
            const Tensor pred = transpose_t(add_rowvec(matmul(h, b.w2), b.b2));
            const Tensor loss = cosine_match_loss(pred, train_windows[i].hemo);
            backward(loss);
            optimizer.step();
        }
    }
    return b;
}

Tensor mlp_translate(const MLPBaseline& baseline, const Tensor& electro) {
    NoGradGuard no_grad;
    const Tensor x = bin_electro(electro, baseline.stride);
    const Tensor h = tanh_t(add_rowvec(matmul(x, baseline.w1), baseline.b1));
    return transpose_t(add_rowvec(matmul(h, baseline.w2), baseline.b2));
}

EvalReport evaluate_mlp(const MLPBaseline& baseline, const ModelConfig& config,
                        const std::vector<Window>& test_windows, double metric_window_s) {
    return evaluate_streams(
        Direction::E2H, metric_window_s,
        metric_samples_for(Direction::E2H, config, metric_window_s), config.targets, test_windows,
        [&](const Window& w) { return mlp_translate(baseline, w.electro); },
        [](const Window& w) -> const Tensor& { return w.hemo; });
}

namespace {

std::vector<Tensor> lstm_features(const LSTMBaseline& b, const Tensor& electro) {
    const Tensor binned = bin_electro(electro, b.stride);  // steps x sources
    std::vector<Tensor> feats;
    feats.reserve(binned.rows());
    std::vector<double> onehot(b.targets * b.targets, 0.0);
    for (std::size_t m = 0; m < b.targets; ++m) onehot[m * b.targets + m] = 1.0;
    const Tensor identity = Tensor::leaf(std::move(onehot), b.targets, b.targets);
    for (std::size_t k = 0; k < binned.rows(); ++k) {
        const Tensor row = slice_rows(binned, k, k + 1);
        std::vector<Tensor> rows(b.targets, row);
        feats.push_back(concat_cols({concat_rows(rows), identity}));
    }
    return feats;
}

}  // namespace

LSTMBaseline train_lstm_baseline(const ModelConfig& config,
                                 const std::vector<Window>& train_windows, std::size_t hidden,
                                 std::size_t epochs, double lr, std::uint64_t seed) {
    if (train_windows.empty()) throw ConfigError("lstm baseline: no training windows");
    LSTMBaseline b;
    b.sources = config.sources;
    b.targets = config.targets;
    b.stride = config.stride();

    ParamRegistry reg;
    Rng rng(seed);
    const std::size_t feature_dim = config.sources + config.targets;
    const std::size_t in_dim = 1 + feature_dim + hidden;
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    auto gate = [&](const char* name) {
        return reg.add(std::string("lstm_baseline/") + name,
                       rng.normal_vec(in_dim * hidden, 0.0, scale), in_dim, hidden);
    };
    b.cell.hidden = hidden;
    b.cell.w_input = gate("w_input");
    b.cell.b_input = reg.add("lstm_baseline/b_input", std::vector<double>(hidden, 0.0), 1, hidden);
    b.cell.w_forget = gate("w_forget");
    b.cell.b_forget = reg.add("lstm_baseline/b_forget", std::vector<double>(hidden, 1.0), 1, hidden);
    b.cell.w_output = gate("w_output");
    b.cell.b_output = reg.add("lstm_baseline/b_output", std::vector<double>(hidden, 0.0), 1, hidden);
    b.cell.w_candidate = gate("w_candidate");
    b.cell.b_candidate =
        reg.add("lstm_baseline/b_candidate", std::vector<double>(hidden, 0.0), 1, hidden);
    b.cell.w_readout = reg.add("lstm_baseline/w_readout",
                               rng.normal_vec(hidden, 0.0, 1.0 / std::sqrt(hidden)), hidden, 1);
    b.cell.b_readout = reg.add("lstm_baseline/b_readout", {0.0}, 1, 1);
    Adam optimizer(reg, lr);

    Rng shuffler(seed ^ 0x2545F491u);
    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order(train_windows.size());
        std::iota(order.begin(), order.end(), 0);
        Rng epoch_rng = shuffler.fork(e + 1);
        epoch_rng.shuffle(order);
        for (std::size_t i : order) {
            const std::vector<Tensor> feats = lstm_features(b, train_windows[i].electro);
            RolloutConfig rc;
            rc.train = true;
            rc.seed = seed ^ (e * 1000003 + i * 97);
            const Tensor pred = rollout(b.cell, feats, rc, &train_windows[i].hemo);
            const Tensor loss = cosine_match_loss(pred, train_windows[i].hemo);
            backward(loss);
            optimizer.step();
        }
    }
    return b;
}

Tensor lstm_translate(const LSTMBaseline& baseline, const Tensor& electro) {
    NoGradGuard no_grad;
    return rollout(baseline.cell, lstm_features(baseline, electro), RolloutConfig{});
}

EvalReport evaluate_lstm(const LSTMBaseline& baseline, const ModelConfig& config,
                         const std::vector<Window>& test_windows, double metric_window_s) {
    return evaluate_streams(
        Direction::E2H, metric_window_s,
        metric_samples_for(Direction::E2H, config, metric_window_s), config.targets, test_windows,
        [&](const Window& w) { return lstm_translate(baseline, w.electro); },
        [](const Window& w) -> const Tensor& { return w.hemo; });
}

void write_eval_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& csv,
                        const std::filesystem::path& json_path, const std::string& config_hash) {
    std::vector<std::vector<std::string>> rows;
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["reports"] = nlohmann::json::array();
    for (const EvalReport& r : reports) {
        const std::string dir = direction_name(r.direction);
        const std::string win = format_double(r.metric_window_s, 6);
        rows.push_back({"spearman", dir, win, "ALL", format_double(r.mean_spearman)});
        for (std::size_t p = 0; p < r.per_parcel.size(); ++p)
            rows.push_back({"spearman", dir, win, std::to_string(p),
                            format_double(r.per_parcel[p])});
        nlohmann::json jr;
        jr["direction"] = dir;
        jr["window_s"] = r.metric_window_s;
        jr["mean_spearman"] = r.mean_spearman;
        jr["per_parcel"] = r.per_parcel;
        jr["windows_evaluated"] = r.windows_evaluated;
        jr["windows_skipped"] = r.windows_skipped;
        jr["skipped"] = r.skipped;
        j["reports"].push_back(jr);
    }
    write_csv(csv, {"metric", "direction", "window_s", "parcel_id", "value"}, rows);
    write_text(json_path, j.dump(2) + "\n");
}

std::vector<AblationRow> run_ablations(const std::vector<AblationCase>& grid,
                                       const WindowSet& windows, const TrainConfig& tc,
                                       double metric_window_s) {
    std::vector<AblationRow> rows;
    rows.reserve(grid.size());
    for (const AblationCase& c : grid) {
        AblationRow row;
        row.name = c.name;
        try {
            c.config.validate();
            Model model = build_model(c.config, tc.seed);
            const TrainResult result = train(model, windows, tc);
            const EpochStats& last = result.history.back();
            row.final_total = last.total;
            row.final_match = last.l_match;
            row.final_reg = last.l_reg;
            row.val_spearman = last.val_spearman;
            row.test_spearman = evaluate(model, windows.test, metric_window_s).mean_spearman;
            row.finite = std::isfinite(row.final_total) && std::isfinite(row.test_spearman);
        } catch (const ConfigError& e) {
            row.skipped = true;
            row.reason = e.what();
        } catch (const NumericError& e) {
            row.reason = e.what();
            row.finite = false;
        } catch (const Error& e) {
            // Shape or data mismatches against the shared windows also skip.
            row.skipped = true;
            row.reason = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& csv) {
    std::vector<std::vector<std::string>> out;
    out.reserve(rows.size());
    for (const AblationRow& r : rows)
        out.push_back({r.name, r.skipped ? "yes" : "no", r.reason,
                       r.skipped ? "" : format_double(r.final_total),
                       r.skipped ? "" : format_double(r.final_match),
                       r.skipped ? "" : format_double(r.final_reg),
                       r.skipped ? "" : format_double(r.val_spearman),
                       r.skipped ? "" : format_double(r.test_spearman), r.finite ? "yes" : "no"});
    write_csv(csv, {"case", "skipped", "reason", "final_total", "final_match", "final_reg",
                    "val_spearman", "test_spearman", "finite"},
              out);
}

}  // namespace samba
