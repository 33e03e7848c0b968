#include "samba/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "samba/common.hpp"
#include "samba/eval.hpp"
#include "samba/io.hpp"
#include "samba/rng.hpp"

namespace samba {

using nlohmann::json;

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'S', 'M', 'B', 'A'};

std::string pad2(std::size_t i) { return (i < 10 ? "0" : "") + std::to_string(i); }

bool near_integer(double v) { return std::abs(v - std::round(v)) < 1e-9; }

std::uint64_t derived_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = base ^ 0x9E3779B97F4A7C15ull;
    for (std::uint64_t x : {a + 1, b + 1, c + 1}) {
        h ^= x * 0xBF58476D1CE4E5B9ull;
        h = (h ^ (h >> 27)) * 0x94D049BB133111EBull;
    }
    return h;
}

std::string to_hex16(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

}  // namespace

std::string direction_name(Direction d) { return d == Direction::E2H ? "e2h" : "h2e"; }

Direction direction_from_name(const std::string& name) {
    if (name == "e2h") return Direction::E2H;
    if (name == "h2e") return Direction::H2E;
    throw ConfigError("direction must be 'e2h' or 'h2e', got '" + name + "'");
}

void ModelConfig::validate() const {
    if (sources < 2 || targets < 2)
        throw ConfigError("model config: graphs need at least 2 parcels per side");
    if (regions == 0 || regions > sources || regions > targets)
        throw ConfigError("model config: regions must satisfy 1 <= regions <= min(sources, targets)");
    if (electro_rate_hz <= 0 || tr_s <= 0 || window_s <= 0)
        throw ConfigError("model config: rates and window length must be positive");
    if (!near_integer(electro_rate_hz * tr_s) || !near_integer(window_s / tr_s) ||
        !near_integer(window_s * electro_rate_hz))
        throw ConfigError("model config: window must align with both sampling grids");
    if (hemo_window() < 2 || electro_window() < 4)
        throw ConfigError("model config: window too short for the configured rates");
    if (next_pow2(hemo_window()) != hemo_window())
        throw ConfigError("model config: hemo samples per window must be a power of two");
    if (levels == 0) throw ConfigError("model config: need at least one decomposition level");
    if (!ablation.no_wavelet && padded_window() < (std::size_t{1} << levels))
        throw ConfigError("model config: window too short for the decomposition depth");
    if (direction == Direction::H2E && !ablation.no_wavelet &&
        hemo_window() % (std::size_t{1} << levels) != 0)
        throw ConfigError("model config: hemo window too short for the decomposition depth");
    if (embed_dim == 0 || hrf_hidden == 0 || gat_heads == 0 || gat_dim == 0 || lift_dim == 0 ||
        down_dim == 0 || lstm_hidden == 0 || top_k == 0)
        throw ConfigError("model config: layer widths must be positive");
    if (chunk_len < 2) throw ConfigError("model config: chunk_len must be at least 2");
    if (hrf_duration_s <= 0 || hrf_duration_s > window_s)
        throw ConfigError("model config: response duration must lie in (0, window]");
    if (ablation.no_pseudo_hrf && direction == Direction::E2H)
        throw ConfigError("model config: no_pseudo_hrf only applies to the h2e direction");
    if (ablation.no_skip_loss && direction == Direction::E2H)
        throw ConfigError("model config: no_skip_loss only applies to the h2e direction");
    if (ablation.transformer_decoder && direction == Direction::H2E)
        throw ConfigError("model config: the transformer head is only available for e2h");
    if (ablation.transformer_decoder && ablation.no_lstm)
        throw ConfigError("model config: transformer_decoder and no_lstm are mutually exclusive");
    if (per_parcel_attention && ablation.no_wavelet)
        throw ConfigError("model config: per-parcel attention needs the wavelet front end");
}

ModelConfig micro_model_config(Direction direction) {
    ModelConfig c;
    c.sources = 3;
    c.targets = 6;
    c.regions = 3;
    c.electro_rate_hz = 8.0;
    c.tr_s = 1.0;
    c.window_s = 8.0;
    c.family = Wavelet::Haar;
    c.levels = 3;
    c.embed_dim = 4;
    c.hrf_hidden = 8;
    c.gat_heads = 2;
    c.gat_dim = 4;
    c.lift_dim = 4;
    c.down_dim = 4;
    c.top_k = 2;
    c.lstm_hidden = 8;
    c.hrf_duration_s = 4.0;
    c.direction = direction;
    return c;
}

void TrainConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("train config: lambda must lie in [0, 1]");
    if (lr <= 0.0) throw ConfigError("train config: learning rate must be positive");
    if (epochs == 0) throw ConfigError("train config: need at least one epoch");
    if (batch == 0) throw ConfigError("train config: batch must be at least one window");
    if (teacher_forcing_start < 0.0 || teacher_forcing_start > 1.0)
        throw ConfigError("train config: teacher forcing start must lie in [0, 1]");
}

Adam::Adam(ParamRegistry& params, double lr, double beta1, double beta2, double eps)
    : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (const auto& [path, tensor] : params_.all()) {
        Tensor t = tensor;
        const std::size_t n = t.size();
        auto& m = m_[path];
        auto& v = v_[path];
        if (m.empty()) m.assign(n, 0.0);
        if (v.empty()) v.assign(n, 0.0);
        static const std::vector<double> kEmpty;
        const std::vector<double>& g = t.has_grad() ? t.grad() : kEmpty;
        auto& values = t.mutable_values();
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            values[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
        t.zero_grad();
    }
}

const std::vector<double>& Adam::first_moment(const std::string& path) const {
    auto it = m_.find(path);
    if (it == m_.end()) throw ArgumentError("Adam: no first moment for '" + path + "'");
    return it->second;
}

const std::vector<double>& Adam::second_moment(const std::string& path) const {
    auto it = v_.find(path);
    if (it == v_.end()) throw ArgumentError("Adam: no second moment for '" + path + "'");
    return it->second;
}

void Adam::restore(const std::string& path, std::vector<double> m, std::vector<double> v) {
    if (!params_.has(path)) throw ArgumentError("Adam: unknown parameter '" + path + "'");
    m_[path] = std::move(m);
    v_[path] = std::move(v);
}

namespace {

RegionMap round_robin_map(std::size_t sources, std::size_t targets, std::size_t regions) {
    RegionMap map;
    map.source_count = sources;
    for (std::size_t m = 0; m < targets; ++m) {
        const std::size_t r = m % regions;
        std::vector<std::size_t> chi;
        for (std::size_t n = 0; n < sources; ++n)
            if (n % regions == r) chi.push_back(n);
        map.sources.push_back(std::move(chi));
        map.region_labels.push_back("region" + std::to_string(r));
    }
    map.validate();
    return map;
}

GATLayerParams make_gat(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                        std::size_t heads, std::size_t f_in, std::size_t f_out) {
    GATLayerParams gat;
    for (std::size_t k = 0; k < heads; ++k) {
        const std::string base = prefix + "/h" + pad2(k) + "/";
        gat.head_weights.push_back(reg.add(base + "weight",
                                           rng.normal_vec(f_in * f_out, 0.0, 1.0 / std::sqrt(f_in)),
                                           f_in, f_out));
        gat.head_attn.push_back(
            reg.add(base + "attn", rng.normal_vec(2 * f_out, 0.0, 0.1), 2 * f_out, 1));
    }
    return gat;
}

LSTMCellParams make_lstm(ParamRegistry& reg, Rng& rng, std::size_t feature_dim,
                         std::size_t hidden) {
    const std::size_t in_dim = 1 + feature_dim + hidden;
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    auto w = [&](const char* name) {
        return reg.add(std::string("lstm/") + name, rng.normal_vec(in_dim * hidden, 0.0, scale),
                       in_dim, hidden);
    };
    LSTMCellParams cell;
    cell.hidden = hidden;
    cell.w_input = w("w_input");
    cell.b_input = reg.add("lstm/b_input", std::vector<double>(hidden, 0.0), 1, hidden);
    cell.w_forget = w("w_forget");
    cell.b_forget = reg.add("lstm/b_forget", std::vector<double>(hidden, 1.0), 1, hidden);
    cell.w_output = w("w_output");
    cell.b_output = reg.add("lstm/b_output", std::vector<double>(hidden, 0.0), 1, hidden);
    cell.w_candidate = w("w_candidate");
    cell.b_candidate = reg.add("lstm/b_candidate", std::vector<double>(hidden, 0.0), 1, hidden);
    cell.w_readout = reg.add("lstm/w_readout",
                             rng.normal_vec(hidden, 0.0, 1.0 / std::sqrt(hidden)), hidden, 1);
    cell.b_readout = reg.add("lstm/b_readout", {0.0}, 1, 1);
    return cell;
}

}  // namespace

Tensor Model::hrf_parameters() const {
    if (config.ablation.fixed_hrf || config.direction == Direction::H2E) {
        std::vector<double> tiled;
        tiled.reserve(config.sources * 6);
        for (std::size_t n = 0; n < config.sources; ++n)
            tiled.insert(tiled.end(), kCanonicalHrfTheta.begin(), kCanonicalHrfTheta.end());
        return Tensor::leaf(std::move(tiled), config.sources, 6);
    }
    return infer_hrf_params(hrf);
}

Tensor Model::wavelet_alphas() const {
    if (config.ablation.no_wavelet)
        throw ConfigError("wavelet attention is disabled by no_wavelet");
    return softmax_rows(wavelet_logits);
}

Model build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model model;
    model.config = config;
    model.map = round_robin_map(config.sources, config.targets, config.regions);
    model.canonical_theta =
        Tensor::leaf({kCanonicalHrfTheta.begin(), kCanonicalHrfTheta.end()}, 1, 6);

    ParamRegistry& reg = model.registry;
    Rng master(seed);
    std::uint64_t salt = 0;
    auto next_rng = [&]() { return master.fork(++salt); };

    const std::size_t bands = config.levels + 1;
    const AblationFlags& fl = config.ablation;

    if (config.direction == Direction::E2H) {
        if (!fl.fixed_hrf) {
            Rng r = next_rng();
            model.hrf.embeddings =
                reg.add("hrf/embeddings", r.normal_vec(config.sources * config.embed_dim),
                        config.sources, config.embed_dim);
            model.hrf.w1 = reg.add(
                "hrf/w1",
                r.normal_vec(config.embed_dim * config.hrf_hidden, 0.0,
                             1.0 / std::sqrt(config.embed_dim)),
                config.embed_dim, config.hrf_hidden);
            model.hrf.b1 = reg.add("hrf/b1", std::vector<double>(config.hrf_hidden, 0.0), 1,
                                   config.hrf_hidden);
            model.hrf.w2 = reg.add(
                "hrf/w2",
                r.normal_vec(config.hrf_hidden * config.hrf_hidden, 0.0,
                             1.0 / std::sqrt(config.hrf_hidden)),
                config.hrf_hidden, config.hrf_hidden);
            model.hrf.b2 = reg.add("hrf/b2", std::vector<double>(config.hrf_hidden, 0.0), 1,
                                   config.hrf_hidden);
            model.hrf.w3 =
                reg.add("hrf/w3",
                        r.normal_vec(config.hrf_hidden * 6, 0.0,
                                     0.01 / std::sqrt(config.hrf_hidden)),
                        config.hrf_hidden, 6);
            std::vector<double> b3(6);
            for (std::size_t i = 0; i < 6; ++i) b3[i] = inverse_softplus_floor(kCanonicalHrfTheta[i]);
            model.hrf.b3 = reg.add("hrf/b3", std::move(b3), 1, 6);
        }
        if (!fl.no_wavelet) {
            const std::size_t rows = config.per_parcel_attention ? config.sources : 1;
            model.wavelet_logits =
                reg.add("wavelet/logits", std::vector<double>(rows * bands, 0.0), rows, bands);
        }
        {
            Rng r = next_rng();
            model.gat_source =
                make_gat(reg, r, "gat_source", config.gat_heads, config.step_features(), config.gat_dim);
        }
        {
            Rng r = next_rng();
            for (std::size_t m = 0; m < config.targets; ++m) {
                const std::size_t in_f = model.map.sources[m].size() * config.gat_dim;
                model.lifters.weights.push_back(
                    reg.add("lift/t" + pad2(m) + "/weight",
                            r.normal_vec(in_f * config.lift_dim, 0.0, 1.0 / std::sqrt(in_f)), in_f,
                            config.lift_dim));
                model.lifters.biases.push_back(reg.add("lift/t" + pad2(m) + "/bias",
                                                       std::vector<double>(config.lift_dim, 0.0), 1,
                                                       config.lift_dim));
            }
        }
        {
            Rng r = next_rng();
            model.gat_target =
                make_gat(reg, r, "gat_target", config.gat_heads, config.lift_dim, config.gat_dim);
        }
        if (fl.transformer_decoder) {
            Rng r = next_rng();
            const std::size_t d = config.gat_dim;
            const double s = 1.0 / std::sqrt(static_cast<double>(d));
            model.dec_wq = reg.add("decoder/wq", r.normal_vec(d * d, 0.0, s), d, d);
            model.dec_wk = reg.add("decoder/wk", r.normal_vec(d * d, 0.0, s), d, d);
            model.dec_wv = reg.add("decoder/wv", r.normal_vec(d * d, 0.0, s), d, d);
            model.dec_wo = reg.add("decoder/wo", r.normal_vec(d * d, 0.0, s), d, d);
            model.dec_readout_w = reg.add("decoder/readout_w", r.normal_vec(d, 0.0, s), d, 1);
            model.dec_readout_b = reg.add("decoder/readout_b", {0.0}, 1, 1);
        } else if (fl.no_lstm) {
            Rng r = next_rng();
            model.readout_w =
                reg.add("readout/weight",
                        r.normal_vec(config.gat_dim, 0.0, 1.0 / std::sqrt(config.gat_dim)),
                        config.gat_dim, 1);
            model.readout_b = reg.add("readout/bias", {0.0}, 1, 1);
        } else {
            Rng r = next_rng();
            model.lstm = make_lstm(reg, r, config.gat_dim, config.lstm_hidden);
        }
    } else {
        {
            Rng r = next_rng();
            model.gat_down =
                make_gat(reg, r, "gat_down", config.gat_heads, config.hemo_window(), config.gat_dim);
        }
        {
            Rng r = next_rng();
            for (std::size_t n = 0; n < config.sources; ++n) {
                model.down_proj.weights.push_back(
                    reg.add("down/s" + pad2(n) + "/weight",
                            r.normal_vec(config.gat_dim * config.down_dim, 0.0,
                                         1.0 / std::sqrt(config.gat_dim)),
                            config.gat_dim, config.down_dim));
                model.down_proj.biases.push_back(reg.add("down/s" + pad2(n) + "/bias",
                                                         std::vector<double>(config.down_dim, 0.0),
                                                         1, config.down_dim));
            }
        }
        if (!fl.no_wavelet) {
            Rng r = next_rng();
            const auto widths = band_widths(config.hemo_window(), config.levels);
            for (std::size_t s = 0; s < widths.size(); ++s) {
                model.fs_maps.emplace_back(
                    reg.add("fs/b" + pad2(s) + "/weight",
                            r.normal_vec(config.down_dim * widths[s], 0.0,
                                         1.0 / std::sqrt(config.down_dim)),
                            config.down_dim, widths[s]),
                    reg.add("fs/b" + pad2(s) + "/bias", std::vector<double>(widths[s], 0.0), 1,
                            widths[s]));
            }
        } else {
            Rng r = next_rng();
            model.direct_map_w =
                reg.add("fs/direct/weight",
                        r.normal_vec(config.down_dim * config.hemo_window(), 0.0,
                                     1.0 / std::sqrt(config.down_dim)),
                        config.down_dim, config.hemo_window());
            model.direct_map_b = reg.add(
                "fs/direct/bias", std::vector<double>(config.hemo_window(), 0.0), 1,
                config.hemo_window());
        }
        if (!fl.no_pseudo_hrf) {
            std::vector<double> ones(config.sources * config.stride(), 1.0);
            if (fl.fixed_hrf)
                model.deconv_kernels = Tensor::leaf(std::move(ones), config.sources, config.stride());
            else
                model.deconv_kernels =
                    reg.add("deconv/kernels", std::move(ones), config.sources, config.stride());
        }
        if (!fl.no_lstm) {
            Rng r = next_rng();
            model.lstm = make_lstm(reg, r, 1, config.lstm_hidden);
        }
    }
    return model;
}

void set_target_graph(Model& model, const std::vector<Window>& train_windows) {
    if (train_windows.empty())
        throw ConfigError("set_target_graph: need at least one training window");
    std::vector<Tensor> parts;
    parts.reserve(train_windows.size());
    for (const Window& w : train_windows) {
        if (w.hemo.rows() != model.config.targets)
            throw DimensionError("set_target_graph: window has " + std::to_string(w.hemo.rows()) +
                                 " hemo parcels, model expects " +
                                 std::to_string(model.config.targets));
        parts.push_back(w.hemo);
    }
    NoGradGuard no_grad;
    model.target_graph =
        build_graph(concat_cols(parts), NeighborhoodRule::top_k(model.config.top_k));
    model.target_graph_set = true;
}

namespace {

// Smooth every parcel with its own response kernel (one shared canonical
// kernel under fixed_hrf).
Tensor smooth_rows(const Model& model, const Tensor& x) {
    const double dt = 1.0 / model.config.electro_rate_hz;
    std::vector<Tensor> rows;
    rows.reserve(x.rows());
    if (model.config.ablation.fixed_hrf) {
        const HRFKernel kernel =
            sample_hrf(model.canonical_theta, dt, model.config.hrf_duration_s);
        for (std::size_t n = 0; n < x.rows(); ++n)
            rows.push_back(smooth(slice_rows(x, n, n + 1), kernel, dt));
    } else {
        const Tensor theta = infer_hrf_params(model.hrf);
        for (std::size_t n = 0; n < x.rows(); ++n) {
            const HRFKernel kernel =
                sample_hrf(slice_rows(theta, n, n + 1), dt, model.config.hrf_duration_s);
            rows.push_back(smooth(slice_rows(x, n, n + 1), kernel, dt));
        }
    }
    return concat_rows(rows);
}

// Attention-weighted band concatenation; per-parcel mode applies each parcel's
// own logits row to its coefficients.
Tensor attend(const Model& model, const ScaleCoeffs& coeffs, Introspection* intro) {
    if (!model.config.per_parcel_attention) {
        if (intro) intro->wavelet_alpha = attention_weights(model.wavelet_logits);
        return attend_concat(coeffs, model.wavelet_logits);
    }
    if (intro) intro->wavelet_alpha = softmax_rows(model.wavelet_logits);
    std::vector<Tensor> rows;
    rows.reserve(coeffs.bands[0].rows());
    for (std::size_t n = 0; n < coeffs.bands[0].rows(); ++n) {
        ScaleCoeffs one;
        one.original_cols = coeffs.original_cols;
        one.padded_cols = coeffs.padded_cols;
        one.family = coeffs.family;
        for (const Tensor& band : coeffs.bands) one.bands.push_back(slice_rows(band, n, n + 1));
        rows.push_back(attend_concat(one, slice_rows(model.wavelet_logits, n, n + 1)));
    }
    return concat_rows(rows);
}

Tensor causal_attention_head(const Model& model, const std::vector<Tensor>& feats,
                             std::size_t parcel) {
    const std::size_t steps = feats.size();
    const std::size_t d = model.config.gat_dim;
    std::vector<Tensor> rows;
    rows.reserve(steps);
    for (const Tensor& f : feats) rows.push_back(slice_rows(f, parcel, parcel + 1));
    const Tensor x = concat_rows(rows);  // steps x F'
    const Tensor q = matmul(x, model.dec_wq);
    const Tensor k = matmul(x, model.dec_wk);
    const Tensor v = matmul(x, model.dec_wv);
    std::vector<double> mask(steps * steps, 0.0);
    for (std::size_t i = 0; i < steps; ++i)
        for (std::size_t j = i + 1; j < steps; ++j) mask[i * steps + j] = -1e30;
    const Tensor scores = add(smul(matmul(q, transpose_t(k)), 1.0 / std::sqrt(d)),
                              Tensor::leaf(std::move(mask), steps, steps));
    const Tensor mixed = matmul(softmax_rows(scores), v);
    const Tensor out = matmul(mixed, model.dec_wo);
    return transpose_t(add_rowvec(matmul(out, model.dec_readout_w), model.dec_readout_b));
}

}  // namespace

Tensor forward_e2h(const Model& model, const Tensor& electro, const ForwardOptions& opts,
                   Introspection* intro) {
    const ModelConfig& cfg = model.config;
    if (cfg.direction != Direction::E2H)
        throw ConfigError("forward_e2h: model is configured for h2e");
    if (electro.rows() != cfg.sources || electro.cols() != cfg.electro_window())
        throw DimensionError("forward_e2h: input must be " + std::to_string(cfg.sources) + "x" +
                             std::to_string(cfg.electro_window()) + ", got " +
                             std::to_string(electro.rows()) + "x" +
                             std::to_string(electro.cols()));
    if (model.map.source_count != cfg.sources || model.map.target_count() != cfg.targets)
        throw ConfigError("forward_e2h: parcellation map does not match the configuration");
    if (!model.target_graph_set)
        throw ConfigError("forward_e2h: target graph not frozen; call set_target_graph first");

    const Tensor smoothed = smooth_rows(model, electro);
    Tensor z;
    if (cfg.ablation.no_wavelet) {
        z = smoothed;
    } else {
        const ScaleCoeffs coeffs = decompose(smoothed, {cfg.family, cfg.levels});
        z = attend(model, coeffs, intro);
    }

    SimilarityGraph source_graph;
    {
        NoGradGuard no_grad;
        source_graph = build_graph(electro, NeighborhoodRule::top_k(cfg.top_k));
    }

    const std::size_t steps = cfg.hemo_window();
    const std::size_t w = z.cols() / steps;
    std::vector<Tensor> feats;
    feats.reserve(steps);
    for (std::size_t tau = 0; tau < steps; ++tau) {
        const bool tap = intro != nullptr && tau + 1 == steps;
        const Tensor slab = slice_cols(z, tau * w, (tau + 1) * w);
        const Tensor h_src = gat_forward(source_graph, slab, model.gat_source,
                                         tap ? &intro->gat_source_beta : nullptr);
        const Tensor lifted = region_lift(h_src, model.map, model.lifters);
        feats.push_back(gat_forward(model.target_graph, lifted, model.gat_target,
                                    tap ? &intro->gat_target_beta : nullptr));
    }

    if (cfg.ablation.transformer_decoder) {
        std::vector<Tensor> rows;
        rows.reserve(cfg.targets);
        for (std::size_t m = 0; m < cfg.targets; ++m)
            rows.push_back(causal_attention_head(model, feats, m));
        return concat_rows(rows);
    }
    if (cfg.ablation.no_lstm) {
        std::vector<Tensor> cols;
        cols.reserve(steps);
        for (const Tensor& f : feats)
            cols.push_back(add_rowvec(matmul(f, model.readout_w), model.readout_b));
        return concat_cols(cols);
    }
    RolloutConfig rc;
    rc.teacher_forcing_ratio = opts.teacher_forcing;
    rc.train = opts.train;
    rc.seed = opts.seed;
    return rollout(model.lstm, feats, rc, opts.teacher);
}

namespace {

struct H2EPrefix {
    Tensor x_up;         // sources x T
    ScaleCoeffs coeffs;  // empty bands when no_wavelet
};

H2EPrefix h2e_prefix(const Model& model, const Tensor& hemo, Introspection* intro) {
    const ModelConfig& cfg = model.config;
    if (cfg.direction != Direction::H2E)
        throw ConfigError("forward_h2e: model is configured for e2h");
    if (hemo.rows() != cfg.targets || hemo.cols() != cfg.hemo_window())
        throw DimensionError("forward_h2e: input must be " + std::to_string(cfg.targets) + "x" +
                             std::to_string(cfg.hemo_window()) + ", got " +
                             std::to_string(hemo.rows()) + "x" + std::to_string(hemo.cols()));
    if (model.map.source_count != cfg.sources || model.map.target_count() != cfg.targets)
        throw ConfigError("forward_h2e: parcellation map does not match the configuration");

    SimilarityGraph hemo_graph;
    {
        NoGradGuard no_grad;
        hemo_graph = build_graph(hemo, NeighborhoodRule::top_k(cfg.top_k));
    }
    const Tensor h_x = spatial_downsample(hemo_graph, hemo, model.gat_down, model.map,
                                          model.down_proj, intro ? &intro->gat_down_beta : nullptr);

    H2EPrefix out;
    Tensor x_low;
    if (cfg.ablation.no_wavelet) {
        x_low = add_rowvec(matmul(h_x, model.direct_map_w), model.direct_map_b);
    } else {
        out.coeffs =
            estimate_coeffs(h_x, model.fs_maps, {cfg.family, cfg.levels}, cfg.hemo_window());
        x_low = reconstruct(out.coeffs, {cfg.family, cfg.levels});
    }

    if (cfg.ablation.no_pseudo_hrf) {
        out.x_up = repeat_cols(x_low, cfg.stride());
    } else {
        std::vector<Tensor> rows;
        rows.reserve(cfg.sources);
        for (std::size_t n = 0; n < cfg.sources; ++n)
            rows.push_back(deconv_upsample(slice_rows(x_low, n, n + 1),
                                           slice_rows(model.deconv_kernels, n, n + 1), cfg.stride(),
                                           cfg.electro_window()));
        out.x_up = concat_rows(rows);
    }
    return out;
}

std::vector<Tensor> step_slices(const Tensor& x, std::size_t start, std::size_t stop) {
    std::vector<Tensor> out;
    out.reserve(stop - start);
    for (std::size_t t = start; t < stop; ++t) out.push_back(slice_cols(x, t, t + 1));
    return out;
}

}  // namespace

H2EOutput forward_h2e(const Model& model, const Tensor& hemo, const ForwardOptions& opts,
                      Introspection* intro) {
    H2EPrefix prefix = h2e_prefix(model, hemo, intro);
    H2EOutput out;
    out.coeffs = std::move(prefix.coeffs);
    if (model.config.ablation.no_lstm) {
        out.prediction = prefix.x_up;
        return out;
    }
    RolloutConfig rc;
    rc.teacher_forcing_ratio = opts.teacher_forcing;
    rc.train = opts.train;
    rc.seed = opts.seed;
    const std::size_t t_len = model.config.electro_window();
    out.prediction =
        rollout(model.lstm, step_slices(prefix.x_up, 0, t_len), rc, opts.teacher);
    return out;
}

ScaleCoeffs h2e_skip_target(const Model& model, const Tensor& electro) {
    const ModelConfig& cfg = model.config;
    if (electro.rows() != cfg.sources || electro.cols() != cfg.electro_window())
        throw DimensionError("skip target: electro window shape mismatch");
    NoGradGuard no_grad;
    const double dt = 1.0 / cfg.electro_rate_hz;
    const HRFKernel kernel = sample_hrf(model.canonical_theta, dt, cfg.hrf_duration_s);
    const std::size_t stride = cfg.stride();
    const std::size_t t_hemo = cfg.hemo_window();
    std::vector<double> binned(cfg.sources * t_hemo);
    for (std::size_t n = 0; n < cfg.sources; ++n) {
        const Tensor s = smooth(slice_rows(electro, n, n + 1), kernel, dt);
        const auto& sv = s.values();
        for (std::size_t k = 0; k < t_hemo; ++k) {
            double acc = 0.0;
            for (std::size_t i = 0; i < stride; ++i) acc += sv[k * stride + i];
            binned[n * t_hemo + k] = acc / static_cast<double>(stride);
        }
    }
    return decompose(Tensor::leaf(std::move(binned), cfg.sources, t_hemo),
                     {cfg.family, cfg.levels});
}

Tensor cosine_match_loss(const Tensor& pred, const Tensor& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw DimensionError("cosine_match_loss: shapes " + std::to_string(pred.rows()) + "x" +
                             std::to_string(pred.cols()) + " vs " + std::to_string(truth.rows()) +
                             "x" + std::to_string(truth.cols()));
    return cosine_row_loss(pred, truth);
}

Tensor match_loss(const Model& model, const Tensor& pred, const Tensor& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
        throw DimensionError("match_loss: prediction and truth shapes differ");
    if (model.config.ablation.mse_loss) {
        const Tensor d = sub(pred, truth);
        return smul(sum_t(mul(d, d)), 1.0 / static_cast<double>(pred.size()));
    }
    if (model.config.direction == Direction::E2H || pred.cols() <= model.config.chunk_len)
        return cosine_match_loss(pred, truth);
    // Equal-weight mean over truncated-backprop spans, so chunked training
    // optimizes exactly this value.
    const std::size_t chunk = model.config.chunk_len;
    const std::size_t chunks = (pred.cols() + chunk - 1) / chunk;
    Tensor acc;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * chunk;
        const std::size_t hi = std::min(pred.cols(), lo + chunk);
        const Tensor part = cosine_match_loss(slice_cols(pred, lo, hi), slice_cols(truth, lo, hi));
        acc = c == 0 ? part : add(acc, part);
    }
    return smul(acc, 1.0 / static_cast<double>(chunks));
}

double total_loss(double l_match, double l_reg, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("total_loss: lambda must lie in [0, 1]");
    return lambda * l_match + (1.0 - lambda) * l_reg;
}

namespace {

void abort_if_nonfinite(const Tensor& loss, const char* stage) {
    if (std::isfinite(loss.item())) return;
    const std::string culprit = first_nonfinite(loss);
    throw NumericError(std::string("training aborted at ") + stage +
                       ": first non-finite tensor: " + (culprit.empty() ? "<loss>" : culprit));
}

double window_mean_spearman(const Tensor& pred, const Tensor& truth) {
    double acc = 0.0;
    const auto& pv = pred.values();
    const auto& tv = truth.values();
    for (std::size_t r = 0; r < pred.rows(); ++r) {
        std::vector<double> a(pv.begin() + r * pred.cols(), pv.begin() + (r + 1) * pred.cols());
        std::vector<double> b(tv.begin() + r * truth.cols(), tv.begin() + (r + 1) * truth.cols());
        acc += spearman(a, b);
    }
    return acc / static_cast<double>(pred.rows());
}

struct WindowLoss {
    double match = 0.0;
    double reg = 0.0;
};

// Full-window objective with one backward pass.
WindowLoss train_step_e2h(Model& model, const Window& win, double grad_scale, double forcing,
                          std::uint64_t seed) {
    ForwardOptions opts;
    opts.teacher_forcing = forcing;
    opts.train = true;
    opts.seed = seed;
    opts.teacher = &win.hemo;
    const Tensor pred = forward_e2h(model, win.electro, opts);
    const Tensor lm = match_loss(model, pred, win.hemo);
    abort_if_nonfinite(lm, "e2h match loss");
    backward(smul(lm, grad_scale));
    return {lm.item(), 0.0};
}

// Chunked objective: the refiner is unrolled chunk_len steps at a time with the
// carried state detached, and every chunk contributes its share of the match
// loss through an immediate backward pass (the decoder prefix accumulates
// gradient across chunks). The skip loss flows in one final pass.
WindowLoss train_step_h2e(Model& model, const Window& win, double grad_scale, double lambda,
                          double forcing, std::uint64_t seed) {
    const ModelConfig& cfg = model.config;
    H2EPrefix prefix = h2e_prefix(model, win.hemo, nullptr);
    const bool skip_active =
        !cfg.ablation.no_skip_loss && !cfg.ablation.no_wavelet;
    const bool skip_reported = !cfg.ablation.no_wavelet;
    const double match_weight = skip_active ? lambda : 1.0;

    const std::size_t t_len = cfg.electro_window();
    const std::size_t chunk = cfg.chunk_len;
    const std::size_t chunks = (t_len + chunk - 1) / chunk;
    const bool mse = cfg.ablation.mse_loss;

    double match_value = 0.0;
    if (cfg.ablation.no_lstm) {
        const Tensor lm = match_loss(model, prefix.x_up, win.electro);
        abort_if_nonfinite(lm, "h2e match loss");
        match_value = lm.item();
        backward(smul(lm, match_weight * grad_scale));
    } else {
        LSTMState state;
        Tensor prev;
        for (std::size_t c = 0; c < chunks; ++c) {
            const std::size_t lo = c * chunk;
            const std::size_t hi = std::min(t_len, lo + chunk);
            RolloutConfig rc;
            rc.teacher_forcing_ratio = forcing;
            rc.train = true;
            rc.seed = derived_seed(seed, c, 0, 0);
            const Tensor target_chunk = slice_cols(win.electro, lo, hi);
            RolloutResult r =
                rollout_span(model.lstm, step_slices(prefix.x_up, lo, hi), rc, &target_chunk,
                             c == 0 ? nullptr : &state, c == 0 ? nullptr : &prev);
            Tensor chunk_loss;
            double weight;
            if (mse) {
                const Tensor d = sub(r.predictions, target_chunk);
                chunk_loss = sum_t(mul(d, d));
                match_value += chunk_loss.item() / static_cast<double>(win.electro.size());
                weight = match_weight * grad_scale / static_cast<double>(win.electro.size());
            } else {
                chunk_loss = cosine_match_loss(r.predictions, target_chunk);
                match_value += chunk_loss.item() / static_cast<double>(chunks);
                weight = match_weight * grad_scale / static_cast<double>(chunks);
            }
            abort_if_nonfinite(chunk_loss, "h2e match loss");
            backward(smul(chunk_loss, weight));
            state = {detach(r.state.h), detach(r.state.c)};
            prev = detach(r.last_prediction);
        }
    }

    double reg_value = 0.0;
    if (skip_reported) {
        const ScaleCoeffs truth_coeffs = h2e_skip_target(model, win.electro);
        if (skip_active) {
            const Tensor lr = skip_loss(truth_coeffs, prefix.coeffs);
            abort_if_nonfinite(lr, "h2e skip loss");
            reg_value = lr.item();
            backward(smul(lr, (1.0 - lambda) * grad_scale));
        } else {
            // Reported for the history but kept out of every gradient path.
            ScaleCoeffs det;
            det.original_cols = prefix.coeffs.original_cols;
            det.padded_cols = prefix.coeffs.padded_cols;
            det.family = prefix.coeffs.family;
            for (const Tensor& band : prefix.coeffs.bands) det.bands.push_back(detach(band));
            reg_value = skip_loss(truth_coeffs, det).item();
        }
    }
    return {match_value, reg_value};
}

}  // namespace

TrainResult train(Model& model, const WindowSet& windows, const TrainConfig& tc,
                  Adam* optimizer) {
    tc.validate();
    model.config.validate();
    if (windows.train.empty()) throw ConfigError("train: no training windows");
    for (const Window& w : windows.train) {
        if (w.electro.rows() != model.config.sources ||
            w.electro.cols() != model.config.electro_window() ||
            w.hemo.rows() != model.config.targets ||
            w.hemo.cols() != model.config.hemo_window())
            throw ConfigError("train: window shapes do not match the model configuration");
    }
    if (model.config.direction == Direction::E2H && !model.target_graph_set)
        set_target_graph(model, windows.train);

    Adam local(model.registry, tc.lr);
    Adam& opt = optimizer != nullptr ? *optimizer : local;
    Rng shuffler(tc.seed);
    TrainResult result;
    const double grad_scale = 1.0 / static_cast<double>(tc.batch);

    for (std::size_t local = 0; local < tc.epochs; ++local) {
        const std::size_t epoch = tc.first_epoch + local;
        const double den = static_cast<double>(std::max<std::size_t>(1, tc.epochs - 1));
        const double forcing =
            tc.teacher_forcing_start * std::max(0.0, 1.0 - static_cast<double>(local) / den);

        std::vector<std::size_t> order(windows.train.size());
        std::iota(order.begin(), order.end(), 0);
        Rng epoch_rng = shuffler.fork(epoch + 1);
        epoch_rng.shuffle(order);

        double sum_match = 0.0, sum_reg = 0.0, sum_total = 0.0;
        std::size_t in_batch = 0;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const Window& win = windows.train[order[i]];
            const std::uint64_t seed = derived_seed(tc.seed, epoch, i, 1);
            WindowLoss wl;
            if (model.config.direction == Direction::E2H)
                wl = train_step_e2h(model, win, grad_scale, forcing, seed);
            else
                wl = train_step_h2e(model, win, grad_scale, tc.lambda, forcing, seed);
            sum_match += wl.match;
            sum_reg += wl.reg;
            sum_total += model.config.direction == Direction::E2H
                             ? wl.match
                             : total_loss(wl.match, wl.reg,
                                          model.config.ablation.no_skip_loss ||
                                                  model.config.ablation.no_wavelet
                                              ? 1.0
                                              : tc.lambda);
            if (++in_batch == tc.batch || i + 1 == order.size()) {
                opt.step();
                in_batch = 0;
            }
        }

        double val = 0.0;
        if (!windows.val.empty()) {
            NoGradGuard no_grad;
            for (const Window& w : windows.val) {
                if (model.config.direction == Direction::E2H) {
                    val += window_mean_spearman(forward_e2h(model, w.electro), w.hemo);
                } else {
                    val += window_mean_spearman(forward_h2e(model, w.hemo).prediction, w.electro);
                }
            }
            val /= static_cast<double>(windows.val.size());
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.l_match = sum_match / static_cast<double>(order.size());
        stats.l_reg = sum_reg / static_cast<double>(order.size());
        stats.total = sum_total / static_cast<double>(order.size());
        stats.val_spearman = val;
        result.history.push_back(stats);
        model.epochs_completed = epoch + 1;
    }
    return result;
}

Tensor window_band_features(const Model& model, const Tensor& electro) {
    const ModelConfig& cfg = model.config;
    if (electro.rows() != cfg.sources || electro.cols() != cfg.electro_window())
        throw DimensionError("band features: electro window shape mismatch");
    NoGradGuard no_grad;
    const Tensor smoothed = smooth_rows(model, electro);
    const ScaleCoeffs coeffs = decompose(smoothed, {cfg.family, cfg.levels});
    std::vector<double> alphas;
    if (cfg.ablation.no_wavelet) {
        alphas.assign(coeffs.band_count(), 1.0);
    } else {
        const Tensor a = softmax_rows(model.wavelet_logits);
        alphas = a.values();  // 1 x B, or N x B in per-parcel mode
    }
    const std::size_t bands = coeffs.band_count();
    std::vector<double> features(2 * bands);
    for (std::size_t s = 0; s < bands; ++s) {
        const Tensor& band = coeffs.bands[s];
        const auto& v = band.values();
        double abs_acc = 0.0, sq_acc = 0.0;
        for (std::size_t r = 0; r < band.rows(); ++r) {
            const double a = cfg.ablation.no_wavelet
                                 ? 1.0
                                 : (cfg.per_parcel_attention ? alphas[r * bands + s] : alphas[s]);
            for (std::size_t j = 0; j < band.cols(); ++j) {
                const double x = a * v[r * band.cols() + j];
                abs_acc += std::abs(x);
                sq_acc += x * x;
            }
        }
        const double count = static_cast<double>(band.size());
        features[2 * s] = abs_acc / count;
        features[2 * s + 1] = 0.5 * std::log(sq_acc / count + 1e-12);
    }
    return Tensor::leaf(std::move(features), 1, 2 * bands);
}

Classifier train_classifier(const Model& model, const std::vector<Window>& windows,
                            std::size_t classes, std::size_t epochs, double lr,
                            std::uint64_t seed) {
    if (windows.empty()) throw ConfigError("train_classifier: no windows");
    if (classes < 2) throw ConfigError("train_classifier: need at least two classes");
    std::vector<int> labels;
    std::vector<Tensor> rows;
    rows.reserve(windows.size());
    for (const Window& w : windows) {
        if (w.label < 0 || static_cast<std::size_t>(w.label) >= classes)
            throw DataError("train_classifier: label " + std::to_string(w.label) +
                            " outside [0, " + std::to_string(classes) + ")");
        labels.push_back(w.label);
        rows.push_back(window_band_features(model, w.electro));
    }
    Tensor features;
    {
        NoGradGuard no_grad;
        features = concat_rows(rows);
    }
    const std::size_t f_dim = features.cols();

    ParamRegistry reg;
    Rng rng(seed);
    Tensor weight = reg.add("classifier/weight",
                            rng.normal_vec(f_dim * classes, 0.0, 1.0 / std::sqrt(f_dim)), f_dim,
                            classes);
    Tensor bias = reg.add("classifier/bias", std::vector<double>(classes, 0.0), 1, classes);
    Adam optimizer(reg, lr);
    for (std::size_t e = 0; e < epochs; ++e) {
        const Tensor logits = add_rowvec(matmul(features, weight), bias);
        const Tensor loss = cross_entropy_rows(logits, labels);
        abort_if_nonfinite(loss, "classifier loss");
        backward(loss);
        optimizer.step();
    }
    Classifier head;
    head.classes = classes;
    {
        NoGradGuard no_grad;
        head.weight = detach(weight);
        head.bias = detach(bias);
    }
    return head;
}

std::vector<int> classify(const Model& model, const Classifier& head,
                          const std::vector<Window>& windows) {
    NoGradGuard no_grad;
    std::vector<int> out;
    out.reserve(windows.size());
    for (const Window& w : windows) {
        const Tensor f = window_band_features(model, w.electro);
        const Tensor logits = add_rowvec(matmul(f, head.weight), head.bias);
        const auto& v = logits.values();
        out.push_back(static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()));
    }
    return out;
}

double classification_accuracy(const Model& model, const Classifier& head,
                               const std::vector<Window>& windows) {
    if (windows.empty()) throw ConfigError("classification_accuracy: no windows");
    const std::vector<int> pred = classify(model, head, windows);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < windows.size(); ++i)
        if (pred[i] == windows[i].label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(windows.size());
}

namespace {

json ablation_to_json(const AblationFlags& a) {
    return {{"no_wavelet", a.no_wavelet},
            {"no_lstm", a.no_lstm},
            {"fixed_hrf", a.fixed_hrf},
            {"mse_loss", a.mse_loss},
            {"no_skip_loss", a.no_skip_loss},
            {"no_pseudo_hrf", a.no_pseudo_hrf},
            {"transformer_decoder", a.transformer_decoder}};
}

AblationFlags ablation_from_json(const json& j) {
    AblationFlags a;
    for (const auto& [key, value] : j.items()) {
        if (key == "no_wavelet") a.no_wavelet = value.get<bool>();
        else if (key == "no_lstm") a.no_lstm = value.get<bool>();
        else if (key == "fixed_hrf") a.fixed_hrf = value.get<bool>();
        else if (key == "mse_loss") a.mse_loss = value.get<bool>();
        else if (key == "no_skip_loss") a.no_skip_loss = value.get<bool>();
        else if (key == "no_pseudo_hrf") a.no_pseudo_hrf = value.get<bool>();
        else if (key == "transformer_decoder") a.transformer_decoder = value.get<bool>();
        else throw ConfigError("model config: unknown ablation flag '" + key + "'");
    }
    return a;
}

json model_config_to_json(const ModelConfig& c) {
    json j;
    j["sources"] = c.sources;
    j["targets"] = c.targets;
    j["regions"] = c.regions;
    j["electro_rate_hz"] = c.electro_rate_hz;
    j["tr_s"] = c.tr_s;
    j["window_s"] = c.window_s;
    j["family"] = c.family == Wavelet::Haar ? "haar" : "db4";
    j["levels"] = c.levels;
    j["embed_dim"] = c.embed_dim;
    j["hrf_hidden"] = c.hrf_hidden;
    j["gat_heads"] = c.gat_heads;
    j["gat_dim"] = c.gat_dim;
    j["lift_dim"] = c.lift_dim;
    j["down_dim"] = c.down_dim;
    j["top_k"] = c.top_k;
    j["lstm_hidden"] = c.lstm_hidden;
    j["chunk_len"] = c.chunk_len;
    j["hrf_duration_s"] = c.hrf_duration_s;
    j["direction"] = direction_name(c.direction);
    j["per_parcel_attention"] = c.per_parcel_attention;
    j["ablation"] = ablation_to_json(c.ablation);
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "sources") c.sources = value.get<std::size_t>();
        else if (key == "targets") c.targets = value.get<std::size_t>();
        else if (key == "regions") c.regions = value.get<std::size_t>();
        else if (key == "electro_rate_hz") c.electro_rate_hz = value.get<double>();
        else if (key == "tr_s") c.tr_s = value.get<double>();
        else if (key == "window_s") c.window_s = value.get<double>();
        else if (key == "family") {
            const std::string f = value.get<std::string>();
            if (f == "haar") c.family = Wavelet::Haar;
            else if (f == "db4") c.family = Wavelet::Db4;
            else throw ConfigError("model config: unknown wavelet family '" + f + "'");
        } else if (key == "levels") c.levels = value.get<std::size_t>();
        else if (key == "embed_dim") c.embed_dim = value.get<std::size_t>();
        else if (key == "hrf_hidden") c.hrf_hidden = value.get<std::size_t>();
        else if (key == "gat_heads") c.gat_heads = value.get<std::size_t>();
        else if (key == "gat_dim") c.gat_dim = value.get<std::size_t>();
        else if (key == "lift_dim") c.lift_dim = value.get<std::size_t>();
        else if (key == "down_dim") c.down_dim = value.get<std::size_t>();
        else if (key == "top_k") c.top_k = value.get<std::size_t>();
        else if (key == "lstm_hidden") c.lstm_hidden = value.get<std::size_t>();
        else if (key == "chunk_len") c.chunk_len = value.get<std::size_t>();
        else if (key == "hrf_duration_s") c.hrf_duration_s = value.get<double>();
        else if (key == "direction") c.direction = direction_from_name(value.get<std::string>());
        else if (key == "per_parcel_attention") c.per_parcel_attention = value.get<bool>();
        else if (key == "ablation") c.ablation = ablation_from_json(value);
        else throw ConfigError("model config: unknown key '" + key + "'");
    }
    return c;
}

json train_config_to_json(const TrainConfig& c) {
    json j;
    j["lambda"] = c.lambda;
    j["lr"] = c.lr;
    j["epochs"] = c.epochs;
    j["batch"] = c.batch;
    j["teacher_forcing_start"] = c.teacher_forcing_start;
    j["seed"] = c.seed;
    j["first_epoch"] = c.first_epoch;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "lambda") c.lambda = value.get<double>();
        else if (key == "lr") c.lr = value.get<double>();
        else if (key == "epochs") c.epochs = value.get<std::size_t>();
        else if (key == "batch") c.batch = value.get<std::size_t>();
        else if (key == "teacher_forcing_start") c.teacher_forcing_start = value.get<double>();
        else if (key == "seed") c.seed = value.get<std::uint64_t>();
        else if (key == "first_epoch") c.first_epoch = value.get<std::size_t>();
        else throw ConfigError("train config: unknown key '" + key + "'");
    }
    return c;
}

json parse_strict(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + " is not valid JSON: " + e.what());
    }
}

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_uint(std::ifstream& in, int bytes, const std::filesystem::path& file) {
    unsigned char b[8] = {};
    in.read(reinterpret_cast<char*>(b), bytes);
    if (!in) throw DataError("checkpoint " + file.string() + " is truncated");
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

void write_block(std::ofstream& out, const std::vector<double>& values) {
    std::vector<unsigned char> bytes(values.size() * 8);
    std::memcpy(bytes.data(), values.data(), bytes.size());
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i + 8 <= bytes.size(); i += 8)
            for (std::size_t j = 0; j < 4; ++j) std::swap(bytes[i + j], bytes[i + 7 - j]);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> read_block(std::ifstream& in, std::size_t count,
                               const std::filesystem::path& file) {
    std::vector<unsigned char> bytes(count * 8);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw DataError("checkpoint " + file.string() + " is truncated");
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i + 8 <= bytes.size(); i += 8)
            for (std::size_t j = 0; j < 4; ++j) std::swap(bytes[i + j], bytes[i + 7 - j]);
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), bytes.data(), bytes.size());
    return values;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainConfig& tc, const Adam* optimizer,
                     const std::filesystem::path& file) {
    if (optimizer != nullptr && optimizer->steps_taken() == 0) optimizer = nullptr;
    json header;
    header["model"] = model_config_to_json(model.config);
    header["train"] = train_config_to_json(tc);
    header["epochs_completed"] = model.epochs_completed;
    json params = json::array();
    for (const auto& [path, tensor] : model.registry.all())
        params.push_back({{"path", path}, {"rows", tensor.rows()}, {"cols", tensor.cols()}});
    header["params"] = params;
    json buffers = json::array();
    if (model.target_graph_set)
        buffers.push_back({{"path", "graph/target_weights"},
                           {"rows", model.target_graph.nodes},
                           {"cols", model.target_graph.nodes}});
    header["buffers"] = buffers;
    if (optimizer != nullptr)
        header["optimizer"] = {{"steps", optimizer->steps_taken()}};
    else
        header["optimizer"] = nullptr;

    const std::string header_text = header.dump();
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + file.string() + " for writing");
    out.write(kCheckpointMagic, 4);
    write_u32(out, kCheckpointVersion);
    write_u64(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [path, tensor] : model.registry.all()) write_block(out, tensor.values());
    if (model.target_graph_set) write_block(out, model.target_graph.weights);
    if (optimizer != nullptr) {
        for (const auto& [path, tensor] : model.registry.all()) {
            write_block(out, optimizer->first_moment(path));
            write_block(out, optimizer->second_moment(path));
        }
    }
    if (!out) throw DataError("short write to " + file.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + file.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw DataError(file.string() + " is not a checkpoint (bad magic)");
    const auto version = static_cast<std::uint32_t>(read_uint(in, 4, file));
    if (version != kCheckpointVersion)
        throw DataError("checkpoint version " + std::to_string(version) +
                        " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    const auto header_len = read_uint(in, 8, file);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw DataError("checkpoint " + file.string() + " is truncated");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw DataError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }
    for (const auto& [key, value] : header.items()) {
        (void)value;
        if (key != "model" && key != "train" && key != "epochs_completed" && key != "params" &&
            key != "buffers" && key != "optimizer")
            throw DataError("checkpoint holds unknown field '" + key +
                            "'; it was written by a newer version");
    }

    LoadedCheckpoint out;
    try {
        const ModelConfig mc = model_config_from_json(header.at("model"));
        out.train_config = train_config_from_json(header.at("train"));
        out.model = build_model(mc, 0);
        out.model.epochs_completed = header.at("epochs_completed").get<std::size_t>();

        std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> manifest;
        for (const auto& entry : header.at("params"))
            manifest.emplace_back(entry.at("path").get<std::string>(),
                                  std::make_pair(entry.at("rows").get<std::size_t>(),
                                                 entry.at("cols").get<std::size_t>()));
        const auto& reg = out.model.registry.all();
        if (manifest.size() != reg.size())
            throw DataError("checkpoint lists " + std::to_string(manifest.size()) +
                            " parameters, the configuration builds " + std::to_string(reg.size()));
        std::size_t idx = 0;
        for (const auto& [path, tensor] : reg) {
            const auto& [mpath, shape] = manifest[idx++];
            if (mpath != path || shape.first != tensor.rows() || shape.second != tensor.cols())
                throw DataError("checkpoint parameter '" + mpath +
                                "' does not match the configuration (expected '" + path + "')");
        }
        for (const auto& [path, tensor] : reg) {
            Tensor t = tensor;
            t.mutable_values() = read_block(in, t.size(), file);
        }
        for (const auto& entry : header.at("buffers")) {
            const std::string path = entry.at("path").get<std::string>();
            const auto rows = entry.at("rows").get<std::size_t>();
            const auto cols = entry.at("cols").get<std::size_t>();
            if (path == "graph/target_weights") {
                if (rows != out.model.config.targets || cols != rows)
                    throw DataError("checkpoint target graph has the wrong shape");
                out.model.target_graph = graph_from_weights(
                    read_block(in, rows * cols, file), rows,
                    NeighborhoodRule::top_k(out.model.config.top_k));
                out.model.target_graph_set = true;
            } else {
                throw DataError("checkpoint holds unknown buffer '" + path + "'");
            }
        }
        if (!header.at("optimizer").is_null()) {
            out.has_optimizer = true;
            out.optimizer_steps = header.at("optimizer").at("steps").get<std::size_t>();
            for (const auto& [path, tensor] : reg) {
                std::vector<double> m = read_block(in, tensor.size(), file);
                std::vector<double> v = read_block(in, tensor.size(), file);
                out.moments[path] = {std::move(m), std::move(v)};
            }
        }
    } catch (const json::exception& e) {
        throw DataError("checkpoint header is malformed: " + std::string(e.what()));
    }
    return out;
}

std::string model_config_to_json_text(const ModelConfig& config) {
    return model_config_to_json(config).dump(2) + "\n";
}

ModelConfig model_config_from_json_text(const std::string& text) {
    return model_config_from_json(parse_strict(text, "model config"));
}

std::string train_config_to_json_text(const TrainConfig& config) {
    return train_config_to_json(config).dump(2) + "\n";
}

TrainConfig train_config_from_json_text(const std::string& text) {
    return train_config_from_json(parse_strict(text, "train config"));
}

std::string config_hash(const ModelConfig& mc, const TrainConfig& tc) {
    const std::string text = model_config_to_json(mc).dump() + "\n" + train_config_to_json(tc).dump();
    return to_hex16(fnv1a(text.data(), text.size()));
}

}  // namespace samba
