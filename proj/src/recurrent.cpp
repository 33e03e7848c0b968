#include "samba/recurrent.hpp"

#include <string>

#include "samba/common.hpp"
#include "samba/rng.hpp"

namespace samba {

void LSTMCellParams::validate(std::size_t feature_dim) const {
    const std::size_t in_dim = 1 + feature_dim + hidden;
    auto check = [&](const Tensor& w, const Tensor& b, const char* name) {
        if (w.rows() != in_dim || w.cols() != hidden)
            throw DimensionError(std::string("lstm: ") + name + " gate weights are " +
                                 std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                                 ", expected " + std::to_string(in_dim) + "x" + std::to_string(hidden));
        if (b.rows() != 1 || b.cols() != hidden)
            throw DimensionError(std::string("lstm: ") + name + " gate bias must be 1x" +
                                 std::to_string(hidden));
    };
    check(w_input, b_input, "input");
    check(w_forget, b_forget, "forget");
    check(w_output, b_output, "output");
    check(w_candidate, b_candidate, "candidate");
    if (w_readout.rows() != hidden || w_readout.cols() != 1)
        throw DimensionError("lstm: readout weights must be " + std::to_string(hidden) + "x1");
    if (b_readout.rows() != 1 || b_readout.cols() != 1)
        throw DimensionError("lstm: readout bias must be 1x1");
}

std::vector<Tensor> LSTMCellParams::tensors() const {
    return {w_input,  b_input,  w_forget,    b_forget,    w_output, b_output,
            w_candidate, b_candidate, w_readout, b_readout};
}

LSTMState lstm_initial_state(const LSTMCellParams& cell, std::size_t parcels) {
    return {Tensor::zeros(parcels, cell.hidden), Tensor::zeros(parcels, cell.hidden)};
}

std::pair<Tensor, LSTMState> lstm_step(const LSTMCellParams& cell, const Tensor& prev_pred,
                                       const Tensor& node_feat, const LSTMState& state) {
    const std::size_t parcels = node_feat.rows();
    if (prev_pred.rows() != parcels || prev_pred.cols() != 1)
        throw DimensionError("lstm_step: previous prediction must be " + std::to_string(parcels) + "x1");
    if (state.h.rows() != parcels || state.h.cols() != cell.hidden || state.c.rows() != parcels ||
        state.c.cols() != cell.hidden)
        throw DimensionError("lstm_step: state shape mismatch");
    cell.validate(node_feat.cols());

    Tensor x = concat_cols({prev_pred, node_feat, state.h});
    auto gate = [&](const Tensor& w, const Tensor& b) { return add_rowvec(matmul(x, w), b); };
    Tensor in_gate = sigmoid_t(gate(cell.w_input, cell.b_input));
    Tensor forget_gate = sigmoid_t(gate(cell.w_forget, cell.b_forget));
    Tensor out_gate = sigmoid_t(gate(cell.w_output, cell.b_output));
    Tensor candidate = tanh_t(gate(cell.w_candidate, cell.b_candidate));
    Tensor c_next = add(mul(forget_gate, state.c), mul(in_gate, candidate));
    Tensor h_next = mul(out_gate, tanh_t(c_next));
    Tensor pred = add_rowvec(matmul(h_next, cell.w_readout), cell.b_readout);
    return {pred, {h_next, c_next}};
}

Tensor rollout(const LSTMCellParams& cell, const std::vector<Tensor>& node_feats,
               const RolloutConfig& config, const Tensor* targets) {
    return rollout_span(cell, node_feats, config, targets, nullptr, nullptr).predictions;
}

RolloutResult rollout_span(const LSTMCellParams& cell, const std::vector<Tensor>& node_feats,
                           const RolloutConfig& config, const Tensor* targets,
                           const LSTMState* initial_state, const Tensor* initial_prediction) {
    if (node_feats.empty()) throw ArgumentError("rollout: no time steps");
    const std::size_t parcels = node_feats[0].rows();
    const std::size_t steps = node_feats.size();
    for (const Tensor& f : node_feats)
        if (f.rows() != parcels || f.cols() != node_feats[0].cols())
            throw DimensionError("rollout: node feature shapes differ across steps");
    if (config.teacher_forcing_ratio < 0.0 || config.teacher_forcing_ratio > 1.0)
        throw ConfigError("rollout: teacher forcing ratio must lie in [0, 1]");

    const double ratio = config.train ? config.teacher_forcing_ratio : 0.0;
    if (ratio > 0.0 && targets == nullptr)
        throw ConfigError("rollout: teacher forcing needs target sequences");
    if (targets != nullptr && (targets->rows() != parcels || targets->cols() != steps))
        throw DimensionError("rollout: targets must be " + std::to_string(parcels) + "x" +
                             std::to_string(steps));
    if (initial_state != nullptr &&
        (initial_state->h.rows() != parcels || initial_state->h.cols() != cell.hidden))
        throw DimensionError("rollout: carried state does not match parcels x hidden");
    if (initial_prediction != nullptr &&
        (initial_prediction->rows() != parcels || initial_prediction->cols() != 1))
        throw DimensionError("rollout: carried prediction must be parcels x 1");

    Rng coins(config.seed);
    LSTMState state = initial_state ? *initial_state : lstm_initial_state(cell, parcels);
    Tensor prev = initial_prediction ? *initial_prediction
                                     : Tensor::full(parcels, 1, config.initial_prediction);
    std::vector<Tensor> preds;
    preds.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        auto [pred, next] = lstm_step(cell, prev, node_feats[t], state);
        state = std::move(next);
        preds.push_back(pred);
        if (t + 1 < steps) {
            const bool force = ratio > 0.0 && coins.uniform() < ratio;
            prev = force ? slice_cols(*targets, t, t + 1) : pred;
        }
    }
    RolloutResult out;
    out.last_prediction = preds.back();
    out.predictions = concat_cols(preds);
    out.state = std::move(state);
    return out;
}

}  // namespace samba
