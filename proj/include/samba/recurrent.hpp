#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "samba/tensor.hpp"

namespace samba {

// One LSTM cell shared by all parcels, plus a linear readout to one scalar per
// parcel. Gate weight rows are ordered [previous prediction, node features,
// hidden state], so each gate matrix is (1 + F + H) x H.
struct LSTMCellParams {
    std::size_t hidden = 32;
    Tensor w_input, b_input;
    Tensor w_forget, b_forget;
    Tensor w_output, b_output;
    Tensor w_candidate, b_candidate;
    Tensor w_readout;  // H x 1
    Tensor b_readout;  // 1 x 1

    void validate(std::size_t feature_dim) const;
    std::vector<Tensor> tensors() const;
};

// Per-parcel recurrent state, rows aligned with parcels.
struct LSTMState {
    Tensor h, c;  // P x H each
};

LSTMState lstm_initial_state(const LSTMCellParams& cell, std::size_t parcels);

// One time step for all parcels at once: gates from [prev_pred | node_feat | h],
// standard cell update, scalar prediction from the new hidden state.
std::pair<Tensor, LSTMState> lstm_step(const LSTMCellParams& cell, const Tensor& prev_pred,
                                       const Tensor& node_feat, const LSTMState& state);

struct RolloutConfig {
    double teacher_forcing_ratio = 0.0;  // chance a step consumes the true previous value
    double initial_prediction = 0.0;
    bool train = false;  // evaluation always runs fully autoregressive
    std::uint64_t seed = 0;
};

// Unrolls the cell over node_feats (one P x F tensor per step) and returns the
// P x T' prediction matrix. Forcing coins are drawn once per step, shared by all
// parcels. targets (P x T') is required whenever the effective forcing ratio is
// positive.
Tensor rollout(const LSTMCellParams& cell, const std::vector<Tensor>& node_feats,
               const RolloutConfig& config, const Tensor* targets = nullptr);

// Rollout segment that starts from an explicit state and previous prediction
// and reports where it ended, so long sequences can be unrolled chunk by chunk
// (detaching the carried state bounds the backward graph to one chunk).
struct RolloutResult {
    Tensor predictions;  // P x steps
    LSTMState state;
    Tensor last_prediction;  // P x 1
};
RolloutResult rollout_span(const LSTMCellParams& cell, const std::vector<Tensor>& node_feats,
                           const RolloutConfig& config, const Tensor* targets,
                           const LSTMState* initial_state, const Tensor* initial_prediction);

}  // namespace samba
