#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "samba/tensor.hpp"

namespace samba {

// Edge selection on a dense similarity matrix. Both rules always keep the self-loop.
struct NeighborhoodRule {
    enum class Kind { TopK, Threshold };
    Kind kind = Kind::TopK;
    std::size_t k = 8;       // strongest |W| partners per node
    double threshold = 0.0;  // keep q with |W_pq| >= threshold

    static NeighborhoodRule top_k(std::size_t k) { return {Kind::TopK, k, 0.0}; }
    static NeighborhoodRule by_threshold(double t) { return {Kind::Threshold, 0, t}; }
};

// Dense symmetric similarity graph. weights has unit diagonal and entries in [-1, 1];
// neighbors lists are ascending and always contain the node itself.
struct SimilarityGraph {
    std::size_t nodes = 0;
    std::vector<double> weights;
    std::vector<std::vector<std::size_t>> neighbors;

    double weight(std::size_t p, std::size_t q) const { return weights[p * nodes + q]; }
};

// W_pq = cosine similarity of mean-centered rows; constant rows pair to 0 with everything.
SimilarityGraph build_graph(const Tensor& signals, const NeighborhoodRule& rule);
// Rebuild neighborhoods from a stored weight matrix (checkpoint restore path);
// build_graph delegates here, so both agree on the selection rule.
SimilarityGraph graph_from_weights(std::vector<double> weights, std::size_t nodes,
                                   const NeighborhoodRule& rule);

enum class GatOutput { Identity, Tanh };

struct GATLayerParams {
    std::vector<Tensor> head_weights;  // per head, F x F'
    std::vector<Tensor> head_attn;     // per head, 2F' x 1 (top half scores self, bottom scores partner)
    double leaky_slope = 0.2;
    GatOutput output = GatOutput::Tanh;
};

// Head-averaged graph attention. Pre-softmax logits are multiplied by the similarity
// weight of the edge; coefficients are normalized over each node's neighborhood,
// so every attention row sums to 1. If attention is non-null it receives one
// row-stochastic P x P coefficient matrix per head.
Tensor gat_forward(const SimilarityGraph& graph, const Tensor& features,
                   const GATLayerParams& params, std::vector<Tensor>* attention = nullptr);

// For each fine parcel m, the coarse parcels of the same anatomical region.
struct RegionMap {
    std::size_t source_count = 0;
    std::vector<std::string> region_labels;         // one per fine parcel; may be empty
    std::vector<std::vector<std::size_t>> sources;  // ascending coarse indices, nonempty

    std::size_t target_count() const { return sources.size(); }
    void validate() const;
    // Inverse view: for each coarse parcel, the fine parcels whose region contains it.
    std::vector<std::vector<std::size_t>> targets_of_sources() const;
};

// One linear map per fine parcel, applied to the concatenation of its region's
// coarse hidden rows (ascending parcel order).
struct RegionLifters {
    std::vector<Tensor> weights;  // per target, (|sources_m| * F') x F''
    std::vector<Tensor> biases;   // per target, 1 x F''
};

Tensor region_lift(const Tensor& hidden_src, const RegionMap& map, const RegionLifters& lifters);

// One linear map per coarse parcel, applied to the mean of its region's fine hidden rows.
struct NodeProjections {
    std::vector<Tensor> weights;  // per coarse node, F' x F''
    std::vector<Tensor> biases;   // per coarse node, 1 x F''
};

// GAT over the fine graph, region-mean pooling through the inverse map, then the
// per-node projections. attention forwards the GAT coefficient export.
Tensor spatial_downsample(const SimilarityGraph& hemo_graph, const Tensor& features,
                          const GATLayerParams& gat, const RegionMap& map,
                          const NodeProjections& proj, std::vector<Tensor>* attention = nullptr);

}  // namespace samba
