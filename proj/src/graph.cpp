#include "samba/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "samba/common.hpp"

namespace samba {

namespace {

constexpr double kMaskValue = -1e30;

}  // namespace

SimilarityGraph build_graph(const Tensor& signals, const NeighborhoodRule& rule) {
    const std::size_t p_count = signals.rows();
    const std::size_t t_count = signals.cols();
    if (p_count < 2) throw ArgumentError("build_graph: need at least 2 nodes, got " + std::to_string(p_count));
    if (t_count < 2) throw ArgumentError("build_graph: need at least 2 samples, got " + std::to_string(t_count));
    if (rule.kind == NeighborhoodRule::Kind::TopK && rule.k == 0)
        throw ArgumentError("build_graph: top-k rule needs k >= 1");

    const auto& vals = signals.values();
    std::vector<double> centered(p_count * t_count);
    std::vector<double> norms(p_count);
    for (std::size_t p = 0; p < p_count; ++p) {
        double mean = 0.0;
        for (std::size_t t = 0; t < t_count; ++t) mean += vals[p * t_count + t];
        mean /= static_cast<double>(t_count);
        double ss = 0.0;
        for (std::size_t t = 0; t < t_count; ++t) {
            const double c = vals[p * t_count + t] - mean;
            centered[p * t_count + t] = c;
            ss += c * c;
        }
        norms[p] = std::sqrt(ss);
    }

    SimilarityGraph g;
    g.nodes = p_count;
    g.weights.assign(p_count * p_count, 0.0);
    for (std::size_t p = 0; p < p_count; ++p) {
        g.weights[p * p_count + p] = 1.0;
        for (std::size_t q = p + 1; q < p_count; ++q) {
            double w = 0.0;
            if (norms[p] > 0.0 && norms[q] > 0.0) {
                double dot = 0.0;
                for (std::size_t t = 0; t < t_count; ++t)
                    dot += centered[p * t_count + t] * centered[q * t_count + t];
                w = std::clamp(dot / (norms[p] * norms[q]), -1.0, 1.0);
            }
            g.weights[p * p_count + q] = w;
            g.weights[q * p_count + p] = w;
        }
    }

    return graph_from_weights(std::move(g.weights), p_count, rule);
}

SimilarityGraph graph_from_weights(std::vector<double> weights, std::size_t nodes,
                                   const NeighborhoodRule& rule) {
    if (nodes == 0 || weights.size() != nodes * nodes)
        throw DimensionError("graph_from_weights: weights must be nodes x nodes");
    SimilarityGraph g;
    g.nodes = nodes;
    g.weights = std::move(weights);
    g.neighbors.resize(nodes);
    for (std::size_t p = 0; p < nodes; ++p) {
        std::vector<std::size_t> chosen;
        if (rule.kind == NeighborhoodRule::Kind::TopK) {
            std::vector<std::size_t> others;
            others.reserve(nodes - 1);
            for (std::size_t q = 0; q < nodes; ++q)
                if (q != p) others.push_back(q);
            std::stable_sort(others.begin(), others.end(), [&](std::size_t a, std::size_t b) {
                return std::abs(g.weight(p, a)) > std::abs(g.weight(p, b));
            });
            others.resize(std::min(rule.k, others.size()));
            chosen = std::move(others);
        } else {
            for (std::size_t q = 0; q < nodes; ++q)
                if (q != p && std::abs(g.weight(p, q)) >= rule.threshold) chosen.push_back(q);
        }
        chosen.push_back(p);
        std::sort(chosen.begin(), chosen.end());
        g.neighbors[p] = std::move(chosen);
    }
    return g;
}

Tensor gat_forward(const SimilarityGraph& graph, const Tensor& features,
                   const GATLayerParams& params, std::vector<Tensor>* attention) {
    const std::size_t p_count = graph.nodes;
    if (p_count == 0) throw ArgumentError("gat_forward: empty graph");
    if (features.rows() != p_count)
        throw DimensionError("gat_forward: " + std::to_string(features.rows()) + " feature rows for " +
                             std::to_string(p_count) + " nodes");
    const std::size_t heads = params.head_weights.size();
    if (heads == 0 || params.head_attn.size() != heads)
        throw ArgumentError("gat_forward: need matching head weight and attention vectors");
    const std::size_t f_in = features.cols();
    const std::size_t f_out = params.head_weights[0].cols();
    for (std::size_t k = 0; k < heads; ++k) {
        if (params.head_weights[k].rows() != f_in || params.head_weights[k].cols() != f_out)
            throw DimensionError("gat_forward: head " + std::to_string(k) + " weight shape mismatch");
        if (params.head_attn[k].rows() != 2 * f_out || params.head_attn[k].cols() != 1)
            throw DimensionError("gat_forward: head " + std::to_string(k) + " attention vector must be 2F'x1");
    }

    // Constant edge prior and neighborhood mask shared by all heads.
    std::vector<double> prior_v(graph.weights);
    std::vector<double> mask_v(p_count * p_count, kMaskValue);
    for (std::size_t p = 0; p < p_count; ++p) {
        if (graph.neighbors[p].empty()) {
            mask_v[p * p_count + p] = 0.0;
            continue;
        }
        for (std::size_t q : graph.neighbors[p]) {
            if (q >= p_count) throw ArgumentError("gat_forward: neighbor index out of range");
            mask_v[p * p_count + q] = 0.0;
        }
    }
    Tensor prior = Tensor::leaf(std::move(prior_v), p_count, p_count, false, "edge_prior");
    Tensor mask = Tensor::leaf(std::move(mask_v), p_count, p_count, false, "edge_mask");
    Tensor ones_col = Tensor::full(p_count, 1, 1.0);
    Tensor ones_row = Tensor::full(1, p_count, 1.0);

    Tensor merged;
    bool first = true;
    for (std::size_t k = 0; k < heads; ++k) {
        Tensor zw = matmul(features, params.head_weights[k]);
        Tensor a_self = slice_rows(params.head_attn[k], 0, f_out);
        Tensor a_peer = slice_rows(params.head_attn[k], f_out, 2 * f_out);
        Tensor s_self = matmul(zw, a_self);
        Tensor s_peer = matmul(zw, a_peer);
        Tensor scores = add(matmul(s_self, ones_row), matmul(ones_col, transpose_t(s_peer)));
        Tensor logits = add(mul(leaky_relu(scores, params.leaky_slope), prior), mask);
        Tensor beta = softmax_rows(logits);
        if (attention != nullptr) attention->push_back(beta);
        Tensor head_out = matmul(beta, zw);
        merged = first ? head_out : add(merged, head_out);
        first = false;
    }
    Tensor out = smul(merged, 1.0 / static_cast<double>(heads));
    return params.output == GatOutput::Tanh ? tanh_t(out) : out;
}

void RegionMap::validate() const {
    if (sources.empty()) throw ConfigError("region map: no target parcels");
    if (source_count == 0) throw ConfigError("region map: no source parcels");
    if (!region_labels.empty() && region_labels.size() != sources.size())
        throw ConfigError("region map: " + std::to_string(region_labels.size()) + " labels for " +
                          std::to_string(sources.size()) + " target parcels");
    std::vector<bool> seen(source_count, false);
    for (std::size_t m = 0; m < sources.size(); ++m) {
        const auto& chi = sources[m];
        if (chi.empty())
            throw ConfigError("region map: target parcel " + std::to_string(m) + " has no source parcels");
        for (std::size_t i = 0; i < chi.size(); ++i) {
            if (chi[i] >= source_count)
                throw ConfigError("region map: target parcel " + std::to_string(m) +
                                  " references unknown source parcel " + std::to_string(chi[i]));
            if (i > 0 && chi[i] <= chi[i - 1])
                throw ConfigError("region map: target parcel " + std::to_string(m) +
                                  " sources must be strictly increasing");
            seen[chi[i]] = true;
        }
    }
    for (std::size_t n = 0; n < source_count; ++n)
        if (!seen[n])
            throw ConfigError("region map: source parcel " + std::to_string(n) + " belongs to no target parcel");
}

std::vector<std::vector<std::size_t>> RegionMap::targets_of_sources() const {
    std::vector<std::vector<std::size_t>> inv(source_count);
    for (std::size_t m = 0; m < sources.size(); ++m)
        for (std::size_t n : sources[m]) inv[n].push_back(m);
    return inv;
}

Tensor region_lift(const Tensor& hidden_src, const RegionMap& map, const RegionLifters& lifters) {
    map.validate();
    if (hidden_src.rows() != map.source_count)
        throw DimensionError("region_lift: " + std::to_string(hidden_src.rows()) + " hidden rows for " +
                             std::to_string(map.source_count) + " source parcels");
    const std::size_t m_count = map.target_count();
    if (lifters.weights.size() != m_count || lifters.biases.size() != m_count)
        throw ConfigError("region_lift: need one lifter per target parcel");
    const std::size_t f_in = hidden_src.cols();

    std::vector<Tensor> rows;
    rows.reserve(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        const std::size_t want_rows = map.sources[m].size() * f_in;
        if (lifters.weights[m].rows() != want_rows)
            throw DimensionError("region_lift: lifter " + std::to_string(m) + " expects input dim " +
                                 std::to_string(lifters.weights[m].rows()) + ", region provides " +
                                 std::to_string(want_rows));
        Tensor flat = reshape_t(gather_rows(hidden_src, map.sources[m]), 1, want_rows);
        rows.push_back(add(matmul(flat, lifters.weights[m]), lifters.biases[m]));
    }
    return concat_rows(rows);
}

Tensor spatial_downsample(const SimilarityGraph& hemo_graph, const Tensor& features,
                          const GATLayerParams& gat, const RegionMap& map,
                          const NodeProjections& proj, std::vector<Tensor>* attention) {
    map.validate();
    if (hemo_graph.nodes != map.target_count())
        throw DimensionError("spatial_downsample: graph has " + std::to_string(hemo_graph.nodes) +
                             " nodes, region map has " + std::to_string(map.target_count()));
    if (proj.weights.size() != map.source_count || proj.biases.size() != map.source_count)
        throw ConfigError("spatial_downsample: need one projection per coarse parcel");

    Tensor hidden = gat_forward(hemo_graph, features, gat, attention);
    const auto inv = map.targets_of_sources();
    std::vector<Tensor> rows;
    rows.reserve(map.source_count);
    for (std::size_t n = 0; n < map.source_count; ++n) {
        const auto& targets = inv[n];
        Tensor pooled = matmul(Tensor::full(1, targets.size(), 1.0 / static_cast<double>(targets.size())),
                               gather_rows(hidden, targets));
        rows.push_back(add(matmul(pooled, proj.weights[n]), proj.biases[n]));
    }
    return concat_rows(rows);
}

}  // namespace samba
