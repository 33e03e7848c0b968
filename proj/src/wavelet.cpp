#include "samba/wavelet.hpp"

#include <cmath>
#include <string>

namespace samba {

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

std::vector<std::size_t> band_widths(std::size_t padded_cols, std::size_t levels) {
    std::vector<std::size_t> w(levels + 1);
    std::size_t cur = padded_cols;
    for (std::size_t s = 0; s < levels; ++s) {
        cur /= 2;
        w[s] = cur;
    }
    w[levels] = cur;
    return w;
}

std::vector<std::pair<double, double>> band_frequencies(std::size_t levels,
                                                        double sample_rate_hz) {
    std::vector<std::pair<double, double>> out(levels + 1);
    for (std::size_t s = 0; s < levels; ++s) {
        const double hi = sample_rate_hz / std::pow(2.0, static_cast<double>(s + 1));
        out[s] = {hi / 2.0, hi};
    }
    out[levels] = {0.0, sample_rate_hz / std::pow(2.0, static_cast<double>(levels + 1))};
    return out;
}

ScaleCoeffs decompose(const Tensor& x, const WaveletBasis& basis) {
    const std::size_t t = x.cols();
    const std::size_t padded = next_pow2(t);
    if (padded < (std::size_t{1} << basis.levels))
        throw ArgumentError("decompose: width " + std::to_string(t) + " supports fewer than " +
                            std::to_string(basis.levels) + " levels; reduce levels");
    Tensor cur = (padded == t) ? x : pad_reflect_cols(x, padded);

    ScaleCoeffs out;
    out.original_cols = t;
    out.padded_cols = padded;
    out.family = basis.family;
    out.bands.resize(basis.levels + 1);
    for (std::size_t s = 0; s < basis.levels; ++s) {
        const std::size_t w = cur.cols();
        Tensor step = dwt_step(cur, basis.family);
        out.bands[s] = slice_cols(step, w / 2, w);
        cur = slice_cols(step, 0, w / 2);
    }
    out.bands[basis.levels] = cur;
    return out;
}

Tensor reconstruct(const ScaleCoeffs& coeffs, const WaveletBasis& basis) {
    if (coeffs.bands.size() != basis.levels + 1)
        throw DimensionError("reconstruct: " + std::to_string(coeffs.bands.size()) +
                             " bands for " + std::to_string(basis.levels) + " levels");
    const std::vector<std::size_t> widths = band_widths(coeffs.padded_cols, basis.levels);
    for (std::size_t s = 0; s <= basis.levels; ++s)
        if (coeffs.bands[s].cols() != widths[s])
            throw DimensionError("reconstruct: band " + std::to_string(s) + " width " +
                                 std::to_string(coeffs.bands[s].cols()) + ", expected " +
                                 std::to_string(widths[s]));
    Tensor cur = coeffs.bands[basis.levels];
    for (std::size_t s = basis.levels; s-- > 0;) {
        Tensor ad = concat_cols({cur, coeffs.bands[s]});
        cur = idwt_step(ad, coeffs.family);
    }
    if (coeffs.original_cols != coeffs.padded_cols)
        cur = slice_cols(cur, 0, coeffs.original_cols);
    return cur;
}

Tensor attention_weights(const Tensor& logits) {
    if (logits.rows() != 1)
        throw DimensionError("attention_weights: logits must be a single row");
    return softmax_rows(logits);
}

Tensor attend_concat(const ScaleCoeffs& coeffs, const Tensor& logits) {
    if (logits.rows() != 1 || logits.cols() != coeffs.band_count())
        throw DimensionError("attend_concat: " + std::to_string(logits.cols()) +
                             " logits for " + std::to_string(coeffs.band_count()) + " bands");
    Tensor alpha = softmax_rows(logits);
    std::vector<Tensor> scaled;
    scaled.reserve(coeffs.band_count());
    for (std::size_t s = 0; s < coeffs.band_count(); ++s)
        scaled.push_back(mul(coeffs.bands[s], slice_cols(alpha, s, s + 1)));
    return concat_cols(scaled);
}

ScaleCoeffs estimate_coeffs(const Tensor& hidden,
                            const std::vector<std::pair<Tensor, Tensor>>& maps,
                            const WaveletBasis& basis, std::size_t padded_cols) {
    if (maps.size() != basis.levels + 1)
        throw DimensionError("estimate_coeffs: " + std::to_string(maps.size()) + " maps for " +
                             std::to_string(basis.levels + 1) + " bands");
    const std::vector<std::size_t> widths = band_widths(padded_cols, basis.levels);
    ScaleCoeffs out;
    out.original_cols = padded_cols;
    out.padded_cols = padded_cols;
    out.family = basis.family;
    out.bands.resize(maps.size());
    for (std::size_t s = 0; s < maps.size(); ++s) {
        const auto& [w, b] = maps[s];
        if (w.rows() != hidden.cols() || w.cols() != widths[s])
            throw DimensionError("estimate_coeffs: map " + std::to_string(s) + " is " +
                                 std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                                 ", expected " + std::to_string(hidden.cols()) + "x" +
                                 std::to_string(widths[s]));
        out.bands[s] = add_rowvec(matmul(hidden, w), b);
    }
    return out;
}

Tensor skip_loss(const ScaleCoeffs& c, const ScaleCoeffs& c_hat) {
    if (c.band_count() != c_hat.band_count())
        throw DimensionError("skip_loss: band counts " + std::to_string(c.band_count()) +
                             " vs " + std::to_string(c_hat.band_count()));
    std::vector<Tensor> per_band;
    per_band.reserve(c.band_count());
    for (std::size_t s = 0; s < c.band_count(); ++s) {
        const Tensor& a = c.bands[s];
        const Tensor& b = c_hat.bands[s];
        if (a.rows() != b.rows() || a.cols() != b.cols())
            throw DimensionError("skip_loss: band " + std::to_string(s) + " shapes " +
                                 std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                 " vs " + std::to_string(b.rows()) + "x" +
                                 std::to_string(b.cols()));
        Tensor d = sub(a, b);
        per_band.push_back(mean_t(mul(d, d)));
    }
    return mean_t(concat_cols(per_band));
}

}  // namespace samba
