#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "samba/tensor.hpp"

namespace samba {

struct WaveletBasis {
    Wavelet family = Wavelet::Db4;
    std::size_t levels = 5;
};

// Multi-level coefficients for a batch of parcels (one row each). bands[s]
// for s < levels holds detail level s+1 (finest first, width T_pad/2^(s+1));
// bands[levels] is the final approximation (same width as the coarsest
// detail). Total coefficient count per row equals the padded width.
struct ScaleCoeffs {
    std::vector<Tensor> bands;
    std::size_t original_cols = 0;  // pre-pad signal width, restored on reconstruct
    std::size_t padded_cols = 0;
    Wavelet family = Wavelet::Db4;

    std::size_t band_count() const { return bands.size(); }
};

// Mallat cascade over basis.levels; non-dyadic widths are mirror-padded to the
// next power of two and cropped again by reconstruct.
ScaleCoeffs decompose(const Tensor& x, const WaveletBasis& basis);
Tensor reconstruct(const ScaleCoeffs& coeffs, const WaveletBasis& basis);

// Softmax the logits (1 x band_count) into alphas, scale each band, and
// concatenate finest detail through approximation into rows x padded_cols.
Tensor attend_concat(const ScaleCoeffs& coeffs, const Tensor& logits);
Tensor attention_weights(const Tensor& logits);

// Per-band linear estimates from hidden rows: bands[s] = h * W_s + b_s.
// maps[s] is {weight [H x band_width], bias [1 x band_width]}.
ScaleCoeffs estimate_coeffs(const Tensor& hidden,
                            const std::vector<std::pair<Tensor, Tensor>>& maps,
                            const WaveletBasis& basis, std::size_t padded_cols);

// Mean squared coefficient discrepancy: mean within each band (over parcels
// and positions), then mean across bands, so every band weighs equally.
Tensor skip_loss(const ScaleCoeffs& c, const ScaleCoeffs& c_hat);

// Band widths for a padded length, finest detail first, approximation last.
std::vector<std::size_t> band_widths(std::size_t padded_cols, std::size_t levels);
// Nominal [low, high) frequency range per band in Hz at the given sample rate.
std::vector<std::pair<double, double>> band_frequencies(std::size_t levels, double sample_rate_hz);

std::size_t next_pow2(std::size_t n);

}  // namespace samba
