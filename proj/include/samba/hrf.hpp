#pragma once

#include <array>
#include <cstddef>

#include "samba/tensor.hpp"

namespace samba {

// theta = (response amplitude, response time-to-peak shape, response
// dispersion, undershoot amplitude, undershoot time-to-peak shape, undershoot
// dispersion); response peak p_r = theta2*theta3 s, undershoot peak
// p_u = theta5*theta6 s.
inline constexpr std::array<double, 6> kCanonicalHrfTheta = {1.0, 6.0, 1.0, 0.35, 16.0, 1.0};

struct HRFKernel {
    Tensor samples;  // 1 x ceil(duration/dt)
    double dt = 0.0;
};

// Differentiable sampling of the double-gamma response at t = i*dt over
// [0, duration); the t = 0 sample is pinned to 0. theta is a positive 1x6 row.
HRFKernel sample_hrf(const Tensor& theta, double dt, double duration);

// Three-layer MLP from per-parcel embeddings to positive 6-vectors:
// softplus(raw) + 1e-3 keeps every component strictly positive.
struct HRFNet {
    Tensor embeddings;  // N x E
    Tensor w1, b1;      // E x H, 1 x H
    Tensor w2, b2;      // H x H, 1 x H
    Tensor w3, b3;      // H x 6, 1 x 6
};
Tensor infer_hrf_params(const HRFNet& net);  // N x 6

// Raw value r with softplus(r) + 1e-3 == y; used to bias-init the net at a
// chosen starting shape.
double inverse_softplus_floor(double y);

// Causal same-length convolution of a 1xT signal with the kernel.
Tensor smooth(const Tensor& x, const HRFKernel& kernel, double signal_dt);

// Learned pseudo-inverse: transposed convolution, tail-cropped or zero-padded
// to target_len samples.
Tensor deconv_upsample(const Tensor& x_low, const Tensor& kernel, std::size_t stride,
                       std::size_t target_len);

}  // namespace samba
