#include "samba/hrf.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace samba {

HRFKernel sample_hrf(const Tensor& theta, double dt, double duration) {
    if (dt <= 0.0) throw ArgumentError("sample_hrf: dt must be positive");
    if (duration <= 0.0) throw ArgumentError("sample_hrf: duration must be positive");
    if (theta.rows() != 1 || theta.cols() != 6)
        throw DimensionError("sample_hrf: theta must be 1x6, got " +
                             std::to_string(theta.rows()) + "x" + std::to_string(theta.cols()));
    const std::size_t n = static_cast<std::size_t>(std::ceil(duration / dt));
    if (n < 2) throw ArgumentError("sample_hrf: duration too short for dt");

    std::vector<double> ts(n - 1);
    for (std::size_t i = 1; i < n; ++i) ts[i - 1] = static_cast<double>(i) * dt;
    Tensor t = Tensor::leaf(std::move(ts), 1, n - 1);

    const Tensor th1 = slice_cols(theta, 0, 1), th2 = slice_cols(theta, 1, 2);
    const Tensor th3 = slice_cols(theta, 2, 3), th4 = slice_cols(theta, 3, 4);
    const Tensor th5 = slice_cols(theta, 4, 5), th6 = slice_cols(theta, 5, 6);
    const Tensor p_r = mul(th2, th3);
    const Tensor p_u = mul(th5, th6);

    // theta_a * (t/p)^shape * exp(-(t-p)/disp), written through exp/log so the
    // learnable exponent stays differentiable.
    auto lobe = [&](const Tensor& amp, const Tensor& shape, const Tensor& disp,
                    const Tensor& peak) {
        Tensor log_pow = mul(shape, log_t(divt(t, peak)));
        Tensor decay = divt(sub(t, peak), disp);
        return mul(amp, exp_t(sub(log_pow, decay)));
    };
    Tensor positive = lobe(th1, th2, th3, p_r);
    Tensor undershoot = lobe(th4, th5, th6, p_u);
    Tensor tail = sub(positive, undershoot);
    Tensor kernel = concat_cols({Tensor::zeros(1, 1), tail});
    return HRFKernel{kernel, dt};
}

Tensor infer_hrf_params(const HRFNet& net) {
    if (net.embeddings.cols() != net.w1.rows())
        throw DimensionError("infer_hrf_params: embedding dim " +
                             std::to_string(net.embeddings.cols()) + " vs first layer " +
                             std::to_string(net.w1.rows()));
    Tensor h1 = tanh_t(add_rowvec(matmul(net.embeddings, net.w1), net.b1));
    Tensor h2 = tanh_t(add_rowvec(matmul(h1, net.w2), net.b2));
    Tensor raw = add_rowvec(matmul(h2, net.w3), net.b3);
    return sadd(softplus_t(raw), 1e-3);
}

double inverse_softplus_floor(double y) {
    const double x = y - 1e-3;
    if (x <= 0.0) throw ArgumentError("inverse_softplus_floor: value below the positivity floor");
    if (x > 30.0) return x;
    return std::log(std::expm1(x));
}

Tensor smooth(const Tensor& x, const HRFKernel& kernel, double signal_dt) {
    if (std::abs(signal_dt - kernel.dt) > 1e-12)
        throw ConfigError("smooth: signal dt " + std::to_string(signal_dt) +
                          " does not match kernel dt " + std::to_string(kernel.dt));
    return conv1d(x, kernel.samples, ConvMode::SameCausal);
}

Tensor deconv_upsample(const Tensor& x_low, const Tensor& kernel, std::size_t stride,
                       std::size_t target_len) {
    Tensor up = transposed_conv1d(x_low, kernel, stride);
    if (up.cols() == target_len) return up;
    if (up.cols() > target_len) return slice_cols(up, 0, target_len);
    return concat_cols({up, Tensor::zeros(1, target_len - up.cols())});
}

}  // namespace samba
