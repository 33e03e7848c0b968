#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "samba/hrf.hpp"
#include "samba/rng.hpp"
#include "support/gradcheck.hpp"

using namespace samba;
using samba::testing::gradcheck;

namespace {

Tensor theta_leaf(const std::array<double, 6>& th, const std::string& label = "theta") {
    return Tensor::leaf({th.begin(), th.end()}, 1, 6, true, label);
}

// Signal power at one frequency via direct DFT projection.
double power_at(const std::vector<double>& x, double hz, double dt) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double ph = 2.0 * 3.141592653589793 * hz * static_cast<double>(i) * dt;
        re += x[i] * std::cos(ph);
        im -= x[i] * std::sin(ph);
    }
    return re * re + im * im;
}

}  // namespace

TEST_CASE("canonical curve peaks near 6 s with one late negative lobe") {
    Tensor th = theta_leaf(kCanonicalHrfTheta);
    HRFKernel k = sample_hrf(th, 0.5, 32.0);
    CHECK(k.samples.cols() == 64);
    CHECK(k.samples.values()[0] == 0.0);

    const auto& v = k.samples.values();
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[argmax]) argmax = i;
    const double peak_t = static_cast<double>(argmax) * 0.5;
    CHECK(peak_t >= 5.5);
    CHECK(peak_t <= 6.5);

    bool any_negative = false;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < -1e-4) {
            any_negative = true;
            CHECK(static_cast<double>(i) * 0.5 > 9.0);
        }
    }
    CHECK(any_negative);

    // Sign pattern +, -, with no second positive lobe: at most 2 changes.
    int sign_changes = 0;
    int prev = 0;
    for (double x : v) {
        const int s = x > 1e-9 ? 1 : (x < -1e-9 ? -1 : 0);
        if (s != 0 && prev != 0 && s != prev) ++sign_changes;
        if (s != 0) prev = s;
    }
    CHECK(sign_changes <= 2);
}

TEST_CASE("vanishing undershoot amplitude removes the negative lobe") {
    Tensor th = theta_leaf({1.0, 6.0, 1.0, 1e-8, 16.0, 1.0});
    HRFKernel k = sample_hrf(th, 0.5, 32.0);
    const auto& v = k.samples.values();
    for (double x : v) CHECK(x > -1e-6);
    std::size_t argmax = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[argmax]) argmax = i;
    CHECK(static_cast<double>(argmax) * 0.5 == doctest::Approx(6.0).epsilon(0.1));
}

TEST_CASE("doubling response amplitude doubles the curve when undershoot is off") {
    Tensor th1 = theta_leaf({1.0, 6.0, 1.0, 1e-12, 16.0, 1.0});
    Tensor th2 = theta_leaf({2.0, 6.0, 1.0, 1e-12, 16.0, 1.0});
    HRFKernel k1 = sample_hrf(th1, 0.25, 24.0);
    HRFKernel k2 = sample_hrf(th2, 0.25, 24.0);
    for (std::size_t i = 0; i < k1.samples.size(); ++i)
        CHECK(k2.samples.values()[i] ==
              doctest::Approx(2.0 * k1.samples.values()[i]).epsilon(1e-10));
}

TEST_CASE("kernel gradient w.r.t. theta matches finite differences") {
    Tensor th = theta_leaf(kCanonicalHrfTheta);
    auto res = gradcheck([&] { return sum_t(sample_hrf(th, 0.5, 20.0).samples); }, {th});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("sample_hrf argument validation") {
    Tensor th = theta_leaf(kCanonicalHrfTheta);
    CHECK_THROWS_AS(sample_hrf(th, 0.0, 32.0), ArgumentError);
    CHECK_THROWS_AS(sample_hrf(th, 0.5, -1.0), ArgumentError);
    CHECK_THROWS_AS(sample_hrf(Tensor::leaf({1, 2, 3}, 1, 3), 0.5, 32.0), DimensionError);
}

TEST_CASE("zero-weight network infers the softplus floor constant") {
    HRFNet net;
    net.embeddings = Tensor::leaf({0.4, -0.2, 0.1, 0.9}, 2, 2);
    net.w1 = Tensor::zeros(2, 3);
    net.b1 = Tensor::zeros(1, 3);
    net.w2 = Tensor::zeros(3, 3);
    net.b2 = Tensor::zeros(1, 3);
    net.w3 = Tensor::zeros(3, 6);
    net.b3 = Tensor::zeros(1, 6);
    Tensor th = infer_hrf_params(net);
    CHECK(th.rows() == 2);
    CHECK(th.cols() == 6);
    for (double v : th.values())
        CHECK(v == doctest::Approx(std::log(2.0) + 1e-3).epsilon(1e-12));
}

TEST_CASE("distinct embeddings give distinct positive parameter rows") {
    Rng rng(211);
    HRFNet net;
    net.embeddings = Tensor::leaf(rng.normal_vec(2 * 4, 0.0, 3.0), 2, 4);
    net.w1 = Tensor::leaf(rng.normal_vec(4 * 8), 4, 8);
    net.b1 = Tensor::leaf(rng.normal_vec(8), 1, 8);
    net.w2 = Tensor::leaf(rng.normal_vec(8 * 8), 8, 8);
    net.b2 = Tensor::leaf(rng.normal_vec(8), 1, 8);
    net.w3 = Tensor::leaf(rng.normal_vec(8 * 6), 8, 6);
    net.b3 = Tensor::leaf(rng.normal_vec(6), 1, 6);
    Tensor th = infer_hrf_params(net);
    bool differ = false;
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(th.at(0, j) > 0.0);
        CHECK(th.at(1, j) > 0.0);
        if (std::abs(th.at(0, j) - th.at(1, j)) > 1e-9) differ = true;
    }
    CHECK(differ);

    HRFNet bad = net;
    bad.embeddings = Tensor::leaf(rng.normal_vec(2 * 3), 2, 3);
    CHECK_THROWS_AS(infer_hrf_params(bad), DimensionError);
}

TEST_CASE("inference network gradient reaches embeddings and weights") {
    Rng rng(223);
    HRFNet net;
    net.embeddings = Tensor::leaf(rng.normal_vec(2 * 3), 2, 3, true, "emb");
    net.w1 = Tensor::leaf(rng.normal_vec(3 * 4), 3, 4, true, "w1");
    net.b1 = Tensor::leaf(rng.normal_vec(4), 1, 4, true, "b1");
    net.w2 = Tensor::leaf(rng.normal_vec(4 * 4), 4, 4, true, "w2");
    net.b2 = Tensor::leaf(rng.normal_vec(4), 1, 4, true, "b2");
    net.w3 = Tensor::leaf(rng.normal_vec(4 * 6), 4, 6, true, "w3");
    net.b3 = Tensor::leaf(rng.normal_vec(6), 1, 6, true, "b3");
    auto res = gradcheck(
        [&] {
            Tensor th = infer_hrf_params(net);
            Tensor k0 = sample_hrf(slice_rows(th, 0, 1), 0.5, 8.0).samples;
            Tensor k1 = sample_hrf(slice_rows(th, 1, 2), 0.5, 8.0).samples;
            return sum_t(mul(concat_rows({k0, k1}), concat_rows({k0, k1})));
        },
        {net.embeddings, net.w1, net.b1, net.w2, net.b2, net.w3, net.b3});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("inverse softplus hits requested starting values") {
    for (double y : {0.35, 1.0, 6.0, 16.0}) {
        const double raw = inverse_softplus_floor(y);
        const double back = (raw > 30.0 ? raw : std::log1p(std::exp(raw))) + 1e-3;
        CHECK(back == doctest::Approx(y).epsilon(1e-9));
    }
    CHECK_THROWS_AS(inverse_softplus_floor(0.0005), ArgumentError);
}

TEST_CASE("smoothing an impulse returns the kernel") {
    Tensor th = theta_leaf(kCanonicalHrfTheta);
    HRFKernel k = sample_hrf(th, 0.5, 8.0);
    std::vector<double> xv(20, 0.0);
    xv[0] = 1.0;
    Tensor x = Tensor::leaf(xv, 1, 20);
    Tensor y = smooth(x, k, 0.5);
    CHECK(y.cols() == 20);
    for (std::size_t i = 0; i < 16; ++i)
        CHECK(y.values()[i] == doctest::Approx(k.samples.values()[i]).epsilon(1e-12));

    Tensor zeros = Tensor::zeros(1, 20);
    Tensor y0 = smooth(zeros, k, 0.5);
    for (double v : y0.values()) CHECK(v == 0.0);

    CHECK_THROWS_AS(smooth(x, k, 0.25), ConfigError);
}

TEST_CASE("smoothing is linear") {
    Rng rng(227);
    Tensor th = theta_leaf(kCanonicalHrfTheta);
    HRFKernel k = sample_hrf(th, 0.5, 8.0);
    std::vector<double> av = rng.normal_vec(32), bv = rng.normal_vec(32);
    Tensor a = Tensor::leaf(av, 1, 32), b = Tensor::leaf(bv, 1, 32);
    std::vector<double> mixv(32);
    for (std::size_t i = 0; i < 32; ++i) mixv[i] = 2.0 * av[i] - 0.5 * bv[i];
    Tensor mix = Tensor::leaf(mixv, 1, 32);
    Tensor lhs = smooth(mix, k, 0.5);
    Tensor ya = smooth(a, k, 0.5), yb = smooth(b, k, 0.5);
    for (std::size_t i = 0; i < 32; ++i) {
        const double want = 2.0 * ya.values()[i] - 0.5 * yb.values()[i];
        CHECK(std::abs(lhs.values()[i] - want) < 1e-10);
    }
}

TEST_CASE("smoothing attenuates high frequencies") {
    Rng rng(229);
    const double dt = 0.005;
    Tensor th = theta_leaf(kCanonicalHrfTheta);
    HRFKernel k = sample_hrf(th, dt, 32.0);
    std::vector<double> noise = rng.normal_vec(12800);
    Tensor x = Tensor::leaf(noise, 1, 12800);
    Tensor y = smooth(x, k, dt);
    // Transfer gain above 0.2 Hz collapses relative to the near-DC gain.
    const double low = power_at(y.values(), 0.03, dt) / power_at(noise, 0.03, dt);
    const double high = power_at(y.values(), 1.0, dt) / power_at(noise, 1.0, dt);
    CHECK(high < 0.05 * low);
}

TEST_CASE("deconv upsampling hand cases") {
    Tensor unit = Tensor::leaf({1}, 1, 1);
    Tensor x = Tensor::leaf({3, -1, 2}, 1, 3);
    CHECK(deconv_upsample(x, unit, 1, 3).values() == std::vector<double>{3, -1, 2});

    Tensor y = Tensor::leaf({1, 0}, 1, 2);
    Tensor k = Tensor::leaf({1, 1}, 1, 2);
    CHECK(deconv_upsample(y, k, 2, 4).values() == std::vector<double>{1, 1, 0, 0});

    // Tail crop and zero-pad paths.
    CHECK(deconv_upsample(y, k, 2, 3).values() == std::vector<double>{1, 1, 0});
    CHECK(deconv_upsample(y, k, 2, 6).values() == std::vector<double>{1, 1, 0, 0, 0, 0});
}

TEST_CASE("deconv kernel gradient matches finite differences") {
    Rng rng(233);
    Tensor x = Tensor::leaf(rng.normal_vec(5), 1, 5, true, "x");
    Tensor k = Tensor::leaf(rng.normal_vec(4), 1, 4, true, "k");
    auto res = gradcheck(
        [&] {
            Tensor o = deconv_upsample(x, k, 2, 10);
            return sum_t(mul(o, o));
        },
        {x, k});
    CHECK(res.max_rel_err < 1e-4);
}
