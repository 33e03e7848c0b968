#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "samba/rng.hpp"
#include "samba/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace samba;
using samba::testing::gradcheck;

namespace {

Tensor randn_leaf(Rng& rng, std::size_t r, std::size_t c, const std::string& label) {
    return Tensor::leaf(rng.normal_vec(r * c), r, c, true, label);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("matmul identity and hand products") {
    Tensor i2 = Tensor::leaf({1, 0, 0, 1}, 2, 2);
    Tensor m = Tensor::leaf({1, 2, 3, 4}, 2, 2);
    Tensor out = matmul(i2, m);
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4});

    Tensor a = Tensor::leaf({1, 2}, 1, 2);
    Tensor b = Tensor::leaf({3, 4}, 2, 1);
    CHECK(matmul(a, b).item() == doctest::Approx(11.0).epsilon(1e-12));

    CHECK_THROWS_AS(matmul(a, a), DimensionError);
    try {
        matmul(a, a);
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("1x2") != std::string::npos);
    }
}

TEST_CASE("matmul gradient vs finite differences") {
    Rng rng(7);
    Tensor a = randn_leaf(rng, 3, 4, "a");
    Tensor b = randn_leaf(rng, 4, 2, "b");
    auto res = gradcheck([&] { return sum_t(matmul(a, b)); }, {a, b});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv1d delta kernel is identity in same-causal mode") {
    Tensor x = Tensor::leaf({1, 0, 0, 0}, 1, 4);
    Tensor k = Tensor::leaf({1}, 1, 1);
    CHECK(conv1d(x, k, ConvMode::SameCausal).values() == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("conv1d same-causal hand case and causality") {
    Tensor x = Tensor::leaf({1, 0, 0, 0}, 1, 4);
    Tensor k = Tensor::leaf({0.5, 0.5}, 1, 2);
    auto v = conv1d(x, k, ConvMode::SameCausal).values();
    CHECK(v == std::vector<double>{0.5, 0.5, 0, 0});

    Tensor x2 = Tensor::leaf({0, 0, 0, 1}, 1, 4);
    auto v2 = conv1d(x2, k, ConvMode::SameCausal).values();
    CHECK(v2[0] == 0.0);
    CHECK(v2[1] == 0.0);
    CHECK(v2[2] == 0.0);
    CHECK(v2[3] == doctest::Approx(0.5));
}

TEST_CASE("conv1d mode shapes and errors") {
    Tensor x = Tensor::leaf({1, 2, 3, 4, 5}, 1, 5);
    Tensor k = Tensor::leaf({1, 1}, 1, 2);
    CHECK(conv1d(x, k, ConvMode::Full).cols() == 6);
    CHECK(conv1d(x, k, ConvMode::SameCausal).cols() == 5);
    CHECK(conv1d(x, k, ConvMode::Valid).cols() == 4);
    CHECK(conv1d(x, k, ConvMode::Valid, 2).cols() == 2);
    CHECK_THROWS_AS(conv1d(x, Tensor::leaf({}, 1, 0), ConvMode::Full), ArgumentError);
    CHECK_THROWS_AS(conv1d(x, k, ConvMode::SameCausal, 2), ArgumentError);
    Tensor longk = Tensor::leaf({1, 1, 1, 1, 1, 1}, 1, 6);
    CHECK_THROWS_AS(conv1d(x, longk, ConvMode::Valid), ArgumentError);
}

TEST_CASE("conv1d gradients vs finite differences, all modes") {
    Rng rng(11);
    Tensor x = randn_leaf(rng, 1, 8, "x");
    Tensor k = randn_leaf(rng, 1, 3, "k");
    for (ConvMode mode : {ConvMode::Full, ConvMode::SameCausal, ConvMode::Valid}) {
        auto res = gradcheck([&] { return sum_t(mul(conv1d(x, k, mode), conv1d(x, k, mode))); },
                             {x, k});
        CHECK(res.max_rel_err < 1e-6);
    }
    auto res = gradcheck([&] { return sum_t(conv1d(x, k, ConvMode::Valid, 2)); }, {x, k});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv1d kernel longer than signal in same-causal mode") {
    Rng rng(12);
    Tensor x = randn_leaf(rng, 1, 3, "x");
    Tensor k = randn_leaf(rng, 1, 5, "k");
    CHECK(conv1d(x, k, ConvMode::SameCausal).cols() == 3);
    auto res = gradcheck([&] { return sum_t(conv1d(x, k, ConvMode::SameCausal)); }, {x, k});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("fft convolution path agrees with direct computation") {
    Rng rng(13);
    const std::size_t nx = 300, nk = 200;  // nx*nk exceeds the direct-path cutoff
    std::vector<double> xv = rng.normal_vec(nx), kv = rng.normal_vec(nk);
    Tensor x = Tensor::leaf(xv, 1, nx);
    Tensor k = Tensor::leaf(kv, 1, nk);
    auto got = conv1d(x, k, ConvMode::Full).values();
    std::vector<double> want(nx + nk - 1, 0.0);
    for (std::size_t i = 0; i < nx; ++i)
        for (std::size_t j = 0; j < nk; ++j) want[i + j] += xv[i] * kv[j];
    double maxdiff = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i)
        maxdiff = std::max(maxdiff, std::abs(got[i] - want[i]));
    CHECK(maxdiff < 1e-9);

    auto again = conv1d(x, k, ConvMode::Full).values();
    CHECK(std::memcmp(got.data(), again.data(), got.size() * sizeof(double)) == 0);
}

TEST_CASE("transposed_conv1d hand cases") {
    Tensor y1 = Tensor::leaf({1}, 1, 1);
    Tensor k3 = Tensor::leaf({1, 1, 1}, 1, 3);
    CHECK(transposed_conv1d(y1, k3, 1).values() == std::vector<double>{1, 1, 1});

    Tensor y2 = Tensor::leaf({1, 1}, 1, 2);
    Tensor k2 = Tensor::leaf({1, 0}, 1, 2);
    CHECK(transposed_conv1d(y2, k2, 2).values() == std::vector<double>{1, 0, 1, 0});

    Tensor y3 = Tensor::leaf({1, 0}, 1, 2);
    Tensor k11 = Tensor::leaf({1, 1}, 1, 2);
    CHECK(transposed_conv1d(y3, k11, 2).values() == std::vector<double>{1, 1, 0, 0});

    Tensor imp = Tensor::leaf({1}, 1, 1);
    Tensor sig = Tensor::leaf({3, -1, 2}, 1, 3);
    CHECK(transposed_conv1d(sig, imp, 1).values() == std::vector<double>{3, -1, 2});

    CHECK_THROWS_AS(transposed_conv1d(y1, k3, 0), ArgumentError);
}

TEST_CASE("transposed_conv1d gradients vs finite differences") {
    Rng rng(17);
    Tensor y = randn_leaf(rng, 1, 4, "y");
    Tensor k = randn_leaf(rng, 1, 3, "k");
    auto res = gradcheck(
        [&] {
            Tensor o = transposed_conv1d(y, k, 2);
            return sum_t(mul(o, o));
        },
        {y, k});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("valid convolution and transposed convolution are adjoint") {
    Rng rng(19);
    for (std::size_t stride : {std::size_t{1}, std::size_t{2}, std::size_t{3}}) {
        const std::size_t L = 4, n = 6;
        const std::size_t T = (n - 1) * stride + L;
        Tensor x = randn_leaf(rng, 1, T, "x");
        Tensor k = randn_leaf(rng, 1, L, "k");
        std::vector<double> yv = rng.normal_vec(n);
        Tensor y = Tensor::leaf(yv, 1, n);
        const double lhs = dot(conv1d(x, k, ConvMode::Valid, stride).values(), yv);
        const double rhs = dot(x.values(), transposed_conv1d(y, k, stride).values());
        CHECK(std::abs(lhs - rhs) < 1e-10);
    }
}

TEST_CASE("softmax closed forms") {
    Tensor z = Tensor::leaf({0, 0, 0}, 1, 3);
    Tensor sz = softmax_rows(z);
    for (double v : sz.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor l = Tensor::leaf({std::log(1.0), std::log(3.0)}, 1, 2);
    auto v = softmax_rows(l).values();
    CHECK(v[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> lv = rng.normal_vec(7);
        Tensor a = Tensor::leaf(lv, 1, 7);
        for (auto& x : lv) x += 3.7;
        Tensor b = Tensor::leaf(lv, 1, 7);
        auto va = softmax_rows(a).values(), vb = softmax_rows(b).values();
        double s = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            CHECK(std::abs(va[i] - vb[i]) < 1e-12);
            CHECK(va[i] >= 0.0);
            s += va[i];
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(29);
    Tensor x = randn_leaf(rng, 2, 5, "x");
    Tensor w = Tensor::leaf(rng.normal_vec(10), 2, 5);
    auto res = gradcheck([&] { return sum_t(mul(softmax_rows(x), w)); }, {x});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("backward on simple reductions") {
    Tensor p = Tensor::leaf({1, 2, 3}, 1, 3, true, "p");
    backward(sum_t(p));
    CHECK(p.grad() == std::vector<double>{1, 1, 1});

    Tensor q = Tensor::leaf({1, 2}, 1, 2, true, "q");
    backward(sum_t(mul(q, q)));
    CHECK(q.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward accumulates leaf grads across calls until zeroed") {
    Tensor p = Tensor::leaf({1, 2}, 1, 2, true, "p");
    Tensor loss = sum_t(mul(p, p));
    backward(loss);
    backward(loss);
    CHECK(p.grad() == std::vector<double>{4, 8});
    p.zero_grad();
    backward(loss);
    CHECK(p.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward requires a scalar") {
    Tensor p = Tensor::leaf({1, 2}, 1, 2, true, "p");
    CHECK_THROWS_AS(backward(mul(p, p)), ContractError);
}

TEST_CASE("two losses sharing a subgraph accumulate correctly") {
    Tensor p = Tensor::leaf({1.0, 2.0}, 1, 2, true, "p");
    Tensor shared = mul(p, p);
    Tensor l1 = sum_t(shared);
    Tensor l2 = sum_t(mul(shared, shared));
    backward(l1);
    backward(l2);
    // d(sum p^2)/dp = 2p; d(sum p^4)/dp = 4p^3.
    CHECK(p.grad()[0] == doctest::Approx(2.0 + 4.0).epsilon(1e-12));
    CHECK(p.grad()[1] == doctest::Approx(4.0 + 32.0).epsilon(1e-12));
}

TEST_CASE("elementwise primitives match finite differences") {
    Rng rng(31);
    Tensor a = randn_leaf(rng, 2, 3, "a");
    Tensor b = randn_leaf(rng, 2, 3, "b");
    // Keep b away from zero for division.
    for (auto& v : b.mutable_values()) v = (v >= 0 ? v + 0.5 : v - 0.5);

    auto check = [&](std::function<Tensor()> f, double tol = 1e-4) {
        auto res = gradcheck(std::move(f), {a, b});
        CHECK(res.max_rel_err < tol);
    };
    check([&] { return sum_t(add(a, b)); });
    check([&] { return sum_t(sub(a, b)); });
    check([&] { return sum_t(mul(a, b)); });
    check([&] { return sum_t(divt(a, b)); });
    check([&] { return sum_t(neg(a)); });
    check([&] { return sum_t(smul(a, 2.5)); });
    check([&] { return sum_t(sadd(a, -1.5)); });
    check([&] { return sum_t(exp_t(a)); });
    check([&] { return sum_t(tanh_t(a)); });
    check([&] { return sum_t(sigmoid_t(a)); });
    check([&] { return sum_t(softplus_t(a)); });
    check([&] { return mean_t(mul(a, a)); });
}

TEST_CASE("domain-restricted primitives match finite differences") {
    Rng rng(37);
    std::vector<double> pv = rng.normal_vec(6);
    for (auto& v : pv) v = std::abs(v) + 0.5;
    Tensor pos = Tensor::leaf(pv, 2, 3, true, "pos");
    auto r1 = gradcheck([&] { return sum_t(log_t(pos)); }, {pos});
    CHECK(r1.max_rel_err < 1e-4);
    auto r2 = gradcheck([&] { return sum_t(powc(pos, 1.7)); }, {pos});
    CHECK(r2.max_rel_err < 1e-4);

    std::vector<double> kv = rng.normal_vec(6);
    for (auto& v : kv) v = (v >= 0 ? v + 0.2 : v - 0.2);  // away from the kinks
    Tensor kinky = Tensor::leaf(kv, 2, 3, true, "kinky");
    auto r3 = gradcheck([&] { return sum_t(abs_t(kinky)); }, {kinky});
    CHECK(r3.max_rel_err < 1e-4);
    auto r4 = gradcheck([&] { return sum_t(leaky_relu(kinky, 0.2)); }, {kinky});
    CHECK(r4.max_rel_err < 1e-4);
}

TEST_CASE("scalar broadcast in both directions") {
    Rng rng(41);
    Tensor a = randn_leaf(rng, 2, 3, "a");
    for (auto& v : a.mutable_values()) v = (v >= 0 ? v + 0.5 : v - 0.5);
    Tensor s = Tensor::leaf({0.7}, 1, 1, true, "s");
    CHECK(mul(a, s).rows() == 2);
    CHECK(mul(s, a).cols() == 3);
    CHECK(divt(a, s).at(0, 0) == doctest::Approx(a.at(0, 0) / 0.7));
    auto res = gradcheck([&] { return sum_t(mul(add(mul(a, s), s), divt(s, a))); }, {a, s});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("shape ops match finite differences") {
    Rng rng(43);
    Tensor a = randn_leaf(rng, 3, 4, "a");
    Tensor b = randn_leaf(rng, 1, 4, "b");

    auto check = [&](std::function<Tensor()> f) {
        auto res = gradcheck(std::move(f), {a, b});
        CHECK(res.max_rel_err < 1e-4);
    };
    check([&] { return sum_t(mul(transpose_t(a), transpose_t(a))); });
    check([&] { return sum_t(add_rowvec(a, b)); });
    check([&] { return sum_t(mul(slice_rows(a, 1, 3), slice_rows(a, 0, 2))); });
    check([&] { return sum_t(mul(slice_cols(a, 1, 3), slice_cols(a, 2, 4))); });
    check([&] { return sum_t(mul(gather_rows(a, {0, 2, 0}), gather_rows(a, {1, 1, 2}))); });
    check([&] { return sum_t(mul(concat_rows({a, a}), concat_rows({a, a}))); });
    check([&] { return sum_t(mul(concat_cols({a, a}), concat_cols({a, a}))); });
    check([&] { return sum_t(mul(reshape_t(a, 2, 6), reshape_t(a, 2, 6))); });
    check([&] { return sum_t(mul(repeat_cols(a, 3), repeat_cols(a, 3))); });
    check([&] { return sum_t(mul(pad_reflect_cols(a, 7), pad_reflect_cols(a, 7))); });
}

TEST_CASE("shape op invariants") {
    Tensor a = Tensor::leaf({1, 2, 3, 4, 5, 6}, 2, 3);
    CHECK(repeat_cols(a, 2).values() == std::vector<double>{1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6});
    CHECK(pad_reflect_cols(a, 5).values() ==
          std::vector<double>{1, 2, 3, 3, 2, 4, 5, 6, 6, 5});
    CHECK_THROWS_AS(pad_reflect_cols(a, 10), ArgumentError);
    CHECK(gather_rows(a, {1, 0}).values() == std::vector<double>{4, 5, 6, 1, 2, 3});
    CHECK_THROWS_AS(gather_rows(a, {2}), ArgumentError);
    CHECK_THROWS_AS(slice_cols(a, 2, 2), DimensionError);
    CHECK_THROWS_AS(concat_rows({a, Tensor::leaf({1, 2}, 1, 2)}), DimensionError);
}

TEST_CASE("haar analysis of a flat signal") {
    Tensor x = Tensor::leaf({1, 1, 1, 1}, 1, 4);
    auto v = dwt_step(x, Wavelet::Haar).values();
    const double r2 = std::sqrt(2.0);
    CHECK(v[0] == doctest::Approx(r2).epsilon(1e-12));
    CHECK(v[1] == doctest::Approx(r2).epsilon(1e-12));
    CHECK(v[2] == doctest::Approx(0.0));
    CHECK(v[3] == doctest::Approx(0.0));

    Tensor back = idwt_step(Tensor::leaf(v, 1, 4), Wavelet::Haar);
    for (double b : back.values()) CHECK(b == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("wavelet single-level round trip and energy, both families") {
    Rng rng(47);
    for (Wavelet fam : {Wavelet::Haar, Wavelet::Db4}) {
        std::vector<double> xv = rng.normal_vec(32);
        Tensor x = Tensor::leaf(xv, 2, 16);
        Tensor ad = dwt_step(x, fam);
        double ein = 0.0, eout = 0.0;
        for (double v : x.values()) ein += v * v;
        for (double v : ad.values()) eout += v * v;
        CHECK(std::abs(ein - eout) < 1e-10);
        auto back = idwt_step(ad, fam).values();
        for (std::size_t i = 0; i < xv.size(); ++i) CHECK(std::abs(back[i] - xv[i]) < 1e-10);
    }
}

TEST_CASE("wavelet step gradients vs finite differences") {
    Rng rng(53);
    Tensor x = randn_leaf(rng, 2, 8, "x");
    for (Wavelet fam : {Wavelet::Haar, Wavelet::Db4}) {
        auto r1 = gradcheck([&] { return sum_t(mul(dwt_step(x, fam), dwt_step(x, fam))); },
                            {x});
        CHECK(r1.max_rel_err < 1e-4);
        auto r2 = gradcheck([&] { return sum_t(mul(idwt_step(x, fam), idwt_step(x, fam))); },
                            {x});
        CHECK(r2.max_rel_err < 1e-4);
    }
    CHECK_THROWS_AS(dwt_step(Tensor::leaf({1, 2, 3}, 1, 3), Wavelet::Haar), DimensionError);
}

TEST_CASE("cosine row loss closed forms") {
    Tensor t = Tensor::leaf({1, 2, 0, -1, 0.5, 3}, 2, 3);
    Tensor p_same = Tensor::leaf(t.values(), 2, 3, true, "p");
    CHECK(cosine_row_loss(p_same, t).item() == doctest::Approx(0.0).epsilon(1e-6));

    std::vector<double> negv = t.values();
    for (auto& v : negv) v = -v;
    Tensor p_anti = Tensor::leaf(negv, 2, 3, true, "pa");
    CHECK(cosine_row_loss(p_anti, t).item() == doctest::Approx(4.0).epsilon(1e-6));

    // Row-wise orthogonal prediction, three rows -> loss 3.
    Tensor t3 = Tensor::leaf({1, 0, 1, 0, 0, 1}, 3, 2);
    Tensor p3 = Tensor::leaf({0, 1, 0, 1, 1, 0}, 3, 2, true, "p3");
    CHECK(cosine_row_loss(p3, t3).item() == doctest::Approx(3.0).epsilon(1e-9));

    // A zero-norm truth row contributes exactly 1.
    Tensor tz = Tensor::leaf({0, 0, 1, 2}, 2, 2);
    Tensor pz = Tensor::leaf({3, 4, 1, 2}, 2, 2, true, "pz");
    CHECK(cosine_row_loss(pz, tz).item() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cosine row loss is scale invariant per row") {
    Rng rng(59);
    Tensor t = Tensor::leaf(rng.normal_vec(8), 2, 4);
    std::vector<double> pv = rng.normal_vec(8);
    Tensor p1 = Tensor::leaf(pv, 2, 4, true, "p1");
    for (auto& v : pv) v *= 7.3;
    Tensor p2 = Tensor::leaf(pv, 2, 4, true, "p2");
    CHECK(cosine_row_loss(p1, t).item() ==
          doctest::Approx(cosine_row_loss(p2, t).item()).epsilon(1e-9));
}

TEST_CASE("cosine row loss gradient vs finite differences") {
    Rng rng(61);
    Tensor t = Tensor::leaf(rng.normal_vec(12), 3, 4);
    Tensor p = randn_leaf(rng, 3, 4, "p");
    auto res = gradcheck([&] { return cosine_row_loss(p, t); }, {p});
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("cross entropy closed form and gradient") {
    Tensor uniform = Tensor::leaf({0, 0, 0, 0}, 1, 4, true, "u");
    CHECK(cross_entropy_rows(uniform, {2}).item() == doctest::Approx(std::log(4.0)));

    Rng rng(67);
    Tensor logits = randn_leaf(rng, 3, 5, "logits");
    auto res = gradcheck([&] { return cross_entropy_rows(logits, {0, 3, 4}); }, {logits});
    CHECK(res.max_rel_err < 1e-4);

    CHECK_THROWS_AS(cross_entropy_rows(logits, {0, 1, 9}), DataError);
    CHECK_THROWS_AS(cross_entropy_rows(logits, {0, 1}), DimensionError);
}

TEST_CASE("detach blocks gradient flow") {
    Tensor p = Tensor::leaf({2.0}, 1, 1, true, "p");
    Tensor loss = sum_t(mul(detach(mul(p, p)), p));
    backward(loss);
    CHECK(p.grad()[0] == doctest::Approx(4.0));  // only the direct factor, not the detached p^2
}

TEST_CASE("no-grad guard records nothing") {
    Tensor p = Tensor::leaf({1.0, 2.0}, 1, 2, true, "p");
    NoGradGuard guard;
    Tensor out = mul(p, p);
    CHECK_FALSE(out.requires_grad());
    CHECK(out.values() == std::vector<double>{1.0, 4.0});
}

TEST_CASE("first nonfinite names the offending tensor") {
    Tensor p = Tensor::leaf({-1.0}, 1, 1, true, "bad_input");
    Tensor l = log_t(p);
    Tensor loss = sum_t(mul(l, Tensor::scalar(2.0)));
    std::string diag = first_nonfinite(loss);
    CHECK(diag.find("log") != std::string::npos);
    CHECK(first_nonfinite(sum_t(p)).empty());
}

TEST_CASE("param registry paths unique and ordered") {
    ParamRegistry reg;
    reg.add("b.weight", {1, 2}, 1, 2);
    reg.add("a.bias", {3}, 1, 1);
    CHECK_THROWS_AS(reg.add("a.bias", {0}, 1, 1), ContractError);
    CHECK_THROWS_AS(reg.get("missing"), ContractError);
    CHECK(reg.scalar_count() == 3);
    std::vector<std::string> names;
    for (const auto& [k, v] : reg.all()) names.push_back(k);
    CHECK(names == std::vector<std::string>{"a.bias", "b.weight"});

    backward(sum_t(mul(reg.get("b.weight"), reg.get("b.weight"))));
    CHECK(reg.get("b.weight").grad() == std::vector<double>{2, 4});
    reg.zero_grads();
    CHECK(reg.get("b.weight").grad() == std::vector<double>{0, 0});
}

TEST_CASE("forward values are deterministic across identical runs") {
    auto run = [] {
        Rng rng(99);
        Tensor a = Tensor::leaf(rng.normal_vec(64), 1, 64);
        Tensor k = Tensor::leaf(rng.normal_vec(16), 1, 16);
        Tensor c = conv1d(a, k, ConvMode::SameCausal);
        Tensor w = dwt_step(c, Wavelet::Db4);
        return sum_t(mul(w, w)).item();
    };
    const double v1 = run(), v2 = run();
    CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
}
