#include "samba/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace samba {

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

constexpr double kPi = 3.141592653589793238462643383279502884;

std::string shape_str(const Node& n) {
    return std::to_string(n.rows) + "x" + std::to_string(n.cols);
}

NodePtr new_node(std::size_t rows, std::size_t cols, std::vector<double> values, const char* op) {
    auto n = std::make_shared<Node>();
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    n->rows = rows;
    n->cols = cols;
    n->values = std::move(values);
    n->op = op;
    return n;
}

void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.size(), 0.0);
}

// Attaches parents and the backward closure only when recording is on and at
// least one parent needs gradients; otherwise the result is a plain constant.
Tensor record(NodePtr out, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
    if (g_grad_enabled) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || p->requires_grad;
        if (needs) {
            out->requires_grad = true;
            out->leaf = false;
            out->parents = std::move(parents);
            out->backward_fn = std::move(fn);
        }
    }
    return Tensor(std::move(out));
}

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
    const NodePtr an = a.node(), bn = b.node();
    const bool as = an->size() == 1 && bn->size() > 1;
    const bool bs = bn->size() == 1 && an->size() > 1;
    if (!as && !bs && (an->rows != bn->rows || an->cols != bn->cols))
        throw DimensionError(std::string(name) + ": shapes " + shape_str(*an) + " vs " +
                             shape_str(*bn));
    const Node& big = as ? *bn : *an;
    const std::size_t n = big.size();
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = f(an->values[as ? 0 : i], bn->values[bs ? 0 : i]);
    auto out = new_node(big.rows, big.cols, std::move(v), name);
    return record(out, {an, bn}, [an, bn, as, bs, da, db](Node& o) {
        if (an->requires_grad) {
            ensure_grad(*an);
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double ai = an->values[as ? 0 : i];
                const double bi = bn->values[bs ? 0 : i];
                an->grad[as ? 0 : i] += o.grad[i] * da(ai, bi);
            }
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double ai = an->values[as ? 0 : i];
                const double bi = bn->values[bs ? 0 : i];
                bn->grad[bs ? 0 : i] += o.grad[i] * db(ai, bi);
            }
        }
    });
}

template <class F, class DF>
Tensor unary_op(const Tensor& a, const char* name, F f, DF df) {
    const NodePtr an = a.node();
    std::vector<double> v(an->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(an->values[i]);
    auto out = new_node(an->rows, an->cols, std::move(v), name);
    return record(out, {an}, [an, df](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < o.size(); ++i)
            an->grad[i] += o.grad[i] * df(an->values[i], o.values[i]);
    });
}

void fft(std::vector<double>& re, std::vector<double>& im, bool inverse) {
    const std::size_t n = re.size();
    if (n < 2) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j |= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t j = 0; j < len / 2; ++j) {
                const double wr = std::cos(ang * static_cast<double>(j));
                const double wi = std::sin(ang * static_cast<double>(j));
                const std::size_t u = i + j, w = i + j + len / 2;
                const double xr = re[w] * wr - im[w] * wi;
                const double xi = re[w] * wi + im[w] * wr;
                re[w] = re[u] - xr;
                im[w] = im[u] - xi;
                re[u] += xr;
                im[u] += xi;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            re[i] *= inv;
            im[i] *= inv;
        }
    }
}

// True full convolution of value buffers; FFT path for large problems keeps
// the 12800-sample x 6400-tap HRF smoothing affordable. Both paths are
// deterministic, and a given size always takes the same path.
std::vector<double> conv_full_vals(const std::vector<double>& x, const std::vector<double>& k) {
    const std::size_t nx = x.size(), nk = k.size();
    const std::size_t n = nx + nk - 1;
    if (nx * nk <= (std::size_t{1} << 15)) {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < nx; ++i)
            for (std::size_t j = 0; j < nk; ++j) out[i + j] += x[i] * k[j];
        return out;
    }
    std::size_t m = 1;
    while (m < n) m <<= 1;
    std::vector<double> xr(m, 0.0), xi(m, 0.0), kr(m, 0.0), ki(m, 0.0);
    std::copy(x.begin(), x.end(), xr.begin());
    std::copy(k.begin(), k.end(), kr.begin());
    fft(xr, xi, false);
    fft(kr, ki, false);
    for (std::size_t i = 0; i < m; ++i) {
        const double rr = xr[i] * kr[i] - xi[i] * ki[i];
        const double ii = xr[i] * ki[i] + xi[i] * kr[i];
        xr[i] = rr;
        xi[i] = ii;
    }
    fft(xr, xi, true);
    return std::vector<double>(xr.begin(), xr.begin() + static_cast<std::ptrdiff_t>(n));
}

// grad w.r.t. signal for Full/SameCausal: gx[i] = sum_t G[t] k[t-i].
std::vector<double> conv_grad_signal(const std::vector<double>& g, const std::vector<double>& k,
                                     std::size_t nx) {
    std::vector<double> krev(k.rbegin(), k.rend());
    const std::vector<double> c = conv_full_vals(g, krev);
    std::vector<double> out(nx, 0.0);
    const std::size_t shift = k.size() - 1;
    for (std::size_t i = 0; i < nx; ++i)
        if (i + shift < c.size()) out[i] = c[i + shift];
    return out;
}

// grad w.r.t. kernel for Full/SameCausal: gk[l] = sum_t G[t] x[t-l].
std::vector<double> conv_grad_kernel(const std::vector<double>& g, const std::vector<double>& x,
                                     std::size_t nk) {
    std::vector<double> xrev(x.rbegin(), x.rend());
    const std::vector<double> c = conv_full_vals(g, xrev);
    std::vector<double> out(nk, 0.0);
    const std::size_t shift = x.size() - 1;
    for (std::size_t l = 0; l < nk; ++l)
        if (l + shift < c.size()) out[l] = c[l + shift];
    return out;
}

struct WaveletFilters {
    std::vector<double> lo;
    std::vector<double> hi;
};

const WaveletFilters& filters_for(Wavelet family) {
    static const WaveletFilters haar = [] {
        const double s = 1.0 / std::sqrt(2.0);
        return WaveletFilters{{s, s}, {s, -s}};
    }();
    static const WaveletFilters db4 = [] {
        const double r3 = std::sqrt(3.0);
        const double d = 4.0 * std::sqrt(2.0);
        std::vector<double> lo = {(1.0 + r3) / d, (3.0 + r3) / d, (3.0 - r3) / d,
                                  (1.0 - r3) / d};
        std::vector<double> hi = {lo[3], -lo[2], lo[1], -lo[0]};
        return WaveletFilters{lo, hi};
    }();
    return family == Wavelet::Haar ? haar : db4;
}

// Periodized analysis of one row: [approx | detail].
void dwt_row(const double* x, std::size_t t, const WaveletFilters& f, double* out) {
    const std::size_t half = t / 2;
    const std::size_t L = f.lo.size();
    for (std::size_t j = 0; j < half; ++j) {
        double a = 0.0, d = 0.0;
        for (std::size_t l = 0; l < L; ++l) {
            const double xv = x[(2 * j + l) % t];
            a += f.lo[l] * xv;
            d += f.hi[l] * xv;
        }
        out[j] = a;
        out[half + j] = d;
    }
}

// Periodized synthesis of one row from [approx | detail]; adjoint of dwt_row.
void idwt_row(const double* ad, std::size_t t, const WaveletFilters& f, double* out) {
    const std::size_t half = t / 2;
    const std::size_t L = f.lo.size();
    for (std::size_t i = 0; i < t; ++i) out[i] = 0.0;
    for (std::size_t j = 0; j < half; ++j) {
        for (std::size_t l = 0; l < L; ++l) {
            out[(2 * j + l) % t] += f.lo[l] * ad[j] + f.hi[l] * ad[half + j];
        }
    }
}

}  // namespace

Tensor Tensor::leaf(std::vector<double> values, std::size_t rows, std::size_t cols,
                    bool requires_grad, std::string label) {
    if (values.size() != rows * cols)
        throw DimensionError("leaf: " + std::to_string(values.size()) + " values for shape " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    auto n = new_node(rows, cols, std::move(values), "leaf");
    n->requires_grad = requires_grad;
    n->label = std::move(label);
    return Tensor(std::move(n));
}

std::vector<double>& Tensor::mutable_values() {
    if (!node_->leaf) throw ContractError("mutable_values: only leaves may be mutated");
    return node_->values;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty())
        throw ContractError("grad: no gradient recorded for '" +
                            (node_->label.empty() ? std::string(node_->op) : node_->label) + "'");
    return node_->grad;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item: tensor is " + shape_str(*node_) + ", not 1x1");
    return node_->values[0];
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divt(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "div", [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
    return unary_op(
        a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor smul(const Tensor& a, double c) {
    return unary_op(
        a, "smul", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor sadd(const Tensor& a, double c) {
    return unary_op(
        a, "sadd", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor exp_t(const Tensor& a) {
    return unary_op(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
    return unary_op(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor tanh_t(const Tensor& a) {
    return unary_op(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid_t(const Tensor& a) {
    return unary_op(
        a, "sigmoid",
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus_t(const Tensor& a) {
    return unary_op(
        a, "softplus",
        [](double x) {
            if (x > 30.0) return x;
            if (x < -30.0) return std::exp(x);
            return std::log1p(std::exp(x));
        },
        [](double x, double) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Tensor abs_t(const Tensor& a) {
    return unary_op(
        a, "abs", [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary_op(
        a, "leaky_relu", [slope](double x) { return x >= 0.0 ? x : slope * x; },
        [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

Tensor powc(const Tensor& a, double p) {
    return unary_op(
        a, "powc", [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor transpose_t(const Tensor& a) {
    const NodePtr an = a.node();
    const std::size_t r = an->rows, c = an->cols;
    std::vector<double> v(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = an->values[i * c + j];
    auto out = new_node(c, r, std::move(v), "transpose");
    return record(out, {an}, [an, r, c](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += o.grad[j * r + i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const NodePtr an = a.node(), bn = b.node();
    if (an->cols != bn->rows)
        throw DimensionError("matmul: shapes " + shape_str(*an) + " vs " + shape_str(*bn));
    const std::size_t r = an->rows, k = an->cols, c = bn->cols;
    std::vector<double> v(r * c, 0.0);
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = an->values[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = &bn->values[kk * c];
            double* orow = &v[i * c];
            for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
        }
    }
    auto out = new_node(r, c, std::move(v), "matmul");
    return record(out, {an, bn}, [an, bn, r, k, c](Node& o) {
        if (an->requires_grad) {
            ensure_grad(*an);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t kk = 0; kk < k; ++kk) {
                    double s = 0.0;
                    const double* grow = &o.grad[i * c];
                    const double* brow = &bn->values[kk * c];
                    for (std::size_t j = 0; j < c; ++j) s += grow[j] * brow[j];
                    an->grad[i * k + kk] += s;
                }
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::size_t kk = 0; kk < k; ++kk)
                for (std::size_t i = 0; i < r; ++i) {
                    const double av = an->values[i * k + kk];
                    if (av == 0.0) continue;
                    const double* grow = &o.grad[i * c];
                    double* brow = &bn->grad[kk * c];
                    for (std::size_t j = 0; j < c; ++j) brow[j] += av * grow[j];
                }
        }
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    const NodePtr xn = x.node(), bn = b.node();
    if (bn->rows != 1 || bn->cols != xn->cols)
        throw DimensionError("add_rowvec: " + shape_str(*xn) + " vs " + shape_str(*bn));
    std::vector<double> v(xn->size());
    for (std::size_t i = 0; i < xn->rows; ++i)
        for (std::size_t j = 0; j < xn->cols; ++j)
            v[i * xn->cols + j] = xn->values[i * xn->cols + j] + bn->values[j];
    auto out = new_node(xn->rows, xn->cols, std::move(v), "add_rowvec");
    return record(out, {xn, bn}, [xn, bn](Node& o) {
        if (xn->requires_grad) {
            ensure_grad(*xn);
            for (std::size_t i = 0; i < o.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::size_t i = 0; i < o.rows; ++i)
                for (std::size_t j = 0; j < o.cols; ++j) bn->grad[j] += o.grad[i * o.cols + j];
        }
    });
}

Tensor softmax_rows(const Tensor& x) {
    const NodePtr xn = x.node();
    const std::size_t r = xn->rows, c = xn->cols;
    if (c == 0) throw DimensionError("softmax_rows: empty rows");
    std::vector<double> v(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = &xn->values[i * c];
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            v[i * c + j] = std::exp(row[j] - mx);
            s += v[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) v[i * c + j] /= s;
    }
    auto out = new_node(r, c, std::move(v), "softmax");
    return record(out, {xn}, [xn, r, c](Node& o) {
        if (!xn->requires_grad) return;
        ensure_grad(*xn);
        for (std::size_t i = 0; i < r; ++i) {
            const double* y = &o.values[i * c];
            const double* g = &o.grad[i * c];
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
            for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor sum_t(const Tensor& a) {
    const NodePtr an = a.node();
    double s = 0.0;
    for (double v : an->values) s += v;
    auto out = new_node(1, 1, {s}, "sum");
    return record(out, {an}, [an](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += o.grad[0];
    });
}

Tensor mean_t(const Tensor& a) {
    const NodePtr an = a.node();
    double s = 0.0;
    for (double v : an->values) s += v;
    const double inv = 1.0 / static_cast<double>(an->size());
    auto out = new_node(1, 1, {s * inv}, "mean");
    return record(out, {an}, [an, inv](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += o.grad[0] * inv;
    });
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    const NodePtr an = a.node();
    if (r0 >= r1 || r1 > an->rows)
        throw DimensionError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                             ") of " + shape_str(*an));
    const std::size_t c = an->cols;
    std::vector<double> v(an->values.begin() + static_cast<std::ptrdiff_t>(r0 * c),
                          an->values.begin() + static_cast<std::ptrdiff_t>(r1 * c));
    auto out = new_node(r1 - r0, c, std::move(v), "slice_rows");
    return record(out, {an}, [an, r0, c](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < o.size(); ++i) an->grad[r0 * c + i] += o.grad[i];
    });
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    const NodePtr an = a.node();
    if (c0 >= c1 || c1 > an->cols)
        throw DimensionError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") of " + shape_str(*an));
    const std::size_t w = c1 - c0, c = an->cols;
    std::vector<double> v(an->rows * w);
    for (std::size_t i = 0; i < an->rows; ++i)
        for (std::size_t j = 0; j < w; ++j) v[i * w + j] = an->values[i * c + c0 + j];
    auto out = new_node(an->rows, w, std::move(v), "slice_cols");
    return record(out, {an}, [an, c0, w, c](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < o.rows; ++i)
            for (std::size_t j = 0; j < w; ++j) an->grad[i * c + c0 + j] += o.grad[i * w + j];
    });
}

Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx) {
    const NodePtr an = a.node();
    if (idx.empty()) throw ArgumentError("gather_rows: empty index list");
    for (std::size_t i : idx)
        if (i >= an->rows)
            throw ArgumentError("gather_rows: index " + std::to_string(i) + " out of " +
                                std::to_string(an->rows) + " rows");
    const std::size_t c = an->cols;
    std::vector<double> v(idx.size() * c);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(&an->values[idx[i] * c], c, &v[i * c]);
    auto out = new_node(idx.size(), c, std::move(v), "gather_rows");
    return record(out, {an}, [an, idx = std::move(idx), c](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) an->grad[idx[i] * c + j] += o.grad[i * c + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_rows: no parts");
    const std::size_t c = parts[0].cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c)
            throw DimensionError("concat_rows: column mismatch " + std::to_string(p.cols()) +
                                 " vs " + std::to_string(c));
        r += p.rows();
    }
    std::vector<double> v;
    v.reserve(r * c);
    std::vector<NodePtr> parents;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        v.insert(v.end(), p.values().begin(), p.values().end());
        parents.push_back(p.node());
        offsets.push_back(off);
        off += p.size();
    }
    auto out = new_node(r, c, std::move(v), "concat_rows");
    auto ps = parents;
    return record(out, std::move(parents), [ps, offsets](Node& o) {
        for (std::size_t pi = 0; pi < ps.size(); ++pi) {
            if (!ps[pi]->requires_grad) continue;
            ensure_grad(*ps[pi]);
            for (std::size_t i = 0; i < ps[pi]->size(); ++i)
                ps[pi]->grad[i] += o.grad[offsets[pi] + i];
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_cols: no parts");
    const std::size_t r = parts[0].rows();
    std::size_t c = 0;
    for (const auto& p : parts) {
        if (p.rows() != r)
            throw DimensionError("concat_cols: row mismatch " + std::to_string(p.rows()) +
                                 " vs " + std::to_string(r));
        c += p.cols();
    }
    std::vector<double> v(r * c);
    std::vector<NodePtr> parents;
    std::vector<std::size_t> col0;
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            std::copy_n(&p.values()[i * p.cols()], p.cols(), &v[i * c + off]);
        parents.push_back(p.node());
        col0.push_back(off);
        off += p.cols();
    }
    auto out = new_node(r, c, std::move(v), "concat_cols");
    auto ps = parents;
    return record(out, std::move(parents), [ps, col0, r, c](Node& o) {
        for (std::size_t pi = 0; pi < ps.size(); ++pi) {
            if (!ps[pi]->requires_grad) continue;
            ensure_grad(*ps[pi]);
            const std::size_t w = ps[pi]->cols;
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    ps[pi]->grad[i * w + j] += o.grad[i * c + col0[pi] + j];
        }
    });
}

Tensor reshape_t(const Tensor& a, std::size_t rows, std::size_t cols) {
    const NodePtr an = a.node();
    if (rows * cols != an->size())
        throw DimensionError("reshape: " + shape_str(*an) + " to " + std::to_string(rows) + "x" +
                             std::to_string(cols));
    auto out = new_node(rows, cols, an->values, "reshape");
    return record(out, {an}, [an](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += o.grad[i];
    });
}

Tensor repeat_cols(const Tensor& a, std::size_t k) {
    if (k == 0) throw ArgumentError("repeat_cols: k must be positive");
    const NodePtr an = a.node();
    const std::size_t r = an->rows, c = an->cols;
    std::vector<double> v(r * c * k);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c * k; ++j) v[i * c * k + j] = an->values[i * c + j / k];
    auto out = new_node(r, c * k, std::move(v), "repeat_cols");
    return record(out, {an}, [an, k, c](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < o.rows; ++i)
            for (std::size_t j = 0; j < o.cols; ++j)
                an->grad[i * c + j / k] += o.grad[i * o.cols + j];
    });
}

Tensor pad_reflect_cols(const Tensor& a, std::size_t target) {
    const NodePtr an = a.node();
    const std::size_t c = an->cols;
    if (target < c) throw ArgumentError("pad_reflect_cols: target below current width");
    const std::size_t pad = target - c;
    if (pad > c) throw ArgumentError("pad_reflect_cols: pad " + std::to_string(pad) +
                                     " exceeds signal length " + std::to_string(c));
    std::vector<double> v(an->rows * target);
    for (std::size_t i = 0; i < an->rows; ++i) {
        std::copy_n(&an->values[i * c], c, &v[i * target]);
        for (std::size_t j = 0; j < pad; ++j)
            v[i * target + c + j] = an->values[i * c + (c - 1 - j)];
    }
    auto out = new_node(an->rows, target, std::move(v), "pad_reflect");
    return record(out, {an}, [an, c, pad, target](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < o.rows; ++i) {
            for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += o.grad[i * target + j];
            for (std::size_t j = 0; j < pad; ++j)
                an->grad[i * c + (c - 1 - j)] += o.grad[i * target + c + j];
        }
    });
}

Tensor conv1d(const Tensor& signal, const Tensor& kernel, ConvMode mode, std::size_t stride) {
    const NodePtr xn = signal.node(), kn = kernel.node();
    if (xn->rows != 1 || kn->rows != 1)
        throw DimensionError("conv1d: expects row vectors, got " + shape_str(*xn) + " and " +
                             shape_str(*kn));
    if (kn->cols == 0) throw ArgumentError("conv1d: empty kernel");
    if (stride < 1) throw ArgumentError("conv1d: stride must be >= 1");
    if (stride != 1 && mode != ConvMode::Valid)
        throw ArgumentError("conv1d: stride only supported in valid mode");
    const std::size_t t = xn->cols, L = kn->cols;
    if (mode == ConvMode::Valid && L > t)
        throw ArgumentError("conv1d: kernel longer than signal in valid mode");

    std::vector<double> v;
    if (mode == ConvMode::Valid) {
        const std::size_t n = (t - L) / stride + 1;
        v.assign(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < L; ++l) s += xn->values[j * stride + l] * kn->values[l];
            v[j] = s;
        }
    } else {
        v = conv_full_vals(xn->values, kn->values);
        if (mode == ConvMode::SameCausal) v.resize(t);
    }
    const std::size_t out_len = v.size();
    auto out = new_node(1, out_len, std::move(v), "conv1d");
    return record(out, {xn, kn}, [xn, kn, mode, stride, t, L](Node& o) {
        if (mode == ConvMode::Valid) {
            if (xn->requires_grad) {
                ensure_grad(*xn);
                for (std::size_t j = 0; j < o.cols; ++j)
                    for (std::size_t l = 0; l < L; ++l)
                        xn->grad[j * stride + l] += o.grad[j] * kn->values[l];
            }
            if (kn->requires_grad) {
                ensure_grad(*kn);
                for (std::size_t j = 0; j < o.cols; ++j)
                    for (std::size_t l = 0; l < L; ++l)
                        kn->grad[l] += o.grad[j] * xn->values[j * stride + l];
            }
            return;
        }
        if (xn->requires_grad) {
            ensure_grad(*xn);
            const std::vector<double> gx = conv_grad_signal(o.grad, kn->values, t);
            for (std::size_t i = 0; i < t; ++i) xn->grad[i] += gx[i];
        }
        if (kn->requires_grad) {
            ensure_grad(*kn);
            const std::vector<double> gk = conv_grad_kernel(o.grad, xn->values, L);
            for (std::size_t l = 0; l < L; ++l) kn->grad[l] += gk[l];
        }
    });
}

Tensor transposed_conv1d(const Tensor& signal, const Tensor& kernel, std::size_t stride) {
    const NodePtr yn = signal.node(), kn = kernel.node();
    if (yn->rows != 1 || kn->rows != 1)
        throw DimensionError("transposed_conv1d: expects row vectors, got " + shape_str(*yn) +
                             " and " + shape_str(*kn));
    if (kn->cols == 0) throw ArgumentError("transposed_conv1d: empty kernel");
    if (stride < 1) throw ArgumentError("transposed_conv1d: stride must be >= 1");
    const std::size_t tp = yn->cols, L = kn->cols;
    const std::size_t n = (tp - 1) * stride + L;
    std::vector<double> v(n, 0.0);
    for (std::size_t j = 0; j < tp; ++j) {
        const double yj = yn->values[j];
        for (std::size_t l = 0; l < L; ++l) v[j * stride + l] += yj * kn->values[l];
    }
    auto out = new_node(1, n, std::move(v), "transposed_conv1d");
    return record(out, {yn, kn}, [yn, kn, stride, tp, L](Node& o) {
        if (yn->requires_grad) {
            ensure_grad(*yn);
            for (std::size_t j = 0; j < tp; ++j) {
                double s = 0.0;
                for (std::size_t l = 0; l < L; ++l) s += o.grad[j * stride + l] * kn->values[l];
                yn->grad[j] += s;
            }
        }
        if (kn->requires_grad) {
            ensure_grad(*kn);
            for (std::size_t j = 0; j < tp; ++j)
                for (std::size_t l = 0; l < L; ++l)
                    kn->grad[l] += yn->values[j] * o.grad[j * stride + l];
        }
    });
}

Tensor dwt_step(const Tensor& a, Wavelet family) {
    const NodePtr an = a.node();
    const std::size_t t = an->cols;
    if (t < 2 || t % 2 != 0)
        throw DimensionError("dwt_step: width " + std::to_string(t) + " is not even");
    const WaveletFilters* f = &filters_for(family);
    std::vector<double> v(an->size());
    for (std::size_t i = 0; i < an->rows; ++i)
        dwt_row(&an->values[i * t], t, *f, &v[i * t]);
    auto out = new_node(an->rows, t, std::move(v), "dwt_step");
    return record(out, {an}, [an, t, f](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        std::vector<double> gx(t);
        for (std::size_t i = 0; i < o.rows; ++i) {
            idwt_row(&o.grad[i * t], t, *f, gx.data());
            for (std::size_t j = 0; j < t; ++j) an->grad[i * t + j] += gx[j];
        }
    });
}

Tensor idwt_step(const Tensor& a, Wavelet family) {
    const NodePtr an = a.node();
    const std::size_t t = an->cols;
    if (t < 2 || t % 2 != 0)
        throw DimensionError("idwt_step: width " + std::to_string(t) + " is not even");
    const WaveletFilters* f = &filters_for(family);
    std::vector<double> v(an->size());
    for (std::size_t i = 0; i < an->rows; ++i)
        idwt_row(&an->values[i * t], t, *f, &v[i * t]);
    auto out = new_node(an->rows, t, std::move(v), "idwt_step");
    return record(out, {an}, [an, t, f](Node& o) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        std::vector<double> ga(t);
        for (std::size_t i = 0; i < o.rows; ++i) {
            dwt_row(&o.grad[i * t], t, *f, ga.data());
            for (std::size_t j = 0; j < t; ++j) an->grad[i * t + j] += ga[j];
        }
    });
}

Tensor cosine_row_loss(const Tensor& pred, const Tensor& truth) {
    const NodePtr pn = pred.node(), tn = truth.node();
    if (pn->rows != tn->rows || pn->cols != tn->cols)
        throw DimensionError("cosine_row_loss: shapes " + shape_str(*pn) + " vs " +
                             shape_str(*tn));
    if (tn->requires_grad)
        throw ContractError("cosine_row_loss: truth must be constant");
    constexpr double kEps = 1e-12;
    const std::size_t r = pn->rows, c = pn->cols;
    double loss = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        const double* u = &pn->values[i * c];
        const double* w = &tn->values[i * c];
        double uu = 0.0, ww = 0.0, uw = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            uu += u[j] * u[j];
            ww += w[j] * w[j];
            uw += u[j] * w[j];
        }
        if (ww == 0.0) {
            loss += 1.0;
            continue;
        }
        loss += 1.0 - uw / (std::sqrt(uu + kEps) * std::sqrt(ww));
    }
    auto out = new_node(1, 1, {loss}, "cosine_row_loss");
    return record(out, {pn, tn}, [pn, tn, r, c](Node& o) {
        if (!pn->requires_grad) return;
        ensure_grad(*pn);
        const double g = o.grad[0];
        for (std::size_t i = 0; i < r; ++i) {
            const double* u = &pn->values[i * c];
            const double* w = &tn->values[i * c];
            double uu = 0.0, ww = 0.0, uw = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                uu += u[j] * u[j];
                ww += w[j] * w[j];
                uw += u[j] * w[j];
            }
            if (ww == 0.0) continue;
            const double np = std::sqrt(uu + kEps), nt = std::sqrt(ww);
            const double cos = uw / (np * nt);
            for (std::size_t j = 0; j < c; ++j)
                pn->grad[i * c + j] += g * (cos * u[j] / (np * np) - w[j] / (np * nt));
        }
    });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels) {
    const NodePtr xn = logits.node();
    const std::size_t b = xn->rows, c = xn->cols;
    if (labels.size() != b)
        throw DimensionError("cross_entropy_rows: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(b) + " rows");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw DataError("cross_entropy_rows: label " + std::to_string(y) + " outside 0.." +
                            std::to_string(c - 1));
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* row = &xn->values[i * c];
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        loss += mx + std::log(s) - row[static_cast<std::size_t>(labels[i])];
    }
    loss /= static_cast<double>(b);
    auto out = new_node(1, 1, {loss}, "cross_entropy");
    return record(out, {xn}, [xn, labels, b, c](Node& o) {
        if (!xn->requires_grad) return;
        ensure_grad(*xn);
        const double g = o.grad[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
            const double* row = &xn->values[i * c];
            double mx = row[0];
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            double s = 0.0;
            for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(row[j] - mx) / s;
                const double onehot = (static_cast<std::size_t>(labels[i]) == j) ? 1.0 : 0.0;
                xn->grad[i * c + j] += g * (p - onehot);
            }
        }
    });
}

Tensor detach(const Tensor& a) {
    auto n = new_node(a.rows(), a.cols(), a.values(), "detach");
    return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
    const NodePtr root = loss.node();
    if (!root || root->size() != 1)
        throw ContractError("backward: loss must be a scalar tensor");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<const Node*> seen;
    std::vector<Node*> stack{root.get()};
    seen.insert(root.get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents) {
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
        }
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    ensure_grad(*root);
    root->grad[0] += 1.0;
    for (Node* n : order) {
        if (n->grad.empty()) continue;
        if (n->backward_fn) n->backward_fn(*n);
        if (!n->leaf) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

std::string first_nonfinite(const Tensor& root) {
    std::vector<const Node*> order;
    std::unordered_set<const Node*> seen;
    std::vector<const Node*> stack{root.node().get()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        const Node* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id < b->id; });
    for (const Node* n : order) {
        for (double v : n->values) {
            if (!std::isfinite(v)) {
                std::string name = n->label.empty() ? std::string(n->op) : n->label;
                return name + " (op " + n->op + ", shape " + shape_str(*n) + ", node " +
                       std::to_string(n->id) + ")";
            }
        }
    }
    return {};
}

Tensor ParamRegistry::add(const std::string& path, std::vector<double> values, std::size_t rows,
                          std::size_t cols) {
    if (params_.count(path)) throw ContractError("ParamRegistry: duplicate path '" + path + "'");
    Tensor t = Tensor::leaf(std::move(values), rows, cols, true, path);
    params_.emplace(path, t);
    return t;
}

const Tensor& ParamRegistry::get(const std::string& path) const {
    auto it = params_.find(path);
    if (it == params_.end())
        throw ContractError("ParamRegistry: unknown path '" + path + "'");
    return it->second;
}

void ParamRegistry::zero_grads() {
    for (auto& [path, t] : params_) t.zero_grad();
}

std::size_t ParamRegistry::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [path, t] : params_) n += t.size();
    return n;
}

}  // namespace samba
