#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "samba/common.hpp"

namespace samba {

// Reverse-mode tape at tensor granularity. Every op records one Node; node ids
// are strictly increasing, so a parent's id is always smaller than any
// consumer's and backward can process ancestors in descending-id order without
// a topological sort. The graph is held by shared_ptr edges and dies with the
// last Tensor referencing it.
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    std::uint64_t id = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    // Allocated lazily during backward; cleared on non-leaf nodes once their
    // contribution has been pushed to parents, so a shared subgraph can be
    // walked by several backward calls without double counting.
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    const char* op = "leaf";
    std::string label;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    std::size_t size() const { return rows * cols; }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor leaf(std::vector<double> values, std::size_t rows, std::size_t cols,
                       bool requires_grad = false, std::string label = {});
    static Tensor scalar(double v) { return leaf({v}, 1, 1); }
    static Tensor zeros(std::size_t rows, std::size_t cols) {
        return leaf(std::vector<double>(rows * cols, 0.0), rows, cols);
    }
    static Tensor full(std::size_t rows, std::size_t cols, double v) {
        return leaf(std::vector<double>(rows * cols, v), rows, cols);
    }

    bool defined() const { return node_ != nullptr; }
    std::size_t rows() const { return node_->rows; }
    std::size_t cols() const { return node_->cols; }
    std::size_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }
    std::uint64_t id() const { return node_->id; }
    const std::string& label() const { return node_->label; }

    const std::vector<double>& values() const { return node_->values; }
    // In-place mutation is only legal on leaves between forward passes
    // (optimizer updates, data refills); recorded graphs capture no copies.
    std::vector<double>& mutable_values();
    const std::vector<double>& grad() const;
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.assign(node_->size(), 0.0); }

    double at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }
    double item() const;

    const NodePtr& node() const { return node_; }

  private:
    NodePtr node_;
};

// While alive, ops compute values only: no parents, no backward closures.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};
bool grad_enabled();

enum class ConvMode { Full, SameCausal, Valid };
enum class Wavelet { Haar, Db4 };

// Elementwise; operands must share shape, or either may be 1x1 (scalar
// broadcast, both directions).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divt(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor smul(const Tensor& a, double c);
Tensor sadd(const Tensor& a, double c);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor sigmoid_t(const Tensor& a);
Tensor softplus_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
// Fixed exponent; fractional p requires strictly positive inputs.
Tensor powc(const Tensor& a, double p);

Tensor transpose_t(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
// X[r x c] + b[1 x c], broadcast over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& b);
// Row-wise softmax, max-stabilized.
Tensor softmax_rows(const Tensor& x);

Tensor sum_t(const Tensor& a);
Tensor mean_t(const Tensor& a);

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);
Tensor gather_rows(const Tensor& a, std::vector<std::size_t> idx);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape_t(const Tensor& a, std::size_t rows, std::size_t cols);
// Zero-order hold along columns: out[r, j] = a[r, j / k].
Tensor repeat_cols(const Tensor& a, std::size_t k);
// Mirror-extend columns (edge sample included) up to target width.
Tensor pad_reflect_cols(const Tensor& a, std::size_t target);

// signal 1xT, kernel 1xL. Full and SameCausal are true convolution
// (kernel reversed; SameCausal keeps the first T samples of Full, so
// output[t] sees signal[<=t] only) and require stride 1. Valid is the strided
// sliding dot product (kernel not reversed), the exact adjoint of
// transposed_conv1d with the same kernel and stride.
Tensor conv1d(const Tensor& signal, const Tensor& kernel, ConvMode mode, std::size_t stride = 1);
// out[t] = sum_j signal[j] * kernel[t - j*stride]; length (T'-1)*stride + L.
Tensor transposed_conv1d(const Tensor& signal, const Tensor& kernel, std::size_t stride);

// One periodized Mallat level applied to every row independently: row maps to
// [approx | detail], each half the width. Orthonormal filters, so the adjoint
// of analysis is synthesis and vice versa.
Tensor dwt_step(const Tensor& a, Wavelet family);
Tensor idwt_step(const Tensor& a, Wavelet family);

// Sum over rows of (1 - cos(pred_row, truth_row)). truth is constant; a
// zero-norm truth row contributes exactly 1 with zero gradient.
Tensor cosine_row_loss(const Tensor& pred, const Tensor& truth);
// Mean over rows of logsumexp(logits_row) - logits_row[label].
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels);

// Same values, fresh constant leaf; gradient does not flow past it.
Tensor detach(const Tensor& a);

// loss must be 1x1. Populates grads of every requires_grad leaf reachable from
// loss; leaf grads accumulate across calls until zeroed, intermediate grads
// are consumed. The forward graph is left intact.
void backward(const Tensor& loss);

// Walks loss's ancestry in creation order and returns a description of the
// first tensor containing a non-finite value, or empty string.
std::string first_nonfinite(const Tensor& root);

class ParamRegistry {
  public:
    Tensor add(const std::string& path, std::vector<double> values, std::size_t rows,
               std::size_t cols);
    const Tensor& get(const std::string& path) const;
    bool has(const std::string& path) const { return params_.count(path) != 0; }
    void zero_grads();
    std::size_t scalar_count() const;
    // Lexicographic by path.
    const std::map<std::string, Tensor>& all() const { return params_; }

  private:
    std::map<std::string, Tensor> params_;
};

}  // namespace samba
