#ifndef XMM_TENSOR_HPP
#define XMM_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace xmm {

// Shaped double-precision array with reverse-mode gradient attachment.
// Rank is 1 or 2; values are row-major. A Tensor is a cheap handle onto a
// shared node, so graphs can be built by value and freed when the last
// handle drops.

struct TensorNode;
using TensorPtr = std::shared_ptr<TensorNode>;

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<TensorPtr> parents;
    std::function<void(TensorNode&)> backward_fn;  // pulls this->grad into parents

    std::size_t size() const { return values.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    void ensure_grad() {
        if (grad.empty()) grad.assign(values.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorPtr node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor randn(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng,
                        bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    TensorNode& node() const { return *node_; }
    const TensorPtr& ptr() const { return node_; }

    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->size(); }
    std::size_t rows() const { return node_->rows(); }
    std::size_t cols() const { return node_->cols(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);

    std::vector<double>& values() const { return node_->values; }
    std::vector<double>& grad() const { return node_->grad; }
    double item() const;

    double at(std::size_t i) const { return node_->values[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }

    // Deep copy of values/shape; the clone is a fresh leaf.
    Tensor clone() const;

private:
    TensorPtr node_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

// ---- differentiable operations -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);            // [m,k]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);         // [m,k]x[n,k]^T -> [m,n]
Tensor add(const Tensor& a, const Tensor& b);               // same shape
Tensor add_row_bias(const Tensor& x, const Tensor& bias);   // [m,n] + [n]
Tensor mul(const Tensor& a, const Tensor& b);               // elementwise
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);
Tensor softmax_rows(const Tensor& x);                       // stable, rows sum to 1
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);                               // tanh approximation
Tensor cross_entropy(const Tensor& logits, std::size_t label);               // [C] or [1,C] -> scalar
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& labels);  // mean
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum(const Tensor& x);                                // -> scalar
Tensor mean_all(const Tensor& x);                           // -> scalar
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);

// Reverse pass from a scalar loss. Gradients accumulate additively into
// every requires_grad tensor reachable from the loss.
void backward(const Tensor& loss);

// Throws ContractError if any value (or gradient, when present) is NaN/inf.
void check_finite(const Tensor& t, const std::string& what);

namespace detail {
constexpr double kGeluCoeff = 0.044715;
constexpr double kAttnMaskValue = -1e9;
double gelu_scalar(double x);
}  // namespace detail

}  // namespace xmm

#endif
