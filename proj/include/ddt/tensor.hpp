#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations build a graph of
// nodes; calling backward() on a scalar result accumulates gradients into
// every reachable node that requires them. Leaves (parameters) keep their
// gradient across calls until zero_grad(); intermediate nodes are reset at the
// start of every backward pass.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ddt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) {
            grad.assign(value.size(), T(0));
        }
    }
    bool is_leaf() const { return parents.empty(); }
};

template <class T>
class Tensor {
public:
    using Node = TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T fill, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    // Row count when viewed as a matrix over the last dimension.
    std::size_t rows() const;
    std::size_t cols() const { return node_->shape.back(); }

    std::span<const T> values() const { return node_->value; }
    std::span<T> mutable_values() { return node_->value; }
    T item() const;
    T operator[](std::size_t i) const { return node_->value[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Empty span when no gradient has been written yet.
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad();

    // Accumulates d(this)/d(node) into every reachable node. `this` must be a
    // scalar; a loss that does not require grad is a no-op.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Per-(batch, query, key) attention permission. When batch == 1 the same
// matrix is shared by every batch element.
struct AttentionMask {
    std::size_t batch = 1;
    std::size_t seq = 0;
    std::vector<std::uint8_t> allowed;

    bool at(std::size_t b, std::size_t query, std::size_t key) const {
        const std::size_t base = batch == 1 ? 0 : b * seq * seq;
        return allowed[base + query * seq + key] != 0;
    }
};

// --- elementwise and linear algebra -------------------------------------

template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// x[..., n] + bias[n]
template <class T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
// x[..., n] * scale[n]
template <class T> Tensor<T> scale_last_dim(const Tensor<T>& x, const Tensor<T>& scale);
template <class T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <class T> Tensor<T> mul_scalar(const Tensor<T>& x, T s);
// x · weight[in×out] + bias[out]
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <class T> Tensor<T> gelu(const Tensor<T>& x);  // tanh approximation
template <class T> Tensor<T> relu(const Tensor<T>& x);
template <class T> Tensor<T> tanh(const Tensor<T>& x);

template <class T> Tensor<T> softmax_last_dim(const Tensor<T>& x);
// Normalization over the last dimension without affine terms.
template <class T> Tensor<T> layer_norm(const Tensor<T>& x, T eps);

// --- structural ----------------------------------------------------------

template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Treats x as [rows × cols]; out row i = x row index[i]. Backward scatter-adds.
template <class T> Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index);
// Stacks matrices with equal column count.
template <class T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <class T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);

// --- attention and regularization ----------------------------------------

// q, k, v: [batch*seq × d], heads split d evenly. Masked scores get exactly
// zero probability. When probs_out is non-null it receives the post-softmax
// matrices laid out [batch][head][query][key].
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionMask& mask,
                    std::size_t batch, std::size_t seq, std::size_t heads, std::vector<T>* probs_out = nullptr);

template <class T> Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng);

// --- reductions and losses ----------------------------------------------

template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);
// Mean over unmasked rows of the per-element squared error, averaged across columns.
template <class T>
Tensor<T> masked_mse(const Tensor<T>& pred, std::span<const T> target, std::span<const std::uint8_t> row_mask);
// Mean over unmasked rows of -log softmax(logits)[target].
template <class T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> target,
                               std::span<const std::uint8_t> row_mask);

}  // namespace ddt
