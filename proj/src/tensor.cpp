#include "ddt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <cblas.h>

namespace ddt {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

template <class T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

// Result node whose gradient bookkeeping is only attached when some input
// needs it, so inference graphs hold no back-references.
template <class T>
NodePtr<T> make_result(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
    auto node = std::make_shared<TensorNode<T>>();
    node->value.assign(shape_size(shape), T(0));
    node->shape = std::move(shape);
    for (const auto* in : inputs) {
        if (in->requires_grad()) {
            node->requires_grad = true;
        }
    }
    if (node->requires_grad) {
        for (const auto* in : inputs) {
            node->parents.push_back(in->node_ptr());
        }
    }
    return node;
}

template <class T>
T* grad_of(TensorNode<T>& parent) {
    if (!parent.requires_grad) {
        return nullptr;
    }
    parent.ensure_grad();
    return parent.grad.data();
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                                    shape_string(b));
    }
}

template <class T>
void require_finite(std::span<const T> v, const char* op) {
    for (T x : v) {
        if (!std::isfinite(x)) {
            throw std::invalid_argument(std::string(op) + ": non-finite input");
        }
    }
}

// Row-major BLAS wrapper for both precisions.
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k),
                alpha, a, int(lda), b, int(ldb), beta, c, int(ldc));
}
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, int(m), int(n), int(k),
                alpha, a, int(lda), b, int(ldb), beta, c, int(ldc));
}

// C[m×p] += A[m×n] · B[n×p]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t p, const T* a, const T* b, T* c) {
    gemm(false, false, m, p, n, T(1), a, n, b, p, T(1), c, p);
}

// C[m×n] += A[m×p] · B[n×p]ᵀ
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t p, const T* a, const T* b, T* c) {
    gemm(false, true, m, n, p, T(1), a, p, b, p, T(1), c, n);
}

// C[n×p] += A[m×n]ᵀ · B[m×p]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t p, const T* a, const T* b, T* c) {
    gemm(true, false, n, p, m, T(1), a, n, b, p, T(1), c, p);
}

template <class T>
Tensor<T> unary(const Tensor<T>& x, T (*f)(T), T (*df)(T, T)) {
    auto node = make_result<T>(x.shape(), {&x});
    const auto in = x.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        node->value[i] = f(in[i]);
    }
    if (node->requires_grad) {
        node->backward_fn = [df](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            T* gx = grad_of(px);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gx[i] += self.grad[i] * df(px.value[i], self.value[i]);
            }
        };
    }
    return Tensor<T>(node);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

// --- Tensor ----------------------------------------------------------------

template <class T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <class T>
Tensor<T> Tensor<T>::full(Shape shape, T fill, bool requires_grad) {
    auto node = std::make_shared<Node>();
    node->value.assign(shape_size(shape), fill);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

template <class T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw std::invalid_argument("Tensor::from: shape " + shape_string(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(node);
}

template <class T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

template <class T>
std::size_t Tensor<T>::rows() const {
    const auto& s = node_->shape;
    return s.empty() || s.back() == 0 ? 0 : node_->value.size() / s.back();
}

template <class T>
T Tensor<T>::item() const {
    if (size() != 1) {
        throw std::invalid_argument("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
    }
    return node_->value[0];
}

template <class T>
void Tensor<T>::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
void Tensor<T>::backward() const {
    if (size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_string(shape()));
    }
    if (!node_->requires_grad) {
        return;
    }

    // Iterative post-order DFS; `order` ends up parents-before-children.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    for (Node* n : order) {
        if (!n->is_leaf()) {
            n->grad.assign(n->value.size(), T(0));
        }
    }
    node_->ensure_grad();
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) {
            (*it)->backward_fn(**it);
        }
    }
}

// --- elementwise and linear algebra -------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                                    shape_string(b.shape()));
    }
    const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
    auto node = make_result<T>({m, p}, {&a, &b});
    gemm_nn(m, n, p, a.values().data(), b.values().data(), node->value.data());
    if (node->requires_grad) {
        node->backward_fn = [m, n, p](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (T* ga = grad_of(pa)) {
                gemm_nt(m, n, p, self.grad.data(), pb.value.data(), ga);
            }
            if (T* gb = grad_of(pb)) {
                gemm_tn(m, n, p, pa.value.data(), self.grad.data(), gb);
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    auto node = make_result<T>(a.shape(), {&a, &b});
    for (std::size_t i = 0; i < node->value.size(); ++i) {
        node->value[i] = a[i] + b[i];
    }
    if (node->requires_grad) {
        node->backward_fn = [](TensorNode<T>& self) {
            for (auto& parent : self.parents) {
                if (T* g = grad_of(*parent)) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                        g[i] += self.grad[i];
                    }
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    auto node = make_result<T>(a.shape(), {&a, &b});
    for (std::size_t i = 0; i < node->value.size(); ++i) {
        node->value[i] = a[i] * b[i];
    }
    if (node->requires_grad) {
        node->backward_fn = [](TensorNode<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (T* ga = grad_of(pa)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    ga[i] += self.grad[i] * pb.value[i];
                }
            }
            if (T* gb = grad_of(pb)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    gb[i] += self.grad[i] * pa.value[i];
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (bias.size() != x.cols()) {
        throw std::invalid_argument("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                                    shape_string(x.shape()));
    }
    const std::size_t n = x.cols(), rows = x.rows();
    auto node = make_result<T>(x.shape(), {&x, &bias});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
            node->value[r * n + j] = x[r * n + j] + bias[j];
        }
    }
    if (node->requires_grad) {
        node->backward_fn = [n, rows](TensorNode<T>& self) {
            if (T* gx = grad_of(*self.parents[0])) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    gx[i] += self.grad[i];
                }
            }
            if (T* gb = grad_of(*self.parents[1])) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gb[j] += self.grad[r * n + j];
                    }
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> scale_last_dim(const Tensor<T>& x, const Tensor<T>& scale) {
    if (scale.size() != x.cols()) {
        throw std::invalid_argument("scale_last_dim: scale " + shape_string(scale.shape()) +
                                    " does not match " + shape_string(x.shape()));
    }
    const std::size_t n = x.cols(), rows = x.rows();
    auto node = make_result<T>(x.shape(), {&x, &scale});
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
            node->value[r * n + j] = x[r * n + j] * scale[j];
        }
    }
    if (node->requires_grad) {
        node->backward_fn = [n, rows](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            auto& ps = *self.parents[1];
            if (T* gx = grad_of(px)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gx[r * n + j] += self.grad[r * n + j] * ps.value[j];
                    }
                }
            }
            if (T* gs = grad_of(ps)) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < n; ++j) {
                        gs[j] += self.grad[r * n + j] * px.value[r * n + j];
                    }
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    auto node = make_result<T>(x.shape(), {&x});
    for (std::size_t i = 0; i < node->value.size(); ++i) {
        node->value[i] = x[i] + s;
    }
    if (node->requires_grad) {
        node->backward_fn = [](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gx[i] += self.grad[i];
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
    auto node = make_result<T>(x.shape(), {&x});
    for (std::size_t i = 0; i < node->value.size(); ++i) {
        node->value[i] = x[i] * s;
    }
    if (node->requires_grad) {
        node->backward_fn = [s](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gx[i] += self.grad[i] * s;
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    return add_bias(matmul(x, weight), bias);
}

// tanh through a single exp; libm's tanhf was the hottest call in training.
template <class T>
T fast_tanh(T u) {
    const T e = std::exp(T(-2) * std::abs(u));
    const T t = (T(1) - e) / (T(1) + e);
    return u < T(0) ? -t : t;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    auto node = make_result<T>(x.shape(), {&x});
    const auto in = x.values();
    std::vector<T> th(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const T v = in[i];
        th[i] = fast_tanh(T(kGeluC) * (v + T(kGeluA) * v * v * v));
        node->value[i] = T(0.5) * v * (T(1) + th[i]);
    }
    if (node->requires_grad) {
        node->backward_fn = [th = std::move(th)](TensorNode<T>& self) {
            auto& px = *self.parents[0];
            T* gx = grad_of(px);
            for (std::size_t i = 0; i < th.size(); ++i) {
                const T v = px.value[i];
                const T t = th[i];
                const T dinner = T(kGeluC) * (T(1) + T(3 * kGeluA) * v * v);
                gx[i] += self.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dinner);
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary<T>(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
    return unary<T>(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> softmax_last_dim(const Tensor<T>& x) {
    if (x.rank() == 0 || x.cols() == 0) {
        throw std::invalid_argument("softmax_last_dim: last dimension must be >= 1");
    }
    require_finite(x.values(), "softmax_last_dim");
    const std::size_t n = x.cols(), rows = x.rows();
    auto node = make_result<T>(x.shape(), {&x});
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.values().data() + r * n;
        T* out = node->value.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            total += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            out[j] /= total;
        }
    }
    if (node->requires_grad) {
        node->backward_fn = [n, rows](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.value.data() + r * n;
                const T* gy = self.grad.data() + r * n;
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    dot += y[j] * gy[j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    gx[r * n + j] += y[j] * (gy[j] - dot);
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps) {
    if (x.rank() == 0 || x.cols() == 0) {
        throw std::invalid_argument("layer_norm: last dimension must be >= 1");
    }
    require_finite(x.values(), "layer_norm");
    const std::size_t n = x.cols(), rows = x.rows();
    auto node = make_result<T>(x.shape(), {&x});
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.values().data() + r * n;
        T mu = 0;
        for (std::size_t j = 0; j < n; ++j) {
            mu += in[j];
        }
        mu /= T(n);
        T var = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const T d = in[j] - mu;
            var += d * d;
        }
        var /= T(n);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            node->value[r * n + j] = (in[j] - mu) * inv_std[r];
        }
    }
    if (node->requires_grad) {
        node->backward_fn = [n, rows, inv_std = std::move(inv_std)](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* y = self.value.data() + r * n;
                const T* gy = self.grad.data() + r * n;
                T mean_g = 0, mean_gy = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    mean_g += gy[j];
                    mean_gy += gy[j] * y[j];
                }
                mean_g /= T(n);
                mean_gy /= T(n);
                for (std::size_t j = 0; j < n; ++j) {
                    gx[r * n + j] += inv_std[r] * (gy[j] - mean_g - y[j] * mean_gy);
                }
            }
        };
    }
    return Tensor<T>(node);
}

// --- structural ----------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_size(shape) != x.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " +
                                    shape_string(shape));
    }
    auto node = make_result<T>(std::move(shape), {&x});
    std::copy(x.values().begin(), x.values().end(), node->value.begin());
    if (node->requires_grad) {
        node->backward_fn = [](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gx[i] += self.grad[i];
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index) {
    const std::size_t n = x.cols(), rows = x.rows();
    for (std::size_t r : index) {
        if (r >= rows) {
            throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of range for " +
                                    shape_string(x.shape()));
        }
    }
    auto node = make_result<T>({index.size(), n}, {&x});
    for (std::size_t i = 0; i < index.size(); ++i) {
        std::copy_n(x.values().data() + index[i] * n, n, node->value.data() + i * n);
    }
    if (node->requires_grad) {
        node->backward_fn = [n, idx = std::vector<std::size_t>(index.begin(), index.end())](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                T* dst = gx + idx[i] * n;
                const T* src = self.grad.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) {
                    dst[j] += src[j];
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: no inputs");
    }
    const std::size_t n = parts.front().cols();
    std::size_t rows = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (p.cols() != n) {
            throw std::invalid_argument("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                                        " vs " + shape_string(p.shape()));
        }
        rows += p.rows();
        needs_grad = needs_grad || p.requires_grad();
    }
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = {rows, n};
    node->value.reserve(rows * n);
    for (const auto& p : parts) {
        node->value.insert(node->value.end(), p.values().begin(), p.values().end());
    }
    node->requires_grad = needs_grad;
    if (needs_grad) {
        for (const auto& p : parts) {
            node->parents.push_back(p.node_ptr());
        }
        node->backward_fn = [](TensorNode<T>& self) {
            std::size_t offset = 0;
            for (auto& parent : self.parents) {
                const std::size_t len = parent->value.size();
                if (T* g = grad_of(*parent)) {
                    for (std::size_t i = 0; i < len; ++i) {
                        g[i] += self.grad[offset + i];
                    }
                }
                offset += len;
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    const std::size_t n = x.cols(), rows = x.rows();
    if (begin > end || end > n) {
        throw std::out_of_range("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + shape_string(x.shape()));
    }
    const std::size_t w = end - begin;
    auto node = make_result<T>({rows, w}, {&x});
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(x.values().data() + r * n + begin, w, node->value.data() + r * w);
    }
    if (node->requires_grad) {
        node->backward_fn = [n, rows, begin, w](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < w; ++j) {
                    gx[r * n + begin + j] += self.grad[r * w + j];
                }
            }
        };
    }
    return Tensor<T>(node);
}

// --- attention and regularization ----------------------------------------

template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const AttentionMask& mask,
                    std::size_t batch, std::size_t seq, std::size_t heads, std::vector<T>* probs_out) {
    require_same_shape(q.shape(), k.shape(), "attention");
    require_same_shape(q.shape(), v.shape(), "attention");
    const std::size_t d = q.cols();
    if (q.rows() != batch * seq || heads == 0 || d % heads != 0) {
        throw std::invalid_argument("attention: " + shape_string(q.shape()) + " is not batch*seq=" +
                                    std::to_string(batch * seq) + " rows with width divisible by " +
                                    std::to_string(heads) + " heads");
    }
    if (mask.seq != seq || (mask.batch != 1 && mask.batch != batch) ||
        mask.allowed.size() != mask.batch * seq * seq) {
        throw std::invalid_argument("attention: mask does not match sequence length " + std::to_string(seq));
    }
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(T(dh));
    auto node = make_result<T>(q.shape(), {&q, &k, &v});
    std::vector<T> probs(batch * heads * seq * seq, T(0));

    const T* qv = q.values().data();
    const T* kv = k.values().data();
    const T* vv = v.values().data();
    T* out = node->value.data();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * seq * d + h * dh;
            T* p = probs.data() + (b * heads + h) * seq * seq;
            gemm(false, true, seq, seq, dh, scale, qv + off, d, kv + off, d, T(0), p, seq);
            for (std::size_t i = 0; i < seq; ++i) {
                T* row = p + i * seq;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < seq; ++j) {
                    if (mask.at(b, i, j)) {
                        mx = std::max(mx, row[j]);
                    }
                }
                T total = 0;
                for (std::size_t j = 0; j < seq; ++j) {
                    row[j] = mask.at(b, i, j) ? std::exp(row[j] - mx) : T(0);
                    total += row[j];
                }
                for (std::size_t j = 0; j < seq; ++j) {
                    row[j] /= total;
                }
            }
            gemm(false, false, seq, dh, seq, T(1), p, seq, vv + off, d, T(1), out + off, d);
        }
    }
    if (probs_out) {
        *probs_out = probs;
    }
    if (node->requires_grad) {
        node->backward_fn = [=, probs = std::move(probs)](TensorNode<T>& self) {
            auto& pq = *self.parents[0];
            auto& pk = *self.parents[1];
            auto& pv = *self.parents[2];
            T* gq = grad_of(pq);
            T* gk = grad_of(pk);
            T* gv = grad_of(pv);
            std::vector<T> ds(seq * seq);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = b * seq * d + h * dh;
                    const T* p = probs.data() + (b * heads + h) * seq * seq;
                    const T* go = self.grad.data() + off;
                    if (gv) {
                        gemm(true, false, seq, dh, seq, T(1), p, seq, go, d, T(1), gv + off, d);
                    }
                    if (!gq && !gk) {
                        continue;
                    }
                    // dP = dO·Vᵀ, then the softmax Jacobian row by row.
                    gemm(false, true, seq, seq, dh, T(1), go, d, pv.value.data() + off, d, T(0), ds.data(), seq);
                    for (std::size_t i = 0; i < seq; ++i) {
                        const T* pr = p + i * seq;
                        T* dr = ds.data() + i * seq;
                        T weighted = 0;
                        for (std::size_t j = 0; j < seq; ++j) {
                            weighted += pr[j] * dr[j];
                        }
                        for (std::size_t j = 0; j < seq; ++j) {
                            dr[j] = pr[j] * (dr[j] - weighted) * scale;
                        }
                    }
                    if (gq) {
                        gemm(false, false, seq, dh, seq, T(1), ds.data(), seq, pk.value.data() + off, d, T(1),
                             gq + off, d);
                    }
                    if (gk) {
                        gemm(true, false, seq, dh, seq, T(1), ds.data(), seq, pq.value.data() + off, d, T(1),
                             gk + off, d);
                    }
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must lie in [0, 1)");
    }
    if (rate == 0.0) {
        return x;
    }
    const T keep_scale = T(1.0 / (1.0 - rate));
    std::vector<T> factor(x.size());
    // One 64-bit draw per element, compared against a fixed threshold.
    const double threshold = std::ldexp(1.0 - rate, 64);
    for (auto& f : factor) {
        f = static_cast<double>(rng()) < threshold ? keep_scale : T(0);
    }
    auto node = make_result<T>(x.shape(), {&x});
    for (std::size_t i = 0; i < factor.size(); ++i) {
        node->value[i] = x[i] * factor[i];
    }
    if (node->requires_grad) {
        node->backward_fn = [factor = std::move(factor)](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            for (std::size_t i = 0; i < factor.size(); ++i) {
                gx[i] += self.grad[i] * factor[i];
            }
        };
    }
    return Tensor<T>(node);
}

// --- reductions and losses ----------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    auto node = make_result<T>({1}, {&x});
    T total = 0;
    for (T v : x.values()) {
        total += v;
    }
    node->value[0] = total;
    if (node->requires_grad) {
        node->backward_fn = [](TensorNode<T>& self) {
            T* gx = grad_of(*self.parents[0]);
            const std::size_t len = self.parents[0]->value.size();
            for (std::size_t i = 0; i < len; ++i) {
                gx[i] += self.grad[0];
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return mul_scalar(sum(x), T(1) / T(x.size()));
}

namespace {

std::size_t count_active(std::span<const std::uint8_t> mask) {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

}  // namespace

template <class T>
Tensor<T> masked_mse(const Tensor<T>& pred, std::span<const T> target, std::span<const std::uint8_t> row_mask) {
    const std::size_t n = pred.cols(), rows = pred.rows();
    if (target.size() != pred.size() || row_mask.size() != rows) {
        throw std::invalid_argument("masked_mse: prediction " + shape_string(pred.shape()) + " vs " +
                                    std::to_string(target.size()) + " targets and " +
                                    std::to_string(row_mask.size()) + " mask rows");
    }
    const std::size_t active = count_active(row_mask);
    if (active == 0) {
        throw std::invalid_argument("masked_mse: every position is masked");
    }
    const T denom = T(active * n);
    auto node = make_result<T>({1}, {&pred});
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!row_mask[r]) {
            continue;
        }
        for (std::size_t j = 0; j < n; ++j) {
            const T d = pred[r * n + j] - target[r * n + j];
            total += d * d;
        }
    }
    node->value[0] = total / denom;
    if (node->requires_grad) {
        node->backward_fn = [n, rows, denom, tgt = std::vector<T>(target.begin(), target.end()),
                             mask = std::vector<std::uint8_t>(row_mask.begin(), row_mask.end())](TensorNode<T>& self) {
            auto& pp = *self.parents[0];
            T* gp = grad_of(pp);
            const T g = self.grad[0] * T(2) / denom;
            for (std::size_t r = 0; r < rows; ++r) {
                if (!mask[r]) {
                    continue;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    gp[r * n + j] += g * (pp.value[r * n + j] - tgt[r * n + j]);
                }
            }
        };
    }
    return Tensor<T>(node);
}

template <class T>
Tensor<T> masked_cross_entropy(const Tensor<T>& logits, std::span<const int> target,
                               std::span<const std::uint8_t> row_mask) {
    const std::size_t n = logits.cols(), rows = logits.rows();
    if (target.size() != rows || row_mask.size() != rows) {
        throw std::invalid_argument("masked_cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                                    std::to_string(target.size()) + " targets and " +
                                    std::to_string(row_mask.size()) + " mask rows");
    }
    const std::size_t active = count_active(row_mask);
    if (active == 0) {
        throw std::invalid_argument("masked_cross_entropy: every position is masked");
    }
    auto node = make_result<T>({1}, {&logits});
    std::vector<T> probs(logits.size(), T(0));
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!row_mask[r]) {
            continue;
        }
        if (target[r] < 0 || static_cast<std::size_t>(target[r]) >= n) {
            throw std::out_of_range("masked_cross_entropy: target " + std::to_string(target[r]) +
                                    " outside [0, " + std::to_string(n) + ")");
        }
        const T* z = logits.values().data() + r * n;
        const T mx = *std::max_element(z, z + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) {
            probs[r * n + j] = std::exp(z[j] - mx);
            s += probs[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            probs[r * n + j] /= s;
        }
        total += -(z[target[r]] - mx - std::log(s));
    }
    const T denom = T(active);
    node->value[0] = total / denom;
    if (node->requires_grad) {
        node->backward_fn = [n, rows, denom, probs = std::move(probs),
                             tgt = std::vector<int>(target.begin(), target.end()),
                             mask = std::vector<std::uint8_t>(row_mask.begin(), row_mask.end())](TensorNode<T>& self) {
            T* gz = grad_of(*self.parents[0]);
            const T g = self.grad[0] / denom;
            for (std::size_t r = 0; r < rows; ++r) {
                if (!mask[r]) {
                    continue;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const T onehot = static_cast<int>(j) == tgt[r] ? T(1) : T(0);
                    gz[r * n + j] += g * (probs[r * n + j] - onehot);
                }
            }
        };
    }
    return Tensor<T>(node);
}

// --- instantiations ------------------------------------------------------

#define DDT_INSTANTIATE(T)                                                                                    \
    template class Tensor<T>;                                                                                 \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                               \
    template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> scale_last_dim(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                       \
    template Tensor<T> mul_scalar(const Tensor<T>&, T);                                                       \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                          \
    template Tensor<T> gelu(const Tensor<T>&);                                                                \
    template Tensor<T> relu(const Tensor<T>&);                                                                \
    template Tensor<T> tanh(const Tensor<T>&);                                                                \
    template Tensor<T> softmax_last_dim(const Tensor<T>&);                                                    \
    template Tensor<T> layer_norm(const Tensor<T>&, T);                                                       \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                      \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                           \
    template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                            \
    template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                                \
    template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const AttentionMask&,  \
                                 std::size_t, std::size_t, std::size_t, std::vector<T>*);                     \
    template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&);                                   \
    template Tensor<T> sum(const Tensor<T>&);                                                                 \
    template Tensor<T> mean(const Tensor<T>&);                                                                \
    template Tensor<T> masked_mse(const Tensor<T>&, std::span<const T>, std::span<const std::uint8_t>);       \
    template Tensor<T> masked_cross_entropy(const Tensor<T>&, std::span<const int>, std::span<const std::uint8_t>);

DDT_INSTANTIATE(float)
DDT_INSTANTIATE(double)

#undef DDT_INSTANTIATE

}  // namespace ddt
