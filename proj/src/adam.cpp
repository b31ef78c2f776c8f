#include "ddt/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace ddt {

template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamMoments<T>& moments, const AdamOptions& opt,
                 std::size_t step) {
    if (grad.size() != param.size() || moments.m.size() != param.size() || moments.v.size() != param.size()) {
        throw std::invalid_argument("adam_update: parameter, gradient and moment sizes differ");
    }
    if (step == 0) {
        throw std::invalid_argument("adam_update: step counter must be incremented before the update");
    }
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
    const T b1 = T(opt.beta1), b2 = T(opt.beta2);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        moments.m[i] = b1 * moments.m[i] + (T(1) - b1) * g;
        moments.v[i] = b2 * moments.v[i] + (T(1) - b2) * g * g;
        const T m_hat = moments.m[i] / T(bc1);
        const T v_hat = moments.v[i] / T(bc2);
        param[i] -= T(opt.lr) * m_hat / (std::sqrt(v_hat) + T(opt.eps));
    }
}

template <class T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
    moments_.reserve(params_.size());
    for (const auto& p : params_) {
        moments_.push_back({std::vector<T>(p.size(), T(0)), std::vector<T>(p.size(), T(0))});
    }
}

template <class T>
void Adam<T>::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        for (T g : params_[i].grad()) {
            if (!std::isfinite(g)) {
                const std::string name = i < names_.size() ? names_[i] : "#" + std::to_string(i);
                throw std::runtime_error("adam: non-finite gradient in parameter " + name + " at step " +
                                         std::to_string(t_ + 1) + "; update rejected");
            }
        }
    }
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) {
            continue;
        }
        adam_update<T>(p.mutable_values(), p.grad(), moments_[i], options_, t_);
    }
}

template <class T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

template void adam_update<float>(std::span<float>, std::span<const float>, AdamMoments<float>&, const AdamOptions&,
                                 std::size_t);
template void adam_update<double>(std::span<double>, std::span<const double>, AdamMoments<double>&,
                                  const AdamOptions&, std::size_t);
template class Adam<float>;
template class Adam<double>;

}  // namespace ddt
