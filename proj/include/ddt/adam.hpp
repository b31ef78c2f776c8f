#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ddt/tensor.hpp"

namespace ddt {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moments for one parameter array; m and v match the parameter's size.
template <class T>
struct AdamMoments {
    std::vector<T> m;
    std::vector<T> v;
};

// One bias-corrected Adam update for a single array. `step` is the already
// incremented step counter (t >= 1).
template <class T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamMoments<T>& moments, const AdamOptions& opt,
                 std::size_t step);

template <class T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, AdamOptions options);

    // Rejects the whole step (no parameter touched, t unchanged) when any
    // gradient entry is non-finite; the exception names the offending array.
    void step();
    void zero_grad();

    std::size_t steps_taken() const { return t_; }
    void set_lr(double lr) { options_.lr = lr; }
    const AdamOptions& options() const { return options_; }
    const AdamMoments<T>& moments(std::size_t i) const { return moments_.at(i); }

    void set_names(std::vector<std::string> names) { names_ = std::move(names); }

private:
    std::vector<Tensor<T>> params_;
    std::vector<AdamMoments<T>> moments_;
    std::vector<std::string> names_;
    AdamOptions options_;
    std::size_t t_ = 0;
};

}  // namespace ddt
