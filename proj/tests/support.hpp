#pragma once

// Shared oracles for the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ddt/tensor.hpp"

namespace testing {

using ddt::Tensord;

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) {
        x = u(rng);
    }
    return v;
}

// Relative error with an absolute floor so exact zeros compare sanely.
inline double rel_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Worst relative error between backward() and central differences of `loss`
// with respect to every element of every input.
inline double max_fd_error(std::vector<Tensord> inputs, const std::function<Tensord(const std::vector<Tensord>&)>& loss,
                           double h = 1e-5) {
    for (auto& t : inputs) {
        t.zero_grad();
    }
    loss(inputs).backward();
    double worst = 0.0;
    for (auto& t : inputs) {
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        auto values = t.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + h;
            const double up = loss(inputs).item();
            values[i] = orig - h;
            const double down = loss(inputs).item();
            values[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic.empty() ? 0.0 : analytic[i];
            worst = std::max(worst, rel_error(a, numeric));
        }
    }
    return worst;
}

// Naive triple loop, independent of the library's BLAS path.
inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                         std::size_t n, std::size_t p) {
    std::vector<double> c(m * p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                s += a[i * n + k] * b[k * p + j];
            }
            c[i * p + j] = s;
        }
    }
    return c;
}

}  // namespace testing
