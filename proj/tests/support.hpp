// Shared helpers for unit and acceptance tests: random tensors and a central
// finite-difference gradient checker.
#ifndef RNASCL_TESTS_SUPPORT_HPP
#define RNASCL_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rnascl/ops.hpp"
#include "rnascl/random.hpp"
#include "rnascl/tensor.hpp"

namespace rnascl::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Uniform values with magnitude at least `gap`, so kinks at 0 stay out of
/// reach of the difference step.
inline Tensor away_from_zero(Shape shape, Rng& rng, double gap = 0.05, bool requires_grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) {
        const double m = rng.uniform(gap, 1.0);
        x = rng.uniform() < 0.5 ? -m : m;
    }
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Tensor probabilities(std::size_t rows, std::size_t cols, Rng& rng, bool requires_grad = true) {
    std::vector<double> v(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += v[r * cols + c] = rng.uniform(0.05, 1.0);
        for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= s;
    }
    return Tensor::from({rows, cols}, std::move(v), requires_grad);
}

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

/// ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-12) over all
/// inputs, with the output contracted against a fixed random weighting.
/// Runs in 64-bit mode.
inline double gradient_error(const Fn& f, std::vector<Tensor> inputs, Rng& rng, double h = 1e-6) {
    PrecisionGuard f64(Precision::Float64);
    const Tensor probe = f(inputs);
    std::vector<double> weights(probe.numel());
    for (auto& w : weights) w = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const Tensor wt = Tensor::from(probe.shape(), weights);
    auto objective = [&](const std::vector<Tensor>& in) { return sum(mul(f(in), wt)); };

    const auto analytic = gradients(objective(inputs), inputs);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        auto data = inputs[i].mutable_data();
        for (std::size_t k = 0; k < data.size(); ++k) {
            const double saved = data[k];
            double plus, minus;
            {
                NoGradGuard ng;
                data[k] = saved + h;
                plus = objective(inputs).item();
                data[k] = saved - h;
                minus = objective(inputs).item();
            }
            data[k] = saved;
            const double num = (plus - minus) / (2.0 * h);
            const double an = analytic[i][k];
            diff2 += (an - num) * (an - num);
            a2 += an * an;
            n2 += num * num;
        }
    }
    return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
}

}  // namespace rnascl::testing

#endif  // RNASCL_TESTS_SUPPORT_HPP
