#include "rnascl/gumbel.hpp"

#include <cmath>
#include <string>

#include "rnascl/error.hpp"
#include "rnascl/ops.hpp"

namespace rnascl {

Tensor gumbel_softmax(const Tensor& logits, double tau, const std::vector<double>& noise) {
    if (!(tau > 0.0)) throw DomainError("gumbel_softmax: temperature must be positive, got " + std::to_string(tau));
    if (noise.size() != logits.numel()) {
        throw ShapeError("gumbel_softmax: " + std::to_string(noise.size()) + " noise draws for " +
                         std::to_string(logits.numel()) + " logits");
    }
    if (logits.rank() == 0) throw ShapeError("gumbel_softmax: logits must have rank >= 1");
    const auto perturbed = add(logits, Tensor::from(logits.shape(), noise));
    return softmax(scale(perturbed, 1.0 / tau), logits.rank() - 1);
}

GumbelSampler::GumbelSampler(std::uint64_t seed, double tau0, double decay)
    : tau0_(tau0), decay_(decay), tau_(tau0), rng_(seed) {
    if (!(tau0 > 0.0)) throw DomainError("initial temperature must be positive");
}

void GumbelSampler::anneal() {
    ++epochs_;
    tau_ = temperature_at(epochs_);
}

double GumbelSampler::temperature_at(std::size_t epoch) const {
    return tau0_ * std::exp(-decay_ * static_cast<double>(epoch));
}

std::vector<double> GumbelSampler::noise(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng_.gumbel();
    return v;
}

}  // namespace rnascl
