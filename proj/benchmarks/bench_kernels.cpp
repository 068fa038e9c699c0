#include <benchmark/benchmark.h>

#include "rnascl/attack.hpp"
#include "rnascl/distill.hpp"
#include "rnascl/nn.hpp"
#include "rnascl/ops.hpp"

using namespace rnascl;

namespace {

Tensor uniform(Shape shape, Rng& rng, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// args: strategy (0 direct, 1 patch matrix), channels, spatial size
void conv_forward(benchmark::State& state) {
    set_conv_strategy(state.range(0) == 0 ? ConvStrategy::Direct : ConvStrategy::PatchMatrix);
    const auto c = static_cast<std::size_t>(state.range(1)), s = static_cast<std::size_t>(state.range(2));
    Rng rng(1);
    const auto x = uniform({32, c, s, s}, rng), w = uniform({c, c, 3, 3}, rng);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, 1, 1));
    state.SetItemsProcessed(state.iterations() * 32 * static_cast<std::int64_t>(c * c * 9 * s * s));
}

void conv_backward(benchmark::State& state) {
    set_conv_strategy(state.range(0) == 0 ? ConvStrategy::Direct : ConvStrategy::PatchMatrix);
    const auto c = static_cast<std::size_t>(state.range(1)), s = static_cast<std::size_t>(state.range(2));
    Rng rng(2);
    const auto x = uniform({32, c, s, s}, rng, true), w = uniform({c, c, 3, 3}, rng, true);
    const std::vector<Tensor> wrt = {x, w};
    for (auto _ : state) benchmark::DoNotOptimize(gradients(sum(conv2d(x, w, 1, 1)), wrt));
    state.SetItemsProcessed(state.iterations() * 32 * static_cast<std::int64_t>(c * c * 9 * s * s));
}

void attention_loss_6x4(benchmark::State& state) {
    Rng rng(3);
    std::vector<Tensor> s, t;
    for (std::size_t i = 0; i < 6; ++i) {
        const std::size_t e = 16u >> (i / 2);
        s.push_back(uniform({64, 8, e, e}, rng, true));
    }
    for (std::size_t j = 0; j < 4; ++j) {
        const std::size_t e = 16u >> (j / 2);
        t.push_back(uniform({64, 32, e, e}, rng));
    }
    const auto w = uniform({6, 4}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(gradients(distill::attention_loss(s, t, w), s));
}

// one PGD iteration (forward + input gradient) on the desk student shape
void pgd_step(benchmark::State& state) {
    set_conv_strategy(ConvStrategy::PatchMatrix);
    Rng rng(4);
    const nn::Network net({3, 16, 4, {{4, 3, 1}, {4, 3, 1}, {8, 3, 2}, {8, 3, 1}, {16, 3, 2}, {16, 3, 1}}}, rng);
    std::vector<double> px(64 * 3 * 16 * 16);
    for (auto& v : px) v = rng.uniform();
    const auto x = Tensor::from({64, 3, 16, 16}, px);
    const std::vector<int> y(64, 1);
    auto cfg = attack::pgd_config(8.0 / 255.0, 1);
    cfg.random_start = false;
    const attack::Classifier model = [&](const Tensor& v) { return net.logits(v); };
    for (auto _ : state) benchmark::DoNotOptimize(attack::pgd(model, x, y, cfg, rng));
    state.SetItemsProcessed(state.iterations() * 64);
}

}  // namespace

BENCHMARK(conv_forward)->ArgsProduct({{0, 1}, {8, 32}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(conv_backward)->ArgsProduct({{0, 1}, {8, 32}, {16}})->Unit(benchmark::kMillisecond);
BENCHMARK(attention_loss_6x4)->Unit(benchmark::kMillisecond);
BENCHMARK(pgd_step)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
