#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "rnascl/attack.hpp"
#include "rnascl/data.hpp"
#include "rnascl/error.hpp"
#include "rnascl/nn.hpp"
#include "rnascl/ops.hpp"
#include "support.hpp"

using namespace rnascl;
using namespace rnascl::attack;
using rnascl::testing::random_tensor;

namespace {

constexpr std::size_t kD = 2 * 3 * 3;  // C·H·W of the test images

struct LinearModel {
    Tensor w;  // K×D
    Tensor operator()(const Tensor& x) const { return linear(reshape(x, {x.dim(0), kD}), w); }
};

LinearModel linear_model(Rng& rng, std::size_t classes = 2) {
    return {random_tensor({classes, kD}, rng, -1, 1, false)};
}

Tensor inner_images(Rng& rng, std::size_t n) { return random_tensor({n, 2, 3, 3}, rng, 0.2, 0.8, false); }

bool same(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a.at(i) != b.at(i)) return false;
    return true;
}

}  // namespace

TEST(Attack, ZeroEpsilonReturnsInputExactly) {
    Rng rng(1);
    const auto model = linear_model(rng);
    const auto x = inner_images(rng, 3);
    const std::vector<int> y = {0, 1, 0};
    EXPECT_TRUE(same(fgsm(model, x, y, 0.0), x));
    auto cfg = pgd_config(0.0);
    EXPECT_TRUE(same(pgd(model, x, y, cfg, rng), x));
    cfg.momentum = 1.0;
    cfg.random_start = false;
    EXPECT_TRUE(same(mi_fgsm(model, x, y, cfg), x));
}

TEST(Attack, FgsmOnLinearModelFollowsWeightDifference) {
    PrecisionGuard g(Precision::Float64);
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        const auto model = linear_model(rng);
        const auto x = inner_images(rng, 1);
        const int label = t % 2;
        const double eps = 0.05;
        const auto adv = fgsm(model, x, {label}, eps);
        // ∇_x CE = (1 − p_y)·(w_other − w_y) for two classes
        for (std::size_t i = 0; i < kD; ++i) {
            const double d = model.w.at((1 - label) * kD + i) - model.w.at(label * kD + i);
            const double expect = x.at(i) + eps * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
            EXPECT_DOUBLE_EQ(adv.at(i), expect);
        }
    }
}

TEST(Attack, SingleStepPgdWithoutStartEqualsFgsm) {
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
        const auto model = linear_model(rng, 3);
        const auto x = random_tensor({4, 2, 3, 3}, rng, 0.0, 1.0, false);
        const std::vector<int> y = {0, 1, 2, 1};
        AttackConfig cfg;
        cfg.epsilon = 8.0 / 255.0;
        cfg.steps = 1;
        cfg.step_size = cfg.epsilon;
        cfg.random_start = false;
        EXPECT_TRUE(same(pgd(model, x, y, cfg, rng), fgsm(model, x, y, cfg.epsilon)));
    }
}

TEST(Attack, MiFgsmWithoutMomentumIsIterativeFgsm) {
    Rng rng(4);
    Rng init(5);
    const nn::Network net({2, 3, 3, {{4, 3, 1}}}, init);
    const Classifier model = [&](const Tensor& x) { return net.logits(x); };
    for (int t = 0; t < 5; ++t) {
        const auto x = random_tensor({3, 2, 3, 3}, rng, 0.0, 1.0, false);
        const std::vector<int> y = {2, 0, 1};
        auto cfg = pgd_config(6.0 / 255.0, 7);
        cfg.random_start = false;
        cfg.momentum = 0.0;
        EXPECT_TRUE(same(mi_fgsm(model, x, y, cfg), pgd(model, x, y, cfg, rng)));
    }
}

TEST(Attack, MomentumRecursion) {
    const std::vector<double> g = {1.0, -3.0, 0.0, 2.0, 2.0, 0.0};  // two samples
    const std::vector<double> u = {1.0 / 4, -3.0 / 4, 0.0, 0.5, 0.5, 0.0};
    for (double mu : {0.0, 0.5, 1.0}) {
        std::vector<double> v(g.size(), 0.0);
        accumulate_momentum(v, g, mu, 2);
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(v[i], u[i]);
        accumulate_momentum(v, g, mu, 2);
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_DOUBLE_EQ(v[i], (1.0 + mu) * u[i]);
    }
    std::vector<double> v(3, 0.0);
    const std::vector<double> zero = {0.0, 0.0, 0.0};
    accumulate_momentum(v, zero, 1.0, 1);
    for (double x : v) EXPECT_EQ(x, 0.0);
    EXPECT_THROW(accumulate_momentum(v, g, 1.0, 2), ShapeError);
}

TEST(Attack, EveryIterateStaysInBallAndRange) {
    Rng rng(6);
    Rng init(7);
    const nn::Network net({2, 3, 3, {{4, 3, 1}}}, init);
    const Classifier model = [&](const Tensor& x) { return net.logits(x); };
    for (double eps : {2.0 / 255.0, 8.0 / 255.0, 0.3}) {
        const auto x = random_tensor({4, 2, 3, 3}, rng, 0.0, 1.0, false);
        const std::vector<int> y = {0, 1, 2, 0};
        std::size_t seen = 0;
        const IterateObserver check = [&](std::size_t, const Tensor& it) {
            ++seen;
            for (std::size_t i = 0; i < x.numel(); ++i) {
                EXPECT_LE(std::abs(it.at(i) - x.at(i)), eps + 1e-12);
                EXPECT_GE(it.at(i), 0.0);
                EXPECT_LE(it.at(i), 1.0);
            }
        };
        auto cfg = pgd_config(eps, 10);
        pgd(model, x, y, cfg, rng, check);
        cfg.momentum = 1.0;
        cfg.random_start = false;
        mi_fgsm(model, x, y, cfg, check);
        EXPECT_EQ(seen, 20u);
        const auto f = fgsm(model, x, y, eps);
        for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_LE(std::abs(f.at(i) - x.at(i)), eps + 1e-12);
    }
}

TEST(Attack, ConstantModelKeepsMajorityRate) {
    data::Dataset ds;
    ds.channels = 1;
    ds.height = ds.width = 2;
    ds.classes = 3;
    ds.labels = {1, 1, 1, 0, 2, 1, 0, 1};
    ds.images.assign(ds.labels.size() * 4, 0.5);
    // Depends on x only through a zero weight, so every input gradient is zero.
    const Classifier favors_one = [](const Tensor& x) {
        const auto n = x.dim(0);
        std::vector<double> bias(n * 3);
        for (std::size_t i = 0; i < n; ++i) bias[i * 3 + 1] = 1.0;
        const auto z = scale(reshape(sum_axis(reshape(x, {n, 4}), 1), {n, 1}), 0.0);
        return add(linear(z, Tensor::from({3, 1}, {0.0, 0.0, 0.0})), Tensor::from({n, 3}, bias));
    };
    const std::vector<AttackSpec> attacks = {{AttackKind::Fgsm, {8.0 / 255.0, 1, 8.0 / 255.0, 0.0, false}},
                                             {AttackKind::Pgd, pgd_config(8.0 / 255.0, 5)},
                                             {AttackKind::MiFgsm, {8.0 / 255.0, 5, 2.0 / 255.0, 1.0, false}}};
    const auto rows = evaluate(favors_one, ds, attacks, "const", 3, 3);
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) EXPECT_DOUBLE_EQ(r.accuracy, 5.0 / 8.0);
}

TEST(Attack, PredictTiesGoToLowestIndex) {
    EXPECT_EQ(predict(Tensor::from({2, 3}, {1, 1, 0, 0, 2, 2})), (std::vector<int>{0, 1}));
}

TEST(Attack, ConfigValidation) {
    AttackConfig cfg;
    cfg.epsilon = -0.1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = pgd_config(8.0 / 255.0);
    EXPECT_DOUBLE_EQ(cfg.step_size, 2.0 / 255.0);
    EXPECT_EQ(cfg.steps, 20u);
    EXPECT_TRUE(cfg.random_start);
    cfg.steps = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = pgd_config(8.0 / 255.0, 2);
    EXPECT_TRUE(cfg.reachability_warning().has_value());
    EXPECT_FALSE(pgd_config(8.0 / 255.0, 4).reachability_warning().has_value());
}

TEST(Attack, InputGradientLeavesModelGradsAlone) {
    Rng init(8);
    const nn::Network net({2, 3, 3, {{4, 3, 1}}}, init);
    Rng rng(9);
    const auto x = random_tensor({2, 2, 3, 3}, rng, 0.0, 1.0, false);
    const auto g = input_gradient([&](const Tensor& v) { return net.logits(v); }, x, {0, 1});
    EXPECT_EQ(g.size(), x.numel());
    for (const auto& p : net.parameters()) EXPECT_FALSE(p.has_grad());
}

TEST(Attack, EvalCsvRoundTrip) {
    const std::vector<EvalRow> rows = {{"student", "clean", 0.0, 0, 0.875, 64},
                                       {"student", "pgd", 8.0 / 255.0, 20, 0.4375, 64},
                                       {"teacher", "mifgsm", 8.0 / 255.0, 20, 0.5, 64}};
    const auto path = std::filesystem::temp_directory_path() / "rnascl_eval_roundtrip.csv";
    write_eval_csv(path, rows);
    const auto back = read_eval_csv(path);
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back[i].model_id, rows[i].model_id);
        EXPECT_EQ(back[i].attack, rows[i].attack);
        EXPECT_EQ(back[i].epsilon, rows[i].epsilon);
        EXPECT_EQ(back[i].steps, rows[i].steps);
        EXPECT_EQ(back[i].accuracy, rows[i].accuracy);
        EXPECT_EQ(back[i].n_samples, rows[i].n_samples);
    }
    std::filesystem::remove(path);
    EXPECT_THROW(read_eval_csv(path), MissingArtifactError);
}
