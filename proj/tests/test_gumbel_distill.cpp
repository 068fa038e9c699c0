#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rnascl/distill.hpp"
#include "rnascl/error.hpp"
#include "rnascl/gumbel.hpp"
#include "support.hpp"

using namespace rnascl;
using namespace rnascl::distill;
using rnascl::testing::gradient_error;
using rnascl::testing::random_tensor;

namespace {

// Scalar oracle: normalized flattened map from one N×C×H×W activation sample
// when the map is already at the common size.
std::vector<double> oracle_map(const Tensor& act, std::size_t n) {
    const auto c = act.dim(1), hw = act.dim(2) * act.dim(3);
    std::vector<double> m(hw, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) {
            const double a = act.at((n * c + ch) * hw + p);
            m[p] += a * a;
        }
    double s = 1e-12;
    for (double v : m) s += v * v;
    for (double& v : m) v /= std::sqrt(s);
    return m;
}

double oracle_attention(const std::vector<Tensor>& s, const std::vector<Tensor>& t,
                        const std::vector<std::vector<double>>& g) {
    const auto ns = s.size(), nt = t.size(), batch = s[0].dim(0);
    double total = 0.0;
    for (std::size_t i = 0; i < ns; ++i)
        for (std::size_t j = 0; j < nt; ++j) {
            double mean = 0.0;
            for (std::size_t n = 0; n < batch; ++n) {
                const auto a = oracle_map(s[i], n), b = oracle_map(t[j], n);
                double d = 0.0;
                for (std::size_t p = 0; p < a.size(); ++p) d += (a[p] - b[p]) * (a[p] - b[p]);
                mean += std::sqrt(d) / static_cast<double>(batch);
            }
            total += g[i][j] * mean;
        }
    return total / static_cast<double>(ns * nt);
}

}  // namespace

TEST(Gumbel, HandExamples) {
    PrecisionGuard g(Precision::Float64);
    auto w = gumbel_softmax(Tensor::from({2}, {0, 0}), 1.0, {0, 0});
    EXPECT_DOUBLE_EQ(w.at(0), 0.5);
    w = gumbel_softmax(Tensor::from({3}, {1, 2, 3}), 1.0, {0, 0, 0});
    EXPECT_NEAR(w.at(0), 0.0900, 1e-4);
    EXPECT_NEAR(w.at(1), 0.2447, 1e-4);
    EXPECT_NEAR(w.at(2), 0.6652, 1e-4);
    w = gumbel_softmax(Tensor::from({2}, {1, 0}), 0.01, {0, 0});
    EXPECT_GT(w.at(0), 0.999);
}

TEST(Gumbel, RejectsNonPositiveTemperatureAndBadNoise) {
    EXPECT_THROW(gumbel_softmax(Tensor::from({2}, {0, 0}), 0.0, {0, 0}), DomainError);
    EXPECT_THROW(gumbel_softmax(Tensor::from({2}, {0, 0}), -1.0, {0, 0}), DomainError);
    EXPECT_THROW(gumbel_softmax(Tensor::from({2}, {0, 0}), 1.0, {0}), ShapeError);
}

TEST(Gumbel, SimplexAndArgmaxLimit) {
    GumbelSampler sampler(9);
    Rng rng(10);
    for (int t = 0; t < 200; ++t) {
        const auto v = random_tensor({6}, rng, -3, 3, false);
        const auto noise = sampler.noise(6);
        for (double tau : {0.01, 0.1, 1.0, 5.0, 50.0}) {
            const auto w = gumbel_softmax(v, tau, noise);
            double s = 0.0;
            for (double x : w.data()) s += x;
            EXPECT_NEAR(s, 1.0, 1e-5);
        }
        const auto w = gumbel_softmax(v, 0.01, noise);
        std::vector<double> perturbed(6);
        for (std::size_t k = 0; k < 6; ++k) perturbed[k] = v.at(k) + noise[k];
        const auto best = argmax(perturbed);
        std::vector<double> sorted = perturbed;
        std::sort(sorted.rbegin(), sorted.rend());
        if (sorted[0] - sorted[1] > 0.1) EXPECT_GT(w.at(best), 0.999);
        EXPECT_EQ(argmax(w.data()), best);
    }
}

TEST(Gumbel, AnnealingTrace) {
    GumbelSampler s(1);
    for (std::size_t e = 0; e < 100; ++e) {
        EXPECT_NEAR(s.temperature(), 5.0 * std::exp(-0.045 * static_cast<double>(e)), 1e-9);
        const double before = s.temperature();
        s.anneal();
        EXPECT_LT(s.temperature(), before);
        EXPECT_GT(s.temperature(), 0.0);
    }
    EXPECT_NEAR(s.temperature_at(1), 4.780, 5e-4);
}

TEST(Gumbel, NoiseIsStandardGumbel) {
    GumbelSampler s(3);
    const auto x = s.noise(200000);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    EXPECT_NEAR(mean, 0.5772156649, 0.01);  // Euler–Mascheroni constant
}

TEST(Attention, MapIsChannelSumOfSquares) {
    PrecisionGuard g(Precision::Float64);
    const auto a = Tensor::from({2, 1, 2}, {1, -2, 3, 0.5});
    const auto m = attention_map(a);
    ASSERT_EQ(m.shape(), (Shape{1, 2}));
    EXPECT_DOUBLE_EQ(m.at(0), 1 + 9);
    EXPECT_DOUBLE_EQ(m.at(1), 4 + 0.25);
}

TEST(Attention, ResizeAlignedCorners) {
    PrecisionGuard g(Precision::Float64);
    const auto m = Tensor::from({2, 2}, {0, 1, 2, 3});
    const auto r = resize_map(m, 3, 3);
    // Aligned corners: the centre is the mean of the four corners, edges are midpoints.
    const std::vector<double> expect = {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3};
    for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(r.at(i), expect[i]);
    const auto same = resize_map(m, 2, 2);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(same.at(i), m.at(i));
}

TEST(Attention, ZeroMapsNormalizeToZero) {
    PrecisionGuard g(Precision::Float64);
    const auto z = normalize_rows(Tensor::zeros({2, 4}));
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, CommonExtentFloorsAtFour) {
    const std::vector<Tensor> s = {Tensor::zeros({1, 1, 8, 8}), Tensor::zeros({1, 1, 2, 2})};
    const std::vector<Tensor> t = {Tensor::zeros({1, 1, 16, 16})};
    EXPECT_EQ(common_extent(s, t), (std::pair<std::size_t, std::size_t>{4, 4}));
}

TEST(Attention, LossMatchesScalarOracle) {
    PrecisionGuard g(Precision::Float64);
    Rng rng(12);
    for (int t = 0; t < 20; ++t) {
        const std::vector<Tensor> s = {random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 2, 4, 4}, rng)};
        const std::vector<Tensor> te = {random_tensor({2, 4, 4, 4}, rng), random_tensor({2, 1, 4, 4}, rng),
                                        random_tensor({2, 3, 4, 4}, rng)};
        const auto w = rnascl::testing::probabilities(2, 3, rng, false);
        std::vector<std::vector<double>> gw = {{w.at(0), w.at(1), w.at(2)}, {w.at(3), w.at(4), w.at(5)}};
        EXPECT_NEAR(attention_loss(s, te, w).item(), oracle_attention(s, te, gw), 1e-12);
        const std::vector<std::size_t> tutors = {2, 0};
        EXPECT_NEAR(attention_loss_tutors(s, te, tutors).item(),
                    oracle_attention(s, te, {{0, 0, 1}, {1, 0, 0}}), 1e-12);
    }
}

TEST(Attention, TeacherGetsNoGradient) {
    Rng rng(13);
    const std::vector<Tensor> s = {random_tensor({2, 3, 4, 4}, rng)};
    const std::vector<Tensor> t = {random_tensor({2, 3, 4, 4}, rng)};
    const auto loss = attention_loss_tutors(s, t, {0});
    const std::vector<Tensor> wrt = {t[0]};
    const auto g = gradients(loss, wrt);
    for (double v : g[0]) EXPECT_EQ(v, 0.0);
}

TEST(Attention, IdenticalMapsGiveZeroLoss) {
    Rng rng(14);
    const std::vector<Tensor> s = {random_tensor({2, 3, 4, 4}, rng)};
    EXPECT_EQ(attention_loss_tutors(s, s, {0}).item(), 0.0);
}

TEST(Attention, GradientChecks) {
    Rng rng(15);
    for (int t = 0; t < 20; ++t) {
        const auto a = random_tensor({2, 3, 5, 5}, rng);
        EXPECT_LT(gradient_error([](auto& in) { return attention_maps(in[0]); }, {a}, rng), 1e-6);
        const auto m = random_tensor({2, 5, 5}, rng, 0.1, 2.0);
        EXPECT_LT(gradient_error([](auto& in) { return resize_map(in[0], 4, 4); }, {m}, rng), 1e-6);
        EXPECT_LT(gradient_error([](auto& in) { return resize_map(in[0], 7, 3); }, {m}, rng), 1e-6);
        const auto s1 = random_tensor({2, 2, 5, 5}, rng);
        const auto t1 = random_tensor({2, 3, 8, 8}, rng, -1, 1, false);
        const auto t2 = random_tensor({2, 1, 4, 4}, rng, -1, 1, false);
        const auto w = rnascl::testing::probabilities(1, 2, rng);
        EXPECT_LT(gradient_error([&](auto& in) { return attention_loss({in[0]}, {t1, t2}, in[1]); }, {s1, w}, rng),
                  1e-6);
        const auto p = rnascl::testing::probabilities(3, 4, rng);
        const auto q = rnascl::testing::probabilities(3, 4, rng, false);
        EXPECT_LT(gradient_error([&](auto& in) { return kl_term(in[0], q); }, {p}, rng), 1e-6);
    }
}

TEST(Kl, MatchesFormulaAndVanishesOnEqualInputs) {
    PrecisionGuard g(Precision::Float64);
    const auto p = Tensor::from({2, 2}, {0.3, 0.7, 0.9, 0.1});
    const auto q = Tensor::from({2, 2}, {0.5, 0.5, 0.2, 0.8});
    const double expect = 0.5 * (0.3 * std::log(0.3 / 0.5) + 0.7 * std::log(0.7 / 0.5) + 0.9 * std::log(0.9 / 0.2) +
                                 0.1 * std::log(0.1 / 0.8));
    EXPECT_NEAR(kl_term(p, q).item(), expect, 1e-12);
    EXPECT_NEAR(kl_term(p, p).item(), 0.0, 1e-15);
}

TEST(Tutors, ArgmaxTiesGoToLowestIndex) {
    EXPECT_EQ(argmax(std::vector<double>{1, 3, 3, 2}), 1u);
    ConnectionMatrix g = ConnectionMatrix::zeros(2, 3);
    EXPECT_EQ(derive_tutors(g), (std::vector<std::size_t>{0, 0}));
    g.logits.mutable_data()[5] = 1.0;
    EXPECT_EQ(derive_tutors(g), (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(connection_histogram({0, 2, 2}, 4), (std::vector<std::size_t>{1, 0, 2, 0}));
}

TEST(Tutors, PgmAndHistogramFiles) {
    const auto dir = std::filesystem::temp_directory_path();
    const auto pgm = dir / "rnascl_map.pgm";
    write_pgm(pgm, Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5}));
    std::ifstream in(pgm, std::ios::binary);
    std::string magic;
    std::size_t w, h, maxv;
    in >> magic >> w >> h >> maxv;
    in.get();
    EXPECT_EQ(magic, "P5");
    EXPECT_EQ(w, 3u);
    EXPECT_EQ(h, 2u);
    std::vector<unsigned char> px(6);
    in.read(reinterpret_cast<char*>(px.data()), 6);
    EXPECT_EQ(px.front(), 0);
    EXPECT_EQ(px.back(), 255);
    const auto csv = dir / "rnascl_hist.csv";
    write_histogram_csv(csv, {2, 0, 1});
    std::ifstream hc(csv);
    std::string all((std::istreambuf_iterator<char>(hc)), {});
    EXPECT_EQ(all, "teacher_layer,count\n0,2\n1,0\n2,1\n");
}

TEST(Attention, WorkedExamples) {
    PrecisionGuard g(Precision::Float64);
    const auto ones = attention_map(Tensor::full({3, 2, 2}, 1.0));
    for (double v : ones.data()) EXPECT_DOUBLE_EQ(v, 3.0);
    const auto sq = attention_map(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
    EXPECT_EQ(std::vector<double>(sq.data().begin(), sq.data().end()), (std::vector<double>{1, 4, 9, 16}));
    EXPECT_THROW(attention_map(Tensor::zeros({2, 2})), ShapeError);

    const auto c = resize_map(Tensor::from({1, 1}, {2.5}), 3, 4);
    for (double v : c.data()) EXPECT_DOUBLE_EQ(v, 2.5);
    EXPECT_THROW(resize_map(Tensor::from({1, 1}, {2.5}), 0, 4), ShapeError);

    // 2×2 → 4×4, aligned corners: sample positions 0, 1/3, 2/3, 1 along each axis.
    const auto r = resize_map(Tensor::from({2, 2}, {1, 2, 3, 4}), 4, 4);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
            const double fy = static_cast<double>(y) / 3.0, fx = static_cast<double>(x) / 3.0;
            const double expect = (1 - fy) * ((1 - fx) * 1 + fx * 2) + fy * ((1 - fx) * 3 + fx * 4);
            EXPECT_NEAR(r.at(y * 4 + x), expect, 1e-12);
        }
}

TEST(Attention, InvariantToPositiveRescaling) {
    PrecisionGuard g(Precision::Float64);
    Rng rng(16);
    const std::vector<Tensor> s = {random_tensor({2, 3, 4, 4}, rng, -1, 1, false)};
    const std::vector<Tensor> t = {random_tensor({2, 2, 4, 4}, rng, -1, 1, false),
                                   random_tensor({2, 2, 4, 4}, rng, -1, 1, false)};
    const auto w = rnascl::testing::probabilities(1, 2, rng, false);
    const double base = attention_loss(s, t, w).item();
    EXPECT_NEAR(attention_loss({scale(s[0], 7.5)}, t, w).item(), base, 1e-12);
    EXPECT_NEAR(attention_loss(s, {t[0], scale(t[1], 0.2)}, w).item(), base, 1e-9);
}

TEST(Kl, HandValueAndNonNegativity) {
    PrecisionGuard g(Precision::Float64);
    EXPECT_NEAR(kl_term(Tensor::from({1, 2}, {1, 0}), Tensor::from({1, 2}, {0.5, 0.5})).item(), std::log(2.0), 1e-12);
    Rng rng(17);
    for (int t = 0; t < 50; ++t) {
        const auto p = rnascl::testing::probabilities(2, 5, rng, false);
        const auto q = rnascl::testing::probabilities(2, 5, rng, false);
        EXPECT_GE(kl_term(p, q).item(), 0.0);
    }
}

TEST(Tutors, ShiftInvarianceAndEmptyHistogram) {
    auto g = ConnectionMatrix::zeros(1, 3);
    auto d = g.logits.mutable_data();
    d[0] = 0.1;
    d[1] = 2.0;
    d[2] = -1.0;
    EXPECT_EQ(derive_tutors(g), (std::vector<std::size_t>{1}));
    for (auto& v : d) v += 40.0;
    EXPECT_EQ(derive_tutors(g), (std::vector<std::size_t>{1}));
    EXPECT_EQ(connection_histogram({}, 3), (std::vector<std::size_t>{0, 0, 0}));
    EXPECT_EQ(connection_histogram({0, 0, 1}, 3), (std::vector<std::size_t>{2, 1, 0}));
}
