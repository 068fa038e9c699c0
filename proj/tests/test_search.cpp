#include <gtest/gtest.h>

#include <cmath>

#include "rnascl/error.hpp"
#include "rnascl/ops.hpp"
#include "rnascl/search.hpp"
#include "support.hpp"

using namespace rnascl;
using namespace rnascl::search;
using rnascl::testing::random_tensor;

namespace {

data::Dataset tiny_data(std::uint64_t seed = 0, std::size_t per_class = 6) {
    data::SynthConfig s;
    s.classes = 3;
    s.n_per_class = per_class;
    s.size = 8;
    s.seed = seed;
    return data::synth_dataset(s);
}

nn::SuperNetConfig tiny_space() {
    nn::SuperNetConfig cfg;
    cfg.input_size = 8;
    cfg.num_classes = 3;
    cfg.stages = {{1, {2, 4}, 1}, {1, {3, 6}, 2}};
    return cfg;
}

nn::Network tiny_teacher() {
    Rng rng(99);
    return nn::Network({3, 8, 3, {{4, 3, 1}, {6, 3, 2}, {6, 3, 1}}}, rng);
}

SearchConfig tiny_search() {
    SearchConfig cfg;
    cfg.weights.batch_size = 10;
    cfg.weights.epochs = 4;
    cfg.weights.lr = 0.05;
    cfg.arch_lr = 0.05;
    return cfg;
}

std::uint64_t checksum_of(const std::vector<Tensor>& ts) {
    std::uint64_t h = 0;
    for (const auto& t : ts) h = mix_seed(h, checksum(t));
    return h;
}

}  // namespace

TEST(Sgd, MomentumHandExample) {
    PrecisionGuard g(Precision::Float64);
    auto p = Tensor::from({2}, {1.0, -2.0}, true);
    Sgd opt({p}, 0.9, 0.0);
    const std::vector<std::vector<double>> grads = {{0.5, -1.0}};
    opt.step(grads, 0.1);
    EXPECT_DOUBLE_EQ(p.at(0), 1.0 - 0.1 * 0.5);
    opt.step(grads, 0.1);
    // second velocity is 0.9·g + g, so the total move is lr·g·(1 + 1.9)
    EXPECT_NEAR(p.at(0), 1.0 - 0.1 * 0.5 * 2.9, 1e-15);
    EXPECT_NEAR(p.at(1), -2.0 + 0.1 * 1.0 * 2.9, 1e-15);
}

TEST(Sgd, WeightDecayEntersVelocity) {
    PrecisionGuard g(Precision::Float64);
    auto p = Tensor::from({1}, {2.0}, true);
    Sgd opt({p}, 0.0, 0.1);
    const std::vector<std::vector<double>> grads = {{0.0}};
    opt.step(grads, 0.5);
    EXPECT_DOUBLE_EQ(p.at(0), 2.0 - 0.5 * 0.1 * 2.0);
}

TEST(Sgd, RejectsMismatchedGradients) {
    auto p = Tensor::from({2}, {1.0, 2.0}, true);
    Sgd opt({p}, 0.9, 0.0);
    const std::vector<std::vector<double>> bad = {{1.0}};
    EXPECT_THROW(opt.step(bad, 0.1), ShapeError);
}

TEST(Schedule, StepDecay) {
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Step, 0.1, 0, 100), 0.1);
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Step, 0.1, 74, 100), 0.1);
    EXPECT_NEAR(learning_rate(Schedule::Step, 0.1, 75, 100), 0.01, 1e-15);
    EXPECT_NEAR(learning_rate(Schedule::Step, 0.1, 89, 100), 0.01, 1e-15);
    EXPECT_NEAR(learning_rate(Schedule::Step, 0.1, 90, 100), 0.001, 1e-15);
}

TEST(Sgd, GlobalNormClip) {
    std::vector<std::vector<double>> g = {{3.0, 0.0}, {4.0}};
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 0.0), 5.0);
    EXPECT_EQ(g[1][0], 4.0);
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 5.0);
    EXPECT_EQ(g[0][0], 3.0);
    EXPECT_DOUBLE_EQ(clip_global_norm(g, 2.5), 5.0);
    EXPECT_DOUBLE_EQ(g[0][0], 1.5);
    EXPECT_DOUBLE_EQ(g[1][0], 2.0);
    TrainConfig cfg;
    cfg.clip_norm = -1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Schedule, LinearWarmup) {
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Step, 0.05, 0, 80, 5), 0.01);
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Step, 0.05, 3, 80, 5), 0.04);
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Step, 0.05, 5, 80, 5), 0.05);
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Step, 0.05, 4, 80, 0), 0.05);
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Cosine, 0.1, 0, 200, 2), 0.05);
}

TEST(Schedule, Cosine) {
    EXPECT_DOUBLE_EQ(learning_rate(Schedule::Cosine, 0.05, 0, 200), 0.05);
    EXPECT_NEAR(learning_rate(Schedule::Cosine, 0.05, 100, 200), 0.025, 1e-15);
    for (std::size_t e = 1; e < 200; ++e)
        EXPECT_LT(learning_rate(Schedule::Cosine, 0.05, e, 200), learning_rate(Schedule::Cosine, 0.05, e - 1, 200));
}

TEST(Profiles, Values) {
    const auto c = cifar_profile();
    EXPECT_EQ(c.schedule, Schedule::Step);
    EXPECT_DOUBLE_EQ(c.lr, 0.1);
    EXPECT_DOUBLE_EQ(c.weight_decay, 2e-4);
    const auto i = imagenet_profile();
    EXPECT_EQ(i.schedule, Schedule::Cosine);
    EXPECT_DOUBLE_EQ(i.lr, 0.05);
    EXPECT_DOUBLE_EQ(i.weight_decay, 4e-5);
}

TEST(Split, EightyTwenty) {
    EXPECT_EQ(split_batch(10, 0.8), (std::pair<std::size_t, std::size_t>{8, 2}));
    EXPECT_EQ(split_batch(64, 0.8), (std::pair<std::size_t, std::size_t>{51, 13}));
    auto cfg = tiny_search();
    cfg.weights.batch_size = 1;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg.weights.batch_size = 10;
    cfg.weight_fraction = 1.0;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Losses, NllGradient) {
    Rng rng(1);
    for (int t = 0; t < 10; ++t) {
        const auto p = rnascl::testing::probabilities(4, 3, rng);
        EXPECT_LT(rnascl::testing::gradient_error([](auto& in) { return nll_from_probs(in[0], {0, 2, 1, 1}); }, {p},
                                                  rng),
                  1e-6);
    }
}

TEST(Losses, SearchLossMatchesHandComposition) {
    PrecisionGuard g(Precision::Float64);
    Rng rng(2);
    const auto p = rnascl::testing::probabilities(2, 3, rng, false);
    const auto q = rnascl::testing::probabilities(2, 3, rng, false);
    const std::vector<int> y = {1, 2};
    const std::vector<Tensor> sa = {random_tensor({2, 2, 4, 4}, rng, -1, 1, false)};
    const std::vector<Tensor> ta = {random_tensor({2, 3, 4, 4}, rng, -1, 1, false),
                                    random_tensor({2, 2, 4, 4}, rng, -1, 1, false)};
    const auto w = rnascl::testing::probabilities(1, 2, rng, false);
    const auto cost = Tensor::from({}, {0.37});

    double ce = 0.0, kl = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        ce -= std::log(p.at(i * 3 + static_cast<std::size_t>(y[i]))) / 2.0;
        for (std::size_t k = 0; k < 3; ++k) kl += p.at(i * 3 + k) * std::log(p.at(i * 3 + k) / q.at(i * 3 + k)) / 2.0;
    }
    const double attn = distill::attention_loss(sa, ta, w).item();

    for (double gamma : {0.0, 0.5, 2.0}) {
        const LossTerms terms{true, true, gamma};
        const auto l = search_loss({p, y, &q, &sa, &ta, &w, cost}, terms);
        EXPECT_NEAR(l.total.item(), (ce + kl + gamma * attn) * 0.37, 1e-12);
        EXPECT_NEAR(l.cross_entropy, ce, 1e-12);
        EXPECT_NEAR(l.kl, kl, 1e-12);
        EXPECT_NEAR(l.attention, attn, 1e-12);
    }
    const auto ce_only = search_loss({p, y, nullptr, nullptr, nullptr, nullptr, cost}, LossTerms{false, false, 1.0});
    EXPECT_NEAR(ce_only.total.item(), ce * 0.37, 1e-12);

    const std::vector<std::size_t> tutors = {1};
    const auto tl = train_loss({p, y, &q, &sa, &ta, &tutors}, LossTerms{true, true, 1.5});
    EXPECT_NEAR(tl.total.item(), ce + kl + 1.5 * distill::attention_loss_tutors(sa, ta, tutors).item(), 1e-12);
    EXPECT_THROW(train_loss({p, y, nullptr, nullptr, nullptr, nullptr}, LossTerms{true, false, 1.0}), Error);
}

TEST(Losses, SearchLossScalesLinearlyInCost) {
    PrecisionGuard g(Precision::Float64);
    Rng rng(3);
    const auto p = rnascl::testing::probabilities(3, 4, rng, false);
    const std::vector<int> y = {0, 1, 3};
    const LossTerms terms{false, false, 1.0};
    const double base = search_loss({p, y, nullptr, nullptr, nullptr, nullptr, Tensor::from({}, {1.0})}, terms)
                            .total.item();
    for (double c : {0.1, 0.5, 0.9})
        EXPECT_NEAR(search_loss({p, y, nullptr, nullptr, nullptr, nullptr, Tensor::from({}, {c})}, terms).total.item(),
                    base * c, 1e-12);
}

TEST(Losses, CostFactorIsOneAtWidestChoice) {
    Rng rng(4);
    nn::SuperNet net(tiny_space(), rng);
    std::vector<Tensor> w = {nn::one_hot(2, 1), nn::one_hot(2, 1)};
    EXPECT_DOUBLE_EQ(cost_factor(net, w).item(), 1.0);
    w = {nn::one_hot(2, 0), nn::one_hot(2, 0)};
    EXPECT_LT(cost_factor(net, w).item(), 1.0);
}

TEST(Search, ZeroArchRateLeavesArchitectureUntouched) {
    const auto train = tiny_data();
    Rng rng(5);
    auto cfg = tiny_search();
    cfg.arch_lr = 0.0;
    SearchState state(nn::SuperNet(tiny_space(), rng), tiny_teacher(), cfg, 11);
    ASSERT_TRUE(state.uses_connections());
    const auto arch_before = checksum_of(state.arch_parameters());
    const auto weights_before = checksum_of(state.weight_parameters());
    const auto teacher_before = state.teacher.checksum();
    search_epoch(state, train);
    EXPECT_EQ(checksum_of(state.arch_parameters()), arch_before);
    EXPECT_NE(checksum_of(state.weight_parameters()), weights_before);
    EXPECT_EQ(state.teacher.checksum(), teacher_before);
}

TEST(Search, ZeroWeightRateLeavesWeightsUntouched) {
    const auto train = tiny_data();
    Rng rng(6);
    auto cfg = tiny_search();
    cfg.weights.lr = 0.0;
    SearchState state(nn::SuperNet(tiny_space(), rng), tiny_teacher(), cfg, 12);
    const auto arch_before = checksum_of(state.arch_parameters());
    const auto weights_before = checksum_of(state.weight_parameters());
    const auto conn_before = checksum(state.connections.logits);
    search_epoch(state, train);
    EXPECT_NE(checksum_of(state.arch_parameters()), arch_before);
    EXPECT_NE(checksum(state.connections.logits), conn_before);
    EXPECT_EQ(checksum_of(state.weight_parameters()), weights_before);
}

TEST(Search, EpochAnnealsAndReportsMetrics) {
    const auto train = tiny_data();
    Rng rng(7);
    SearchState state(nn::SuperNet(tiny_space(), rng), tiny_teacher(), tiny_search(), 13);
    const auto m0 = search_epoch(state, train);
    const auto m1 = search_epoch(state, train);
    EXPECT_DOUBLE_EQ(m0.tau, 5.0);
    EXPECT_NEAR(m1.tau, 5.0 * std::exp(-0.045), 1e-12);
    EXPECT_EQ(state.epoch, 2u);
    EXPECT_GT(m0.cost, 0.0);
    EXPECT_LE(m0.cost, 1.0);
    EXPECT_GT(m0.kl, 0.0);
    EXPECT_GT(m0.attention, 0.0);
    EXPECT_NE(metrics_csv_row(m0).find("0,5,"), std::string::npos);
}

TEST(Search, DeterministicForFixedSeed) {
    const auto train = tiny_data();
    std::uint64_t sums[2];
    for (int r = 0; r < 2; ++r) {
        Rng rng(8);
        SearchState state(nn::SuperNet(tiny_space(), rng), tiny_teacher(), tiny_search(), 14);
        search_epoch(state, train);
        sums[r] = mix_seed(checksum_of(state.arch_parameters()), checksum_of(state.weight_parameters()));
    }
    EXPECT_EQ(sums[0], sums[1]);
}

TEST(Search, AttentionNeedsTeacher) {
    Rng rng(9);
    EXPECT_THROW(SearchState(nn::SuperNet(tiny_space(), rng), nn::Network{}, tiny_search(), 1), ConfigError);
    auto cfg = tiny_search();
    cfg.terms = {false, false, 1.0};
    SearchState state(nn::SuperNet(tiny_space(), rng), nn::Network{}, cfg, 1);
    EXPECT_FALSE(state.uses_connections());
}

TEST(Derive, ArgmaxChannelAndTutor) {
    nn::SuperNetConfig space;
    space.input_size = 8;
    space.num_classes = 3;
    space.stages = {{1, {32, 24, 16}, 1}, {1, {2, 4}, 2}};
    Rng rng(10);
    SearchState state(nn::SuperNet(space, rng), tiny_teacher(), tiny_search(), 2);
    auto m0 = state.supernet.blocks()[0].mask_logits().mutable_data();
    m0[0] = 0.2;
    m0[1] = 3.0;
    m0[2] = 0.1;
    auto c = state.connections.logits.mutable_data();
    c[2] = 1.0;  // row 0 → teacher layer 2
    c[3] = c[4] = 0.5;  // row 1 tie → teacher layer 0
    const auto arch = derive(state);
    EXPECT_EQ(arch.channels, (std::vector<std::size_t>{24, 2}));
    EXPECT_EQ(arch.choice_index, (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(arch.tutors, (std::vector<std::size_t>{2, 0}));
    EXPECT_EQ(arch.macs, nn::count_macs(arch.spec));
    EXPECT_EQ(arch.params, nn::parameter_count(arch.spec));
    EXPECT_NO_THROW(validate(arch, space));

    const auto back = ArchDescription::from_json(arch.to_json());
    EXPECT_EQ(back.spec, arch.spec);
    EXPECT_EQ(back.tutors, arch.tutors);

    auto bad = arch;
    bad.channels[0] = 20;
    EXPECT_THROW(validate(bad, space), ConfigError);
    bad = arch;
    bad.tutors[1] = 3;
    EXPECT_THROW(validate(bad, space), ConfigError);
}

TEST(Derive, InstantiateIsFreshAndSeeded) {
    nn::SuperNetConfig space = tiny_space();
    Rng rng(11);
    SearchState state(nn::SuperNet(space, rng), tiny_teacher(), tiny_search(), 3);
    const auto arch = derive(state);
    const auto a = instantiate(arch, 5), b = instantiate(arch, 5), c = instantiate(arch, 6);
    EXPECT_EQ(a.checksum(), b.checksum());
    EXPECT_NE(a.checksum(), c.checksum());
    EXPECT_NE(a.checksum(), state.supernet.extract(arch.choice_index).checksum());
}

TEST(Train, ZeroEpsilonAdversarialTrainingEqualsClean) {
    const auto train = tiny_data(1, 8);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.lr = 0.05;
    Rng r1(20), r2(20);
    nn::Network a({3, 8, 3, {{4, 3, 1}, {4, 3, 2}}}, r1);
    nn::Network b({3, 8, 3, {{4, 3, 1}, {4, 3, 2}}}, r2);
    const auto clean = train_classifier(a, train, cfg, std::nullopt, 7);
    const auto adv = train_classifier(b, train, cfg, attack::pgd_config(0.0, 5), 7);
    ASSERT_EQ(clean.size(), 2u);
    EXPECT_EQ(clean, adv);
    EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(Train, TrainerDistillsWithTutors) {
    const auto train = tiny_data(2, 8);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const auto teacher = [] {
        auto t = tiny_teacher();
        t.freeze();
        return t;
    }();
    const auto before = teacher.checksum();
    Rng rng(21);
    Trainer tr(nn::Network({3, 8, 3, {{4, 3, 1}, {4, 3, 2}}}, rng), &teacher, {0, 2}, cfg, LossTerms{}, 4);
    const auto m = tr.run_epoch(train);
    EXPECT_GT(m.kl, 0.0);
    EXPECT_GT(m.attention, 0.0);
    EXPECT_EQ(tr.epoch(), 1u);
    EXPECT_EQ(teacher.checksum(), before);
}
