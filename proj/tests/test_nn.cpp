#include <gtest/gtest.h>

#include <filesystem>

#include "rnascl/error.hpp"
#include "rnascl/nn.hpp"
#include "rnascl/ops.hpp"
#include "support.hpp"

using namespace rnascl;
using namespace rnascl::nn;

namespace {

nn::SuperNetConfig small_space() {
    nn::SuperNetConfig cfg;
    cfg.in_channels = 3;
    cfg.input_size = 8;
    cfg.num_classes = 3;
    cfg.stages = {{1, {2, 4}, 1}, {2, {3, 5, 6}, 2}};
    return cfg;
}

// Parameter count by hand: weights O·I·K² per block, head O·classes + classes.
std::size_t params_by_hand(const ArchSpec& s) {
    std::size_t total = 0, in = s.in_channels;
    for (const auto& b : s.blocks) {
        total += b.out_channels * in * b.kernel * b.kernel;
        in = b.out_channels;
    }
    return total + in * s.num_classes + s.num_classes;
}

}  // namespace

TEST(Macs, SingleConvThreeToSixteen) {
    const ArchSpec spec{3, 8, 10, {{16, 3, 1}}};
    const auto layers = layer_macs(spec);
    ASSERT_EQ(layers.size(), 2u);
    EXPECT_EQ(layers[0], 27648u);  // 3·16·9·8·8
    EXPECT_EQ(layers[1], 160u);    // 16·10
    EXPECT_EQ(count_macs(spec), 27808u);
}

TEST(Macs, StridedStack) {
    // 16×16 → 16×16 (3→8), → 8×8 (8→16, s2), → 4×4 (16→32, s2), head 32→4
    const ArchSpec spec{3, 16, 4, {{8, 3, 1}, {16, 3, 2}, {32, 3, 2}}};
    const std::uint64_t expect = 3 * 8 * 9 * 256 + 8 * 16 * 9 * 64 + 16 * 32 * 9 * 16 + 32 * 4;
    EXPECT_EQ(expect, 55296u + 73728u + 73728u + 128u);
    EXPECT_EQ(count_macs(spec), expect);
}

TEST(Macs, OddSizeAndOneByOne) {
    // 7×7 input, 1×1 conv 3→5 keeps 7×7, then 3×3 s2 5→2 gives 4×4.
    const ArchSpec spec{3, 7, 2, {{5, 1, 1}, {2, 3, 2}}};
    EXPECT_EQ(count_macs(spec), 3u * 5 * 49 + 5u * 2 * 9 * 16 + 2u * 2);
    EXPECT_EQ(output_sizes(spec), (std::vector<std::size_t>{7, 4}));
}

TEST(Macs, SupernetHasNoCountUntilDerived) {
    Rng rng(0);
    SuperNet net(small_space(), rng);
    EXPECT_THROW(count_macs(net), PhaseOrderError);
}

TEST(Macs, ExpectedMacsWithOneHotWeightsEqualsCount) {
    Rng rng(1);
    SuperNet net(small_space(), rng);
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 3; ++c) {
                const std::vector<std::size_t> idx = {a, b, c};
                std::vector<Tensor> w;
                for (std::size_t k = 0; k < idx.size(); ++k) w.push_back(one_hot(net.blocks()[k].choices().size(), idx[k]));
                EXPECT_DOUBLE_EQ(expected_macs(net, w).item(), static_cast<double>(count_macs(net.spec_for(idx))));
            }
    EXPECT_EQ(max_macs(net), count_macs(net.max_width_spec()));
}

TEST(Macs, ExpectedMacsUsesExpectedWidthAsNextInput) {
    PrecisionGuard g(Precision::Float64);
    nn::SuperNetConfig cfg{1, 4, 2, 1, {{2, {1, 3}, 1}}};
    Rng rng(2);
    SuperNet net(cfg, rng);
    const auto w = Tensor::from({2}, {0.25, 0.75});
    // widths 1·0.25 + 3·0.75 = 2.5; block0: 1·2.5·16, block1: 2.5·2.5·16, head 2.5·2
    EXPECT_DOUBLE_EQ(expected_macs(net, {w, w}).item(), 2.5 * 16 + 2.5 * 2.5 * 16 + 2.5 * 2);
}

TEST(Params, MatchHandCount) {
    const ArchSpec spec{3, 16, 4, {{8, 3, 1}, {16, 3, 2}, {32, 3, 2}}};
    Rng rng(3);
    Network net(spec, rng);
    EXPECT_EQ(net.parameter_count(), params_by_hand(spec));
    EXPECT_EQ(parameter_count(spec), params_by_hand(spec));
}

TEST(SuperNet, OneHotForwardMatchesExtractedNetwork) {
    PrecisionGuard g(Precision::Float64);
    Rng rng(4);
    SuperNet net(small_space(), rng);
    const auto x = rnascl::testing::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0, false);
    const std::vector<std::size_t> idx = {0, 1, 2};
    std::vector<Tensor> w;
    for (std::size_t k = 0; k < idx.size(); ++k) w.push_back(one_hot(net.blocks()[k].choices().size(), idx[k]));
    const auto a = net.forward(x, w).logits;
    const auto b = net.extract(idx).logits(x);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
}

TEST(SuperNet, ParameterSetsAreDisjoint) {
    Rng rng(5);
    SuperNet net(small_space(), rng);
    for (const auto& m : net.mask_parameters())
        for (const auto& w : net.weight_parameters()) EXPECT_NE(m.impl().get(), w.impl().get());
    EXPECT_EQ(net.mask_parameters().size(), net.num_layers());
}

TEST(SuperNet, ChoiceValidation) {
    EXPECT_THROW(validate_choices({}), ConfigError);
    EXPECT_THROW(validate_choices({4, 0}), ConfigError);
    EXPECT_THROW(validate_choices({4, 8, 6}), ConfigError);
    EXPECT_NO_THROW(validate_choices({32, 24, 16}));
    EXPECT_THROW(validate_simplex(Tensor::from({2}, {0.5, 0.6}), 2), DomainError);
    EXPECT_THROW(validate_simplex(Tensor::from({3}, {0.5, 0.5, 0}), 2), ShapeError);
}

TEST(SuperNet, GradientsReachWeightsAndMasks) {
    Rng rng(6);
    auto cfg = small_space();
    const auto x = rnascl::testing::random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0, false);
    for (int t = 0; t < 5; ++t) {
        Rng init(100 + t);
        SuperNet net(cfg, init);
        const double err = rnascl::testing::gradient_error(
            [&](const std::vector<Tensor>& in) {
                std::vector<Tensor> w;
                for (const auto& m : in) w.push_back(softmax(m, 0));
                return net.forward(x, w).logits;
            },
            net.mask_parameters(), rng);
        EXPECT_LT(err, 1e-6);
    }
}

TEST(Checkpoint, NetworkRoundTrip) {
    Rng rng(7);
    Network net({3, 8, 3, {{4, 3, 1}, {6, 3, 2}}}, rng);
    const auto path = std::filesystem::temp_directory_path() / "rnascl_net_roundtrip.ckpt";
    save_network(path, net);
    const auto back = load_network(path);
    EXPECT_EQ(back.spec(), net.spec());
    EXPECT_EQ(back.checksum(), net.checksum());
    std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileReportsOffset) {
    Rng rng(8);
    Network net({3, 8, 3, {{4, 3, 1}}}, rng);
    const auto path = std::filesystem::temp_directory_path() / "rnascl_net_truncated.ckpt";
    save_network(path, net);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 7);
    try {
        (void)load_network(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
    }
    std::filesystem::remove(path);
}
