#include "doctest.h"

#include <cmath>

#include "zoa/model.hpp"
#include "zoa/numerics.hpp"

using namespace zoa;

namespace {

QuantizedModel identity_linear_2x2() {
    Rng rng(0);
    MlpDims dims;
    dims.input_dim = 2;
    dims.hidden = 2;
    dims.num_blocks = 0;
    dims.classes = 2;
    dims.head_norm = false;
    QuantizedModel m = make_mlp(dims, rng);
    m.dense[0].weight = Tensor({2, 2}, {1, 0, 0, 1});
    m.dense[0].bias = {0, 0};
    m.dense[1].weight = Tensor({2, 2}, {1, 0, 0, 1});
    m.dense[1].bias = {0, 0};
    return m;
}

QuantizedModel small_cnn(std::uint64_t seed = 3) {
    Rng rng(seed);
    CnnDims dims;
    dims.in_ch = 1;
    dims.image = 8;
    dims.c1 = 4;
    dims.c2 = 6;
    dims.c3 = 6;
    dims.classes = 3;
    return make_cnn(dims, rng);
}

} // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("hand-set linear model maps input to logits") {
    QuantizedModel m = identity_linear_2x2();
    const Tensor batch({1, 2}, {3, 4});
    const ForwardTrace t = m.forward(m.zero_delta(), batch);
    CHECK(t.logits.data[0] == 3.0);
    CHECK(t.logits.data[1] == 4.0);
    CHECK(t.stem_feature.data[0] == 3.0);
    CHECK(t.block_features.empty());
}

TEST_CASE("forward is deterministic and zero-extended deltas change nothing") {
    Rng rng(9);
    MlpDims dims;
    dims.input_dim = 6;
    dims.hidden = 10;
    dims.num_blocks = 2;
    dims.classes = 4;
    QuantizedModel m = make_mlp(dims, rng);
    const Tensor batch = sample_gaussian(rng, {8, 6}, 0.0, 1.0);

    LayeredVector d1(m.schema);
    Rng drng(4);
    for (double& v : d1.flat()) v = drng.gaussian(0.0, 0.1);
    const ForwardTrace a = m.forward(d1, batch);
    const ForwardTrace b = m.forward(d1, batch);
    CHECK(a.logits.data == b.logits.data);
    for (std::size_t i = 0; i < a.block_features.size(); ++i)
        CHECK(a.block_features[i].data == b.block_features[i].data);

    LayeredVector zero(m.schema);
    const ForwardTrace c = m.forward(d1 + zero, batch);
    CHECK(a.logits.data == c.logits.data);
}

TEST_CASE("forward rejects mismatched schema and bad batch shapes") {
    QuantizedModel m = small_cnn();
    auto other = std::make_shared<ParamSchema>();
    other->layers.push_back({"rogue", 3});
    CHECK_THROWS_AS(m.forward(LayeredVector(other), Tensor::zeros({2, 1, 8, 8})),
                    std::invalid_argument);
    CHECK_THROWS_AS(m.forward(m.zero_delta(), Tensor::zeros({2, 1, 4, 4})),
                    std::invalid_argument);
}

TEST_CASE("non-finite activations name the offending layer") {
    QuantizedModel m = identity_linear_2x2();
    Tensor batch({1, 2}, {std::nan(""), 1.0});
    try {
        m.forward(m.zero_delta(), batch);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("stem") != std::string::npos);
    }
}

TEST_CASE("forward counter increments per pass") {
    QuantizedModel m = small_cnn();
    const Tensor batch = Tensor::zeros({2, 1, 8, 8});
    const std::uint64_t before = m.forward_count();
    m.forward(m.zero_delta(), batch);
    m.forward(m.zero_delta(), batch);
    CHECK(m.forward_count() == before + 2);
}

TEST_CASE("cnn center-tap convolution is identity per channel") {
    QuantizedModel m = small_cnn();
    // out channel 0 copies the input, the rest are silent
    for (double& v : m.conv[0].weight.data) v = 0.0;
    m.conv[0].weight.data[0 * 9 + 4] = 1.0;
    Rng rng(5);
    const Tensor batch = sample_gaussian(rng, {3, 1, 8, 8}, 0.5, 0.1);
    const ForwardTrace t = m.forward(m.zero_delta(), batch);
    for (std::size_t b = 0; b < 3; ++b) {
        double gap = 0.0;
        for (std::size_t i = 0; i < 64; ++i) gap += batch.data[b * 64 + i];
        gap /= 64.0;
        CHECK(t.stem_feature.at(b, 0) == doctest::Approx(gap).epsilon(1e-12));
        CHECK(t.stem_feature.at(b, 1) == 0.0);
    }
}

TEST_CASE("cnn trace shapes") {
    QuantizedModel m = small_cnn();
    Rng rng(6);
    const Tensor batch = sample_gaussian(rng, {5, 1, 8, 8}, 0.5, 0.2);
    const ForwardTrace t = m.forward(m.zero_delta(), batch);
    CHECK(t.logits.shape == std::vector<std::size_t>{5, 3});
    REQUIRE(t.block_features.size() == 3);
    CHECK(t.block_features[0].shape == std::vector<std::size_t>{5, 4});
    CHECK(t.block_features[1].shape == std::vector<std::size_t>{5, 6});
    CHECK(t.block_features[2].shape == std::vector<std::size_t>{5, 6});
    CHECK(t.stem_feature.shape == std::vector<std::size_t>{5, 4});
    CHECK(t.logits.all_finite());
}

TEST_CASE("freeze puts every weight on its grid and forward never moves them") {
    QuantizedModel m = small_cnn();
    m.freeze(4);
    for (const auto& c : m.conv) {
        REQUIRE(c.weight_spec.has_value());
        for (double v : c.weight.data) CHECK(quantize_value(v, *c.weight_spec) == v);
    }
    for (const auto& d : m.dense) {
        REQUIRE(d.weight_spec.has_value());
        for (double v : d.weight.data) CHECK(quantize_value(v, *d.weight_spec) == v);
    }
    const std::vector<double> saved = m.conv[1].weight.data;
    Rng rng(8);
    const Tensor batch = sample_gaussian(rng, {4, 1, 8, 8}, 0.5, 0.2);
    LayeredVector delta(m.schema);
    for (double& v : delta.flat()) v = rng.gaussian(0.0, 0.2);
    m.forward(delta, batch);
    m.forward(delta, batch, NormStats::Running);
    CHECK(m.conv[1].weight.data == saved);
}

TEST_CASE("running statistics reproduce batch statistics after calibration") {
    QuantizedModel m = small_cnn(11);
    Rng rng(12);
    const Tensor data = sample_gaussian(rng, {32, 1, 8, 8}, 0.5, 0.2);
    m.calibrate_running_stats(data);
    const ForwardTrace a = m.forward(m.zero_delta(), data, NormStats::Batch);
    const ForwardTrace b = m.forward(m.zero_delta(), data, NormStats::Running);
    for (std::size_t i = 0; i < a.logits.numel(); ++i)
        CHECK(a.logits.data[i] == doctest::Approx(b.logits.data[i]).epsilon(1e-12));
}

TEST_CASE("batch_feature_stats hand values") {
    ForwardTrace t;
    t.block_features.push_back(Tensor({2, 1}, {1.0, 3.0}));
    const FeatureStats s = batch_feature_stats(t);
    CHECK(s.mean[0][0] == doctest::Approx(2.0));
    CHECK(s.stddev[0][0] == doctest::Approx(1.0)); // population divisor
}

TEST_CASE("batch_feature_stats: zero variance and permutation invariance") {
    ForwardTrace constant;
    constant.block_features.push_back(Tensor({3, 2}, {5, 7, 5, 7, 5, 7}));
    const FeatureStats s = batch_feature_stats(constant);
    CHECK(s.stddev[0][0] == 0.0);
    CHECK(s.stddev[0][1] == 0.0);

    ForwardTrace a, b;
    a.block_features.push_back(Tensor({3, 1}, {1, 2, 4}));
    b.block_features.push_back(Tensor({3, 1}, {4, 1, 2}));
    const FeatureStats sa = batch_feature_stats(a);
    const FeatureStats sb = batch_feature_stats(b);
    CHECK(sa.mean[0][0] == doctest::Approx(sb.mean[0][0]).epsilon(1e-15));
    CHECK(sa.stddev[0][0] == doctest::Approx(sb.stddev[0][0]).epsilon(1e-15));
}

TEST_CASE("batch_feature_stats rejects single-sample batches") {
    ForwardTrace t;
    t.block_features.push_back(Tensor({1, 2}, {1, 2}));
    CHECK_THROWS_AS(batch_feature_stats(t), std::invalid_argument);
}

TEST_CASE("feature stat shapes match block channel counts") {
    QuantizedModel m = small_cnn();
    Rng rng(13);
    const Tensor batch = sample_gaussian(rng, {6, 1, 8, 8}, 0.5, 0.2);
    const FeatureStats s = batch_feature_stats(m.forward(m.zero_delta(), batch));
    REQUIRE(s.blocks() == 3);
    CHECK(s.mean[0].size() == 4);
    CHECK(s.mean[1].size() == 6);
    CHECK(s.mean[2].size() == 6);
    for (std::size_t i = 0; i < 3; ++i) CHECK(s.mean[i].size() == s.stddev[i].size());
}

TEST_SUITE_END();
