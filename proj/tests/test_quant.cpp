#include "doctest.h"

#include <cmath>

#include "zoa/quant.hpp"

using namespace zoa;

TEST_SUITE_BEGIN("quant");

TEST_CASE("quantize snaps to nearest grid point") {
    // n=2, a=1: grid {-1, -1/3, 1/3, 1}
    const QuantSpec spec{2, 1.0};
    CHECK(quantize_value(0.4, spec) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(quantize_value(-0.4, spec) == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
    CHECK(quantize_value(0.7, spec) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("quantize clamps out-of-range input") {
    const QuantSpec spec{4, 1.0};
    CHECK(quantize_value(1.7, spec) == 1.0);
    CHECK(quantize_value(-2.3, spec) == -1.0);
}

TEST_CASE("quantize rejects bits < 2") {
    CHECK_THROWS_AS(quantize_value(0.3, QuantSpec{1, 1.0}), std::invalid_argument);
}

TEST_CASE("quantize is idempotent and error bounded by phi/2") {
    Rng rng(11);
    for (int bits : {2, 3, 5, 8}) {
        const QuantSpec spec{bits, 1.5};
        const double half = spec.step() / 2.0;
        for (int i = 0; i < 2000; ++i) {
            const double w = rng.uniform(-1.5, 1.5);
            const double q = quantize_value(w, spec);
            CHECK(quantize_value(q, spec) == q);
            CHECK(std::abs(q - w) <= half * (1.0 + 1e-12));
        }
    }
}

TEST_CASE("grid points are fixed points") {
    const QuantSpec spec{3, 2.0};
    for (int k = 0; k < spec.levels(); ++k) {
        const double g = -spec.range + static_cast<double>(k) * spec.step();
        CHECK(quantize_value(g, spec) == g);
    }
}

TEST_CASE("error statistics match the closed form") {
    Rng rng(2024);
    for (int bits : {2, 4, 8}) {
        const QuantSpec spec{bits, 1.0};
        const auto st = quantization_error_stats(spec, rng, 1000000);
        // predicted variance a^2 / (3 (2^n - 1)^2)
        const double denom = std::exp2(bits) - 1.0;
        CHECK(st.predicted_variance == doctest::Approx(1.0 / (3.0 * denom * denom)));
        CHECK(std::abs(st.variance / st.predicted_variance - 1.0) <= 0.05);
        // error mean shrinks like std/sqrt(n)
        const double bound = 6.0 * std::sqrt(st.predicted_variance) / std::sqrt(1e6);
        CHECK(std::abs(st.mean) < bound);
    }
}

TEST_CASE("error variance hand values") {
    Rng rng(3);
    const auto n8 = quantization_error_variance(QuantSpec{8, 1.0}, rng, 10000);
    CHECK(n8.predicted == doctest::Approx(1.0 / (3.0 * 255.0 * 255.0)).epsilon(1e-12));
    const auto n2 = quantization_error_variance(QuantSpec{2, 1.0}, rng, 10000);
    CHECK(n2.predicted == doctest::Approx(1.0 / 27.0).epsilon(1e-12));
}

TEST_CASE("zero range is degenerate but valid") {
    Rng rng(4);
    const auto ev = quantization_error_variance(QuantSpec{4, 0.0}, rng, 10000);
    CHECK(ev.predicted == 0.0);
    CHECK(ev.empirical == 0.0);
}

TEST_CASE("sensitivity: every loss gap is positive and decreasing in bits") {
    Rng rng(7);
    SensitivityConfig cfg;
    cfg.dim = 32;
    cfg.num_samples = 60000;
    const auto report = sensitivity_experiment(cfg, rng);
    REQUIRE(report.rows.size() == 7);
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        CHECK(report.rows[i].delta_loss_empirical > 0.0);
        if (i > 0)
            CHECK(report.rows[i].delta_loss_empirical <
                  report.rows[i - 1].delta_loss_empirical);
    }
}

TEST_CASE("sensitivity: gap ratio follows the closed form") {
    Rng rng(19);
    SensitivityConfig cfg;
    cfg.dim = 32;
    cfg.num_samples = 50000;
    cfg.bit_list = {4, 5};
    const auto report = sensitivity_experiment(cfg, rng);
    const double ratio =
        report.rows[0].delta_loss_empirical / report.rows[1].delta_loss_empirical;
    // ((2^5 - 1) / (2^4 - 1))^2 = (31/15)^2
    const double predicted = (31.0 / 15.0) * (31.0 / 15.0);
    CHECK(ratio == doctest::Approx(predicted).epsilon(0.10));
}

TEST_CASE("sensitivity with no shift or label noise reduces to the pure term") {
    // dL = E |dW x|^2 which the trace form gives exactly per draw
    Rng rng(23);
    SensitivityConfig cfg;
    cfg.dim = 16;
    cfg.num_samples = 200000;
    cfg.shift_std = 0.0;
    cfg.label_std = 0.0;
    cfg.bit_list = {4};
    const auto report = sensitivity_experiment(cfg, rng);

    // independent oracle: rebuild the same W and dW, take the analytic trace
    Rng rng2(23);
    Tensor w = Tensor::zeros({16, 16});
    for (double& v : w.data) v = rng2.uniform(-1.0, 1.0);
    double a = 0.0;
    for (double v : w.data) a = std::max(a, std::abs(v));
    const Tensor wq = quantize(w, QuantSpec{4, a});
    double frob = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
        const double d = w.data[i] - wq.data[i];
        frob += d * d;
    }
    const double analytic = frob * cfg.input_std * cfg.input_std; // Tr(dW^T dW Sigma_x)
    CHECK(report.rows[0].delta_loss_empirical == doctest::Approx(analytic).epsilon(0.02));
}

TEST_CASE("sensitivity slope of log2 dL vs n is about -2") {
    Rng rng(5);
    SensitivityConfig cfg;
    cfg.dim = 32;
    cfg.num_samples = 40000;
    const auto report = sensitivity_experiment(cfg, rng);
    const double slope = report.log2_slope(3, 8);
    CHECK(slope == doctest::Approx(-2.0).epsilon(0.1));
}

TEST_CASE("sensitivity rejects bad configs") {
    Rng rng(1);
    SensitivityConfig cfg;
    cfg.dim = 1;
    CHECK_THROWS_AS(sensitivity_experiment(cfg, rng), std::invalid_argument);
    cfg.dim = 8;
    cfg.bit_list.clear();
    CHECK_THROWS_AS(sensitivity_experiment(cfg, rng), std::invalid_argument);
}

TEST_SUITE_END();
