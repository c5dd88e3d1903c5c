#include "doctest.h"

#include <cmath>
#include <memory>

#include "zoa/layered.hpp"
#include "zoa/numerics.hpp"
#include "zoa/zo.hpp"

using namespace zoa;

namespace {

SchemaPtr tiny_schema() {
    auto s = std::make_shared<ParamSchema>();
    s->layers.push_back({"a", 2});
    return s;
}

} // namespace

TEST_SUITE_BEGIN("zo");

TEST_CASE("rademacher entries are their own reciprocals") {
    Rng rng(1);
    PerturbConfig cfg;
    cfg.dist = PerturbDist::Rademacher;
    const auto eps = sample_perturbation(cfg, 1000, rng);
    for (double e : eps) {
        CHECK((e == 1.0 || e == -1.0));
        CHECK(1.0 / e == e);
    }
}

TEST_CASE("segmented uniform support excludes a band around zero") {
    Rng rng(2);
    PerturbConfig cfg;
    cfg.dist = PerturbDist::SegmentedUniform;
    const auto eps = sample_perturbation(cfg, 5000, rng);
    for (double e : eps) {
        CHECK(std::abs(e) >= 0.5);
        CHECK(std::abs(e) <= 1.0);
    }
}

TEST_CASE("perturbation means concentrate around zero") {
    Rng rng(3);
    for (auto dist : {PerturbDist::Rademacher, PerturbDist::SegmentedUniform}) {
        PerturbConfig cfg;
        cfg.dist = dist;
        const std::size_t n = 100000;
        const auto eps = sample_perturbation(cfg, n, rng);
        double mean = 0.0;
        for (double e : eps) mean += e;
        mean /= static_cast<double>(n);
        CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    }
}

TEST_CASE("perturbation config validation") {
    Rng rng(4);
    PerturbConfig bad;
    bad.scale = 0.0;
    CHECK_THROWS_AS(sample_perturbation(bad, 4, rng), std::invalid_argument);
    PerturbConfig seg;
    seg.dist = PerturbDist::SegmentedUniform;
    seg.seg_lo = 0.0;
    CHECK_THROWS_AS(sample_perturbation(seg, 4, rng), std::invalid_argument);
}

TEST_CASE("spsa gradient hand value") {
    // L = sum(theta^2), theta = (1,-2), c = 0.01, eps = (+1,-1)
    const std::vector<double> eps{1.0, -1.0};
    const auto g = spsa_gradient(5.0, 5.0602, 0.01, eps);
    CHECK(g[0] == doctest::Approx(6.02).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(-6.02).epsilon(1e-12));
}

TEST_CASE("flat loss surface gives a zero gradient") {
    const std::vector<double> eps{1.0, -1.0, 1.0};
    for (double g : spsa_gradient(2.5, 2.5, 0.05, eps)) CHECK(g == 0.0);
}

TEST_CASE("scaling loss deltas and scale together leaves the estimate unchanged") {
    const std::vector<double> eps{1.0, -1.0};
    const auto a = spsa_gradient(1.0, 1.2, 0.01, eps);
    const auto b = spsa_gradient(10.0, 12.0, 0.1, eps);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("non-finite losses are rejected") {
    const std::vector<double> eps{1.0};
    CHECK_THROWS_AS(spsa_gradient(std::nan(""), 1.0, 0.1, eps), std::invalid_argument);
    CHECK_THROWS_AS(spsa_gradient(1.0, INFINITY, 0.1, eps), std::invalid_argument);
    CHECK_THROWS_AS(spsa_gradient(1.0, 2.0, 0.0, eps), std::invalid_argument);
}

TEST_CASE("joint gradient hand value and reduction to the single-group case") {
    SchemaPtr schema = tiny_schema();
    LayeredVector eps_theta(schema);
    eps_theta[0] = 1.0;
    eps_theta[1] = 1.0;

    // 1-D groups: L = th^2 + al^2, th=1, al=0, c=0.1, both perturbations +1
    auto one = std::make_shared<ParamSchema>();
    one->layers.push_back({"t", 1});
    LayeredVector et(one);
    et[0] = 1.0;
    const std::vector<double> nu{1.0};
    const JointGradient jg = joint_spsa_gradient(1.0, 1.22, 0.1, 0.1, et, nu);
    CHECK(jg.theta[0] == doctest::Approx(2.2).epsilon(1e-12));
    CHECK(jg.alpha[0] == doctest::Approx(2.2).epsilon(1e-12));

    // no stored domains: alpha gradient is empty, theta matches plain SPSA
    const JointGradient jr = joint_spsa_gradient(1.0, 1.3, 0.05, 0.9, eps_theta, {});
    CHECK(jr.alpha.empty());
    const LayeredVector plain = spsa_gradient(1.0, 1.3, 0.05, eps_theta);
    CHECK(jr.theta.flat()[0] == plain.flat()[0]);
    CHECK(jr.theta.flat()[1] == plain.flat()[1]);

    // constant surface: both zero
    const JointGradient jz = joint_spsa_gradient(4.0, 4.0, 0.1, 0.2, et, nu);
    CHECK(jz.theta[0] == 0.0);
    CHECK(jz.alpha[0] == 0.0);
}

TEST_CASE("per-group scales divide their own gradients") {
    auto one = std::make_shared<ParamSchema>();
    one->layers.push_back({"t", 1});
    LayeredVector et(one);
    et[0] = 1.0;
    const std::vector<double> nu{1.0};
    const JointGradient jg = joint_spsa_gradient(0.0, 0.1, 0.02, 0.05, et, nu);
    CHECK(jg.theta[0] == doctest::Approx(0.1 / 0.02).epsilon(1e-12));
    CHECK(jg.alpha[0] == doctest::Approx(0.1 / 0.05).epsilon(1e-12));
}

TEST_CASE("plain sgd update") {
    UpdateRule r = UpdateRule::sgd(0.1, 0.0);
    std::vector<double> p{1.0};
    const std::vector<double> g{2.0};
    r.apply(p, g);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("sgd weight decay pulls parameters toward zero") {
    UpdateRule r = UpdateRule::sgd(0.1, 0.5);
    std::vector<double> p{1.0};
    const std::vector<double> g{0.0};
    r.apply(p, g);
    CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-12));
}

TEST_CASE("adamw first step closed form") {
    UpdateRule r = UpdateRule::adamw(0.01, 0.0);
    std::vector<double> p{1.0};
    const std::vector<double> g{1.0};
    r.apply(p, g);
    CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-6));
}

TEST_CASE("zero gradient with zero decay is the identity") {
    for (auto r : {UpdateRule::sgd(0.3, 0.0), UpdateRule::adamw(0.3, 0.0)}) {
        std::vector<double> p{1.5, -2.5};
        const std::vector<double> g{0.0, 0.0};
        r.apply(p, g);
        CHECK(p[0] == 1.5);
        CHECK(p[1] == -2.5);
    }
}

TEST_CASE("a zero learning rate never moves parameters") {
    for (auto r : {UpdateRule::sgd(0.0, 0.4), UpdateRule::adamw(0.0, 0.1)}) {
        std::vector<double> p{1.5, -2.5};
        const std::vector<double> g{3.0, -7.0};
        r.apply(p, g);
        r.apply(p, g);
        CHECK(p[0] == 1.5);
        CHECK(p[1] == -2.5);
    }
}

TEST_CASE("non-finite parameters are sentinel values and stay put") {
    UpdateRule r = UpdateRule::adamw(0.1, 0.1);
    std::vector<double> p{kNegInf, 1.0};
    const std::vector<double> g{3.0, 1.0};
    r.apply(p, g);
    CHECK(p[0] == kNegInf);
    CHECK(p[1] < 1.0);
}

TEST_CASE("update rejects mismatched sizes") {
    UpdateRule r = UpdateRule::sgd(0.1, 0.0);
    std::vector<double> p{1.0, 2.0};
    const std::vector<double> g{1.0};
    CHECK_THROWS_AS(r.apply(p, g), std::invalid_argument);
}

TEST_CASE("moment buffers track appends and erasures") {
    UpdateRule r = UpdateRule::adamw(0.1, 0.0);
    std::vector<double> p{1.0, 2.0};
    r.apply(p, std::vector<double>{1.0, 1.0});
    r.notify_append();
    p.push_back(3.0);
    r.apply(p, std::vector<double>{1.0, 1.0, 1.0});
    r.notify_erase(0);
    p.erase(p.begin());
    r.apply(p, std::vector<double>{1.0, 1.0});
    CHECK(p.size() == 2);
}

TEST_CASE("rademacher estimates average to the analytic gradient") {
    // 16-dim quadratic L = sum a_i x_i^2; relative L2 error of the mean over
    // 1e4 estimates stays below 5% at c = 1e-3
    const std::size_t d = 16;
    std::vector<double> a(d), theta(d), analytic(d);
    Rng setup(77);
    for (std::size_t i = 0; i < d; ++i) {
        a[i] = setup.uniform(0.5, 2.0);
        theta[i] = setup.uniform(-1.0, 1.0);
        analytic[i] = 2.0 * a[i] * theta[i];
    }
    auto loss = [&](std::span<const double> x) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += a[i] * x[i] * x[i];
        return s;
    };
    PerturbConfig cfg;
    cfg.dist = PerturbDist::Rademacher;
    cfg.scale = 1e-3;
    Rng rng(78);
    std::vector<double> mean(d, 0.0);
    const std::size_t m = 10000;
    std::size_t evals_one = 0;
    for (std::size_t k = 0; k < m; ++k) {
        std::size_t evals = 0;
        const auto g = spsa_gradient_multi(loss, theta, cfg, rng, &evals);
        if (k == 0) evals_one = evals;
        for (std::size_t i = 0; i < d; ++i) mean[i] += g[i];
    }
    CHECK(evals_one == 2); // q = 1: exactly two loss evaluations per estimate
    double err = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        mean[i] /= static_cast<double>(m);
        err += (mean[i] - analytic[i]) * (mean[i] - analytic[i]);
        norm += analytic[i] * analytic[i];
    }
    CHECK(std::sqrt(err / norm) <= 0.05);
}

TEST_CASE("q-step estimator consumes exactly q + 1 evaluations") {
    auto loss = [](std::span<const double> x) { return x[0] * x[0]; };
    const std::vector<double> theta{1.0};
    Rng rng(9);
    for (int q : {1, 2, 5}) {
        PerturbConfig cfg;
        cfg.steps = q;
        cfg.scale = 0.01;
        std::size_t evals = 0;
        spsa_gradient_multi(loss, theta, cfg, rng, &evals);
        CHECK(evals == static_cast<std::size_t>(q + 1));
    }
}

TEST_SUITE_END();
