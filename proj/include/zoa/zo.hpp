#pragma once

// SPSA-style zeroth-order gradient estimation and the two forward-only
// update rules (plain SGD and decoupled-weight-decay adaptive). A gradient
// estimate is (loss difference / scale) * elementwise reciprocal of the
// perturbation; both perturbation distributions keep the reciprocal finite
// by construction.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "zoa/layered.hpp"
#include "zoa/numerics.hpp"

namespace zoa {

enum class PerturbDist { Rademacher, SegmentedUniform };

struct PerturbConfig {
    double scale = 0.02; // c
    int steps = 1;       // q
    PerturbDist dist = PerturbDist::SegmentedUniform;
    double seg_lo = 0.5, seg_hi = 1.0;

    void validate() const {
        if (!(scale > 0.0)) throw std::invalid_argument("PerturbConfig: scale must be > 0");
        if (steps < 1) throw std::invalid_argument("PerturbConfig: steps must be >= 1");
        if (dist == PerturbDist::SegmentedUniform &&
            !(0.0 < seg_lo && seg_lo < seg_hi))
            throw std::invalid_argument("PerturbConfig: need 0 < lo < hi");
    }
};

inline double sample_perturbation_entry(const PerturbConfig& cfg, Rng& rng) {
    if (cfg.dist == PerturbDist::Rademacher)
        return (rng.next_u64() & 1u) ? 1.0 : -1.0;
    const double mag = rng.uniform(cfg.seg_lo, cfg.seg_hi);
    return (rng.next_u64() & 1u) ? mag : -mag;
}

inline std::vector<double> sample_perturbation(const PerturbConfig& cfg, std::size_t length,
                                               Rng& rng) {
    cfg.validate();
    std::vector<double> out(length);
    for (double& v : out) v = sample_perturbation_entry(cfg, rng);
    return out;
}

inline LayeredVector sample_perturbation(const PerturbConfig& cfg, SchemaPtr schema,
                                         Rng& rng) {
    cfg.validate();
    LayeredVector out(std::move(schema));
    for (double& v : out.flat()) v = sample_perturbation_entry(cfg, rng);
    return out;
}

// A single corrupted batch can spike the quantized loss; bound the damage of
// one step by clipping the loss difference before dividing by the scale.
inline constexpr double kLossDeltaClip = 10.0;

inline double clipped_loss_delta(double loss_base, double loss_perturbed) {
    if (!std::isfinite(loss_base) || !std::isfinite(loss_perturbed))
        throw std::invalid_argument("spsa_gradient: non-finite loss value");
    return std::clamp(loss_perturbed - loss_base, -kLossDeltaClip, kLossDeltaClip);
}

inline std::vector<double> spsa_gradient(double loss_base, double loss_perturbed, double c,
                                         std::span<const double> eps) {
    if (!(c > 0.0)) throw std::invalid_argument("spsa_gradient: scale must be > 0");
    const double g = clipped_loss_delta(loss_base, loss_perturbed) / c;
    std::vector<double> grad(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) grad[i] = g / eps[i];
    return grad;
}

inline LayeredVector spsa_gradient(double loss_base, double loss_perturbed, double c,
                                   const LayeredVector& eps) {
    if (!(c > 0.0)) throw std::invalid_argument("spsa_gradient: scale must be > 0");
    const double g = clipped_loss_delta(loss_base, loss_perturbed) / c;
    LayeredVector grad(eps.schema_ptr());
    for (std::size_t i = 0; i < eps.size(); ++i) grad[i] = g / eps[i];
    return grad;
}

struct JointGradient {
    LayeredVector theta;
    std::vector<double> alpha;
};

// Both parameter groups are perturbed in the same forward pair, so the two
// gradients share one loss difference; each group divides by its own scale.
inline JointGradient joint_spsa_gradient(double loss_base, double loss_perturbed,
                                         double c_theta, double c_alpha,
                                         const LayeredVector& eps_theta,
                                         std::span<const double> eps_alpha) {
    JointGradient out;
    out.theta = spsa_gradient(loss_base, loss_perturbed, c_theta, eps_theta);
    if (!eps_alpha.empty())
        out.alpha = spsa_gradient(loss_base, loss_perturbed, c_alpha, eps_alpha);
    return out;
}

// Averaged q-step estimator for oracle checks: evaluates the loss at the base
// point once and at q perturbed points (q + 1 evaluations total).
inline std::vector<double> spsa_gradient_multi(
    const std::function<double(std::span<const double>)>& loss,
    std::span<const double> theta, const PerturbConfig& cfg, Rng& rng,
    std::size_t* eval_count = nullptr) {
    cfg.validate();
    const double base = loss(theta);
    std::size_t evals = 1;
    std::vector<double> grad(theta.size(), 0.0);
    std::vector<double> point(theta.begin(), theta.end());
    for (int step = 0; step < cfg.steps; ++step) {
        const std::vector<double> eps = sample_perturbation(cfg, theta.size(), rng);
        for (std::size_t i = 0; i < theta.size(); ++i)
            point[i] = theta[i] + cfg.scale * eps[i];
        const double perturbed = loss(point);
        ++evals;
        const std::vector<double> g = spsa_gradient(base, perturbed, cfg.scale, eps);
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
    for (double& v : grad) v /= static_cast<double>(cfg.steps);
    if (eval_count) *eval_count = evals;
    return grad;
}

// Parameter update rules. Entries whose current value is not finite are left
// untouched: a -inf aggregation logit is a permanent-zero sentinel.
class UpdateRule {
public:
    enum class Kind { PlainSgd, DecoupledAdaptive };

    static UpdateRule sgd(double lr, double weight_decay) {
        UpdateRule r;
        r.kind_ = Kind::PlainSgd;
        r.lr_ = lr;
        r.weight_decay_ = weight_decay;
        return r;
    }

    static UpdateRule adamw(double lr, double weight_decay, double beta1 = 0.9,
                            double beta2 = 0.999, double eps = 1e-8) {
        UpdateRule r;
        r.kind_ = Kind::DecoupledAdaptive;
        r.lr_ = lr;
        r.weight_decay_ = weight_decay;
        r.beta1_ = beta1;
        r.beta2_ = beta2;
        r.eps_ = eps;
        return r;
    }

    Kind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    std::uint64_t step_count() const { return step_; }

    void apply(std::span<double> params, std::span<const double> grad) {
        if (params.size() != grad.size())
            throw std::invalid_argument("UpdateRule::apply: size mismatch");
        if (kind_ == Kind::PlainSgd) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (!std::isfinite(params[i])) continue;
                params[i] -= lr_ * (grad[i] + weight_decay_ * params[i]);
            }
            ++step_;
            return;
        }
        if (m_.size() != params.size()) {
            if (!m_.empty())
                throw std::invalid_argument("UpdateRule::apply: moment size mismatch");
            m_.assign(params.size(), 0.0);
            v_.assign(params.size(), 0.0);
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            if (!std::isfinite(params[i])) continue;
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            params[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * params[i]);
        }
    }

    void apply(LayeredVector& params, const LayeredVector& grad) {
        params.check_schema(grad, "UpdateRule::apply");
        apply(params.flat(), grad.flat());
    }

    // Keep the moment buffers aligned with a parameter vector that grows by
    // appending and shrinks by erasure (the aggregation logits).
    void notify_append() {
        if (kind_ != Kind::DecoupledAdaptive || m_.empty()) return;
        m_.push_back(0.0);
        v_.push_back(0.0);
    }

    void notify_erase(std::size_t index) {
        if (kind_ != Kind::DecoupledAdaptive || index >= m_.size()) return;
        m_.erase(m_.begin() + static_cast<std::ptrdiff_t>(index));
        v_.erase(v_.begin() + static_cast<std::ptrdiff_t>(index));
    }

    void reset() {
        m_.clear();
        v_.clear();
        step_ = 0;
    }

private:
    Kind kind_ = Kind::PlainSgd;
    double lr_ = 0.0, weight_decay_ = 0.0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<double> m_, v_;
    std::uint64_t step_ = 0;
};

} // namespace zoa
