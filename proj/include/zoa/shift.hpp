#pragma once

// Online domain-shift detection from per-channel stem-layer statistics: an
// exponential moving profile of (mean, std) pairs and a symmetric
// Gaussian-KL distance against the current batch.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "zoa/model.hpp"

namespace zoa {

struct ChannelStat {
    double mean = 0.0;
    double std = 0.0;
};

using StatProfile = std::vector<ChannelStat>;

// As printed, the per-channel KL is (s1^2 + (m1-m2)^2) / (2 s2^2), which
// scores 1.0 for identical profiles once both directions are summed. The
// full Gaussian form adds ln(s2/s1) - 1/2 so identical profiles score 0.
enum class KlVariant { PaperLiteral, FullGaussian };

struct ShiftConfig {
    double threshold = 0.1;
    KlVariant variant = KlVariant::FullGaussian;

    void validate() const {
        if (!(threshold > 0.0)) throw std::invalid_argument("ShiftConfig: threshold must be > 0");
    }
};

inline constexpr double kSigmaFloor = 1e-6;

// Per-channel mean/std of the stem features over the batch (population std).
inline StatProfile batch_profile(const ForwardTrace& trace) {
    const Tensor& f = trace.stem_feature;
    if (f.rank() != 2) throw std::invalid_argument("batch_profile: stem feature must be B x H");
    const std::size_t B = f.shape[0], H = f.shape[1];
    if (B < 2) throw std::invalid_argument("batch_profile: need batch size >= 2");
    StatProfile prof(H);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) prof[h].mean += f.at(b, h);
    for (auto& c : prof) c.mean /= static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h) {
            const double d = f.at(b, h) - prof[h].mean;
            prof[h].std += d * d;
        }
    for (auto& c : prof) c.std = std::sqrt(c.std / static_cast<double>(B));
    return prof;
}

inline double kl_gaussian(const ChannelStat& a, const ChannelStat& b, KlVariant variant) {
    const double s1 = std::max(a.std, kSigmaFloor);
    const double s2 = std::max(b.std, kSigmaFloor);
    const double dm = a.mean - b.mean;
    double kl = (s1 * s1 + dm * dm) / (2.0 * s2 * s2);
    if (variant == KlVariant::FullGaussian) kl += std::log(s2 / s1) - 0.5;
    return kl;
}

// D = (1/H) sum_i KL(a_i || b_i) + KL(b_i || a_i)
inline double profile_distance(const StatProfile& a, const StatProfile& b,
                               KlVariant variant) {
    if (a.size() != b.size())
        throw std::invalid_argument("profile_distance: dimension mismatch");
    if (a.empty()) throw std::invalid_argument("profile_distance: empty profiles");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        total += kl_gaussian(a[i], b[i], variant) + kl_gaussian(b[i], a[i], variant);
    return total / static_cast<double>(a.size());
}

// Moving profile of the current domain. The first observation is adopted
// wholesale; afterwards phi_d <- ema * phi_t + (1 - ema) * phi_d.
struct DomainProfile {
    StatProfile phi;
    double ema = 0.8;
    bool initialized = false;

    void update(const StatProfile& phi_t) {
        if (!initialized) {
            phi = phi_t;
            initialized = true;
            return;
        }
        if (phi.size() != phi_t.size())
            throw std::invalid_argument("DomainProfile::update: dimension mismatch");
        for (std::size_t i = 0; i < phi.size(); ++i) {
            phi[i].mean = ema * phi_t[i].mean + (1.0 - ema) * phi[i].mean;
            phi[i].std = ema * phi_t[i].std + (1.0 - ema) * phi[i].std;
        }
    }

    void reset_to(const StatProfile& phi_t) {
        phi = phi_t;
        initialized = true;
    }
};

struct ShiftDecision {
    bool shifted = false;
    double distance = 0.0;
};

// The caller resets the profile to phi_t when a shift fires.
inline ShiftDecision detect(const DomainProfile& profile, const StatProfile& phi_t,
                            const ShiftConfig& cfg) {
    cfg.validate();
    if (!profile.initialized) return {false, 0.0};
    const double d = profile_distance(profile.phi, phi_t, cfg.variant);
    return {d > cfg.threshold, d};
}

} // namespace zoa
