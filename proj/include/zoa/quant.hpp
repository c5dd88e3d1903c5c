#pragma once

// Simulated uniform quantization: values are snapped onto the symmetric
// n-bit grid over [-a, a] but all arithmetic stays in doubles. Also hosts
// the harness that measures the quantization-induced loss gap of a random
// linear model against its closed-form prediction.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "zoa/numerics.hpp"

namespace zoa {

struct QuantSpec {
    int bits = 8;       // n >= 2
    double range = 1.0; // a >= 0, grid spans [-a, a]

    void validate() const {
        if (bits < 2) throw std::invalid_argument("QuantSpec: bits must be >= 2");
        if (!(range >= 0.0)) throw std::invalid_argument("QuantSpec: range must be >= 0");
    }

    // grid step phi = 2a / (2^n - 1); the grid has 2^n levels
    double step() const { return 2.0 * range / (std::exp2(bits) - 1.0); }
    std::int64_t levels() const { return std::int64_t{1} << bits; }
};

// Snap one value to the grid. Out-of-range inputs are clamped first; ties
// round half-away-from-zero (the +0 side for a dead-center tie).
inline double quantize_value(double w, const QuantSpec& spec) {
    spec.validate();
    if (spec.range == 0.0) return 0.0;
    const double a = spec.range;
    const double phi = spec.step();
    const double clamped = std::clamp(w, -a, a);
    const double pos = (clamped + a) / phi; // grid coordinate in [0, 2^n - 1]
    double k = std::floor(pos);
    const double frac = pos - k;
    if (frac > 0.5) {
        k += 1.0;
    } else if (frac == 0.5) {
        if (clamped >= 0.0) k += 1.0; // away from zero
    }
    const double hi = static_cast<double>(spec.levels() - 1);
    k = std::clamp(k, 0.0, hi);
    return -a + k * phi;
}

inline Tensor quantize(const Tensor& w, const QuantSpec& spec) {
    spec.validate();
    Tensor out = w;
    for (double& v : out.data) v = quantize_value(v, spec);
    return out;
}

struct ErrorVariance {
    double empirical = 0.0;
    double predicted = 0.0; // a^2 / (3 (2^n - 1)^2)
};

// Monte-Carlo check of the quantization-error statistics over uniform
// weights in [-a, a]. Also reports the empirical error mean for tests.
struct ErrorStats {
    double mean = 0.0;
    double variance = 0.0;
    double predicted_variance = 0.0;
};

inline ErrorStats quantization_error_stats(const QuantSpec& spec, Rng& rng,
                                           std::size_t num_samples) {
    spec.validate();
    if (num_samples < 10000)
        throw std::invalid_argument("quantization_error_stats: need >= 1e4 samples");
    const double denom = std::exp2(spec.bits) - 1.0;
    ErrorStats st;
    st.predicted_variance = spec.range * spec.range / (3.0 * denom * denom);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < num_samples; ++i) {
        const double w = rng.uniform(-spec.range, spec.range);
        const double e = quantize_value(w, spec) - w;
        sum += e;
        sum_sq += e * e;
    }
    st.mean = sum / static_cast<double>(num_samples);
    st.variance = sum_sq / static_cast<double>(num_samples);
    return st;
}

inline ErrorVariance quantization_error_variance(const QuantSpec& spec, Rng& rng,
                                                 std::size_t num_samples) {
    const ErrorStats st = quantization_error_stats(spec, rng, num_samples);
    return {st.variance, st.predicted_variance};
}

struct SensitivityRow {
    int bits = 0;
    double delta_loss_empirical = 0.0;
    double delta_loss_predicted = 0.0; // C / (2^n - 1)^2 shape
};

struct SensitivityReport {
    std::vector<SensitivityRow> rows;

    void write_csv(std::ostream& os) const {
        os << "n,delta_loss_empirical,delta_loss_predicted_shape\n";
        for (const auto& r : rows)
            os << r.bits << ',' << r.delta_loss_empirical << ','
               << r.delta_loss_predicted << '\n';
    }

    // OLS slope of log2(empirical dL) against n over [n_lo, n_hi]
    double log2_slope(int n_lo, int n_hi) const {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        int cnt = 0;
        for (const auto& r : rows) {
            if (r.bits < n_lo || r.bits > n_hi) continue;
            if (!(r.delta_loss_empirical > 0.0))
                throw std::runtime_error("log2_slope: non-positive delta loss");
            const double x = r.bits;
            const double y = std::log2(r.delta_loss_empirical);
            sx += x; sy += y; sxx += x * x; sxy += x * y;
            ++cnt;
        }
        if (cnt < 2) throw std::invalid_argument("log2_slope: need >= 2 points");
        const double n = cnt;
        return (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
};

struct SensitivityConfig {
    std::size_t dim = 32;          // square W
    std::vector<int> bit_list = {2, 3, 4, 5, 6, 7, 8};
    std::size_t num_samples = 100000;
    double input_std = 1.0;   // sigma_x
    double shift_std = 0.1;   // sigma_delta, the OOD perturbation
    double label_std = 0.1;   // sigma_xi
};

// Random linear model y = Wx; the same Gaussian draws of (x, delta, xi) are
// used for the full-precision and every quantized variant, so the loss gap
// per bit-width is differenced on identical data.
inline SensitivityReport sensitivity_experiment(const SensitivityConfig& cfg, Rng& rng) {
    if (cfg.dim < 2) throw std::invalid_argument("sensitivity: dim must be >= 2");
    if (cfg.bit_list.empty()) throw std::invalid_argument("sensitivity: empty bit list");
    const std::size_t d = cfg.dim;

    Tensor w = Tensor::zeros({d, d});
    for (double& v : w.data) v = rng.uniform(-1.0, 1.0);
    double a = 0.0;
    for (double v : w.data) a = std::max(a, std::abs(v));

    // per-bit quantization error dW = W - What
    std::vector<std::vector<double>> dw(cfg.bit_list.size());
    for (std::size_t bi = 0; bi < cfg.bit_list.size(); ++bi) {
        const QuantSpec spec{cfg.bit_list[bi], a};
        const Tensor wq = quantize(w, spec);
        dw[bi].resize(w.numel());
        for (std::size_t i = 0; i < w.numel(); ++i)
            dw[bi][i] = w.data[i] - wq.data[i];
    }

    std::vector<double> dl(cfg.bit_list.size(), 0.0);
    std::vector<double> z(d), delta(d), res(d);
    for (std::size_t s = 0; s < cfg.num_samples; ++s) {
        for (std::size_t i = 0; i < d; ++i) {
            const double x = rng.gaussian(0.0, cfg.input_std);
            delta[i] = rng.gaussian(0.0, cfg.shift_std);
            z[i] = x + delta[i];
        }
        // fp residual on z: y_g - W z = xi - W delta
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            const double* wrow = &w.data[i * d];
            for (std::size_t j = 0; j < d; ++j) acc += wrow[j] * delta[j];
            res[i] = rng.gaussian(0.0, cfg.label_std) - acc;
        }
        // quantized residual is res + dW z, so the per-sample loss gap is
        // |dW z|^2 + 2 res . (dW z)
        for (std::size_t bi = 0; bi < cfg.bit_list.size(); ++bi) {
            const double* m = dw[bi].data();
            double quad = 0.0, cross = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                double acc = 0.0;
                const double* row = &m[i * d];
                for (std::size_t j = 0; j < d; ++j) acc += row[j] * z[j];
                quad += acc * acc;
                cross += res[i] * acc;
            }
            dl[bi] += quad + 2.0 * cross;
        }
    }

    // E[Tr(dW^T dW (Sigma_x + Sigma_d))] over iid dW with isotropic Sigma:
    // h * w * Var(dW) * (sx^2 + sd^2)
    const double var_in = cfg.input_std * cfg.input_std + cfg.shift_std * cfg.shift_std;
    SensitivityReport report;
    for (std::size_t bi = 0; bi < cfg.bit_list.size(); ++bi) {
        const double denom = std::exp2(cfg.bit_list[bi]) - 1.0;
        SensitivityRow row;
        row.bits = cfg.bit_list[bi];
        row.delta_loss_empirical = dl[bi] / static_cast<double>(cfg.num_samples);
        row.delta_loss_predicted =
            static_cast<double>(d * d) * a * a / (3.0 * denom * denom) * var_in;
        report.rows.push_back(row);
    }
    return report;
}

} // namespace zoa
