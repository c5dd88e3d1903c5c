#pragma once

// The test-time objective: prediction entropy averaged over the batch and
// class count, plus a feature-statistics alignment penalty against the
// source (in-distribution) statistics.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "zoa/model.hpp"
#include "zoa/numerics.hpp"

namespace zoa {

struct ObjectiveConfig {
    double lambda = 1.0; // trade-off on the alignment term

    void validate() const {
        if (!(lambda >= 0.0)) throw std::invalid_argument("ObjectiveConfig: lambda must be >= 0");
    }
};

// (1 / (B*C)) sum over samples and classes of -y log y, with y the softmax
// probabilities. Probabilities are floored at 1e-12 before the log because
// quantized logits can saturate the softmax.
inline double entropy_term(const Tensor& logits) {
    if (logits.rank() != 2)
        throw std::invalid_argument("entropy_term: logits must be B x C");
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    if (B < 1 || C < 2)
        throw std::invalid_argument("entropy_term: need B >= 1 and C >= 2");
    if (!logits.all_finite())
        throw std::invalid_argument("entropy_term: non-finite logits");
    double total = 0.0;
    std::vector<double> row(C);
    for (std::size_t b = 0; b < B; ++b) {
        double m = logits.at(b, 0);
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, logits.at(b, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            row[c] = std::exp(logits.at(b, c) - m);
            sum += row[c];
        }
        for (std::size_t c = 0; c < C; ++c) {
            const double y = std::max(row[c] / sum, 1e-12);
            total -= y * std::log(y);
        }
    }
    return total / static_cast<double>(B * C);
}

// (1/L) sum over blocks of ||mu_t - mu_s||_2 + ||sigma_t - sigma_s||_2.
// The lambda factor is applied by total_loss.
inline double alignment_term(const FeatureStats& test, const FeatureStats& source) {
    if (!test.same_shape(source))
        throw std::invalid_argument("alignment_term: feature stats shape mismatch");
    const std::size_t L = test.blocks();
    if (L == 0) throw std::invalid_argument("alignment_term: no blocks");
    double total = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        double dm = 0.0, ds = 0.0;
        for (std::size_t c = 0; c < test.mean[i].size(); ++c) {
            const double em = test.mean[i][c] - source.mean[i][c];
            const double es = test.stddev[i][c] - source.stddev[i][c];
            dm += em * em;
            ds += es * es;
        }
        total += std::sqrt(dm) + std::sqrt(ds);
    }
    return total / static_cast<double>(L);
}

inline double total_loss(const ForwardTrace& trace, const FeatureStats& source_stats,
                         const ObjectiveConfig& cfg) {
    cfg.validate();
    return entropy_term(trace.logits) +
           cfg.lambda * alignment_term(batch_feature_stats(trace), source_stats);
}

// Source block statistics from a zero-delta forward over a small unlabeled
// in-distribution batch (32 samples by default in the shipped configs).
inline FeatureStats calibrate_source_stats(const QuantizedModel& model,
                                           const Tensor& id_batch) {
    if (id_batch.shape.empty() || id_batch.shape[0] < 2)
        throw std::invalid_argument("calibrate_source_stats: need at least 2 samples");
    const ForwardTrace trace = model.forward(model.zero_delta(), id_batch, NormStats::Batch);
    return batch_feature_stats(trace);
}

} // namespace zoa
