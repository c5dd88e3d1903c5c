#pragma once

// Source-model fitting without backpropagation: feature layers are random
// and frozen, normalization statistics are calibrated over the training
// split, and the classifier head is solved in closed form (ridge least
// squares on one-hot targets). A finite-difference descent fitter for linear
// heads is kept alongside as the independent route.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "zoa/data.hpp"
#include "zoa/model.hpp"
#include "zoa/numerics.hpp"

namespace zoa {

namespace detail {

// Solve (A + ridge I) X = B for SPD A via Cholesky; A is n x n, B is n x m.
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b,
                                     std::size_t n, std::size_t m, double ridge) {
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] += ridge;
    // in-place Cholesky, lower triangle
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("solve_spd: matrix not positive definite");
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    // forward then backward substitution per column of B
    for (std::size_t c = 0; c < m; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i * m + c];
            for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k * m + c];
            b[i * m + c] = s / a[i * n + i];
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = b[ii * m + c];
            for (std::size_t k = ii + 1; k < n; ++k) s -= a[k * n + ii] * b[k * m + c];
            b[ii * m + c] = s / a[ii * n + ii];
        }
    }
    return b;
}

} // namespace detail

struct LinearModel {
    Tensor weight;            // C x F
    std::vector<double> bias; // C
};

// Ridge least squares of one-hot targets on features x [N x F].
inline LinearModel fit_linear_least_squares(const Tensor& x, const std::vector<int>& y,
                                            int classes, double ridge = 1e-3) {
    if (x.rank() != 2 || x.shape[0] != y.size() || x.shape[0] == 0)
        throw std::invalid_argument("fit_linear_least_squares: bad inputs");
    const std::size_t n = x.shape[0], f = x.shape[1], fa = f + 1;
    const std::size_t c = static_cast<std::size_t>(classes);
    std::vector<double> gram(fa * fa, 0.0), rhs(fa * c, 0.0);
    std::vector<double> row(fa, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) row[j] = x.at(i, j);
        row[f] = 1.0;
        for (std::size_t j = 0; j < fa; ++j) {
            for (std::size_t k = j; k < fa; ++k) gram[j * fa + k] += row[j] * row[k];
            rhs[j * c + static_cast<std::size_t>(y[i])] += row[j];
        }
    }
    for (std::size_t j = 0; j < fa; ++j)
        for (std::size_t k = 0; k < j; ++k) gram[j * fa + k] = gram[k * fa + j];
    const std::vector<double> sol = detail::solve_spd(std::move(gram), std::move(rhs), fa, c,
                                                      ridge * static_cast<double>(n));
    LinearModel lm;
    lm.weight = Tensor::zeros({c, f});
    lm.bias.assign(c, 0.0);
    for (std::size_t j = 0; j < f; ++j)
        for (std::size_t k = 0; k < c; ++k) lm.weight.at(k, j) = sol[j * c + k];
    for (std::size_t k = 0; k < c; ++k) lm.bias[k] = sol[f * c + k];
    for (double v : lm.weight.data)
        if (!std::isfinite(v)) throw std::runtime_error("fit_linear_least_squares: fit diverged");
    return lm;
}

// The same ridge objective minimized by central-difference gradient descent;
// exact for a quadratic objective up to floating-point noise, and forward
// evaluations are the only oracle used.
inline LinearModel fit_linear_finite_difference(const Tensor& x, const std::vector<int>& y,
                                                int classes, double ridge = 1e-3,
                                                std::size_t steps = 2000) {
    if (x.rank() != 2 || x.shape[0] != y.size() || x.shape[0] == 0)
        throw std::invalid_argument("fit_linear_finite_difference: bad inputs");
    const std::size_t n = x.shape[0], f = x.shape[1];
    const std::size_t c = static_cast<std::size_t>(classes);
    const std::size_t dim = (f + 1) * c;
    std::vector<double> params(dim, 0.0); // row-major (F+1) x C

    auto loss = [&](const std::vector<double>& p) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < c; ++k) {
                double pred = p[f * c + k]; // bias row
                for (std::size_t j = 0; j < f; ++j) pred += x.at(i, j) * p[j * c + k];
                const double target = (static_cast<std::size_t>(y[i]) == k) ? 1.0 : 0.0;
                const double e = pred - target;
                total += e * e;
            }
        }
        total /= static_cast<double>(n);
        for (double v : p) total += ridge * v * v;
        return total;
    };

    // Lipschitz bound from the feature second moments fixes the step size.
    double trace = static_cast<double>(n); // bias column
    for (double v : x.data) trace += v * v;
    const double lip = 2.0 * (trace / static_cast<double>(n) + ridge);
    const double lr = 1.0 / lip;
    const double h = 1e-4;

    std::vector<double> grad(dim, 0.0), probe = params;
    for (std::size_t step = 0; step < steps; ++step) {
        for (std::size_t i = 0; i < dim; ++i) {
            probe = params;
            probe[i] += h;
            const double up = loss(probe);
            probe[i] = params[i] - h;
            const double down = loss(probe);
            grad[i] = (up - down) / (2.0 * h);
        }
        for (std::size_t i = 0; i < dim; ++i) params[i] -= lr * grad[i];
    }

    LinearModel lm;
    lm.weight = Tensor::zeros({c, f});
    lm.bias.assign(c, 0.0);
    for (std::size_t j = 0; j < f; ++j)
        for (std::size_t k = 0; k < c; ++k) lm.weight.at(k, j) = params[j * c + k];
    for (std::size_t k = 0; k < c; ++k) lm.bias[k] = params[f * c + k];
    return lm;
}

inline std::vector<int> predict_labels(const Tensor& logits) {
    const std::size_t B = logits.shape[0], C = logits.shape[1];
    std::vector<int> out(B, 0);
    for (std::size_t b = 0; b < B; ++b) {
        double best = logits.at(b, 0);
        for (std::size_t c = 1; c < C; ++c)
            if (logits.at(b, c) > best) {
                best = logits.at(b, c);
                out[b] = static_cast<int>(c);
            }
    }
    return out;
}

inline double linear_accuracy(const LinearModel& lm, const Tensor& x,
                              const std::vector<int>& y) {
    const std::size_t n = x.shape[0], f = x.shape[1];
    const std::size_t c = lm.weight.shape[0];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = -1e300;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < c; ++k) {
            double pred = lm.bias[k];
            for (std::size_t j = 0; j < f; ++j) pred += x.at(i, j) * lm.weight.at(k, j);
            if (pred > best) {
                best = pred;
                arg = k;
            }
        }
        if (arg == static_cast<std::size_t>(y[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

// Zero-delta accuracy over a labeled split, evaluated in chunks.
inline double model_accuracy(const QuantizedModel& model, const Tensor& x,
                             const std::vector<int>& y, NormStats mode,
                             std::size_t chunk = 256) {
    const std::size_t n = x.shape[0];
    const std::size_t per = x.numel() / n;
    const LayeredVector zero = model.zero_delta();
    std::size_t hits = 0;
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t count = std::min(chunk, n - begin);
        std::vector<std::size_t> shape = x.shape;
        shape[0] = count;
        Tensor part(shape, std::vector<double>(
                               x.data.begin() + static_cast<std::ptrdiff_t>(begin * per),
                               x.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * per)));
        const ForwardTrace trace = model.forward(zero, part, mode);
        const std::vector<int> pred = predict_labels(trace.logits);
        for (std::size_t i = 0; i < count; ++i)
            if (pred[i] == y[begin + i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

struct FitConfig {
    Arch arch = Arch::Cnn;
    MlpDims mlp{};
    CnnDims cnn{};
    int bits = 8;        // 0 keeps full precision
    double ridge = 1e-3;
    // Classifier sharpness: the head is scaled by this factor after the
    // least-squares solve. Argmax predictions are unchanged; the softmax
    // confidence (and with it the entropy signal) is not.
    double head_logit_scale = 1.0;
    // Norm layers to leave adaptable; empty means all of them. Freezing a
    // subset shrinks the test-time parameter space.
    std::vector<std::string> adapt_norms;
};

// Random frozen features + calibrated normalization statistics + closed-form
// head. Weight tensors end up on their quantization grids and the clean test
// accuracy (running statistics, as deployed) is recorded on the model.
inline QuantizedModel fit_source_model(const FitConfig& cfg, const Dataset& ds, Rng& rng) {
    if (ds.train_x.shape.empty() || ds.train_x.shape[0] == 0)
        throw std::invalid_argument("fit_source_model: dataset has no train split");

    QuantizedModel model;
    if (cfg.arch == Arch::Mlp) {
        if (ds.sample_shape.size() != 1)
            throw std::invalid_argument("fit_source_model: MLP needs flat feature data");
        MlpDims dims = cfg.mlp;
        dims.input_dim = ds.sample_shape[0];
        dims.classes = static_cast<std::size_t>(ds.classes);
        model = make_mlp(dims, rng);
    } else {
        if (!ds.image_shaped())
            throw std::invalid_argument("fit_source_model: CNN needs image-shaped data");
        CnnDims dims = cfg.cnn;
        dims.in_ch = ds.sample_shape[0];
        dims.image = ds.sample_shape[1];
        dims.classes = static_cast<std::size_t>(ds.classes);
        model = make_cnn(dims, rng);
    }

    if (!cfg.adapt_norms.empty()) {
        for (auto& n : model.norm)
            n.adaptable = std::find(cfg.adapt_norms.begin(), cfg.adapt_norms.end(),
                                    n.name) != cfg.adapt_norms.end();
        model.rebuild_schema();
        if (model.schema->layers.empty())
            throw std::invalid_argument("fit_source_model: no adaptable norm layer left");
    }

    // Quantize the feature layers first so statistics, features and the head
    // are all computed against the deployed weights.
    model.freeze(cfg.bits);
    model.calibrate_running_stats(ds.train_x);

    const ForwardTrace trace =
        model.forward(model.zero_delta(), ds.train_x, NormStats::Running);
    const LinearModel head =
        fit_linear_least_squares(trace.head_input, ds.train_y, ds.classes, cfg.ridge);
    DenseLayer& hd = model.dense.back();
    hd.weight = head.weight;
    hd.bias = head.bias;
    if (cfg.head_logit_scale != 1.0) {
        if (!(cfg.head_logit_scale > 0.0))
            throw std::invalid_argument("fit_source_model: head scale must be > 0");
        for (double& v : hd.weight.data) v *= cfg.head_logit_scale;
        for (double& v : hd.bias) v *= cfg.head_logit_scale;
    }
    hd.weight_spec.reset();
    hd.bias_spec.reset();
    if (cfg.bits != 0) {
        double wmax = 0.0, bmax = 0.0;
        for (double v : hd.weight.data) wmax = std::max(wmax, std::abs(v));
        for (double v : hd.bias) bmax = std::max(bmax, std::abs(v));
        hd.weight_spec = QuantSpec{cfg.bits, wmax};
        hd.weight = quantize(hd.weight, *hd.weight_spec);
        hd.bias_spec = QuantSpec{cfg.bits, bmax};
        for (double& b : hd.bias) b = quantize_value(b, *hd.bias_spec);
    }

    model.clean_test_accuracy =
        model_accuracy(model, ds.test_x, ds.test_y, NormStats::Running);
    return model;
}

} // namespace zoa
