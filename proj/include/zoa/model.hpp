#pragma once

// Forward-only networks with frozen (simulated-quantized) weights. Only the
// normalization affine parameters are adaptable, through a LayeredVector of
// deltas applied on top of the source values. Two reference architectures:
// an MLP (dense blocks) and a small 3-block CNN with a GAP head.

#include <atomic>
#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zoa/layered.hpp"
#include "zoa/numerics.hpp"
#include "zoa/quant.hpp"

namespace zoa {

enum class Arch { Mlp, Cnn };

// Which statistics normalization layers use: the current batch (test-time
// default) or the running statistics captured at freeze time.
enum class NormStats { Batch, Running };

struct ForwardTrace {
    Tensor logits;                      // B x C
    std::vector<Tensor> block_features; // per block, B x H_i (pooled)
    Tensor stem_feature;                // B x H_0 (pooled, pre-normalization)
    Tensor head_input;                  // B x F, what the classifier head consumed
};

struct FeatureStats {
    std::vector<std::vector<double>> mean;   // [block][channel]
    std::vector<std::vector<double>> stddev; // population std, divisor B

    std::size_t blocks() const { return mean.size(); }

    bool same_shape(const FeatureStats& other) const {
        if (mean.size() != other.mean.size()) return false;
        for (std::size_t i = 0; i < mean.size(); ++i)
            if (mean[i].size() != other.mean[i].size()) return false;
        return true;
    }
};

struct DenseLayer {
    std::string name;
    Tensor weight;            // out x in
    std::vector<double> bias; // out, may be empty
    std::optional<QuantSpec> weight_spec;
    std::optional<QuantSpec> bias_spec;
};

struct ConvLayer { // 3x3 kernel, stride 1, pad 1
    std::string name;
    std::size_t in_ch = 0, out_ch = 0;
    Tensor weight; // out x in x 3 x 3
    std::optional<QuantSpec> weight_spec;
};

struct NormLayer {
    std::string name;
    std::size_t channels = 0;
    std::vector<double> gamma0, beta0;     // source affine (theta^0), full precision
    std::vector<double> run_mean, run_var; // source running statistics
    bool adaptable = true;
    std::size_t schema_index = SIZE_MAX; // into the model schema when adaptable
};

struct MlpDims {
    std::size_t input_dim = 2;
    std::size_t hidden = 16;
    std::size_t num_blocks = 2; // norm+relu+dense blocks between stem and head
    std::size_t classes = 2;
    bool head_norm = true;
};

struct CnnDims {
    std::size_t in_ch = 1;
    std::size_t image = 16; // square, divisible by 4
    std::size_t c1 = 8, c2 = 16, c3 = 16;
    std::size_t classes = 4;
};

namespace detail {

inline void check_finite(std::span<const double> v, const std::string& layer) {
    for (double x : v)
        if (!std::isfinite(x))
            throw std::runtime_error("non-finite activation after layer '" + layer + "'");
}

inline void relu_inplace(std::span<double> v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
}

} // namespace detail

class QuantizedModel {
public:
    Arch arch = Arch::Mlp;
    MlpDims mlp{};
    CnnDims cnn{};
    std::vector<DenseLayer> dense; // mlp: stem, block denses, head; cnn: head only
    std::vector<ConvLayer> conv;   // cnn: the 3 block convs
    std::vector<NormLayer> norm;   // in forward order
    SchemaPtr schema;
    double bn_eps = 1e-5;
    bool frozen = false;
    double clean_test_accuracy = 0.0; // recorded by the fitting harness

    QuantizedModel() : counter_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

    std::uint64_t forward_count() const { return counter_->load(); }

    std::size_t num_blocks() const {
        return arch == Arch::Mlp ? mlp.num_blocks : 3;
    }

    LayeredVector zero_delta() const { return LayeredVector(schema); }

    void rebuild_schema() {
        auto s = std::make_shared<ParamSchema>();
        for (auto& n : norm) {
            if (n.adaptable) {
                n.schema_index = s->layers.size();
                s->layers.push_back({n.name, 2 * n.channels});
            } else {
                n.schema_index = SIZE_MAX;
            }
        }
        schema = std::move(s);
    }

    // Snap every weight tensor to its per-tensor symmetric grid (a = max|w|).
    // bits == 0 keeps full precision.
    void freeze(int bits) {
        if (bits != 0) {
            for (auto& d : dense) {
                d.weight_spec = QuantSpec{bits, max_abs(d.weight.data)};
                d.weight = quantize(d.weight, *d.weight_spec);
                if (!d.bias.empty()) {
                    d.bias_spec = QuantSpec{bits, max_abs(d.bias)};
                    for (double& b : d.bias) b = quantize_value(b, *d.bias_spec);
                }
            }
            for (auto& c : conv) {
                c.weight_spec = QuantSpec{bits, max_abs(c.weight.data)};
                c.weight = quantize(c.weight, *c.weight_spec);
            }
        }
        frozen = true;
    }

    ForwardTrace forward(const LayeredVector& delta, const Tensor& batch,
                         NormStats mode = NormStats::Batch) const {
        check_delta(delta);
        counter_->fetch_add(1);
        return const_cast<QuantizedModel*>(this)->run(delta, batch, mode, false);
    }

    // One pass over `batch` that records each norm layer's batch statistics
    // as the running statistics. Used once at model-freeze time.
    void calibrate_running_stats(const Tensor& batch) {
        counter_->fetch_add(1);
        LayeredVector zero(schema);
        run(zero, batch, NormStats::Batch, true);
    }

private:
    std::shared_ptr<std::atomic<std::uint64_t>> counter_;

    static double max_abs(std::span<const double> v) {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }

    void check_delta(const LayeredVector& delta) const {
        if (!schema) throw std::logic_error("model schema not built");
        if (delta.empty() || !(delta.schema() == *schema))
            throw std::invalid_argument("forward: delta does not match model schema");
    }

    // rows: B x C view over a channel-major activation; applies batch or
    // running normalization plus the (source + delta) affine per channel.
    void apply_norm(NormLayer& n, std::span<double> act, std::size_t batch_size,
                    std::size_t per_sample, const LayeredVector& delta,
                    NormStats mode, bool write_running) const {
        const std::size_t ch = n.channels;
        const std::size_t spatial = per_sample / ch; // 1 for dense
        std::vector<double> mean(ch, 0.0), var(ch, 0.0);
        if (mode == NormStats::Batch) {
            const double count = static_cast<double>(batch_size * spatial);
            for (std::size_t b = 0; b < batch_size; ++b)
                for (std::size_t c = 0; c < ch; ++c) {
                    const double* p = &act[b * per_sample + c * spatial];
                    for (std::size_t s = 0; s < spatial; ++s) mean[c] += p[s];
                }
            for (double& m : mean) m /= count;
            for (std::size_t b = 0; b < batch_size; ++b)
                for (std::size_t c = 0; c < ch; ++c) {
                    const double* p = &act[b * per_sample + c * spatial];
                    for (std::size_t s = 0; s < spatial; ++s) {
                        const double d = p[s] - mean[c];
                        var[c] += d * d;
                    }
                }
            for (double& v : var) v /= count;
            if (write_running) {
                n.run_mean = mean;
                n.run_var = var;
            }
        } else {
            mean = n.run_mean;
            var = n.run_var;
        }

        std::span<const double> dslice;
        if (n.schema_index != SIZE_MAX) dslice = delta.layer(n.schema_index);
        for (std::size_t c = 0; c < ch; ++c) {
            const double gamma = n.gamma0[c] + (dslice.empty() ? 0.0 : dslice[c]);
            const double beta = n.beta0[c] + (dslice.empty() ? 0.0 : dslice[ch + c]);
            const double inv = 1.0 / std::sqrt(var[c] + bn_eps);
            for (std::size_t b = 0; b < batch_size; ++b) {
                double* p = &act[b * per_sample + c * spatial];
                for (std::size_t s = 0; s < spatial; ++s)
                    p[s] = gamma * (p[s] - mean[c]) * inv + beta;
            }
        }
    }

    ForwardTrace run(const LayeredVector& delta, const Tensor& batch, NormStats mode,
                     bool write_running) {
        return arch == Arch::Mlp ? run_mlp(delta, batch, mode, write_running)
                                 : run_cnn(delta, batch, mode, write_running);
    }

    std::vector<double> dense_forward(const DenseLayer& d, std::span<const double> in,
                                      std::size_t batch_size) const {
        const std::size_t out_dim = d.weight.shape[0];
        const std::size_t in_dim = d.weight.shape[1];
        if (in.size() != batch_size * in_dim)
            throw std::invalid_argument("dense '" + d.name + "': input size mismatch");
        std::vector<double> out(batch_size * out_dim, 0.0);
        for (std::size_t b = 0; b < batch_size; ++b)
            for (std::size_t o = 0; o < out_dim; ++o) {
                double acc = d.bias.empty() ? 0.0 : d.bias[o];
                const double* wrow = &d.weight.data[o * in_dim];
                const double* x = &in[b * in_dim];
                for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * x[i];
                out[b * out_dim + o] = acc;
            }
        detail::check_finite(out, d.name);
        return out;
    }

    ForwardTrace run_mlp(const LayeredVector& delta, const Tensor& batch, NormStats mode,
                         bool write_running) {
        if (batch.rank() != 2 || batch.shape[1] != mlp.input_dim)
            throw std::invalid_argument("forward: batch shape does not match MLP input");
        const std::size_t B = batch.shape[0];
        ForwardTrace trace;

        std::vector<double> x = dense_forward(dense[0], batch.data, B); // stem
        const std::size_t H = mlp.hidden;
        trace.stem_feature = Tensor({B, H}, x);

        std::size_t norm_i = 0;
        for (std::size_t blk = 0; blk < mlp.num_blocks; ++blk) {
            apply_norm(norm[norm_i], x, B, H, delta, mode, write_running);
            ++norm_i;
            detail::relu_inplace(x);
            x = dense_forward(dense[1 + blk], x, B);
            trace.block_features.push_back(Tensor({B, H}, x));
        }
        if (mlp.head_norm) {
            apply_norm(norm[norm_i], x, B, H, delta, mode, write_running);
            ++norm_i;
            detail::relu_inplace(x);
        }
        trace.head_input = Tensor({B, H}, x);
        std::vector<double> logits = dense_forward(dense.back(), x, B);
        trace.logits = Tensor({B, mlp.classes}, std::move(logits));
        return trace;
    }

    static Tensor pooled_channels(std::span<const double> act, std::size_t B,
                                  std::size_t ch, std::size_t spatial) {
        Tensor out = Tensor::zeros({B, ch});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < ch; ++c) {
                const double* p = &act[(b * ch + c) * spatial];
                double s = 0.0;
                for (std::size_t i = 0; i < spatial; ++i) s += p[i];
                out.data[b * ch + c] = s / static_cast<double>(spatial);
            }
        return out;
    }

    std::vector<double> conv_forward(const ConvLayer& c, std::span<const double> in,
                                     std::size_t B, std::size_t side) const {
        const std::size_t ic = c.in_ch, oc = c.out_ch;
        if (in.size() != B * ic * side * side)
            throw std::invalid_argument("conv '" + c.name + "': input size mismatch");
        std::vector<double> out(B * oc * side * side, 0.0);
        const std::size_t hw = side * side;
        const int s = static_cast<int>(side);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < oc; ++o) {
                double* dst = &out[(b * oc + o) * hw];
                for (std::size_t i = 0; i < ic; ++i) {
                    const double* src = &in[(b * ic + i) * hw];
                    const double* k = &c.weight.data[(o * ic + i) * 9];
                    for (int y = 0; y < s; ++y)
                        for (int x = 0; x < s; ++x) {
                            double acc = 0.0;
                            for (int dy = -1; dy <= 1; ++dy) {
                                const int yy = y + dy;
                                if (yy < 0 || yy >= s) continue;
                                for (int dx = -1; dx <= 1; ++dx) {
                                    const int xx = x + dx;
                                    if (xx < 0 || xx >= s) continue;
                                    acc += k[(dy + 1) * 3 + (dx + 1)] * src[yy * s + xx];
                                }
                            }
                            dst[static_cast<std::size_t>(y * s + x)] += acc;
                        }
                }
            }
        detail::check_finite(out, c.name);
        return out;
    }

    static std::vector<double> avgpool2(std::span<const double> in, std::size_t B,
                                        std::size_t ch, std::size_t side) {
        const std::size_t half = side / 2;
        std::vector<double> out(B * ch * half * half, 0.0);
        for (std::size_t bc = 0; bc < B * ch; ++bc) {
            const double* src = &in[bc * side * side];
            double* dst = &out[bc * half * half];
            for (std::size_t y = 0; y < half; ++y)
                for (std::size_t x = 0; x < half; ++x)
                    dst[y * half + x] = 0.25 * (src[(2 * y) * side + 2 * x] +
                                                src[(2 * y) * side + 2 * x + 1] +
                                                src[(2 * y + 1) * side + 2 * x] +
                                                src[(2 * y + 1) * side + 2 * x + 1]);
        }
        return out;
    }

    ForwardTrace run_cnn(const LayeredVector& delta, const Tensor& batch, NormStats mode,
                         bool write_running) {
        if (batch.rank() != 4 || batch.shape[1] != cnn.in_ch ||
            batch.shape[2] != cnn.image || batch.shape[3] != cnn.image)
            throw std::invalid_argument("forward: batch shape does not match CNN input");
        const std::size_t B = batch.shape[0];
        ForwardTrace trace;

        std::size_t side = cnn.image;
        std::vector<double> x = conv_forward(conv[0], batch.data, B, side);
        trace.stem_feature = pooled_channels(x, B, conv[0].out_ch, side * side);

        const std::size_t chs[3] = {cnn.c1, cnn.c2, cnn.c3};
        for (std::size_t blk = 0; blk < 3; ++blk) {
            const std::size_t ch = chs[blk];
            apply_norm(norm[blk], x, B, ch * side * side, delta, mode, write_running);
            detail::relu_inplace(x);
            trace.block_features.push_back(pooled_channels(x, B, ch, side * side));
            if (blk < 2) {
                x = avgpool2(x, B, ch, side);
                side /= 2;
                x = conv_forward(conv[blk + 1], x, B, side);
            }
        }
        // GAP head on the last block output
        trace.head_input = pooled_channels(x, B, cnn.c3, side * side);
        std::vector<double> logits = dense_forward(dense[0], trace.head_input.data, B);
        trace.logits = Tensor({B, cnn.classes}, std::move(logits));
        return trace;
    }
};

// Random-weight builders; call freeze(bits) after the weights are final.
inline QuantizedModel make_mlp(const MlpDims& dims, Rng& rng) {
    QuantizedModel m;
    m.arch = Arch::Mlp;
    m.mlp = dims;
    auto init_dense = [&](const std::string& name, std::size_t out, std::size_t in,
                          bool bias) {
        DenseLayer d;
        d.name = name;
        d.weight = sample_gaussian(rng, {out, in}, 0.0, std::sqrt(2.0 / static_cast<double>(in)));
        if (bias) d.bias.assign(out, 0.0);
        m.dense.push_back(std::move(d));
    };
    auto init_norm = [&](const std::string& name, std::size_t ch) {
        NormLayer n;
        n.name = name;
        n.channels = ch;
        n.gamma0.assign(ch, 1.0);
        n.beta0.assign(ch, 0.0);
        n.run_mean.assign(ch, 0.0);
        n.run_var.assign(ch, 1.0);
        m.norm.push_back(std::move(n));
    };
    init_dense("stem", dims.hidden, dims.input_dim, true);
    for (std::size_t b = 0; b < dims.num_blocks; ++b) {
        init_norm("norm" + std::to_string(b + 1), dims.hidden);
        init_dense("dense" + std::to_string(b + 1), dims.hidden, dims.hidden, true);
    }
    if (dims.head_norm) init_norm("norm_head", dims.hidden);
    init_dense("head", dims.classes, dims.hidden, true);
    m.rebuild_schema();
    return m;
}

inline QuantizedModel make_cnn(const CnnDims& dims, Rng& rng) {
    if (dims.image % 4 != 0)
        throw std::invalid_argument("make_cnn: image side must be divisible by 4");
    QuantizedModel m;
    m.arch = Arch::Cnn;
    m.cnn = dims;
    auto init_conv = [&](const std::string& name, std::size_t oc, std::size_t ic) {
        ConvLayer c;
        c.name = name;
        c.in_ch = ic;
        c.out_ch = oc;
        c.weight = sample_gaussian(rng, {oc, ic, 3, 3}, 0.0,
                                   std::sqrt(2.0 / static_cast<double>(ic * 9)));
        m.conv.push_back(std::move(c));
    };
    auto init_norm = [&](const std::string& name, std::size_t ch) {
        NormLayer n;
        n.name = name;
        n.channels = ch;
        n.gamma0.assign(ch, 1.0);
        n.beta0.assign(ch, 0.0);
        n.run_mean.assign(ch, 0.0);
        n.run_var.assign(ch, 1.0);
        m.norm.push_back(std::move(n));
    };
    init_conv("conv1", dims.c1, dims.in_ch);
    init_norm("norm1", dims.c1);
    init_conv("conv2", dims.c2, dims.c1);
    init_norm("norm2", dims.c2);
    init_conv("conv3", dims.c3, dims.c2);
    init_norm("norm3", dims.c3);
    DenseLayer head;
    head.name = "head";
    head.weight = sample_gaussian(rng, {dims.classes, dims.c3}, 0.0,
                                  std::sqrt(1.0 / static_cast<double>(dims.c3)));
    head.bias.assign(dims.classes, 0.0);
    m.dense.push_back(std::move(head));
    m.rebuild_schema();
    return m;
}

// Per-block channel mean/std across the batch axis (population divisor B).
inline FeatureStats batch_feature_stats(const ForwardTrace& trace) {
    FeatureStats stats;
    for (const Tensor& f : trace.block_features) {
        const std::size_t B = f.shape[0], C = f.shape[1];
        if (B < 2)
            throw std::invalid_argument("batch_feature_stats: need batch size >= 2");
        std::vector<double> mean(C, 0.0), sd(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) mean[c] += f.at(b, c);
        for (double& v : mean) v /= static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const double d = f.at(b, c) - mean[c];
                sd[c] += d * d;
            }
        for (double& v : sd) v = std::sqrt(v / static_cast<double>(B));
        stats.mean.push_back(std::move(mean));
        stats.stddev.push_back(std::move(sd));
    }
    return stats;
}

} // namespace zoa
