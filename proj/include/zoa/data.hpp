#pragma once

// Desk-scale datasets, a mini corruption suite with 5 severity levels per
// kind, IDX ubyte ingestion and continual-stream construction.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "zoa/numerics.hpp"

namespace zoa {

struct Dataset {
    std::vector<std::size_t> sample_shape; // {D} or {C, H, W}
    Tensor train_x;
    std::vector<int> train_y;
    Tensor calib_x; // unlabeled in-distribution split
    Tensor test_x;
    std::vector<int> test_y;
    int classes = 0;

    bool image_shaped() const { return sample_shape.size() == 3; }
};

namespace detail {

inline std::vector<std::size_t> batched_shape(std::vector<std::size_t> sample,
                                              std::size_t n) {
    sample.insert(sample.begin(), n);
    return sample;
}

inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
    const std::size_t per = t.numel() / t.shape[0];
    std::vector<std::size_t> shape = t.shape;
    shape[0] = count;
    std::vector<double> data(t.data.begin() + static_cast<std::ptrdiff_t>(begin * per),
                             t.data.begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
    return Tensor(std::move(shape), std::move(data));
}

// bilinear upsample of a coarse grid to side x side
inline std::vector<double> upsample_grid(const std::vector<double>& grid, std::size_t g,
                                         std::size_t side) {
    std::vector<double> out(side * side);
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
            const double fy = static_cast<double>(y) / static_cast<double>(side - 1) *
                              static_cast<double>(g - 1);
            const double fx = static_cast<double>(x) / static_cast<double>(side - 1) *
                              static_cast<double>(g - 1);
            const std::size_t y0 = std::min(static_cast<std::size_t>(fy), g - 2);
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), g - 2);
            const double ty = fy - static_cast<double>(y0);
            const double tx = fx - static_cast<double>(x0);
            const double a = grid[y0 * g + x0], b = grid[y0 * g + x0 + 1];
            const double c = grid[(y0 + 1) * g + x0], d = grid[(y0 + 1) * g + x0 + 1];
            out[y * side + x] =
                (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
        }
    return out;
}

} // namespace detail

struct BlobsParams {
    std::size_t dim = 16;   // flat feature count (ignored when image > 0)
    std::size_t image = 0;  // if > 0: 1 x image x image smooth class templates
    int classes = 4;
    std::size_t train = 512, calib = 32, test = 512;
    double noise_std = 0.5;       // per-sample isotropic noise
    double center_scale = 2.0;    // vector-mode center spread
    double template_amp = 0.25;   // image-mode template contrast around 0.5
    std::size_t template_grid = 8; // coarse grid side before upsampling
};

// Gaussian blobs: vector mode draws class centers in R^dim; image mode uses
// smooth per-class template images (coarse noise, bilinearly upsampled) so
// convolution and the corruption suite both have spatial structure to act on.
inline Dataset make_blobs(const BlobsParams& p, Rng& rng) {
    if (p.classes < 2) throw std::invalid_argument("make_blobs: need >= 2 classes");
    if (p.train == 0 || p.test == 0 || p.calib < 2)
        throw std::invalid_argument("make_blobs: empty split requested");

    Dataset ds;
    std::vector<std::vector<double>> centers;
    std::size_t sample_dim = 0;
    if (p.image > 0) {
        ds.sample_shape = {1, p.image, p.image};
        sample_dim = p.image * p.image;
        const std::size_t g = std::clamp<std::size_t>(p.template_grid, 2, p.image);
        for (int c = 0; c < p.classes; ++c) {
            std::vector<double> grid(g * g);
            for (double& v : grid) v = rng.gaussian(0.0, 1.0);
            std::vector<double> img = detail::upsample_grid(grid, g, p.image);
            double mean = 0.0, var = 0.0;
            for (double v : img) mean += v;
            mean /= static_cast<double>(img.size());
            for (double v : img) var += (v - mean) * (v - mean);
            var /= static_cast<double>(img.size());
            const double inv = var > 0 ? 1.0 / std::sqrt(var) : 0.0;
            for (double& v : img)
                v = std::clamp(0.5 + p.template_amp * (v - mean) * inv, 0.05, 0.95);
            centers.push_back(std::move(img));
        }
    } else {
        ds.sample_shape = {p.dim};
        sample_dim = p.dim;
        for (int c = 0; c < p.classes; ++c) {
            std::vector<double> ctr(p.dim);
            for (double& v : ctr) v = rng.gaussian(0.0, p.center_scale);
            centers.push_back(std::move(ctr));
        }
    }

    auto draw_split = [&](std::size_t n, Tensor& x, std::vector<int>* y) {
        x = Tensor::zeros(detail::batched_shape(ds.sample_shape, n));
        for (std::size_t i = 0; i < n; ++i) {
            const int cls = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(p.classes));
            if (y) y->push_back(cls);
            double* dst = &x.data[i * sample_dim];
            for (std::size_t j = 0; j < sample_dim; ++j) {
                double v = centers[static_cast<std::size_t>(cls)][j] +
                           rng.gaussian(0.0, p.noise_std);
                if (p.image > 0) v = std::clamp(v, 0.0, 1.0);
                dst[j] = v;
            }
        }
    };
    draw_split(p.train, ds.train_x, &ds.train_y);
    draw_split(p.calib, ds.calib_x, nullptr);
    draw_split(p.test, ds.test_x, &ds.test_y);
    ds.classes = p.classes;
    return ds;
}

struct SpiralsParams {
    int classes = 3;
    std::size_t train = 600, calib = 32, test = 600;
    double noise_std = 0.08;
    double turns = 1.25;
};

// Interleaved 2-D spirals; the classic nonlinear toy problem for the MLP.
inline Dataset make_spirals(const SpiralsParams& p, Rng& rng) {
    if (p.classes < 2) throw std::invalid_argument("make_spirals: need >= 2 classes");
    if (p.train == 0 || p.test == 0 || p.calib < 2)
        throw std::invalid_argument("make_spirals: empty split requested");
    Dataset ds;
    ds.sample_shape = {2};
    ds.classes = p.classes;
    auto draw_split = [&](std::size_t n, Tensor& x, std::vector<int>* y) {
        x = Tensor::zeros({n, 2});
        for (std::size_t i = 0; i < n; ++i) {
            const int cls = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(p.classes));
            if (y) y->push_back(cls);
            const double t = 0.15 + 0.85 * rng.next_double();
            const double angle = 2.0 * M_PI * (p.turns * t + static_cast<double>(cls) /
                                                                  static_cast<double>(p.classes));
            x.data[i * 2] = t * std::cos(angle) + rng.gaussian(0.0, p.noise_std);
            x.data[i * 2 + 1] = t * std::sin(angle) + rng.gaussian(0.0, p.noise_std);
        }
    };
    draw_split(p.train, ds.train_x, &ds.train_y);
    draw_split(p.calib, ds.calib_x, nullptr);
    draw_split(p.test, ds.test_x, &ds.test_y);
    return ds;
}

// ---------------------------------------------------------------------------
// IDX ubyte container (big-endian dims, magic 0x00000803 images / 0x00000801
// labels), the simplest widely documented tensor format.

struct IdxData {
    std::uint8_t type_code = 0x08; // unsigned byte
    std::vector<std::size_t> dims;
    std::vector<std::uint8_t> bytes;
};

inline IdxData read_idx(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_idx: cannot open " + path);
    std::array<std::uint8_t, 4> magic{};
    in.read(reinterpret_cast<char*>(magic.data()), 4);
    if (!in || magic[0] != 0 || magic[1] != 0 || magic[2] != 0x08)
        throw std::runtime_error("read_idx: bad magic in " + path);
    const std::size_t rank = magic[3];
    if (rank == 0 || rank > 4) throw std::runtime_error("read_idx: unsupported rank");
    IdxData d;
    d.dims.resize(rank);
    std::size_t total = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        std::array<std::uint8_t, 4> be{};
        in.read(reinterpret_cast<char*>(be.data()), 4);
        if (!in) throw std::runtime_error("read_idx: truncated header");
        d.dims[i] = (std::size_t(be[0]) << 24) | (std::size_t(be[1]) << 16) |
                    (std::size_t(be[2]) << 8) | std::size_t(be[3]);
        total *= d.dims[i];
    }
    d.bytes.resize(total);
    in.read(reinterpret_cast<char*>(d.bytes.data()), static_cast<std::streamsize>(total));
    if (!in) throw std::runtime_error("read_idx: truncated payload in " + path);
    return d;
}

inline void write_idx(const std::string& path, const IdxData& d) {
    if (d.dims.empty() || d.dims.size() > 4)
        throw std::invalid_argument("write_idx: unsupported rank");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_idx: cannot open " + path);
    const std::array<std::uint8_t, 4> magic{0, 0, 0x08,
                                            static_cast<std::uint8_t>(d.dims.size())};
    out.write(reinterpret_cast<const char*>(magic.data()), 4);
    for (std::size_t dim : d.dims) {
        const std::array<std::uint8_t, 4> be{
            static_cast<std::uint8_t>((dim >> 24) & 0xff),
            static_cast<std::uint8_t>((dim >> 16) & 0xff),
            static_cast<std::uint8_t>((dim >> 8) & 0xff),
            static_cast<std::uint8_t>(dim & 0xff)};
        out.write(reinterpret_cast<const char*>(be.data()), 4);
    }
    out.write(reinterpret_cast<const char*>(d.bytes.data()),
              static_cast<std::streamsize>(d.bytes.size()));
    if (!out) throw std::runtime_error("write_idx: write failed");
}

struct IdxPaths {
    std::string train_images, train_labels, test_images, test_labels;
    std::size_t calib = 32;
};

// Loads an IDX image/label pair into [0,1] tensors; the calibration split is
// carved off the end of the training images (and excluded from training).
inline Dataset load_idx_dataset(const IdxPaths& paths) {
    const IdxData ti = read_idx(paths.train_images);
    const IdxData tl = read_idx(paths.train_labels);
    const IdxData si = read_idx(paths.test_images);
    const IdxData sl = read_idx(paths.test_labels);
    if (ti.dims.size() != 3 || si.dims.size() != 3)
        throw std::runtime_error("load_idx_dataset: images must be rank 3");
    if (tl.dims.size() != 1 || sl.dims.size() != 1 || tl.dims[0] != ti.dims[0] ||
        sl.dims[0] != si.dims[0])
        throw std::runtime_error("load_idx_dataset: label count mismatch");
    if (ti.dims[0] <= paths.calib || paths.calib < 2)
        throw std::runtime_error("load_idx_dataset: bad calibration split");

    const std::size_t h = ti.dims[1], w = ti.dims[2];
    auto to_tensor = [&](const IdxData& d, std::size_t begin, std::size_t count) {
        Tensor t = Tensor::zeros({count, 1, h, w});
        for (std::size_t i = 0; i < count * h * w; ++i)
            t.data[i] = static_cast<double>(d.bytes[begin * h * w + i]) / 255.0;
        return t;
    };
    Dataset ds;
    ds.sample_shape = {1, h, w};
    const std::size_t n_train = ti.dims[0] - paths.calib;
    ds.train_x = to_tensor(ti, 0, n_train);
    ds.train_y.assign(tl.bytes.begin(), tl.bytes.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.calib_x = to_tensor(ti, n_train, paths.calib);
    ds.test_x = to_tensor(si, 0, si.dims[0]);
    ds.test_y.assign(sl.bytes.begin(), sl.bytes.end());
    int classes = 0;
    for (int y : ds.train_y) classes = std::max(classes, y + 1);
    for (int y : ds.test_y) classes = std::max(classes, y + 1);
    ds.classes = classes;
    return ds;
}

// ---------------------------------------------------------------------------
// Corruptions. Severity 0 is the identity; parameter tables are monotone in
// severity. Image batches (rank 4) are clamped back to [0,1].

enum class CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    Blur,
    Contrast,
    Brightness,
};

struct Corruption {
    CorruptionKind kind = CorruptionKind::GaussianNoise;
    int severity = 3; // 0..5
};

inline const char* corruption_name(CorruptionKind k) {
    switch (k) {
    case CorruptionKind::GaussianNoise: return "gaussian-noise";
    case CorruptionKind::ShotNoise: return "shot-noise";
    case CorruptionKind::ImpulseNoise: return "impulse-noise";
    case CorruptionKind::Blur: return "blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::Brightness: return "brightness";
    }
    return "?";
}

inline CorruptionKind parse_corruption_kind(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(CorruptionKind::Brightness); ++k)
        if (name == corruption_name(static_cast<CorruptionKind>(k)))
            return static_cast<CorruptionKind>(k);
    throw std::invalid_argument("unknown corruption kind: " + name);
}

namespace severity_tables {
inline constexpr std::array<double, 5> gaussian_std{0.05, 0.10, 0.16, 0.23, 0.32};
inline constexpr std::array<double, 5> shot_photons{50.0, 20.0, 8.0, 4.0, 2.0};
inline constexpr std::array<double, 5> impulse_fraction{0.03, 0.07, 0.12, 0.18, 0.25};
inline constexpr std::array<double, 5> blur_sigma{0.6, 1.1, 1.8, 2.5, 3.2};
inline constexpr std::array<double, 5> contrast_factor{0.50, 0.30, 0.15, 0.10, 0.07};
inline constexpr std::array<double, 5> brightness_shift{0.12, 0.26, 0.42, 0.52, 0.62};
} // namespace severity_tables

namespace detail {

inline std::uint64_t poisson(double lambda, Rng& rng) {
    const double limit = std::exp(-lambda);
    std::uint64_t k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= rng.next_double();
    } while (p > limit);
    return k - 1;
}

inline void require_image(const Tensor& batch, const char* what) {
    if (batch.rank() != 4)
        throw std::invalid_argument(std::string(what) + ": needs an image batch [B,C,H,W]");
}

inline void clamp_unit(Tensor& t) {
    for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
}

inline void gaussian_blur(Tensor& t, double sigma) {
    const std::size_t B = t.shape[0], C = t.shape[1], H = t.shape[2], W = t.shape[3];
    const int radius = static_cast<int>(std::ceil(2.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] =
            std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (double& k : kernel) k /= sum;
    std::vector<double> tmp(H * W);
    const int hi = static_cast<int>(H), wi = static_cast<int>(W);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        double* img = &t.data[bc * H * W];
        // horizontal, clamp-to-edge
        for (int y = 0; y < hi; ++y)
            for (int x = 0; x < wi; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int xx = std::clamp(x + i, 0, wi - 1);
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           img[y * wi + xx];
                }
                tmp[static_cast<std::size_t>(y * wi + x)] = acc;
            }
        // vertical
        for (int y = 0; y < hi; ++y)
            for (int x = 0; x < wi; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i) {
                    const int yy = std::clamp(y + i, 0, hi - 1);
                    acc += kernel[static_cast<std::size_t>(i + radius)] *
                           tmp[static_cast<std::size_t>(yy * wi + x)];
                }
                img[y * wi + x] = acc;
            }
    }
}

} // namespace detail

inline Tensor corrupt(const Tensor& batch, const Corruption& corr, Rng& rng) {
    if (corr.severity < 0 || corr.severity > 5)
        throw std::invalid_argument("corrupt: severity must be in 0..5");
    Tensor out = batch;
    if (corr.severity == 0) return out;
    const std::size_t si = static_cast<std::size_t>(corr.severity - 1);
    const bool image = batch.rank() == 4;

    switch (corr.kind) {
    case CorruptionKind::GaussianNoise: {
        const double sd = severity_tables::gaussian_std[si];
        for (double& v : out.data) v += rng.gaussian(0.0, sd);
        break;
    }
    case CorruptionKind::ShotNoise: {
        detail::require_image(batch, "shot-noise");
        const double photons = severity_tables::shot_photons[si];
        for (double& v : out.data) {
            const double lam = std::clamp(v, 0.0, 1.0) * photons;
            v = static_cast<double>(detail::poisson(lam, rng)) / photons;
        }
        break;
    }
    case CorruptionKind::ImpulseNoise: {
        detail::require_image(batch, "impulse-noise");
        const double frac = severity_tables::impulse_fraction[si];
        for (double& v : out.data)
            if (rng.next_double() < frac) v = (rng.next_u64() & 1u) ? 1.0 : 0.0;
        break;
    }
    case CorruptionKind::Blur:
        detail::require_image(batch, "blur");
        detail::gaussian_blur(out, severity_tables::blur_sigma[si]);
        break;
    case CorruptionKind::Contrast: {
        const double f = severity_tables::contrast_factor[si];
        const std::size_t per = out.numel() / out.shape[0];
        for (std::size_t b = 0; b < out.shape[0]; ++b) {
            double* p = &out.data[b * per];
            double mean = 0.0;
            for (std::size_t i = 0; i < per; ++i) mean += p[i];
            mean /= static_cast<double>(per);
            for (std::size_t i = 0; i < per; ++i) p[i] = (p[i] - mean) * f + mean;
        }
        break;
    }
    case CorruptionKind::Brightness: {
        const double shift = severity_tables::brightness_shift[si];
        for (double& v : out.data) v += shift;
        break;
    }
    }
    if (image) detail::clamp_unit(out);
    return out;
}

// ---------------------------------------------------------------------------
// Continual stream: (corruption, severity) episodes repeated over rounds.

struct Episode {
    Corruption corruption;
    std::size_t batches = 3;
};

struct StreamPlan {
    std::vector<Episode> episodes;
    std::size_t rounds = 10;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const {
        if (episodes.empty()) throw std::invalid_argument("StreamPlan: no episodes");
        if (batch_size < 2) throw std::invalid_argument("StreamPlan: batch size must be >= 2");
        if (rounds == 0) throw std::invalid_argument("StreamPlan: rounds must be >= 1");
        for (const auto& e : episodes)
            if (e.batches == 0)
                throw std::invalid_argument("StreamPlan: episode with zero batches");
    }
};

struct StreamBatch {
    Tensor x;
    std::vector<int> labels; // hidden from the engine, used for scoring only
    std::size_t round = 0, episode = 0;
    std::string domain;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    h = (h ^ (a + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    h *= 0xff51afd7ed558ccdULL;
    h = (h ^ (b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    h *= 0xc4ceb9fe1a85ec53ULL;
    return h ^ (h >> 33);
}

// Deterministic per plan seed: batch composition and corruption noise both
// derive from (seed, round, episode).
inline std::vector<StreamBatch> build_stream(const StreamPlan& plan, const Dataset& ds) {
    plan.validate();
    const std::size_t pool = ds.test_x.shape.empty() ? 0 : ds.test_x.shape[0];
    if (pool < plan.batch_size)
        throw std::invalid_argument("build_stream: test pool smaller than one batch");
    const std::size_t per = ds.test_x.numel() / pool;

    std::vector<StreamBatch> stream;
    for (std::size_t r = 0; r < plan.rounds; ++r)
        for (std::size_t e = 0; e < plan.episodes.size(); ++e) {
            const Episode& ep = plan.episodes[e];
            Rng rng(mix_seed(plan.seed, r, e));
            for (std::size_t bi = 0; bi < ep.batches; ++bi) {
                StreamBatch sb;
                sb.round = r;
                sb.episode = e;
                sb.domain = std::string(corruption_name(ep.corruption.kind)) + "/" +
                            std::to_string(ep.corruption.severity);
                Tensor x = Tensor::zeros(detail::batched_shape(ds.sample_shape, plan.batch_size));
                for (std::size_t i = 0; i < plan.batch_size; ++i) {
                    const std::size_t idx = rng.next_u64() % pool;
                    sb.labels.push_back(ds.test_y[idx]);
                    std::copy_n(&ds.test_x.data[idx * per], per, &x.data[i * per]);
                }
                sb.x = corrupt(x, ep.corruption, rng);
                stream.push_back(std::move(sb));
            }
        }
    return stream;
}

// The six-kind default plan used by the shipped scenario.
inline StreamPlan default_stream_plan(int severity = 3, std::size_t batches_per_episode = 3,
                                      std::size_t rounds = 10, std::size_t batch_size = 64,
                                      std::uint64_t seed = 0) {
    StreamPlan plan;
    plan.rounds = rounds;
    plan.batch_size = batch_size;
    plan.seed = seed;
    for (int k = 0; k <= static_cast<int>(CorruptionKind::Brightness); ++k)
        plan.episodes.push_back(
            {Corruption{static_cast<CorruptionKind>(k), severity}, batches_per_episode});
    return plan;
}

} // namespace zoa
