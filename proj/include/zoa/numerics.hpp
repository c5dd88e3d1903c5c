#pragma once

// Dense row-major tensors, a reproducible RNG and the handful of numeric
// primitives everything else is built on. All arithmetic is 64-bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zoa {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t dim(std::size_t i) const {
        if (i >= shape.size()) throw std::out_of_range("Tensor::dim");
        return shape[i];
    }

    // 2-D accessors (row-major)
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    bool all_finite() const {
        return std::all_of(data.begin(), data.end(),
                           [](double v) { return std::isfinite(v); });
    }
};

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul: operands must be 2-D");
    if (a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul: inner dimensions mismatch (" +
                                    std::to_string(a.shape[1]) + " vs " +
                                    std::to_string(b.shape[0]) + ")");
    const std::size_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
    Tensor out = Tensor::zeros({m, p});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a.data[i * k + l];
            for (std::size_t j = 0; j < p; ++j)
                out.data[i * p + j] += av * b.data[l * p + j];
        }
    return out;
}

// xoshiro256++ seeded through splitmix64. Pure integer state, so the u64
// stream is identical on every platform for a given seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    double gaussian(double mean, double stddev) {
        if (stddev < 0.0) throw std::invalid_argument("gaussian: negative stddev");
        if (stddev == 0.0) return mean;
        double u1 = next_double();
        const double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53; // log(0) guard
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    // Derive an independent stream; the parent advances by one draw.
    Rng split() { return Rng(next_u64()); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t state_[4];
};

inline Tensor sample_gaussian(Rng& rng, std::vector<std::size_t> shape,
                              double mean, double stddev) {
    if (stddev < 0.0) throw std::invalid_argument("sample_gaussian: negative stddev");
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.gaussian(mean, stddev);
    return t;
}

// softmax(logits * temperature). -inf logits are allowed and map to exactly
// zero; computed with max-subtraction so temperature 10 stays stable.
inline std::vector<double> softmax_with_temperature(std::span<const double> logits,
                                                    double temperature) {
    if (temperature <= 0.0)
        throw std::invalid_argument("softmax: temperature must be positive");
    if (logits.empty())
        throw std::invalid_argument("softmax: empty logits");
    double m = kNegInf;
    for (double l : logits) {
        if (std::isnan(l) || l == std::numeric_limits<double>::infinity())
            throw std::invalid_argument("softmax: logits must be finite or -inf");
        m = std::max(m, l * temperature);
    }
    if (m == kNegInf)
        throw std::invalid_argument("softmax: all logits are -inf");
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double z = logits[i] * temperature;
        out[i] = (z == kNegInf) ? 0.0 : std::exp(z - m);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

// log(sum_j exp(logits_j * temperature)), same -inf conventions as above.
inline double log_sum_exp_scaled(std::span<const double> logits, double temperature) {
    double m = kNegInf;
    for (double l : logits) m = std::max(m, l * temperature);
    if (m == kNegInf) return kNegInf;
    double sum = 0.0;
    for (double l : logits) {
        const double z = l * temperature;
        if (z != kNegInf) sum += std::exp(z - m);
    }
    return m + std::log(sum);
}

} // namespace zoa
