#pragma once

// LayeredVector: the flat per-layer parameter deltas that adaptation moves
// around. A ParamSchema pins the layer ids and sizes; every vector carries a
// shared pointer to its schema and a single flat buffer addressed through
// per-layer offsets.

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zoa {

struct ParamSchema {
    struct Layer {
        std::string id;
        std::size_t size = 0;
    };
    std::vector<Layer> layers;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.size;
        return n;
    }

    std::size_t offset(std::size_t layer_index) const {
        std::size_t off = 0;
        for (std::size_t i = 0; i < layer_index; ++i) off += layers[i].size;
        return off;
    }

    bool operator==(const ParamSchema& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].id != other.layers[i].id ||
                layers[i].size != other.layers[i].size)
                return false;
        return true;
    }
};

using SchemaPtr = std::shared_ptr<const ParamSchema>;

class LayeredVector {
public:
    LayeredVector() = default;
    explicit LayeredVector(SchemaPtr schema)
        : schema_(std::move(schema)), flat_(schema_->total(), 0.0) {}

    static LayeredVector zeros(SchemaPtr schema) { return LayeredVector(std::move(schema)); }

    const ParamSchema& schema() const { return *schema_; }
    SchemaPtr schema_ptr() const { return schema_; }
    bool empty() const { return !schema_; }

    std::size_t size() const { return flat_.size(); }
    std::span<double> flat() { return flat_; }
    std::span<const double> flat() const { return flat_; }
    double& operator[](std::size_t i) { return flat_[i]; }
    double operator[](std::size_t i) const { return flat_[i]; }

    std::size_t num_layers() const { return schema_ ? schema_->layers.size() : 0; }

    std::span<double> layer(std::size_t i) {
        return std::span<double>(flat_).subspan(schema_->offset(i), schema_->layers[i].size);
    }
    std::span<const double> layer(std::size_t i) const {
        return std::span<const double>(flat_).subspan(schema_->offset(i), schema_->layers[i].size);
    }

    bool same_schema(const LayeredVector& other) const {
        if (schema_ == other.schema_) return true;
        if (!schema_ || !other.schema_) return false;
        return *schema_ == *other.schema_;
    }

    void check_schema(const LayeredVector& other, const char* where) const {
        if (!same_schema(other))
            throw std::invalid_argument(std::string(where) + ": schema mismatch");
    }

    LayeredVector& operator+=(const LayeredVector& other) {
        check_schema(other, "LayeredVector::operator+=");
        for (std::size_t i = 0; i < flat_.size(); ++i) flat_[i] += other.flat_[i];
        return *this;
    }

    LayeredVector& operator-=(const LayeredVector& other) {
        check_schema(other, "LayeredVector::operator-=");
        for (std::size_t i = 0; i < flat_.size(); ++i) flat_[i] -= other.flat_[i];
        return *this;
    }

    LayeredVector& scale(double s) {
        for (double& v : flat_) v *= s;
        return *this;
    }

    // this += s * other
    LayeredVector& axpy(double s, const LayeredVector& other) {
        check_schema(other, "LayeredVector::axpy");
        for (std::size_t i = 0; i < flat_.size(); ++i) flat_[i] += s * other.flat_[i];
        return *this;
    }

    double linf_norm() const {
        double m = 0.0;
        for (double v : flat_) m = std::max(m, std::abs(v));
        return m;
    }

    double layer_mean_abs(std::size_t i) const {
        const auto l = layer(i);
        if (l.empty()) return 0.0;
        double s = 0.0;
        for (double v : l) s += std::abs(v);
        return s / static_cast<double>(l.size());
    }

    // max over layers of the per-layer mean absolute value
    double max_layer_mean_abs() const {
        double m = 0.0;
        for (std::size_t i = 0; i < num_layers(); ++i)
            m = std::max(m, layer_mean_abs(i));
        return m;
    }

    bool all_finite() const {
        for (double v : flat_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    SchemaPtr schema_;
    std::vector<double> flat_;
};

inline LayeredVector operator+(LayeredVector a, const LayeredVector& b) {
    a += b;
    return a;
}

inline LayeredVector operator-(LayeredVector a, const LayeredVector& b) {
    a -= b;
    return a;
}

// Layerwise cosine similarity averaged over layers. A layer where either
// side has zero norm contributes 0.
inline double layered_cosine(const LayeredVector& a, const LayeredVector& b) {
    a.check_schema(b, "layered_cosine");
    const std::size_t n = a.num_layers();
    if (n == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto la = a.layer(i);
        const auto lb = b.layer(i);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < la.size(); ++j) {
            dot += la[j] * lb[j];
            na += la[j] * la[j];
            nb += lb[j] * lb[j];
        }
        if (na > 0.0 && nb > 0.0) total += dot / (std::sqrt(na) * std::sqrt(nb));
    }
    return total / static_cast<double>(n);
}

} // namespace zoa
