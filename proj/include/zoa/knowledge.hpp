#pragma once

// The domain-knowledge store: a bounded sequence of domain vectors combined
// by softmax-weighted coefficients. Preservation keeps the aggregated offset
// unchanged by re-initializing theta-tilde, new coefficients are sized so the
// re-initialized theta-tilde is small, and capacity is enforced by evicting
// the older member of the most similar pair.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "zoa/layered.hpp"
#include "zoa/numerics.hpp"

namespace zoa {

struct DomainVector {
    LayeredVector delta;
    std::uint64_t creation_index = 0;
};

class KnowledgeBase {
public:
    KnowledgeBase() = default;
    KnowledgeBase(SchemaPtr schema, std::size_t capacity = 32, double temperature = 10.0,
                  double w_max = 0.01)
        : schema_(std::move(schema)), capacity_(capacity), temperature_(temperature),
          w_max_(w_max) {
        if (capacity_ == 0) throw std::invalid_argument("KnowledgeBase: capacity must be > 0");
        if (!(temperature_ > 0.0))
            throw std::invalid_argument("KnowledgeBase: temperature must be > 0");
    }

    std::size_t size() const { return vectors_.size(); }
    std::size_t capacity() const { return capacity_; }
    double temperature() const { return temperature_; }
    double w_max() const { return w_max_; }
    SchemaPtr schema_ptr() const { return schema_; }

    const std::vector<DomainVector>& vectors() const { return vectors_; }
    std::span<double> logits() { return logits_; }
    std::span<const double> logits() const { return logits_; }
    std::uint64_t next_creation_index() const { return next_creation_; }

    // alpha = softmax(logits * T); empty when the store is empty
    std::vector<double> coefficients() const {
        if (vectors_.empty()) return {};
        return softmax_with_temperature(logits_, temperature_);
    }

    std::vector<double> coefficients_perturbed(std::span<const double> nu, double c) const {
        if (vectors_.empty()) return {};
        std::vector<double> b(logits_.begin(), logits_.end());
        for (std::size_t i = 0; i < b.size(); ++i) b[i] += c * nu[i];
        return softmax_with_temperature(b, temperature_);
    }

    // sum_j alpha_j Delta_j + theta_tilde: the total offset applied on top of
    // the frozen source parameters.
    LayeredVector aggregate(const LayeredVector& theta_tilde) const {
        return aggregate_with(coefficients(), theta_tilde);
    }

    LayeredVector aggregate_with(std::span<const double> alpha,
                                 const LayeredVector& theta_tilde) const {
        LayeredVector out = theta_tilde;
        for (std::size_t j = 0; j < vectors_.size(); ++j) {
            theta_tilde.check_schema(vectors_[j].delta, "KnowledgeBase::aggregate");
            out.axpy(alpha[j], vectors_[j].delta);
        }
        return out;
    }

    // New pre-softmax coefficient for a vector about to be preserved:
    //   s = max(1, m / w_max), with m the largest per-layer mean |theta~|;
    //   beta_t * T = ln((s - 1) * sum_j exp(beta_j * T)).
    // s == 1 yields the -inf sentinel, i.e. the new coefficient is exactly 0.
    double init_new_logit(const LayeredVector& theta_tilde) const {
        const double m = theta_tilde.max_layer_mean_abs();
        const double s = std::max(1.0, m / w_max_);
        if (s <= 1.0) return kNegInf;
        const double lse = log_sum_exp_scaled(logits_, temperature_);
        if (lse == kNegInf) return kNegInf; // empty store: caller decides
        return (std::log(s - 1.0) + lse) / temperature_;
    }

    struct PreserveResult {
        double new_logit = 0.0;
        double alpha_t = 0.0;        // coefficient of the preserved vector
        std::uint64_t creation_index = 0;
    };

    // Append the current aggregated offset as a new domain vector and
    // re-initialize theta_tilde so the offset is unchanged:
    //   theta~' = theta~ - (offset_after - offset_before).
    PreserveResult preserve(LayeredVector& theta_tilde) {
        const LayeredVector before = aggregate(theta_tilde);
        double logit = init_new_logit(theta_tilde);
        if (vectors_.empty() && logit == kNegInf)
            logit = 0.0; // softmax over a singleton is 1 for any finite logit
        PreserveResult res;
        res.new_logit = logit;
        res.creation_index = push(before, logit);
        if (logit != kNegInf) {
            // a zero-coefficient entry leaves the other weights bit-identical,
            // so the correction is skipped to keep theta-tilde untouched
            const LayeredVector after = aggregate(theta_tilde);
            theta_tilde -= after;
            theta_tilde += before;
        }
        res.alpha_t = coefficients().back();
        return res;
    }

    std::uint64_t push(LayeredVector delta, double logit) {
        if (schema_ && !(delta.schema() == *schema_))
            throw std::invalid_argument("KnowledgeBase::push: schema mismatch");
        extend_similarity_for(delta);
        const std::uint64_t idx = next_creation_++;
        vectors_.push_back({std::move(delta), idx});
        logits_.push_back(logit);
        return idx;
    }

    // Exact restore path for deserialization: keeps the stored creation index.
    void restore_vector(LayeredVector delta, double logit, std::uint64_t creation_index) {
        extend_similarity_for(delta);
        vectors_.push_back({std::move(delta), creation_index});
        logits_.push_back(logit);
        next_creation_ = std::max(next_creation_, creation_index + 1);
    }

    void set_next_creation_index(std::uint64_t v) {
        next_creation_ = std::max(next_creation_, v);
    }

    struct SimilarPair {
        std::size_t i = 0, j = 0; // positions, i < j
        double value = 0.0;
    };

    // Most similar pair from the precomputed table; ties resolve to the
    // lexicographically smallest position pair.
    SimilarPair most_similar_pair() const {
        if (vectors_.size() < 2)
            throw std::logic_error("most_similar_pair: need at least 2 vectors");
        SimilarPair best{0, 1, sim_at(0, 1)};
        for (std::size_t i = 0; i < vectors_.size(); ++i)
            for (std::size_t j = i + 1; j < vectors_.size(); ++j) {
                const double v = sim_at(i, j);
                if (v > best.value) best = {i, j, v};
            }
        return best;
    }

    // Remove the position `pos` vector (with its logit); returns creation idx.
    std::uint64_t erase(std::size_t pos) {
        if (pos >= vectors_.size()) throw std::out_of_range("KnowledgeBase::erase");
        const std::uint64_t idx = vectors_[pos].creation_index;
        vectors_.erase(vectors_.begin() + static_cast<std::ptrdiff_t>(pos));
        logits_.erase(logits_.begin() + static_cast<std::ptrdiff_t>(pos));
        sim_.erase(sim_.begin() + static_cast<std::ptrdiff_t>(pos));
        for (auto& row : sim_)
            if (pos < row.size()) row.erase(row.begin() + static_cast<std::ptrdiff_t>(pos));
        return idx;
    }

    struct Eviction {
        std::size_t position = 0;
        std::uint64_t creation_index = 0;
        SimilarPair pair;
    };

    // While over capacity: drop the member of the most similar pair with the
    // smaller creation index ("most outdated").
    std::vector<Eviction> evict_if_full() {
        std::vector<Eviction> out;
        while (vectors_.size() > capacity_) {
            const SimilarPair pair = most_similar_pair();
            const std::size_t victim =
                vectors_[pair.i].creation_index < vectors_[pair.j].creation_index ? pair.i
                                                                                  : pair.j;
            Eviction ev;
            ev.position = victim;
            ev.pair = pair;
            ev.creation_index = erase(victim);
            out.push_back(ev);
        }
        return out;
    }

    double similarity(std::size_t i, std::size_t j) const { return sim_at(i, j); }

    void clear() {
        vectors_.clear();
        logits_.clear();
        sim_.clear();
    }

private:
    // sim_[j][i] for i < j
    double sim_at(std::size_t i, std::size_t j) const {
        if (i > j) std::swap(i, j);
        return sim_[j][i];
    }

    void extend_similarity_for(const LayeredVector& delta) {
        std::vector<double> row(vectors_.size());
        for (std::size_t i = 0; i < vectors_.size(); ++i)
            row[i] = layered_cosine(vectors_[i].delta, delta);
        sim_.push_back(std::move(row));
    }

    SchemaPtr schema_;
    std::size_t capacity_ = 32;
    double temperature_ = 10.0;
    double w_max_ = 0.01;
    std::vector<DomainVector> vectors_;
    std::vector<double> logits_;
    std::vector<std::vector<double>> sim_;
    std::uint64_t next_creation_ = 0;
};

} // namespace zoa
