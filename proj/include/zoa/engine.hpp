#pragma once

// The adaptation loop: two forward passes per batch (one clean pass that
// yields the predictions and the loss, one jointly perturbed pass), a joint
// SPSA gradient, SGD on theta-tilde and a decoupled-adaptive update on the
// aggregation logits, then shift detection with knowledge preservation and
// capacity eviction. Any error inside a batch rolls the state back to the
// pre-batch snapshot.

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "zoa/data.hpp"
#include "zoa/fit.hpp"
#include "zoa/knowledge.hpp"
#include "zoa/model.hpp"
#include "zoa/objective.hpp"
#include "zoa/shift.hpp"
#include "zoa/zo.hpp"

namespace zoa {

enum class AdaptMode { Zoa, ZoaNoDrl, Source, BnAdapt };

inline const char* adapt_mode_name(AdaptMode m) {
    switch (m) {
    case AdaptMode::Zoa: return "zoa";
    case AdaptMode::ZoaNoDrl: return "zoa-no-drl";
    case AdaptMode::Source: return "source";
    case AdaptMode::BnAdapt: return "bn-adapt";
    }
    return "?";
}

inline AdaptMode parse_adapt_mode(const std::string& name) {
    for (int m = 0; m <= static_cast<int>(AdaptMode::BnAdapt); ++m)
        if (name == adapt_mode_name(static_cast<AdaptMode>(m)))
            return static_cast<AdaptMode>(m);
    throw std::invalid_argument("unknown mode: " + name);
}

struct AdaptConfig {
    AdaptMode mode = AdaptMode::Zoa;
    double c_theta = 0.02; // perturbation scales
    double c_alpha = 0.05;
    PerturbDist dist_theta = PerturbDist::SegmentedUniform;
    PerturbDist dist_alpha = PerturbDist::SegmentedUniform;
    double lr_theta = 0.0005;
    double lr_alpha = 0.01;
    double wd_theta = 0.4;
    double wd_alpha = 0.1;
    double lambda = 1.0;       // 30 for the dense architecture, 1 for conv
    std::size_t capacity = 32; // N
    double temperature = 10.0; // T
    double w_max = 0.01;
    ShiftConfig shift{};
    double profile_ema = 0.8;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(c_theta > 0.0 && c_alpha > 0.0))
            throw std::invalid_argument("AdaptConfig: perturbation scales must be > 0");
        if (!(lr_theta > 0.0 && lr_alpha > 0.0))
            throw std::invalid_argument("AdaptConfig: learning rates must be > 0");
        if (!(lambda >= 0.0)) throw std::invalid_argument("AdaptConfig: lambda must be >= 0");
        if (capacity == 0) throw std::invalid_argument("AdaptConfig: capacity must be > 0");
        if (!(temperature > 0.0))
            throw std::invalid_argument("AdaptConfig: temperature must be > 0");
        if (!(profile_ema > 0.0 && profile_ema <= 1.0))
            throw std::invalid_argument("AdaptConfig: profile ema must be in (0,1]");
        shift.validate();
    }
};

struct BatchOutput {
    std::vector<int> predictions;
    double loss = 0.0;
    double distance = 0.0;
    bool shifted = false;
    std::size_t kb_size = 0;
};

class Engine {
public:
    Engine(QuantizedModel& model, FeatureStats source_stats, AdaptConfig cfg)
        : model_(model), source_stats_(std::move(source_stats)), cfg_(cfg),
          theta_(model.schema), rng_(cfg.seed),
          opt_theta_(UpdateRule::sgd(cfg.lr_theta, cfg.wd_theta)),
          opt_alpha_(UpdateRule::adamw(cfg.lr_alpha, cfg.wd_alpha)) {
        cfg_.validate();
        profile_.ema = cfg_.profile_ema;
        init_kb();
    }

    const AdaptConfig& config() const { return cfg_; }
    const KnowledgeBase& kb() const { return kb_; }
    const LayeredVector& theta_tilde() const { return theta_; }
    const DomainProfile& profile() const { return profile_; }
    std::uint64_t forwards_used() const { return fp_count_; }
    std::uint64_t batches_adapted() const { return batches_adapted_; }

    // Test instrumentation: called with the pass index (1 or 2) before each
    // forward of an adapted batch.
    std::function<void(int)> forward_hook;

    LayeredVector current_offset() const { return kb_.aggregate(theta_); }

    // Drop all adaptation state (the per-domain reset protocol).
    void reset_adaptation() {
        theta_ = LayeredVector(model_.schema);
        opt_theta_.reset();
        opt_alpha_.reset();
        profile_ = DomainProfile{};
        profile_.ema = cfg_.profile_ema;
        init_kb();
    }

    BatchOutput adapt_batch(const Tensor& batch) {
        if (batch.shape.empty() || batch.shape[0] < 2)
            throw std::invalid_argument("adapt_batch: need batch size >= 2");
        if (cfg_.mode == AdaptMode::Source || cfg_.mode == AdaptMode::BnAdapt)
            return passive_batch(batch);

        const Snapshot snap = save();
        try {
            return adapted_batch(batch);
        } catch (...) {
            restore(snap);
            throw;
        }
    }

private:
    struct Snapshot {
        LayeredVector theta;
        KnowledgeBase kb;
        UpdateRule opt_theta, opt_alpha;
        DomainProfile profile;
        std::uint64_t fp_count = 0, batches_adapted = 0;
    };

    void init_kb() {
        kb_ = KnowledgeBase(model_.schema, cfg_.capacity, cfg_.temperature, cfg_.w_max);
        // the store starts as {0} with a zero logit; the no-drl ablation runs
        // with no store at all
        if (cfg_.mode == AdaptMode::Zoa) kb_.push(LayeredVector(model_.schema), 0.0);
    }

    Snapshot save() const {
        return {theta_, kb_, opt_theta_, opt_alpha_, profile_, fp_count_, batches_adapted_};
    }

    void restore(const Snapshot& s) {
        theta_ = s.theta;
        kb_ = s.kb;
        opt_theta_ = s.opt_theta;
        opt_alpha_ = s.opt_alpha;
        profile_ = s.profile;
        fp_count_ = s.fp_count;
        batches_adapted_ = s.batches_adapted;
    }

    BatchOutput passive_batch(const Tensor& batch) {
        const NormStats stats =
            cfg_.mode == AdaptMode::Source ? NormStats::Running : NormStats::Batch;
        const ForwardTrace trace = model_.forward(model_.zero_delta(), batch, stats);
        ++fp_count_;
        BatchOutput out;
        out.predictions = predict_labels(trace.logits);
        out.loss = total_loss(trace, source_stats_, {cfg_.lambda});
        return out;
    }

    BatchOutput adapted_batch(const Tensor& batch) {
        const ObjectiveConfig obj{cfg_.lambda};

        // First forward pass: predictions and the unperturbed loss.
        if (forward_hook) forward_hook(1);
        const ForwardTrace trace1 = model_.forward(kb_.aggregate(theta_), batch);
        ++fp_count_;
        const double loss1 = total_loss(trace1, source_stats_, obj);
        BatchOutput out;
        out.predictions = predict_labels(trace1.logits);
        out.loss = loss1;
        const StatProfile phi_t = batch_profile(trace1);

        // Joint perturbation of theta-tilde and the aggregation logits.
        const PerturbConfig pc_theta{cfg_.c_theta, 1, cfg_.dist_theta};
        const PerturbConfig pc_alpha{cfg_.c_alpha, 1, cfg_.dist_alpha};
        const LayeredVector eps = sample_perturbation(pc_theta, model_.schema, rng_);
        const std::vector<double> nu =
            kb_.size() > 0 ? sample_perturbation(pc_alpha, kb_.size(), rng_)
                           : std::vector<double>{};

        LayeredVector theta_p = theta_;
        theta_p.axpy(cfg_.c_theta, eps);
        LayeredVector offset2 =
            kb_.size() > 0
                ? kb_.aggregate_with(kb_.coefficients_perturbed(nu, cfg_.c_alpha), theta_p)
                : theta_p;

        // Second forward pass at the perturbed parameters.
        if (forward_hook) forward_hook(2);
        const ForwardTrace trace2 = model_.forward(offset2, batch);
        ++fp_count_;
        const double loss2 = total_loss(trace2, source_stats_, obj);

        const JointGradient grad =
            joint_spsa_gradient(loss1, loss2, cfg_.c_theta, cfg_.c_alpha, eps, nu);
        opt_theta_.apply(theta_, grad.theta);
        if (!nu.empty()) opt_alpha_.apply(kb_.logits(), grad.alpha);

        // Shift handling on the pass-1 stem statistics.
        const ShiftDecision dec = detect(profile_, phi_t, cfg_.shift);
        out.distance = dec.distance;
        out.shifted = dec.shifted;
        if (cfg_.mode == AdaptMode::Zoa && dec.shifted) {
            kb_.preserve(theta_);
            opt_alpha_.notify_append();
            for (const auto& ev : kb_.evict_if_full()) opt_alpha_.notify_erase(ev.position);
            profile_.reset_to(phi_t);
        } else {
            profile_.update(phi_t);
        }

        ++batches_adapted_;
        out.kb_size = kb_.size();
        return out;
    }

    QuantizedModel& model_;
    FeatureStats source_stats_;
    AdaptConfig cfg_;
    LayeredVector theta_;
    KnowledgeBase kb_;
    DomainProfile profile_;
    Rng rng_;
    UpdateRule opt_theta_, opt_alpha_;
    std::uint64_t fp_count_ = 0;
    std::uint64_t batches_adapted_ = 0;
};

struct BatchRecord {
    std::size_t round = 0;
    std::string domain;
    std::size_t batch_index = 0; // global position in the stream
    double accuracy = 0.0;
    double loss = 0.0;
    double distance = 0.0;
    bool shifted = false;
    std::size_t kb_size = 0;
    std::uint64_t fp_count = 0; // cumulative engine forwards
};

struct ResultsLog {
    std::vector<BatchRecord> rows;

    double mean_accuracy() const {
        if (rows.empty()) return 0.0;
        double s = 0.0;
        for (const auto& r : rows) s += r.accuracy;
        return s / static_cast<double>(rows.size());
    }

    std::map<std::size_t, double> round_accuracy() const {
        std::map<std::size_t, double> sum;
        std::map<std::size_t, std::size_t> cnt;
        for (const auto& r : rows) {
            sum[r.round] += r.accuracy;
            ++cnt[r.round];
        }
        for (auto& [k, v] : sum) v /= static_cast<double>(cnt[k]);
        return sum;
    }

    std::map<std::string, double> domain_accuracy() const {
        std::map<std::string, double> sum;
        std::map<std::string, std::size_t> cnt;
        for (const auto& r : rows) {
            sum[r.domain] += r.accuracy;
            ++cnt[r.domain];
        }
        for (auto& [k, v] : sum) v /= static_cast<double>(cnt[k]);
        return sum;
    }

    void write_csv(std::ostream& os) const {
        os << "round,domain,batch,accuracy,loss,distance,shifted,kb_size,fp_count\n";
        for (const auto& r : rows)
            os << r.round << ',' << r.domain << ',' << r.batch_index << ',' << r.accuracy
               << ',' << r.loss << ',' << r.distance << ',' << (r.shifted ? 1 : 0) << ','
               << r.kb_size << ',' << r.fp_count << '\n';
    }
};

// Drive the engine over a prebuilt stream. With reset_per_domain the full
// adaptation state is dropped at every episode boundary.
inline ResultsLog run_stream(Engine& engine, const std::vector<StreamBatch>& stream,
                             bool reset_per_domain = false) {
    ResultsLog log;
    std::size_t last_episode = SIZE_MAX;
    std::size_t last_round = SIZE_MAX;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        const StreamBatch& sb = stream[i];
        if (reset_per_domain && !(sb.episode == last_episode && sb.round == last_round) &&
            i > 0)
            engine.reset_adaptation();
        last_episode = sb.episode;
        last_round = sb.round;

        const BatchOutput out = engine.adapt_batch(sb.x);
        std::size_t hits = 0;
        for (std::size_t j = 0; j < sb.labels.size(); ++j)
            if (out.predictions[j] == sb.labels[j]) ++hits;

        BatchRecord rec;
        rec.round = sb.round;
        rec.domain = sb.domain;
        rec.batch_index = i;
        rec.accuracy = static_cast<double>(hits) / static_cast<double>(sb.labels.size());
        rec.loss = out.loss;
        rec.distance = out.distance;
        rec.shifted = out.shifted;
        rec.kb_size = out.kb_size;
        rec.fp_count = engine.forwards_used();
        log.rows.push_back(std::move(rec));
    }
    return log;
}

} // namespace zoa
