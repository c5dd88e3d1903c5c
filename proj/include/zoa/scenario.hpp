#pragma once

// The shipped desk-scale scenario: a small quantized CNN on smooth-template
// image blobs, continually adapted through six corruption kinds at severity 3
// over ten rounds. configs/desk_scenario.json mirrors these values for the
// command-line tool.

#include "zoa/data.hpp"
#include "zoa/engine.hpp"
#include "zoa/fit.hpp"

namespace zoa::desk_scenario {

inline BlobsParams dataset_params() {
    BlobsParams p;
    p.image = 16;
    p.classes = 8;
    p.train = 3072;
    p.calib = 32;
    p.test = 2048;
    p.noise_std = 0.20;
    p.template_amp = 0.15;
    p.template_grid = 8;
    return p;
}

inline FitConfig fit_config() {
    FitConfig fc;
    fc.arch = Arch::Cnn;
    fc.cnn.c1 = 8;
    fc.cnn.c2 = 16;
    fc.cnn.c3 = 32;
    fc.bits = 8;
    fc.head_logit_scale = 6.0;   // sharper softmax; argmax unchanged
    fc.adapt_norms = {"norm1"};  // adapt the stem norm only (16 parameters)
    return fc;
}

// Desk-scale adaptation rates; the 16-parameter space needs larger steps
// than the published full-scale settings.
inline AdaptConfig adapt_config(AdaptMode mode, std::uint64_t seed) {
    AdaptConfig cfg;
    cfg.mode = mode;
    cfg.c_theta = 0.05;
    cfg.c_alpha = 0.05;
    cfg.lr_theta = 0.04;
    cfg.lr_alpha = 0.03;
    cfg.lambda = 1.0; // conv-architecture trade-off
    cfg.shift.threshold = 0.3;
    cfg.seed = seed;
    return cfg;
}

inline StreamPlan stream_plan(std::uint64_t seed, std::size_t rounds = 10) {
    return default_stream_plan(/*severity=*/3, /*batches_per_episode=*/12, rounds,
                               /*batch_size=*/64, seed);
}

} // namespace zoa::desk_scenario
