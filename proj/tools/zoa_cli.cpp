// Command-line front end: fit a source model, run test-time adaptation over
// a corruption stream, reproduce the quantization-sensitivity experiment,
// and a quick selftest. Configuration comes from an optional JSON file with
// flag overrides; every run prints its fully resolved configuration.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "zoa/zoa.hpp"

using nlohmann::json;
using namespace zoa;

namespace {

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("unknown key '" + key + "' in " + where);
    }
}

struct DatasetConfig {
    std::string kind = "synthetic-blobs";
    BlobsParams blobs;
    SpiralsParams spirals;
    IdxPaths idx;

    static DatasetConfig from_json(const json& j) {
        DatasetConfig c;
        check_keys(j,
                   {"kind", "dim", "image", "classes", "train", "calib", "test",
                    "noise_std", "center_scale", "template_amp", "template_grid",
                    "turns", "train_images", "train_labels", "test_images",
                    "test_labels"},
                   "dataset");
        c.kind = j.value("kind", c.kind);
        c.blobs.dim = j.value("dim", c.blobs.dim);
        c.blobs.image = j.value("image", c.blobs.image);
        c.blobs.classes = j.value("classes", c.blobs.classes);
        c.blobs.train = j.value("train", c.blobs.train);
        c.blobs.calib = j.value("calib", c.blobs.calib);
        c.blobs.test = j.value("test", c.blobs.test);
        c.blobs.noise_std = j.value("noise_std", c.blobs.noise_std);
        c.blobs.center_scale = j.value("center_scale", c.blobs.center_scale);
        c.blobs.template_amp = j.value("template_amp", c.blobs.template_amp);
        c.blobs.template_grid = j.value("template_grid", c.blobs.template_grid);
        c.spirals.classes = c.blobs.classes;
        c.spirals.train = c.blobs.train;
        c.spirals.calib = c.blobs.calib;
        c.spirals.test = c.blobs.test;
        c.spirals.noise_std = j.value("noise_std", c.spirals.noise_std);
        c.spirals.turns = j.value("turns", c.spirals.turns);
        c.idx.train_images = j.value("train_images", std::string{});
        c.idx.train_labels = j.value("train_labels", std::string{});
        c.idx.test_images = j.value("test_images", std::string{});
        c.idx.test_labels = j.value("test_labels", std::string{});
        c.idx.calib = c.blobs.calib;
        return c;
    }

    json to_json() const {
        json j;
        j["kind"] = kind;
        if (kind == "synthetic-spirals") {
            j["classes"] = spirals.classes;
            j["train"] = spirals.train;
            j["calib"] = spirals.calib;
            j["test"] = spirals.test;
            j["noise_std"] = spirals.noise_std;
            j["turns"] = spirals.turns;
        } else if (kind == "idx-images") {
            j["train_images"] = idx.train_images;
            j["train_labels"] = idx.train_labels;
            j["test_images"] = idx.test_images;
            j["test_labels"] = idx.test_labels;
            j["calib"] = idx.calib;
        } else {
            j["dim"] = blobs.dim;
            j["image"] = blobs.image;
            j["classes"] = blobs.classes;
            j["train"] = blobs.train;
            j["calib"] = blobs.calib;
            j["test"] = blobs.test;
            j["noise_std"] = blobs.noise_std;
            j["center_scale"] = blobs.center_scale;
            j["template_amp"] = blobs.template_amp;
            j["template_grid"] = blobs.template_grid;
        }
        return j;
    }

    Dataset build(Rng& rng) const {
        if (kind == "synthetic-blobs") return make_blobs(blobs, rng);
        if (kind == "synthetic-spirals") return make_spirals(spirals, rng);
        if (kind == "idx-images") return load_idx_dataset(idx);
        throw std::invalid_argument("unknown dataset kind: " + kind);
    }
};

struct FitFileConfig {
    FitConfig fit;
    std::string arch = "cnn";

    static FitFileConfig from_json(const json& j) {
        FitFileConfig c;
        check_keys(j,
                   {"arch", "bits", "ridge", "head_logit_scale", "adapt_norms", "hidden",
                    "blocks", "head_norm", "c1", "c2", "c3"},
                   "fit");
        c.arch = j.value("arch", c.arch);
        c.fit.arch = c.arch == "mlp" ? Arch::Mlp : Arch::Cnn;
        c.fit.bits = j.value("bits", c.fit.bits);
        c.fit.ridge = j.value("ridge", c.fit.ridge);
        c.fit.head_logit_scale = j.value("head_logit_scale", c.fit.head_logit_scale);
        if (j.contains("adapt_norms"))
            c.fit.adapt_norms = j["adapt_norms"].get<std::vector<std::string>>();
        c.fit.mlp.hidden = j.value("hidden", c.fit.mlp.hidden);
        c.fit.mlp.num_blocks = j.value("blocks", c.fit.mlp.num_blocks);
        c.fit.mlp.head_norm = j.value("head_norm", c.fit.mlp.head_norm);
        c.fit.cnn.c1 = j.value("c1", c.fit.cnn.c1);
        c.fit.cnn.c2 = j.value("c2", c.fit.cnn.c2);
        c.fit.cnn.c3 = j.value("c3", c.fit.cnn.c3);
        return c;
    }

    json to_json() const {
        json j;
        j["arch"] = arch;
        j["bits"] = fit.bits;
        j["ridge"] = fit.ridge;
        j["head_logit_scale"] = fit.head_logit_scale;
        j["adapt_norms"] = fit.adapt_norms;
        if (fit.arch == Arch::Mlp) {
            j["hidden"] = fit.mlp.hidden;
            j["blocks"] = fit.mlp.num_blocks;
            j["head_norm"] = fit.mlp.head_norm;
        } else {
            j["c1"] = fit.cnn.c1;
            j["c2"] = fit.cnn.c2;
            j["c3"] = fit.cnn.c3;
        }
        return j;
    }
};

PerturbDist parse_dist(const std::string& s) {
    if (s == "rademacher") return PerturbDist::Rademacher;
    if (s == "segmented-uniform") return PerturbDist::SegmentedUniform;
    throw std::invalid_argument("unknown perturbation distribution: " + s);
}

const char* dist_name(PerturbDist d) {
    return d == PerturbDist::Rademacher ? "rademacher" : "segmented-uniform";
}

struct AdaptFileConfig {
    AdaptConfig cfg; // defaults are the published values
    bool lambda_set = false; // otherwise per-architecture: 30 dense, 1 conv

    static AdaptFileConfig from_json(const json& j) {
        AdaptFileConfig c;
        check_keys(j,
                   {"mode", "c_theta", "c_alpha", "lr_theta", "lr_alpha", "wd_theta",
                    "wd_alpha", "lambda", "capacity", "temperature", "w_max", "tau",
                    "kl_variant", "profile_ema", "dist_theta", "dist_alpha"},
                   "adapt");
        c.cfg.mode = parse_adapt_mode(j.value("mode", std::string("zoa")));
        c.cfg.c_theta = j.value("c_theta", c.cfg.c_theta);
        c.cfg.c_alpha = j.value("c_alpha", c.cfg.c_alpha);
        c.cfg.lr_theta = j.value("lr_theta", c.cfg.lr_theta);
        c.cfg.lr_alpha = j.value("lr_alpha", c.cfg.lr_alpha);
        c.cfg.wd_theta = j.value("wd_theta", c.cfg.wd_theta);
        c.cfg.wd_alpha = j.value("wd_alpha", c.cfg.wd_alpha);
        c.lambda_set = j.contains("lambda");
        c.cfg.lambda = j.value("lambda", c.cfg.lambda);
        c.cfg.capacity = j.value("capacity", c.cfg.capacity);
        c.cfg.temperature = j.value("temperature", c.cfg.temperature);
        c.cfg.w_max = j.value("w_max", c.cfg.w_max);
        c.cfg.shift.threshold = j.value("tau", c.cfg.shift.threshold);
        const std::string kl = j.value("kl_variant", std::string("full-gaussian"));
        if (kl == "full-gaussian") c.cfg.shift.variant = KlVariant::FullGaussian;
        else if (kl == "paper-literal") c.cfg.shift.variant = KlVariant::PaperLiteral;
        else throw std::invalid_argument("unknown kl variant: " + kl);
        c.cfg.profile_ema = j.value("profile_ema", c.cfg.profile_ema);
        c.cfg.dist_theta = parse_dist(j.value("dist_theta", std::string("segmented-uniform")));
        c.cfg.dist_alpha = parse_dist(j.value("dist_alpha", std::string("segmented-uniform")));
        return c;
    }

    json to_json() const {
        json j;
        j["mode"] = adapt_mode_name(cfg.mode);
        j["c_theta"] = cfg.c_theta;
        j["c_alpha"] = cfg.c_alpha;
        j["lr_theta"] = cfg.lr_theta;
        j["lr_alpha"] = cfg.lr_alpha;
        j["wd_theta"] = cfg.wd_theta;
        j["wd_alpha"] = cfg.wd_alpha;
        j["lambda"] = cfg.lambda;
        j["capacity"] = cfg.capacity;
        j["temperature"] = cfg.temperature;
        j["w_max"] = cfg.w_max;
        j["tau"] = cfg.shift.threshold;
        j["kl_variant"] = cfg.shift.variant == KlVariant::FullGaussian ? "full-gaussian"
                                                                       : "paper-literal";
        j["profile_ema"] = cfg.profile_ema;
        j["dist_theta"] = dist_name(cfg.dist_theta);
        j["dist_alpha"] = dist_name(cfg.dist_alpha);
        return j;
    }
};

struct StreamFileConfig {
    int severity = 3;
    std::size_t batches_per_episode = 8;
    StreamPlan plan;
    bool explicit_episodes = false;

    static StreamFileConfig from_json(const json& j) {
        StreamFileConfig c;
        check_keys(j, {"severity", "batches_per_episode", "rounds", "batch_size", "episodes"},
                   "stream");
        c.severity = j.value("severity", c.severity);
        c.batches_per_episode = j.value("batches_per_episode", c.batches_per_episode);
        c.plan.rounds = j.value("rounds", c.plan.rounds);
        c.plan.batch_size = j.value("batch_size", c.plan.batch_size);
        if (j.contains("episodes")) {
            c.explicit_episodes = true;
            for (const auto& e : j["episodes"]) {
                check_keys(e, {"kind", "severity", "batches"}, "stream.episodes[]");
                Episode ep;
                ep.corruption.kind = parse_corruption_kind(e.at("kind").get<std::string>());
                ep.corruption.severity = e.value("severity", c.severity);
                ep.batches = e.value("batches", c.batches_per_episode);
                c.plan.episodes.push_back(ep);
            }
        }
        return c;
    }

    StreamPlan resolve(std::uint64_t seed) const {
        StreamPlan plan = this->plan;
        plan.seed = seed;
        if (!explicit_episodes) {
            plan.episodes.clear();
            for (int k = 0; k <= static_cast<int>(CorruptionKind::Brightness); ++k)
                plan.episodes.push_back({Corruption{static_cast<CorruptionKind>(k), severity},
                                         batches_per_episode});
        }
        return plan;
    }

    json to_json(const StreamPlan& resolved) const {
        json j;
        j["rounds"] = resolved.rounds;
        j["batch_size"] = resolved.batch_size;
        j["seed"] = resolved.seed;
        json eps = json::array();
        for (const auto& e : resolved.episodes)
            eps.push_back({{"kind", corruption_name(e.corruption.kind)},
                           {"severity", e.corruption.severity},
                           {"batches", e.batches}});
        j["episodes"] = eps;
        return j;
    }
};

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    json j = json::parse(in);
    check_keys(j, {"dataset", "fit", "adapt", "stream", "seed"}, "config root");
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

// --------------------------------------------------------------------------

int cmd_fit(const std::string& config_path, std::string arch, std::string data_kind,
            int bits, std::uint64_t seed, bool seed_set, const std::string& out,
            const std::string& summary_path) {
    const json file = load_config_file(config_path);
    DatasetConfig ds_cfg = DatasetConfig::from_json(file.value("dataset", json::object()));
    FitFileConfig fit_cfg = FitFileConfig::from_json(file.value("fit", json::object()));
    if (!arch.empty()) {
        fit_cfg.arch = arch;
        fit_cfg.fit.arch = arch == "mlp" ? Arch::Mlp : Arch::Cnn;
    }
    if (!data_kind.empty()) ds_cfg.kind = data_kind;
    if (bits >= 0) fit_cfg.fit.bits = bits;
    const std::uint64_t run_seed = seed_set ? seed : file.value("seed", 0ull);

    Rng rng(run_seed);
    const Dataset ds = ds_cfg.build(rng);
    Rng fit_rng(run_seed + 1);
    QuantizedModel model = fit_source_model(fit_cfg.fit, ds, fit_rng);
    const FeatureStats stats = calibrate_source_stats(model, ds.calib_x);
    save_checkpoint(out, model, &stats);

    json summary;
    summary["command"] = "fit";
    summary["config"] = {{"dataset", ds_cfg.to_json()},
                         {"fit", fit_cfg.to_json()},
                         {"seed", run_seed}};
    summary["results"] = {{"clean_test_accuracy", model.clean_test_accuracy},
                          {"checkpoint", out},
                          {"adaptable_parameters", model.schema->total()}};
    const std::string text = summary.dump(2);
    if (!summary_path.empty()) write_text(summary_path, text);
    std::cout << text << "\n";
    return 0;
}

int cmd_adapt(const std::string& config_path, const std::string& ckpt,
              std::string mode_flag, int rounds_flag, int batch_flag,
              std::string kl_flag, bool reset_per_domain, bool fp_budget_check,
              std::uint64_t seed, bool seed_set, const std::string& out_prefix,
              const std::string& save_state) {
    const json file = load_config_file(config_path);
    DatasetConfig ds_cfg = DatasetConfig::from_json(file.value("dataset", json::object()));
    AdaptFileConfig ad_cfg = AdaptFileConfig::from_json(file.value("adapt", json::object()));
    StreamFileConfig st_cfg = StreamFileConfig::from_json(file.value("stream", json::object()));
    if (!mode_flag.empty()) ad_cfg.cfg.mode = parse_adapt_mode(mode_flag);
    if (rounds_flag > 0) st_cfg.plan.rounds = static_cast<std::size_t>(rounds_flag);
    if (batch_flag > 0) st_cfg.plan.batch_size = static_cast<std::size_t>(batch_flag);
    if (!kl_flag.empty()) {
        if (kl_flag == "full-gaussian") ad_cfg.cfg.shift.variant = KlVariant::FullGaussian;
        else if (kl_flag == "paper-literal") ad_cfg.cfg.shift.variant = KlVariant::PaperLiteral;
        else throw std::invalid_argument("unknown kl variant: " + kl_flag);
    }
    const std::uint64_t run_seed = seed_set ? seed : file.value("seed", 0ull);
    ad_cfg.cfg.seed = run_seed + 2;

    Checkpoint ck = load_checkpoint(ckpt);
    if (!ck.source_stats)
        throw std::runtime_error("checkpoint has no source statistics (STAT section)");
    if (!ad_cfg.lambda_set) ad_cfg.cfg.lambda = ck.model.arch == Arch::Mlp ? 30.0 : 1.0;

    Rng rng(run_seed);
    const Dataset ds = ds_cfg.build(rng);
    const StreamPlan plan = st_cfg.resolve(run_seed + 3);
    const auto stream = build_stream(plan, ds);

    Engine engine(ck.model, *ck.source_stats, ad_cfg.cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const ResultsLog log = run_stream(engine, stream, reset_per_domain);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (fp_budget_check) {
        const std::uint64_t per_batch =
            (ad_cfg.cfg.mode == AdaptMode::Zoa || ad_cfg.cfg.mode == AdaptMode::ZoaNoDrl) ? 2
                                                                                          : 1;
        const std::uint64_t expected = per_batch * stream.size();
        if (engine.forwards_used() != expected)
            throw std::runtime_error("forward-pass budget violated: used " +
                                     std::to_string(engine.forwards_used()) + ", expected " +
                                     std::to_string(expected));
        std::cout << "fp-budget-check ok: " << engine.forwards_used() << " passes for "
                  << stream.size() << " batches\n";
    }

    std::ostringstream csv;
    log.write_csv(csv);
    write_text(out_prefix + ".csv", csv.str());

    json summary;
    summary["command"] = "adapt";
    summary["config"] = {{"dataset", ds_cfg.to_json()},
                         {"adapt", ad_cfg.to_json()},
                         {"stream", st_cfg.to_json(plan)},
                         {"checkpoint", ckpt},
                         {"reset_per_domain", reset_per_domain},
                         {"seed", run_seed}};
    json rounds = json::object();
    for (const auto& [r, acc] : log.round_accuracy()) rounds[std::to_string(r)] = acc;
    json domains = json::object();
    for (const auto& [d, acc] : log.domain_accuracy()) domains[d] = acc;
    std::size_t shifts = 0;
    for (const auto& r : log.rows) shifts += r.shifted ? 1 : 0;
    summary["results"] = {{"mean_accuracy", log.mean_accuracy()},
                          {"rounds", rounds},
                          {"domains", domains},
                          {"batches", log.rows.size()},
                          {"forward_passes", engine.forwards_used()},
                          {"shifts_detected", shifts},
                          {"final_kb_size", engine.kb().size()},
                          {"elapsed_seconds", elapsed}};
    const std::string text = summary.dump(2);
    write_text(out_prefix + ".json", text);
    std::cout << text << "\n";

    if (!save_state.empty()) {
        const KnowledgeBase& kb = engine.kb();
        save_checkpoint(save_state, ck.model, &*ck.source_stats, &kb);
    }
    return 0;
}

int cmd_sensitivity(const std::string& config_path, std::size_t dim, std::size_t samples,
                    const std::string& bits_csv, std::uint64_t seed, bool seed_set,
                    const std::string& out) {
    const json file = load_config_file(config_path);
    const std::uint64_t run_seed = seed_set ? seed : file.value("seed", 0ull);
    SensitivityConfig cfg;
    cfg.dim = dim;
    cfg.num_samples = samples;
    cfg.bit_list.clear();
    std::stringstream ss(bits_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) cfg.bit_list.push_back(std::stoi(tok));
    if (cfg.bit_list.empty()) {
        std::cerr << "error: empty bit list\n";
        return 2;
    }

    Rng rng(run_seed);
    const auto t0 = std::chrono::steady_clock::now();
    const SensitivityReport report = sensitivity_experiment(cfg, rng);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ostringstream csv;
    report.write_csv(csv);
    if (!out.empty()) write_text(out, csv.str());
    std::cout << csv.str();
    const int lo = *std::min_element(cfg.bit_list.begin(), cfg.bit_list.end());
    const int hi = *std::max_element(cfg.bit_list.begin(), cfg.bit_list.end());
    if (hi > lo) {
        const int slope_lo = std::max(lo, 3);
        if (hi > slope_lo)
            std::cout << "log2 slope over n=" << slope_lo << ".." << hi << ": "
                      << report.log2_slope(slope_lo, hi) << "\n";
    }
    std::cout << "elapsed seconds: " << elapsed << "\n";
    return 0;
}

int run_selftest() {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
        if (!ok) ++failures;
    };

    {
        const std::vector<double> logits{0.1, 0.0};
        const auto p = softmax_with_temperature(logits, 10.0);
        const double e = std::exp(1.0);
        check("softmax hand value", std::abs(p[0] - e / (e + 1.0)) < 1e-12);
    }
    {
        const QuantSpec spec{2, 1.0};
        check("quantize grid value", std::abs(quantize_value(0.4, spec) - 1.0 / 3.0) < 1e-12);
        check("quantize idempotent",
              quantize_value(quantize_value(0.73, spec), spec) == quantize_value(0.73, spec));
    }
    {
        const std::vector<double> eps{1.0, -1.0};
        const auto g = spsa_gradient(5.0, 5.0602, 0.01, eps);
        check("spsa hand value",
              std::abs(g[0] - 6.02) < 1e-9 && std::abs(g[1] + 6.02) < 1e-9);
    }
    {
        auto schema = std::make_shared<ParamSchema>();
        schema->layers.push_back({"a", 6});
        schema->layers.push_back({"b", 4});
        Rng rng(1);
        bool ok = true;
        for (int trial = 0; trial < 200 && ok; ++trial) {
            KnowledgeBase kb(schema, 32);
            const std::size_t n = rng.next_u64() % 6;
            for (std::size_t k = 0; k < n; ++k) {
                LayeredVector v(schema);
                for (double& x : v.flat()) x = rng.gaussian(0.0, 0.4);
                kb.push(v, rng.uniform(-0.4, 0.4));
            }
            LayeredVector theta(schema);
            for (double& x : theta.flat()) x = rng.gaussian(0.0, 0.2);
            const LayeredVector before = kb.aggregate(theta);
            kb.preserve(theta);
            const LayeredVector after = kb.aggregate(theta);
            for (std::size_t i = 0; i < before.size(); ++i)
                if (std::abs(after[i] - before[i]) > 1e-12) ok = false;
        }
        check("ensemble invariance (200 randomized preserves)", ok);
    }
    {
        const StatProfile p = {{0.3, 0.7}};
        check("shift literal identity distance",
              profile_distance(p, p, KlVariant::PaperLiteral) == 1.0);
        check("shift full-gaussian identity distance",
              profile_distance(p, p, KlVariant::FullGaussian) == 0.0);
    }
    {
        const Tensor logits = Tensor::zeros({3, 10});
        check("uniform entropy value",
              std::abs(entropy_term(logits) - std::log(10.0) / 10.0) < 1e-9);
    }
    std::cout << (failures == 0 ? "selftest ok\n" : "selftest FAILED\n");
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"forward-only test-time adaptation for quantized models"};
    app.require_subcommand(1);

    std::string config_path, out, summary_path, arch, data_kind, mode, kl_variant;
    std::string ckpt, save_state, bits_csv = "2,3,4,5,6,7,8";
    int bits = -1, rounds = -1, batch_size = -1;
    std::uint64_t seed = 0;
    std::size_t dim = 32, samples = 100000;
    bool reset_per_domain = false, fp_budget_check = false;

    auto* fit = app.add_subcommand("fit", "fit and freeze a source model");
    fit->add_option("--config", config_path, "JSON config file");
    fit->add_option("--arch", arch, "mlp | cnn");
    fit->add_option("--data", data_kind,
                    "synthetic-blobs | synthetic-spirals | idx-images");
    fit->add_option("--bits", bits, "weight precision (0 = full)");
    auto* fit_seed = fit->add_option("--seed", seed, "run seed");
    fit->add_option("--out", out, "checkpoint output path")->required();
    fit->add_option("--summary", summary_path, "also write the JSON summary here");

    auto* adapt = app.add_subcommand("adapt", "run test-time adaptation over a stream");
    adapt->add_option("--config", config_path, "JSON config file");
    adapt->add_option("--ckpt", ckpt, "checkpoint from 'fit'")->required();
    adapt->add_option("--mode", mode, "zoa | zoa-no-drl | source | bn-adapt");
    adapt->add_option("--rounds", rounds, "stream rounds");
    adapt->add_option("--batch-size", batch_size, "test batch size");
    adapt->add_option("--kl-variant", kl_variant, "full-gaussian | paper-literal");
    adapt->add_flag("--reset-per-domain", reset_per_domain,
                    "drop adaptation state at every episode boundary");
    adapt->add_flag("--fp-budget-check", fp_budget_check,
                    "fail unless forward passes == budget * batches");
    auto* adapt_seed = adapt->add_option("--seed", seed, "run seed");
    adapt->add_option("--out", out, "output prefix (.csv and .json)")->required();
    adapt->add_option("--save-state", save_state,
                      "write model+stats+knowledge checkpoint after the run");

    auto* sens = app.add_subcommand("sensitivity", "quantization sensitivity experiment");
    sens->add_option("--config", config_path, "JSON config file");
    sens->add_option("--dim", dim, "linear model dimension");
    sens->add_option("--samples", samples, "Monte-Carlo samples");
    sens->add_option("--bits", bits_csv, "comma-separated bit widths");
    auto* sens_seed = sens->add_option("--seed", seed, "run seed");
    sens->add_option("--out", out, "CSV output path");

    app.add_subcommand("selftest", "quick built-in checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand("fit"))
            return cmd_fit(config_path, arch, data_kind, bits, seed, !fit_seed->empty(),
                           out, summary_path);
        if (app.got_subcommand("adapt"))
            return cmd_adapt(config_path, ckpt, mode, rounds, batch_size, kl_variant,
                             reset_per_domain, fp_budget_check, seed,
                             !adapt_seed->empty(), out, save_state);
        if (app.got_subcommand("sensitivity"))
            return cmd_sensitivity(config_path, dim, samples, bits_csv, seed,
                                   !sens_seed->empty(), out);
        return run_selftest();
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
