#include "sabma/harness.hpp"
#include "sabma/error.hpp"
#include "sabma/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace sabma {

Mode parse_mode(const std::string& s) {
    if (s == "dnn") return Mode::Dnn;
    if (s == "sam") return Mode::Sam;
    if (s == "fsam") return Mode::Fsam;
    if (s == "swag") return Mode::Swag;
    if (s == "sabma_swag") return Mode::SabmaSwag;
    if (s == "sabma_vi") return Mode::SabmaVi;
    fail_config("unknown mode '" + s + "'");
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Dnn: return "dnn";
        case Mode::Sam: return "sam";
        case Mode::Fsam: return "fsam";
        case Mode::Swag: return "swag";
        case Mode::SabmaSwag: return "sabma_swag";
        case Mode::SabmaVi: return "sabma_vi";
    }
    return "?";
}

bool mode_is_bayesian(Mode m) {
    return m == Mode::Swag || m == Mode::SabmaSwag || m == Mode::SabmaVi;
}

namespace {

void check_keys(const Json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) fail_config("config: '" + path + "' must be an object");
    for (const auto& item : j.items())
        if (!allowed.contains(item.key()))
            fail_config("config: unknown key '" + path + (path.empty() ? "" : ".") + item.key() + "'");
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        fail_config(std::string("config: bad value for '") + key + "'");
    }
}

} // namespace

ExperimentConfig config_from_json(const Json& root) {
    check_keys(root, "", {"dataset", "model", "mode", "optimizer", "epochs", "finetune_epochs",
                          "early_stopping", "eval", "output_dir", "seed"});
    ExperimentConfig cfg;

    if (root.contains("dataset")) {
        const Json& d = root.at("dataset");
        check_keys(d, "dataset", {"kind", "n_per_class", "noise", "classes", "dim", "path"});
        cfg.dataset.kind = get_or<std::string>(d, "kind", cfg.dataset.kind);
        cfg.dataset.n_per_class = get_or<int>(d, "n_per_class", cfg.dataset.n_per_class);
        cfg.dataset.noise = get_or<double>(d, "noise", cfg.dataset.noise);
        cfg.dataset.classes = get_or<int>(d, "classes", cfg.dataset.classes);
        cfg.dataset.dim = get_or<int>(d, "dim", cfg.dataset.dim);
        if (d.contains("path") && !d.at("path").is_null())
            cfg.dataset.path = d.at("path").get<std::string>();
    }
    if (root.contains("model")) {
        const Json& m = root.at("model");
        check_keys(m, "model", {"hidden", "norm", "activation"});
        cfg.model.hidden = get_or<std::vector<int>>(m, "hidden", cfg.model.hidden);
        cfg.model.norm = get_or<bool>(m, "norm", cfg.model.norm);
        cfg.model.activation = get_or<std::string>(m, "activation", cfg.model.activation);
    }
    cfg.mode = parse_mode(get_or<std::string>(root, "mode", "dnn"));
    if (root.contains("optimizer")) {
        const Json& o = root.at("optimizer");
        check_keys(o, "optimizer",
                   {"lr", "momentum", "weight_decay", "gamma", "delta", "alpha", "beta", "K", "M",
                    "eta_fisher", "fim_mode", "partition", "schedule"});
        cfg.optimizer.lr = get_or<double>(o, "lr", cfg.optimizer.lr);
        cfg.optimizer.momentum = get_or<double>(o, "momentum", cfg.optimizer.momentum);
        cfg.optimizer.weight_decay = get_or<double>(o, "weight_decay", cfg.optimizer.weight_decay);
        cfg.optimizer.gamma = get_or<double>(o, "gamma", cfg.optimizer.gamma);
        cfg.optimizer.delta = get_or<double>(o, "delta", cfg.optimizer.delta);
        cfg.optimizer.alpha = get_or<double>(o, "alpha", cfg.optimizer.alpha);
        cfg.optimizer.beta = get_or<double>(o, "beta", cfg.optimizer.beta);
        cfg.optimizer.K = get_or<int>(o, "K", cfg.optimizer.K);
        cfg.optimizer.M = get_or<int>(o, "M", cfg.optimizer.M);
        cfg.optimizer.eta_fisher = get_or<double>(o, "eta_fisher", cfg.optimizer.eta_fisher);
        cfg.optimizer.fim_mode = get_or<std::string>(o, "fim_mode", cfg.optimizer.fim_mode);
        cfg.optimizer.partition = get_or<std::string>(o, "partition", cfg.optimizer.partition);
        if (o.contains("schedule")) {
            const Json& s = o.at("schedule");
            check_keys(s, "optimizer.schedule", {"kind", "warmup_steps", "swag_floor_fraction"});
            cfg.optimizer.schedule.kind = get_or<std::string>(s, "kind", "");
            cfg.optimizer.schedule.warmup_steps =
                get_or<int>(s, "warmup_steps", cfg.optimizer.schedule.warmup_steps);
            cfg.optimizer.schedule.swag_floor_fraction =
                get_or<double>(s, "swag_floor_fraction", cfg.optimizer.schedule.swag_floor_fraction);
        }
    }
    cfg.epochs = get_or<int>(root, "epochs", cfg.epochs);
    cfg.finetune_epochs = get_or<int>(root, "finetune_epochs", cfg.finetune_epochs);
    if (root.contains("early_stopping")) {
        const Json& e = root.at("early_stopping");
        check_keys(e, "early_stopping", {"enabled", "patience"});
        cfg.early_stopping.enabled = get_or<bool>(e, "enabled", cfg.early_stopping.enabled);
        cfg.early_stopping.patience = get_or<int>(e, "patience", cfg.early_stopping.patience);
    }
    if (root.contains("eval")) {
        const Json& e = root.at("eval");
        check_keys(e, "eval",
                   {"spectroscopy", "k", "spectrum_samples", "lanczos_max_iters", "lanczos_tol",
                    "bma_orders", "severities", "test_per_class"});
        cfg.eval.spectroscopy = get_or<bool>(e, "spectroscopy", cfg.eval.spectroscopy);
        cfg.eval.k = get_or<int>(e, "k", cfg.eval.k);
        cfg.eval.spectrum_samples = get_or<int>(e, "spectrum_samples", cfg.eval.spectrum_samples);
        cfg.eval.lanczos_max_iters = get_or<int>(e, "lanczos_max_iters", cfg.eval.lanczos_max_iters);
        cfg.eval.lanczos_tol = get_or<double>(e, "lanczos_tol", cfg.eval.lanczos_tol);
        cfg.eval.bma_orders = get_or<std::vector<std::string>>(e, "bma_orders", cfg.eval.bma_orders);
        cfg.eval.severities = get_or<std::vector<int>>(e, "severities", cfg.eval.severities);
        cfg.eval.test_per_class = get_or<int>(e, "test_per_class", cfg.eval.test_per_class);
    }
    cfg.output_dir = get_or<std::string>(root, "output_dir", cfg.output_dir);
    cfg.seed = get_or<std::uint64_t>(root, "seed", cfg.seed);

    if (cfg.optimizer.schedule.kind.empty())
        cfg.optimizer.schedule.kind =
            (cfg.mode == Mode::Swag || cfg.mode == Mode::SabmaSwag) ? "swag_lr" : "cosine_warmup";
    validate_config(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_io("cannot open config '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::parse_error& e) {
        fail_config("invalid JSON in '" + path + "': " + e.what());
    }
    return config_from_json(j);
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == "csv") {
        if (!cfg.dataset.path) fail_config("config: dataset kind 'csv' requires dataset.path");
    } else if (!cfg.dataset.path) {
        parse_data_kind(cfg.dataset.kind);
        if (cfg.dataset.n_per_class < 1) fail_config("config: dataset.n_per_class must be >= 1");
        if (cfg.dataset.classes < 2) fail_config("config: dataset.classes must be >= 2");
        if (cfg.dataset.dim < 2) fail_config("config: dataset.dim must be >= 2");
    }
    parse_activation(cfg.model.activation);
    for (int h : cfg.model.hidden)
        if (h < 1) fail_config("config: model.hidden widths must be >= 1");
    if (cfg.epochs < 1) fail_config("config: epochs must be >= 1");
    if (cfg.finetune_epochs < 0) fail_config("config: finetune_epochs must be >= 0");
    if (!(cfg.optimizer.lr > 0.0)) fail_config("config: optimizer.lr must be positive");
    if (cfg.optimizer.momentum < 0.0 || cfg.optimizer.momentum >= 1.0)
        fail_config("config: optimizer.momentum must be in [0, 1)");
    if (cfg.optimizer.weight_decay < 0.0) fail_config("config: weight_decay must be >= 0");
    if (cfg.optimizer.gamma < 0.0) fail_config("config: gamma must be >= 0");
    if (!(cfg.optimizer.delta > 0.0)) fail_config("config: delta must be positive");
    if (!(cfg.optimizer.alpha > 0.0)) fail_config("config: alpha must be positive");
    if (cfg.optimizer.beta < 0.0) fail_config("config: beta must be >= 0");
    if (cfg.optimizer.K < 0) fail_config("config: K must be >= 0");
    if (cfg.optimizer.M < 1) fail_config("config: M must be >= 1");
    if (cfg.optimizer.eta_fisher < 0.0) fail_config("config: eta_fisher must be >= 0");
    parse_fim_mode(cfg.optimizer.fim_mode);
    parse_partition_policy(cfg.optimizer.partition);
    parse_schedule_kind(cfg.optimizer.schedule.kind);
    if (cfg.optimizer.schedule.warmup_steps < 0)
        fail_config("config: schedule.warmup_steps must be >= 0");
    if (cfg.optimizer.schedule.swag_floor_fraction <= 0.0 ||
        cfg.optimizer.schedule.swag_floor_fraction > 1.0)
        fail_config("config: schedule.swag_floor_fraction must be in (0, 1]");
    if (cfg.early_stopping.patience < 1) fail_config("config: early_stopping.patience must be >= 1");
    if (cfg.eval.k < 1) fail_config("config: eval.k must be >= 1");
    if (cfg.eval.spectrum_samples < 1) fail_config("config: eval.spectrum_samples must be >= 1");
    if (cfg.eval.lanczos_max_iters < 1) fail_config("config: eval.lanczos_max_iters must be >= 1");
    if (!(cfg.eval.lanczos_tol > 0.0)) fail_config("config: eval.lanczos_tol must be positive");
    for (const std::string& o : cfg.eval.bma_orders) parse_bma_order(o);
    for (int s : cfg.eval.severities) severity_scale(s);
    if (cfg.eval.test_per_class < 1) fail_config("config: eval.test_per_class must be >= 1");
    if (cfg.output_dir.empty()) fail_config("config: output_dir must not be empty");

    if (cfg.mode == Mode::Swag || cfg.mode == Mode::SabmaSwag) {
        const int collect_start = (3 * cfg.epochs) / 4;
        const int snapshots = cfg.epochs - collect_start;
        const int needed = std::max(2, cfg.optimizer.K + 1);
        if (snapshots < needed)
            fail_config("config: swag collection window has " + std::to_string(snapshots) +
                        " snapshots but K = " + std::to_string(cfg.optimizer.K) + " needs " +
                        std::to_string(needed));
    }
    if ((cfg.mode == Mode::SabmaSwag || cfg.mode == Mode::SabmaVi) && cfg.finetune_epochs < 1)
        fail_config("config: sabma modes need finetune_epochs >= 1");
}

Json config_to_json(const ExperimentConfig& cfg) {
    Json d{{"kind", cfg.dataset.kind},
           {"n_per_class", cfg.dataset.n_per_class},
           {"noise", cfg.dataset.noise},
           {"classes", cfg.dataset.classes},
           {"dim", cfg.dataset.dim}};
    if (cfg.dataset.path) d["path"] = *cfg.dataset.path;
    return Json{
        {"dataset", d},
        {"model",
         {{"hidden", cfg.model.hidden}, {"norm", cfg.model.norm}, {"activation", cfg.model.activation}}},
        {"mode", mode_name(cfg.mode)},
        {"optimizer",
         {{"lr", cfg.optimizer.lr},
          {"momentum", cfg.optimizer.momentum},
          {"weight_decay", cfg.optimizer.weight_decay},
          {"gamma", cfg.optimizer.gamma},
          {"delta", cfg.optimizer.delta},
          {"alpha", cfg.optimizer.alpha},
          {"beta", cfg.optimizer.beta},
          {"K", cfg.optimizer.K},
          {"M", cfg.optimizer.M},
          {"eta_fisher", cfg.optimizer.eta_fisher},
          {"fim_mode", cfg.optimizer.fim_mode},
          {"partition", cfg.optimizer.partition},
          {"schedule",
           {{"kind", cfg.optimizer.schedule.kind},
            {"warmup_steps", cfg.optimizer.schedule.warmup_steps},
            {"swag_floor_fraction", cfg.optimizer.schedule.swag_floor_fraction}}}}},
        {"epochs", cfg.epochs},
        {"finetune_epochs", cfg.finetune_epochs},
        {"early_stopping",
         {{"enabled", cfg.early_stopping.enabled}, {"patience", cfg.early_stopping.patience}}},
        {"eval",
         {{"spectroscopy", cfg.eval.spectroscopy},
          {"k", cfg.eval.k},
          {"spectrum_samples", cfg.eval.spectrum_samples},
          {"lanczos_max_iters", cfg.eval.lanczos_max_iters},
          {"lanczos_tol", cfg.eval.lanczos_tol},
          {"bma_orders", cfg.eval.bma_orders},
          {"severities", cfg.eval.severities},
          {"test_per_class", cfg.eval.test_per_class}}},
        {"output_dir", cfg.output_dir},
        {"seed", cfg.seed}};
}

std::string config_hash(const ExperimentConfig& cfg) {
    Json j = config_to_json(cfg);
    j.erase("seed");
    j.erase("output_dir");
    const std::uint64_t h = rng::fnv1a(j.dump());
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

Json metrics_to_json(const Metrics& m) {
    return Json{{"acc", m.acc}, {"ece", m.ece}, {"nll", m.nll}};
}

Json spectrum_to_json(const SpectrumReport& r) {
    Json j{{"eigenvalues", r.eigenvalues},
           {"lambda1", r.lambda1},
           {"iterations", r.iterations},
           {"residuals", r.residuals},
           {"converged", r.converged}};
    if (r.ratio_1_5) j["ratio_1_5"] = *r.ratio_1_5;
    return j;
}

Json weyl_to_json(const WeylCertificate& c) {
    return Json{{"lower", c.lower},
                {"upper", c.upper},
                {"observed", c.observed},
                {"slack", c.slack},
                {"pass", c.pass}};
}

Json bma_report_to_json(const BmaReport& r) {
    Json prefix = Json::array();
    for (const PrefixMetrics& p : r.prefix) {
        Json e = metrics_to_json(p.m);
        e["k"] = p.k;
        prefix.push_back(std::move(e));
    }
    Json j{{"M", r.M},
           {"ordering", r.ordering},
           {"order_indices", r.order_indices},
           {"prefix", prefix},
           {"final", metrics_to_json(r.final_metrics)}};
    if (!r.lambda1.empty()) j["lambda1"] = r.lambda1;
    return j;
}

struct LoadedData {
    Dataset train, val, test;
};

LoadedData load_data(const ExperimentConfig& cfg) {
    LoadedData d;
    if (cfg.dataset.path) {
        d.train = load_csv(*cfg.dataset.path);
        d.val = d.train;
        d.test = d.train;
    } else {
        const DataKind kind = parse_data_kind(cfg.dataset.kind);
        d.train = gen_dataset(kind, cfg.dataset.n_per_class, cfg.dataset.noise,
                              rng::derive(cfg.seed, "data", 0), cfg.dataset.classes,
                              cfg.dataset.dim);
        d.test = gen_dataset(kind, cfg.eval.test_per_class, cfg.dataset.noise,
                             rng::derive(cfg.seed, "data", 1), cfg.dataset.classes,
                             cfg.dataset.dim);
        d.val = gen_dataset(kind, 200, cfg.dataset.noise, rng::derive(cfg.seed, "data", 2),
                            cfg.dataset.classes, cfg.dataset.dim);
    }
    return d;
}

struct PointTrainResult {
    ParamVector params;
    int epochs_run = 0;
};

// Full-batch training, one step per epoch. Early stopping (validation NLL,
// restore best) applies only when no SWAG collection is active: collection
// needs the trailing window intact.
PointTrainResult train_point(const Model& model, const ExperimentConfig& cfg, const Dataset& train,
                             const Dataset& val, SwagCollector* collector,
                             const ParamPartition* collect_part) {
    ParamVector params = init_params(model, rng::derive(cfg.seed, "init"));
    std::vector<double> momentum_state(params.values.size(), 0.0);

    LrSchedule sched;
    sched.kind = parse_schedule_kind(cfg.optimizer.schedule.kind);
    sched.base_lr = cfg.optimizer.lr;
    sched.warmup_steps = cfg.optimizer.schedule.warmup_steps;
    sched.total_steps = cfg.epochs;
    sched.swag_floor_fraction = cfg.optimizer.schedule.swag_floor_fraction;

    const int collect_start = (3 * cfg.epochs) / 4;
    const bool early = cfg.early_stopping.enabled && collector == nullptr;
    double best_nll = std::numeric_limits<double>::infinity();
    ParamVector best_params = params;
    int since_best = 0;

    PointTrainResult out;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(sched, epoch);
        ParamVector g = nll_grad(model, params, train, 0.0);
        if (cfg.mode == Mode::Sam || cfg.mode == Mode::Fsam) {
            Eigen::Map<const Vector> gv(g.values.data(), static_cast<Eigen::Index>(g.values.size()));
            Vector delta;
            if (cfg.mode == Mode::Sam) {
                delta = sam_perturb(gv, cfg.optimizer.gamma);
            } else {
                Vector fim = diag_predictive_fim(model, params, train);
                delta = fsam_perturb(gv, fim, cfg.optimizer.gamma, cfg.optimizer.eta_fisher);
            }
            ParamVector perturbed = params;
            for (size_t i = 0; i < perturbed.values.size(); ++i)
                perturbed.values[i] += delta(static_cast<Eigen::Index>(i));
            g = nll_grad(model, perturbed, train, 0.0);
        }
        sgd_step(params.values, g.values, lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay,
                 momentum_state);
        out.epochs_run = epoch + 1;

        if (collector && epoch >= collect_start)
            collector->add(restrict_to(params, *collect_part));

        if (early) {
            const double vnll = nll_loss(model, params, val, 0.0);
            if (vnll < best_nll) {
                best_nll = vnll;
                best_params = params;
                since_best = 0;
            } else if (++since_best >= cfg.early_stopping.patience) {
                params = best_params;
                break;
            }
        }
    }
    if (early && best_nll < std::numeric_limits<double>::infinity()) {
        const double cur = nll_loss(model, params, val, 0.0);
        if (best_nll < cur) params = best_params;
    }
    out.params = std::move(params);
    return out;
}

// SA-BMA fine-tuning over the variational parameters, constant base lr,
// optional early stopping on the validation NLL at the posterior mean.
int finetune_sabma(const Model& model, GaussianPosterior& post, const ExperimentConfig& cfg,
                   const Dataset& train, const Dataset& val) {
    PerturbationConfig pcfg;
    pcfg.gamma = cfg.optimizer.gamma;
    pcfg.fim_mode = parse_fim_mode(cfg.optimizer.fim_mode);
    pcfg.eta_fisher = cfg.optimizer.eta_fisher;
    SabmaState state;

    const bool early = cfg.early_stopping.enabled;
    double best_nll = std::numeric_limits<double>::infinity();
    GaussianPosterior best = post;
    int since_best = 0;
    int run = 0;
    for (int t = 0; t < cfg.finetune_epochs; ++t) {
        sabma_step(model, post, train, pcfg, cfg.optimizer.lr, cfg.optimizer.momentum,
                   cfg.optimizer.weight_decay, cfg.optimizer.beta,
                   rng::derive(cfg.seed, "sabma", static_cast<std::uint64_t>(t)), state);
        run = t + 1;
        if (early) {
            const double vnll = nll_loss(model, assemble(post, post.mu), val, 0.0);
            if (vnll < best_nll) {
                best_nll = vnll;
                best = post;
                since_best = 0;
            } else if (++since_best >= cfg.early_stopping.patience) {
                post = best;
                break;
            }
        }
    }
    if (early && best_nll < std::numeric_limits<double>::infinity()) {
        const double cur = nll_loss(model, assemble(post, post.mu), val, 0.0);
        if (best_nll < cur) post = best;
    }
    return run;
}

} // namespace

RunReport run_experiment(const ExperimentConfig& cfg, bool canonical) {
    validate_config(cfg);
    const auto t0 = std::chrono::steady_clock::now();

    RunReport report;
    report["schema_version"] = 1;
    report["mode"] = mode_name(cfg.mode);
    report["seed"] = cfg.seed;
    report["config"] = config_to_json(cfg);
    report["config_hash"] = config_hash(cfg);
    report["canonical"] = canonical;
    report["incomplete"] = false;

    auto finish = [&](bool rethrow_error = false) {
        if (!canonical) {
            const auto t1 = std::chrono::steady_clock::now();
            report["wall_clock_sec"] = std::chrono::duration<double>(t1 - t0).count();
        }
        try {
            atomic_write_text((std::filesystem::path(cfg.output_dir) / "report.json").string(),
                              canonical_report_string(report));
        } catch (const Error&) {
            if (!rethrow_error) throw;
        }
    };

    try {
        LoadedData data = load_data(cfg);
        Model model = build_mlp(data.train.dim(), cfg.model.hidden, data.train.classes,
                                cfg.model.norm, parse_activation(cfg.model.activation));
        report["data"] = Json{{"train_size", data.train.size()},
                              {"val_size", data.val.size()},
                              {"test_size", data.test.size()},
                              {"classes", data.train.classes},
                              {"input_dim", data.train.dim()},
                              {"param_count", model.param_count()}};

        // stage 1: point training (every mode starts from a trained network)
        const bool swag_collecting = cfg.mode == Mode::Swag || cfg.mode == Mode::SabmaSwag;
        const PartitionPolicy policy = cfg.mode == Mode::Swag
                                           ? PartitionPolicy::All
                                           : parse_partition_policy(cfg.optimizer.partition);
        ParamPartition part = partition_params(model, policy);
        SwagCollector collector(part.p1(), cfg.optimizer.K);
        PointTrainResult pt = train_point(model, cfg, data.train, data.val,
                                          swag_collecting ? &collector : nullptr,
                                          swag_collecting ? &part : nullptr);
        report["epochs_run"] = pt.epochs_run;
        {
            Matrix probs = softmax_rows(predict(model, pt.params, data.test.X));
            report["point"] = metrics_to_json(metrics(probs, data.test.labels));
        }

        const LanczosOptions lopts{cfg.eval.lanczos_max_iters, cfg.eval.lanczos_tol};

        if (!mode_is_bayesian(cfg.mode)) {
            report["final"] = report["point"];
            report["trainable_params"] = model.param_count();
            save_param_vector(pt.params,
                              (std::filesystem::path(cfg.output_dir) / "weights_final.json").string());
            if (cfg.eval.spectroscopy)
                report["spectroscopy"] =
                    Json{{"point", spectrum_to_json(point_spectrum(
                                       model, pt.params, data.train, cfg.eval.k,
                                       rng::derive(cfg.seed, "lanczos", 0), lopts))}};
            if (!cfg.eval.severities.empty()) {
                Vector fstd = feature_std(data.train);
                Json shift = Json::array();
                for (int sev : cfg.eval.severities) {
                    Dataset shifted = corrupt(data.test, sev,
                                              rng::derive(cfg.seed, "shift",
                                                          static_cast<std::uint64_t>(sev)),
                                              fstd);
                    Matrix probs = softmax_rows(predict(model, pt.params, shifted.X));
                    Json e = metrics_to_json(metrics(probs, shifted.labels));
                    e["severity"] = sev;
                    shift.push_back(std::move(e));
                }
                report["shift"] = shift;
            }
            finish();
            return report;
        }

        // stage 2: posterior construction
        GaussianPosterior post;
        if (cfg.mode == Mode::SabmaVi) {
            post = moped_from_dnn(model, pt.params, part, cfg.optimizer.delta, cfg.optimizer.alpha);
        } else {
            Vector frozen(part.p2());
            for (int i = 0; i < part.p2(); ++i)
                frozen(i) =
                    pt.params.values[static_cast<size_t>(part.frozen[static_cast<size_t>(i)])];
            post = swag_fit(collector, part, model.registry, frozen);
        }
        // trainable variational parameters: (K+2) * p1
        report["trainable_params"] = (post.K() + 2) * post.p1();

        // stage 3: SA-BMA fine-tuning
        if (cfg.mode == Mode::SabmaSwag || cfg.mode == Mode::SabmaVi)
            report["finetune_epochs_run"] = finetune_sabma(model, post, cfg, data.train, data.val);

        save_posterior(post, (std::filesystem::path(cfg.output_dir) / "posterior.json").string());
        save_param_vector(assemble(post, post.mu),
                          (std::filesystem::path(cfg.output_dir) / "weights_final.json").string());

        // stage 4: BMA evaluation
        std::vector<ParamVector> samples;
        for (int i = 0; i < cfg.optimizer.M; ++i)
            samples.push_back(sample(post, rng::derive(cfg.seed, "bma", static_cast<std::uint64_t>(i))));
        for (int i = 0; i < std::min(3, static_cast<int>(samples.size())); ++i)
            save_param_vector(samples[static_cast<size_t>(i)],
                              (std::filesystem::path(cfg.output_dir) /
                               ("bma_sample_" + std::to_string(i) + ".json"))
                                  .string());

        Matrix bma_probs = bma_predict(model, samples, data.test.X);
        report["final"] = metrics_to_json(metrics(bma_probs, data.test.labels));

        bool need_lambda1 = false;
        for (const std::string& o : cfg.eval.bma_orders) {
            BmaOrder ord = parse_bma_order(o);
            if (ord == BmaOrder::Flat || ord == BmaOrder::Sharp) need_lambda1 = true;
        }
        std::vector<double> lambda1;
        if (need_lambda1) {
            for (int i = 0; i < cfg.optimizer.M; ++i)
                lambda1.push_back(point_spectrum(model, samples[static_cast<size_t>(i)], data.train,
                                                 1,
                                                 rng::derive(cfg.seed, "lanczos",
                                                             0x1000 + static_cast<std::uint64_t>(i)),
                                                 lopts)
                                      .lambda1);
        }
        if (!cfg.eval.bma_orders.empty()) {
            Json bma = Json::object();
            for (const std::string& o : cfg.eval.bma_orders) {
                BmaOrder ord = parse_bma_order(o);
                BmaReport r = ordered_bma(model, samples, lambda1, ord, data.test.X,
                                          data.test.labels, rng::derive(cfg.seed, "order"));
                bma[o] = bma_report_to_json(r);
            }
            report["bma"] = bma;
        }

        // stage 5: spectroscopy + Weyl certificate
        if (cfg.eval.spectroscopy) {
            PosteriorFlatness flat = posterior_flatness(model, post, data.train,
                                                        cfg.eval.spectrum_samples, cfg.eval.k,
                                                        cfg.seed, lopts);
            Json per = Json::array();
            for (const SpectrumReport& r : flat.per_sample) per.push_back(spectrum_to_json(r));
            Json spec{{"M", cfg.eval.spectrum_samples},
                      {"k", cfg.eval.k},
                      {"per_sample", per},
                      {"mean_lambda1", flat.mean_lambda1}};
            if (flat.mean_ratio_1_5) spec["mean_ratio_1_5"] = *flat.mean_ratio_1_5;
            spec["weyl"] = weyl_to_json(posterior_weyl(model, post, data.train,
                                                       cfg.eval.spectrum_samples, cfg.seed, lopts));
            report["spectroscopy"] = spec;
        }

        // stage 6: covariate shift
        if (!cfg.eval.severities.empty()) {
            Vector fstd = feature_std(data.train);
            Json shift = Json::array();
            for (int sev : cfg.eval.severities) {
                Dataset shifted = corrupt(data.test, sev,
                                          rng::derive(cfg.seed, "shift",
                                                      static_cast<std::uint64_t>(sev)),
                                          fstd);
                Matrix probs = bma_predict(model, samples, shifted.X);
                Json e = metrics_to_json(metrics(probs, shifted.labels));
                e["severity"] = sev;
                shift.push_back(std::move(e));
            }
            report["shift"] = shift;
        }

        finish();
        return report;
    } catch (const Error& e) {
        report["incomplete"] = true;
        report["error"] = e.what();
        finish(true);
        throw;
    }
}

std::string canonical_report_string(const RunReport& report) { return report.dump(2) + "\n"; }

std::vector<ComparisonRow> compare_runs(const std::vector<std::string>& report_paths) {
    if (report_paths.empty()) fail_config("compare_runs: no report paths given");
    struct Acc {
        std::string mode, hash;
        std::vector<Metrics> finals;
    };
    std::vector<Acc> groups;
    for (const std::string& path : report_paths) {
        std::ifstream in(path);
        if (!in) fail_io("cannot open report '" + path + "'");
        Json j;
        try {
            in >> j;
        } catch (const Json::parse_error& e) {
            fail_config("invalid JSON in '" + path + "': " + e.what());
        }
        if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
            fail_config("report '" + path + "': unsupported schema_version");
        if (j.value("incomplete", false))
            fail_config("report '" + path + "' is incomplete");
        const std::string mode = j.at("mode").get<std::string>();
        const std::string hash = j.at("config_hash").get<std::string>();
        Metrics m;
        m.acc = j.at("final").at("acc").get<double>();
        m.ece = j.at("final").at("ece").get<double>();
        m.nll = j.at("final").at("nll").get<double>();
        Acc* found = nullptr;
        for (Acc& g : groups)
            if (g.mode == mode && g.hash == hash) { found = &g; break; }
        if (!found) {
            groups.push_back({mode, hash, {}});
            found = &groups.back();
        }
        found->finals.push_back(m);
    }

    std::vector<ComparisonRow> rows;
    for (const Acc& g : groups) {
        ComparisonRow row;
        row.mode = g.mode;
        row.hash = g.hash;
        row.runs = static_cast<int>(g.finals.size());
        auto stats = [&](auto get) {
            double mean = 0.0;
            for (const Metrics& m : g.finals) mean += get(m);
            mean /= g.finals.size();
            double var = 0.0;
            if (g.finals.size() > 1) {
                for (const Metrics& m : g.finals) var += (get(m) - mean) * (get(m) - mean);
                var /= (g.finals.size() - 1);
            }
            return std::pair<double, double>(mean, std::sqrt(var));
        };
        auto [am, as] = stats([](const Metrics& m) { return m.acc; });
        auto [em, es] = stats([](const Metrics& m) { return m.ece; });
        auto [nm, ns] = stats([](const Metrics& m) { return m.nll; });
        row.mean = {am, em, nm};
        row.stddev = {as, es, ns};
        rows.push_back(row);
    }
    return rows;
}

std::string render_comparison(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    os << "mode         runs  acc(mean+/-std)      ece(mean+/-std)      nll(mean+/-std)\n";
    for (const ComparisonRow& r : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-12s %4d  %.4f +/- %.4f   %.4f +/- %.4f   %.4f +/- %.4f\n",
                      r.mode.c_str(), r.runs, r.mean.acc, r.stddev.acc, r.mean.ece, r.stddev.ece,
                      r.mean.nll, r.stddev.nll);
        os << buf;
    }
    return os.str();
}

Json comparison_to_json(const std::vector<ComparisonRow>& rows) {
    Json out = Json::array();
    for (const ComparisonRow& r : rows)
        out.push_back({{"mode", r.mode},
                       {"config_hash", r.hash},
                       {"runs", r.runs},
                       {"acc", {{"mean", r.mean.acc}, {"std", r.stddev.acc}}},
                       {"ece", {{"mean", r.mean.ece}, {"std", r.stddev.ece}}},
                       {"nll", {{"mean", r.mean.nll}, {"std", r.stddev.nll}}}});
    return out;
}

} // namespace sabma
