#pragma once

#include "sabma/bma.hpp"
#include "sabma/optimizers.hpp"
#include "sabma/serialize.hpp"
#include "sabma/spectroscopy.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sabma {

enum class Mode { Dnn, Sam, Fsam, Swag, SabmaSwag, SabmaVi };
Mode parse_mode(const std::string& s);
const char* mode_name(Mode m);
bool mode_is_bayesian(Mode m);

struct DatasetConfig {
    std::string kind = "two_moons"; // ignored when path is set
    int n_per_class = 50;
    double noise = 0.1;
    int classes = 2;
    int dim = 2;
    std::optional<std::string> path; // CSV overrides the synthetic generator
};

struct ModelConfig {
    std::vector<int> hidden = {8};
    bool norm = true;
    std::string activation = "tanh";
};

struct ScheduleConfig {
    std::string kind; // empty -> mode default (swag modes: swag_lr, else cosine_warmup)
    int warmup_steps = 10;
    double swag_floor_fraction = 0.1;
};

struct OptimizerConfig {
    double lr = 5e-2;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double gamma = 0.1;
    double delta = 0.05;
    double alpha = 1e-4;
    double beta = 0.0;
    int K = 5;
    int M = 30;
    double eta_fisher = 1.0;
    std::string fim_mode = "samelson_posterior";
    std::string partition = "norm_head"; // variational slice for sabma modes
    ScheduleConfig schedule;
};

struct EarlyStoppingConfig {
    bool enabled = true;
    int patience = 20;
};

struct EvalConfig {
    bool spectroscopy = true;
    int k = 5;
    int spectrum_samples = 5;
    int lanczos_max_iters = 100;
    double lanczos_tol = 1e-7;
    std::vector<std::string> bma_orders = {"flat", "sharp", "random"};
    std::vector<int> severities;
    int test_per_class = 1000; // synthetic datasets only
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    Mode mode = Mode::Dnn;
    OptimizerConfig optimizer;
    int epochs = 150;
    int finetune_epochs = 50;
    EarlyStoppingConfig early_stopping;
    EvalConfig eval;
    std::string output_dir = "out";
    std::uint64_t seed = 0;
};

// Strict parse: unknown keys anywhere are a config error naming the key path.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& cfg);
void validate_config(const ExperimentConfig& cfg);

// FNV-1a of the canonical config JSON with seed and output_dir removed; groups
// repeated runs of the same experiment.
std::string config_hash(const ExperimentConfig& cfg);

using RunReport = Json;

// Full pipeline: data -> train -> (posterior ->) evaluation -> report + files
// under cfg.output_dir (report.json, weights/posterior checkpoints). Stage
// errors produce a partial report flagged incomplete before rethrowing.
// canonical = true drops wall-clock timing so report bytes are reproducible.
RunReport run_experiment(const ExperimentConfig& cfg, bool canonical = false);

std::string canonical_report_string(const RunReport& report);

struct ComparisonRow {
    std::string mode;
    std::string hash;
    int runs = 0;
    Metrics mean;
    Metrics stddev;
};

// Groups reports by (mode, config hash); mean and sample std of the final
// metrics. Throws Config on schema_version mismatch.
std::vector<ComparisonRow> compare_runs(const std::vector<std::string>& report_paths);
std::string render_comparison(const std::vector<ComparisonRow>& rows);
Json comparison_to_json(const std::vector<ComparisonRow>& rows);

} // namespace sabma
