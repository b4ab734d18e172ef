#pragma once

// Runs: datasets, training with metrics and checkpoints, evaluation,
// the ablation ladder and the cross-embodiment transfer protocol.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wmb/harness/config.hpp"
#include "wmb/harness/evaluate.hpp"

namespace wmb::harness {

/// Compiled-in code version (git description at configure time).
std::string code_version();

/// Definition of the normalization expert, recorded in every manifest.
std::string expert_definition();

PromptRegistry load_prompts(const ExperimentConfig& cfg);

std::filesystem::path dataset_path(const ExperimentConfig& cfg, const std::string& embodiment);

/// Collects and writes the dataset of every train and eval embodiment.
/// Existing files are kept unless `overwrite`. Returns the written paths.
std::vector<std::filesystem::path> collect_datasets(const ExperimentConfig& cfg, bool overwrite = false);

/// Throws std::runtime_error with a hint to run `collect` if a file is missing.
toy::Dataset load_training_data(const ExperimentConfig& cfg, std::map<std::string, std::string>& hashes);

struct RunManifest {
    std::string config_hash;
    std::string code_version;
    std::string rung;
    std::string variant;
    std::uint64_t seed = 0;
    bool use_tamf = true;
    LossWeights weights;
    double alignment_weight = 0.0;
    int pretrain_steps = 0;
    int behavior_steps = 0;
    std::map<std::string, std::string> dataset_hashes;
    std::string expert;
    std::size_t parameter_count = 0;

    void write(const std::filesystem::path& path) const;
    static RunManifest read(const std::filesystem::path& path);
};

/// Metrics CSV with a fixed column set: step terms, gradient norms, behavior
/// statistics, one gate column per (task, layer) and one score column per
/// (embodiment, task). Empty cells mean "not measured at this row".
class MetricsWriter {
public:
    MetricsWriter(const std::filesystem::path& path, const std::vector<std::string>& tasks, int gate_layers,
                  const std::vector<std::string>& eval_cells);
    void row(const StepMetrics& m, const std::vector<std::vector<double>>& gates,
             const std::map<std::string, double>& scores = {});

private:
    std::ofstream out_;
    std::size_t n_tasks_ = 0;
    int layers_ = 0;
    std::vector<std::string> cells_;
};

/// gates[task][layer] for the given prompts; empty without the gated stack.
std::vector<std::vector<double>> gate_table(const Agent& agent, const std::vector<std::string>& prompts);

struct CellScore {
    std::string embodiment;
    std::string task;
    EvalResult result;
};

struct RunResult {
    Agent agent;
    std::vector<CellScore> scores;
    std::filesystem::path dir;
};

struct RunOptions {
    int pretrain_steps = 0;
    int behavior_steps = 0;
    std::string variant;                        // label in the manifest and score tables; defaults to the rung
    std::optional<std::filesystem::path> init;  // checkpoint to start from
    bool evaluate = true;
};

/// Trains one agent on the train embodiments and writes metrics.csv,
/// checkpoint.bin, manifest.json, config.txt and (when evaluating)
/// scores.csv into `dir`.
RunResult train_run(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& dir,
                    const RunOptions& opts, ReferenceCache& refs);

/// Evaluates `agent` on every (eval embodiment, task).
std::vector<CellScore> evaluate_cells(const ExperimentConfig& cfg, const Agent& agent,
                                      const std::vector<std::string>& embodiments, ReferenceCache& refs);

/// Reloads a run directory: config, manifest and checkpoint. Refuses runs
/// whose recorded dataset hashes differ from the files on disk unless
/// `allow_dataset_mismatch`.
struct LoadedRun {
    std::filesystem::path dir;
    ExperimentConfig cfg;
    RunManifest manifest;
    Agent agent;
};
LoadedRun load_run(const std::filesystem::path& dir, bool allow_dataset_mismatch = false);

/// Scores plus SVG plots (reward curve, gate trajectories, imagined-vs-real
/// traces) for a loaded run, written into `out_dir`.
std::vector<ScoreRow> evaluate_run(const LoadedRun& run, const std::filesystem::path& out_dir, ReferenceCache& refs);

/// Open-loop imagination along executed actions from the first posterior
/// state; returns predicted observations [actions.rows(), obs_dim].
Matrix imagine_observations(const Agent& agent, const Matrix& observations, const Matrix& actions,
                            const std::string& prompt, Rng& rng);

struct AblationResult {
    std::map<Rung, std::vector<ScoreRow>> tables;
    std::map<Rung, double> mean_normalized;  // over tasks and seeds
};

/// Trains every rung for cfg.n_seeds seeds on identical data, one agent per
/// (seed, task), and writes scores_<rung>.csv under output_dir/ablate.
AblationResult ablation_ladder(const ExperimentConfig& cfg, ReferenceCache& refs);

struct TransferResult {
    std::vector<ScoreRow> table;  // source and target rows, variants "full" and "no-tamf"
    double full_transfer_mean = 0.0;
    double no_tamf_transfer_mean = 0.0;
    int transfer_cells = 0;  // per variant
};

/// Trains one agent per (seed, task) on embodiments_train[0] and evaluates it
/// zero-shot on every other eval embodiment, for the full model and the
/// additive-fusion variant.
/// Writes output_dir/transfer/transfer.csv.
TransferResult transfer_protocol(const ExperimentConfig& cfg, ReferenceCache& refs);

}  // namespace wmb::harness
