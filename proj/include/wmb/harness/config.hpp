#pragma once

// Experiment configuration: a flat "key = value" text file.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmb/jointopt.hpp"

namespace wmb::harness {

/// Ablation rungs, cumulative: base uses additive fusion and L_WM only,
/// +mllm adds L_MLLM, +tamf swaps in the gated stack, +jbo adds L_JBO and
/// the behavior-side alignment.
enum class Rung { Base, Mllm, Tamf, Jbo };

std::string to_string(Rung r);
Rung rung_from_string(const std::string& s);
const std::vector<Rung>& all_rungs();
/// File-name form: base, mllm, tamf, jbo.
std::string rung_slug(Rung r);

/// Fusion override. Auto follows the rung; the transfer protocol uses
/// Additive for its no-TAMF variant.
enum class FusionChoice { Auto, Tamf, Additive };

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int n_seeds = 5;                 // seeds seed .. seed + n_seeds - 1 for ablate / transfer
    std::vector<std::string> embodiments_train{"light"};
    std::vector<std::string> embodiments_eval{"light"};
    std::vector<toy::TaskId> tasks{toy::TaskId::Walk};
    int episodes = 200;              // per embodiment
    std::uint64_t data_seed = 1000;
    int eval_episodes = 10;
    std::uint64_t eval_seed = 2000;
    std::uint64_t reference_seed = 3000;
    double eval_noise_std = toy::kNoiseStd;
    int pretrain_steps = 3000;
    int behavior_steps = 1500;
    int log_every = 50;
    Rung rung = Rung::Jbo;
    FusionChoice fusion = FusionChoice::Auto;
    AgentConfig agent;               // weights, dims, optimizer, batch shape
    std::string prompts;             // empty: built-in registry
    std::filesystem::path output_dir = "runs/default";

    /// Throws std::invalid_argument describing the first problem.
    void validate() const;
    /// Agent settings after applying the rung and the fusion override.
    AgentConfig effective_agent() const;
    /// Canonical "key = value" text covering every field, in schema order.
    std::string to_text() const;
    /// FNV-1a 64 of to_text(), hex.
    std::string hash() const;
};

/// Parses config text. Unknown or repeated keys, malformed values and failed
/// validation throw std::invalid_argument naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// One line per key: name, default, meaning. Used by --help and the docs.
std::string config_schema();

}  // namespace wmb::harness
