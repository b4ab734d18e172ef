#pragma once

// Real-environment evaluation and min-max normalized scoring.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wmb/jointopt.hpp"

namespace wmb::harness {

struct EvalOptions {
    int n_episodes = 10;
    int length = toy::kEpisodeLength;
    double noise_std = toy::kNoiseStd;
};

/// Per-episode returns and, for the first episode, the trace used by the
/// imagined-vs-real plot.
struct AgentRollout {
    std::vector<double> returns;
    Matrix observations;  // [length + 1, obs_dim], episode 0
    Matrix actions;       // [length, act_dim], episode 0
    std::vector<double> rewards;  // episode 0
};

/// Runs the policy mode on posterior states filtered from the streamed
/// observations. All episodes advance in lockstep as batch rows.
AgentRollout run_agent(const Agent& agent, const toy::Embodiment& e, const toy::Task& task, Rng& rng,
                       const EvalOptions& opts = {});

/// Mean returns of the uniform-random policy and the proportional controller.
struct References {
    double random = 0.0;
    double expert = 0.0;
};

References compute_references(const toy::Embodiment& e, const toy::Task& task, std::uint64_t seed,
                              const EvalOptions& opts = {});

/// On-disk cache of reference returns, keyed by embodiment, task, episode
/// count, length, noise and seed. Missing entries are computed and stored.
class ReferenceCache {
public:
    explicit ReferenceCache(std::filesystem::path path = {});
    References get(const toy::Embodiment& e, const toy::Task& task, std::uint64_t seed, const EvalOptions& opts = {});

private:
    std::filesystem::path path_;
    std::map<std::string, References> entries_;
};

/// (raw - random) / (expert - random). Throws std::invalid_argument unless
/// expert > random.
double normalize(double raw, const References& refs);

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;  // sample standard deviation / sqrt(n); 0 for n = 1
};
MeanSe mean_se(const std::vector<double>& xs);

struct EvalResult {
    double raw = 0.0;         // mean return over episodes
    double normalized = 0.0;  // normalized mean return
    double normalized_se = 0.0;  // over episodes
    References refs;
};

EvalResult evaluate_agent(const Agent& agent, const toy::Embodiment& e, const toy::Task& task,
                          const References& refs, std::uint64_t seed, const EvalOptions& opts = {});

struct ScoreRow {
    std::string embodiment;
    std::string task;
    std::string rung;
    double raw_mean = 0.0;
    double normalized_mean = 0.0;
    double standard_error = 0.0;  // of the normalized score over seeds
    int n_seeds = 0;
};

/// Aggregates per-seed results into one row.
ScoreRow aggregate(const std::string& embodiment, const std::string& task, const std::string& rung,
                   const std::vector<EvalResult>& per_seed);

void write_score_table(const std::vector<ScoreRow>& rows, const std::filesystem::path& path);
std::vector<ScoreRow> read_score_table(const std::filesystem::path& path);

}  // namespace wmb::harness
