#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmb/numcore/rng.hpp"
#include "wmb/numcore/tensor.hpp"
#include "wmb/toyworlds/env.hpp"

namespace wmb::toy {

inline constexpr std::uint32_t kDatasetSchemaVersion = 1;

enum class Collector { Random, BangBang, Proportional };

struct EpisodeRecord {
    std::string embodiment;
    TaskId task = TaskId::Stand;
    Matrix observations;  // [T+1, obs_dim]
    Matrix actions;       // [T, act_dim]
    std::vector<double> true_rewards;  // [T]; evaluation only

    int length() const { return static_cast<int>(actions.rows()); }
    bool operator==(const EpisodeRecord& o) const;
};

struct Dataset {
    std::string embodiment;
    int obs_dim = 0;
    int act_dim = 0;
    int episode_length = kEpisodeLength;
    std::vector<EpisodeRecord> episodes;

    bool operator==(const Dataset&) const = default;
};

/// Collector used for episode `index`: two of every four episodes are
/// uniform-random, one bang-bang, one proportional.
Collector collector_for(int index);

/// Roll one episode with the given collector. `rng` drives both the collector
/// and environment noise.
EpisodeRecord run_episode(const Embodiment& e, const Task& tag_task, Collector c, Rng& rng,
                          int length = kEpisodeLength, double noise_std = kNoiseStd);

/// Scripted offline collection. Episode i uses a stream derived from
/// (seed, i); exploration episodes are tagged with tasks round-robin and
/// controller episodes with the task they track.
Dataset collect_offline(const Embodiment& e, const std::vector<Task>& tasks, int n_episodes,
                        std::uint64_t seed, int length = kEpisodeLength);

/// Flattened window of `k` observations ending at row `t`, oldest first;
/// rows before the episode start repeat row 0.
std::vector<double> observation_window(const Matrix& observations, int t, int k);

/// Contiguous sub-sequences laid out time-major: obs[t] is [batch, obs_dim].
struct SequenceBatch {
    int batch = 0;
    int seq_len = 0;
    std::vector<Matrix> obs;      // seq_len entries
    std::vector<Matrix> actions;  // seq_len - 1 entries, actions[t] is taken after obs[t]
    std::vector<Matrix> windows;  // seq_len entries of [batch, k * obs_dim]
    std::vector<TaskId> tasks;    // per row
    std::vector<std::string> embodiments;
    std::vector<int> episode_index;
    std::vector<int> start;
};

SequenceBatch sample_batch(const Dataset& ds, int batch, int seq_len, Rng& rng, int window = 4);

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// FNV-1a 64 over the file bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

}  // namespace wmb::toy
