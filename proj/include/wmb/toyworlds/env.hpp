#pragma once

#include <span>
#include <string>
#include <vector>

#include "wmb/numcore/rng.hpp"

namespace wmb::toy {

inline constexpr double kDt = 0.1;
inline constexpr double kVelocityMax = 5.0;
inline constexpr double kNoiseStd = 0.01;
inline constexpr int kEpisodeLength = 100;

/// Damped point mass with `posture_dim` spring-like internal joints.
struct Embodiment {
    std::string name;
    double mass = 1.0;
    double damping = 0.1;
    double action_scale = 1.0;
    int posture_dim = 2;

    int obs_dim() const { return 3 + posture_dim; }
    int act_dim() const { return 1 + posture_dim; }
    /// Steady-state speed under a constant full-forward action.
    double max_speed() const { return action_scale * kDt / (mass * damping); }
};

/// The four shipped presets: light, heavy, segmented, springy.
const std::vector<Embodiment>& embodiment_presets();
const Embodiment& embodiment_by_name(const std::string& name);

enum class TaskId { Stand, Walk, Run };

struct Task {
    TaskId id = TaskId::Stand;
    std::string prompt;
    double target_speed = 0.0;
};

std::string to_string(TaskId id);
TaskId task_id_from_string(const std::string& s);
double target_speed(TaskId id);
Task make_task(TaskId id, std::string prompt);

struct EnvState {
    double position = 0.0;
    double velocity = 0.0;
    std::vector<double> posture;
    int step = 0;
};

EnvState reset_state(const Embodiment& e);

/// [sin(position), velocity, mean(posture), posture...]
std::vector<double> observe(const EnvState& s);

struct StepResult {
    EnvState state;
    std::vector<double> observation;
};

/// One Euler step. Actions are clamped to [-1, 1]; noise_std = 0 disables noise.
StepResult env_step(const EnvState& s, std::span<const double> action, const Embodiment& e,
                    Rng& rng, double noise_std = kNoiseStd);

/// exp(-(v - target)^2) * exp(-|posture|^2 / posture_dim), in (0, 1].
double true_reward(const EnvState& s, const Task& task);

/// Proportional speed controller with feedforward; the reference "expert".
std::vector<double> proportional_action(const EnvState& s, const Embodiment& e, double target_speed);

}  // namespace wmb::toy
