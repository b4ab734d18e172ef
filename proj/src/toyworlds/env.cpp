#include "wmb/toyworlds/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wmb::toy {

namespace {
constexpr double kPostureRate = 0.5;
constexpr double kControllerGain = 2.0;
}  // namespace

const std::vector<Embodiment>& embodiment_presets() {
    // Steady-state top speeds: light 1.0, heavy 4.0, segmented 3.75, springy 4.17.
    static const std::vector<Embodiment> presets = {
        {"light", 1.0, 0.10, 1.0, 2},
        {"heavy", 4.0, 0.05, 8.0, 2},
        {"segmented", 2.0, 0.08, 6.0, 2},
        {"springy", 1.5, 0.12, 7.5, 2},
    };
    return presets;
}

const Embodiment& embodiment_by_name(const std::string& name) {
    for (const auto& e : embodiment_presets())
        if (e.name == name) return e;
    throw std::invalid_argument("unknown embodiment '" + name +
                                "' (expected light, heavy, segmented or springy)");
}

std::string to_string(TaskId id) {
    switch (id) {
        case TaskId::Stand: return "stand";
        case TaskId::Walk: return "walk";
        case TaskId::Run: return "run";
    }
    return "?";
}

TaskId task_id_from_string(const std::string& s) {
    if (s == "stand") return TaskId::Stand;
    if (s == "walk") return TaskId::Walk;
    if (s == "run") return TaskId::Run;
    throw std::invalid_argument("unknown task '" + s + "' (expected stand, walk or run)");
}

double target_speed(TaskId id) {
    switch (id) {
        case TaskId::Stand: return 0.0;
        case TaskId::Walk: return 1.0;
        case TaskId::Run: return 3.0;
    }
    return 0.0;
}

Task make_task(TaskId id, std::string prompt) { return Task{id, std::move(prompt), target_speed(id)}; }

EnvState reset_state(const Embodiment& e) {
    EnvState s;
    s.posture.assign(static_cast<std::size_t>(e.posture_dim), 0.0);
    return s;
}

std::vector<double> observe(const EnvState& s) {
    std::vector<double> obs;
    obs.reserve(3 + s.posture.size());
    obs.push_back(std::sin(s.position));
    obs.push_back(s.velocity);
    double m = 0.0;
    for (double p : s.posture) m += p;
    obs.push_back(s.posture.empty() ? 0.0 : m / static_cast<double>(s.posture.size()));
    obs.insert(obs.end(), s.posture.begin(), s.posture.end());
    return obs;
}

StepResult env_step(const EnvState& s, std::span<const double> action, const Embodiment& e,
                    Rng& rng, double noise_std) {
    if (static_cast<int>(action.size()) != e.act_dim())
        throw std::invalid_argument("env_step: action has " + std::to_string(action.size()) +
                                    " entries, expected " + std::to_string(e.act_dim()));
    for (double a : action)
        if (!std::isfinite(a)) throw std::invalid_argument("env_step: non-finite action");

    auto clamp1 = [](double a) { return std::clamp(a, -1.0, 1.0); };
    StepResult out;
    EnvState& n = out.state;
    const double noise = noise_std > 0.0 ? noise_std * rng.normal() : 0.0;
    n.velocity = (1.0 - e.damping) * s.velocity + (e.action_scale / e.mass) * clamp1(action[0]) * kDt + noise;
    n.velocity = std::clamp(n.velocity, -kVelocityMax, kVelocityMax);
    n.posture.resize(s.posture.size());
    for (std::size_t j = 0; j < s.posture.size(); ++j)
        n.posture[j] = s.posture[j] + kPostureRate * (clamp1(action[j + 1]) - s.posture[j]) * kDt;
    n.position = s.position + n.velocity * kDt;
    n.step = s.step + 1;
    out.observation = observe(n);
    return out;
}

double true_reward(const EnvState& s, const Task& task) {
    const double dv = s.velocity - task.target_speed;
    double p2 = 0.0;
    for (double p : s.posture) p2 += p * p;
    const double dim = s.posture.empty() ? 1.0 : static_cast<double>(s.posture.size());
    return std::exp(-dv * dv) * std::exp(-p2 / dim);
}

std::vector<double> proportional_action(const EnvState& s, const Embodiment& e, double target) {
    std::vector<double> a(static_cast<std::size_t>(e.act_dim()), 0.0);
    const double feedforward = e.damping * e.mass * target / (e.action_scale * kDt);
    a[0] = std::clamp(feedforward + kControllerGain * (target - s.velocity), -1.0, 1.0);
    return a;
}

}  // namespace wmb::toy
