#pragma once

// Policy, critic, latent imagination, text-conditioned imagination, semantic
// rewards and the actor-critic update on imagined trajectories.

#include <vector>

#include "wmb/encoders.hpp"
#include "wmb/optimizer.hpp"
#include "wmb/tamf.hpp"
#include "wmb/worldmodel.hpp"

namespace wmb {

/// Tanh-squashed diagonal Gaussian policy on the fused latent.
struct Policy {
    Linear trunk;
    Linear mean_head;
    Linear log_std_head;

    static Policy create(ParamSet& ps, const ModelDims& d, Rng& rng);
    /// Pre-squash action distribution.
    DiagGaussian dist(const Tensor& z) const;
    /// Reparameterized tanh(u), u ~ dist(z).
    Tensor sample(const Tensor& z, Rng& rng) const;
    /// tanh(mean), used for evaluation.
    Tensor mode(const Tensor& z) const;
    /// Copy sharing values but cut from the parameters, so gradients stop here.
    Policy detached() const;
};

struct Critic {
    Linear hidden;
    Linear out;

    static Critic create(ParamSet& ps, const ModelDims& d, Rng& rng);
    /// [n, d_z] -> [n, 1]
    Tensor operator()(const Tensor& z) const { return out(gelu(hidden(z))); }
};

/// Next task-aligned latent from concat[z_tau, a].
struct TextImagination {
    Linear hidden;
    Linear out;
    int d_z = 64;

    static TextImagination create(ParamSet& ps, const ModelDims& d, Rng& rng);
    DiagGaussian operator()(const Tensor& z_tau, const Tensor& action) const;
};

/// Shared projection taking the prior's log-std over s into z-space.
struct LatentLift {
    Linear map;
    static LatentLift create(ParamSet& ps, const ModelDims& d, Rng& rng);
    Tensor operator()(const Tensor& prior_log_std) const { return map(prior_log_std); }
};

/// World-model distribution in z-space: mean z, log-std lifted from the prior.
DiagGaussian lifted_wm_dist(const Tensor& z, const DiagGaussian& prior, const LatentLift& lift);

struct TextRolloutOptions {
    bool sample = false;  // draw the next input instead of propagating the mean
    Rng* rng = nullptr;   // required when sample is set
};

/// Element 0 is a point mass at f_map(tau) (log-std at the floor); element
/// h + 1 is the transition applied to element h's mean (or a draw) and
/// actions[h]. Returns actions.size() + 1 distributions.
std::vector<DiagGaussian> text_rollout(const TaskMapper& map, const TextImagination& text, const Tensor& tau,
                                       const std::vector<Tensor>& actions, const TextRolloutOptions& opts = {});

/// Mean over steps and rows of KL(wm_h || text_h). Throws on length mismatch.
Tensor traj_alignment_kl(const std::vector<DiagGaussian>& wm, const std::vector<DiagGaussian>& text);

/// Cosine similarity per row; degenerate rows give 0 and are counted.
CosineResult task_reward(const Tensor& z, const Tensor& z_tau_mean);

enum class ImaginationEv { Decoded, FrozenLast };

struct ImaginationStart {
    LatentState state;
    Tensor z;          // fused latent of state
    Tensor e_v;        // last real semantic embedding
    FusionGates gates;  // one [B, 1] column per layer, or empty
};

struct ImaginedTrajectory {
    std::vector<Tensor> z;              // H + 1 entries [B, d_z]
    std::vector<Tensor> actions;        // H entries [B, act_dim]
    std::vector<LatentState> states;    // H + 1 entries
    std::vector<DiagGaussian> priors;   // H entries, priors[h] produced states[h + 1]
    int horizon() const { return static_cast<int>(actions.size()); }
};

struct RolloutModels {
    const WorldModel& wm;
    const Fusion& fusion;
    const LatentDecoder& dec;
    const Policy& policy;
};

/// a_h ~ pi(z_h), prior transition, z_{h+1} = fusion(e_hat, state_{h+1}).
/// Throws std::runtime_error describing the step if a latent turns non-finite.
ImaginedTrajectory rollout(const RolloutModels& m, const ImaginationStart& start, int horizon, Rng& rng,
                           ImaginationEv ev_mode = ImaginationEv::Decoded, bool detach_actions = false);

/// R_H = bootstrap, R_h = r_h + gamma R_{h+1}; returns R_0 .. R_{H-1}.
std::vector<Tensor> compute_returns(const std::vector<Tensor>& rewards, const Tensor& bootstrap, double gamma);

/// -mean(R_0)
Tensor actor_loss(const std::vector<Tensor>& returns);
/// Mean over h and rows of (V(sg z_h) - sg R_h)^2.
Tensor critic_loss(const Critic& critic, const std::vector<Tensor>& z, const std::vector<Tensor>& returns);

struct BehaviorConfig {
    int horizon = 15;
    double gamma = 0.99;
    ImaginationEv ev_mode = ImaginationEv::Decoded;
    bool text_sampling = false;
    /// Weight of the discounted trajectory KL added to the actor loss.
    double alignment_weight = 0.0;
};

struct BehaviorModels {
    const WorldModel& wm;
    const Fusion& fusion;
    const LatentDecoder& dec;
    const TaskMapper& map;
    const TextImagination& text;
    const LatentLift& lift;
    const Policy& policy;
    const Critic& critic;
};

struct BehaviorStats {
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double mean_reward = 0.0;
    double mean_return = 0.0;
    double alignment_kl = 0.0;
    int degenerate_rewards = 0;
};

/// Imagined rewards for a rollout plus the paired text rollout.
struct ImaginedRewards {
    std::vector<Tensor> rewards;  // H entries [B, 1]
    std::vector<DiagGaussian> text;  // H + 1 entries
    int degenerate = 0;
};
ImaginedRewards imagined_rewards(const BehaviorModels& m, const ImaginedTrajectory& traj, const Tensor& tau,
                                 const BehaviorConfig& cfg, Rng& rng);

/// One actor step (every non-policy parameter frozen) then one critic step.
/// `frozen` lists the model parameters to hold fixed in the actor pass.
BehaviorStats behavior_update(const BehaviorModels& m, const ImaginationStart& start, const Tensor& tau,
                              const std::vector<Parameter>& frozen, Adam& policy_opt, Adam& critic_opt,
                              const BehaviorConfig& cfg, Rng& rng);

/// sum_i gamma^i mean_rows KL(wm_i || text_i).
Tensor discounted_kl(const std::vector<DiagGaussian>& wm, const std::vector<DiagGaussian>& text, double gamma);

}  // namespace wmb
