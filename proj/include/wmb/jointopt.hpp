#pragma once

// The full agent, the joint objective and the two-phase training loop.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "wmb/behavior.hpp"
#include "wmb/toyworlds/dataset.hpp"

namespace wmb {

struct LossWeights {
    double lambda_wm = 1.0;
    double lambda_mllm = 1.0;
    double lambda_jbo = 0.1;
    double gamma = 0.99;
    /// Throws std::invalid_argument on negative weights or gamma outside (0, 1).
    void validate() const;
};

/// Which sequences train the text imagination / task mapper / lift.
enum class RewardFitSource {
    Demos,  // controller-generated episodes only (their tag names the behavior)
    All,
};

struct AgentConfig {
    ModelDims dims;
    bool use_tamf = true;
    LossWeights weights;
    WmLossOptions wm;
    BehaviorConfig behavior;
    AdamOptions adam;
    int batch = 16;
    int seq_len = 16;
    bool reward_fit = true;
    RewardFitSource reward_fit_source = RewardFitSource::Demos;
};

/// Every learned component. Model parameters (the joint objective) and
/// behavior parameters (policy, critic) live in separate sets.
struct Agent {
    AgentConfig cfg;
    ParamSet model;
    ParamSet behavior;
    TaskEncoder task;
    StubMllm mllm;
    TaskMapper map;
    TextAligner psi;
    LatentDecoder dec;
    WorldModel wm;
    Fusion fusion;
    TextImagination text;
    LatentLift lift;
    Policy policy;
    Critic critic;

    /// Throws std::invalid_argument if the fused and task-latent widths differ.
    static Agent create(const AgentConfig& cfg, std::uint64_t seed);

    /// Every parameter, model first, in checkpoint order.
    std::vector<Parameter> all_parameters() const;
    RolloutModels rollout_models() const { return {wm, fusion, dec, policy}; }
    BehaviorModels behavior_models() const { return {wm, fusion, dec, map, text, lift, policy, critic}; }
};

/// Bag-of-words rows for the prompt of each batch row.
Matrix prompt_bags(const std::vector<std::string>& prompts, int buckets);
std::vector<std::string> batch_prompts(const toy::SequenceBatch& batch, const PromptRegistry& prompts);

/// Everything computed from a sequence batch before the losses.
struct BatchForward {
    int T = 0;
    int B = 0;
    ObservedSequence seq;
    Tensor tau;         // [B, d_tau]
    FusionGates gates;  // per layer [B, 1]; empty without the gated stack
    Tensor e_v;         // [T * B, d_m]
    Tensor z;           // [T * B, d_z]
    Tensor obs;         // [T * B, obs_dim]
    std::vector<Matrix> actions;  // T - 1 entries [B, act_dim]
    std::vector<int> fit_rows;    // rows used by the reward fit
};

BatchForward forward_batch(const Agent& agent, const toy::SequenceBatch& batch, const Matrix& bags, Rng& rng);

/// sum_t mean_b (|e_v - ev_head(z)|^2 + |e_v - f_psi(tau)|^2) over time-stacked rows;
/// tau has B rows and is tiled over time.
Tensor mllm_loss(const Agent& agent, const Tensor& e_v, const Tensor& z, const Tensor& tau);

/// sum_h gamma^h mean_rows KL(wm_h || text_h). Throws on length mismatch.
Tensor jbo_loss(const std::vector<DiagGaussian>& wm, const std::vector<DiagGaussian>& text, double gamma);

/// L_JBO on imagined rollouts started from the last posterior state of every
/// sequence. The policy is held fixed but its actions stay differentiable
/// functions of the imagined latents.
Tensor jbo_term(const Agent& agent, const BatchForward& fwd, Rng& rng);

/// Fits the text imagination, task mapper and lift to the fused latents of
/// data sequences under their executed actions, with the world side held fixed.
/// Returns an undefined tensor when no row qualifies.
Tensor reward_fit_loss(const Agent& agent, const BatchForward& fwd);

struct TotalLoss {
    Tensor total;
    Tensor wm;    // undefined when lambda_wm = 0
    Tensor mllm;  // undefined when lambda_mllm = 0
    Tensor jbo;   // undefined when lambda_jbo = 0
    WmLoss wm_parts;
    double wm_value = 0.0;
    double mllm_value = 0.0;
    double jbo_value = 0.0;
};

/// lambda_wm L_WM + lambda_mllm L_MLLM + lambda_jbo L_JBO. A zero weight
/// drops its term from the graph. Throws std::runtime_error naming any
/// non-finite term.
TotalLoss total_loss(const Agent& agent, const BatchForward& fwd, Rng& rng);

struct StepMetrics {
    int step = 0;
    int phase = 1;
    double total = 0.0;
    double wm = 0.0;
    double wm_dynamics = 0.0;
    double wm_reconstruction = 0.0;
    double mllm = 0.0;
    double jbo = 0.0;
    double reward_fit = 0.0;
    double grad_norm = 0.0;  // global model gradient norm before clipping
    // Per-term gradient norms over model parameters; filled on log steps only.
    double grad_norm_wm = 0.0;
    double grad_norm_mllm = 0.0;
    double grad_norm_jbo = 0.0;
    BehaviorStats behavior;
    bool has_behavior = false;
};

/// Runs the two-phase schedule on one dataset.
class Trainer {
public:
    Trainer(Agent& agent, const toy::Dataset& data, const PromptRegistry& prompts, std::uint64_t seed);

    /// One joint-objective step on a fresh batch.
    StepMetrics model_step(bool log_grad_norms);
    /// One model step followed by one behavior step from the same batch's
    /// posterior states (one random time index per row).
    StepMetrics alternating_step(bool log_grad_norms);

    /// Phase 1 for `pretrain_steps`, then phase 2 for `behavior_steps`.
    /// `on_step` sees every step's metrics.
    void run(int pretrain_steps, int behavior_steps, int log_every,
             const std::function<void(const StepMetrics&)>& on_step = {});

    int steps_done() const { return step_; }
    Adam& model_optimizer() { return model_opt_; }

private:
    StepMetrics model_update(const BatchForward& fwd, bool log_grad_norms);

    Agent& agent_;
    const toy::Dataset& data_;
    const PromptRegistry& prompts_;
    Adam model_opt_;
    Adam policy_opt_;
    Adam critic_opt_;
    Rng batch_rng_;
    Rng model_rng_;
    Rng behavior_rng_;
    int step_ = 0;
};

/// Starts for behavior learning: one random time index per batch row, with
/// every tensor detached.
ImaginationStart behavior_start(const BatchForward& fwd, Rng& rng);

}  // namespace wmb
