#pragma once

// Recurrent state-space model with diagonal-Gaussian stochastic latents.

#include <vector>

#include "wmb/model_dims.hpp"
#include "wmb/numcore/distributions.hpp"
#include "wmb/numcore/nn.hpp"

namespace wmb {

struct LatentState {
    Tensor h;             // [B, d_h]
    Tensor s;             // [B, d_s]
    DiagGaussian s_dist;  // distribution s was drawn from

    int batch() const { return h.rows(); }
    /// concat[h, s], [B, d_h + d_s]
    Tensor features() const { return concat_cols({h, s}); }
    LatentState detached() const { return {detach(h), detach(s), s_dist.detached()}; }
};

/// h = 0, s = 0, s_dist = N(0, 0.1^2 I).
LatentState initial_state(int batch, const ModelDims& d);

/// Gated recurrent cell. Gate order in the 3*d_h projections: reset, update, candidate.
struct Gru {
    Linear input;   // [in, 3 d_h]
    Linear hidden;  // [d_h, 3 d_h]
    int d_h = 64;

    static Gru create(ParamSet& ps, const std::string& name, int in, int d_h, Rng& rng);
    Tensor operator()(const Tensor& h, const Tensor& x) const;
};

struct WmStep {
    LatentState state;  // carries the posterior
    DiagGaussian prior;
    DiagGaussian post;
};

struct ImagineStep {
    LatentState state;  // carries the prior
    DiagGaussian prior;
};

struct WorldModel {
    Gru gru;
    Linear embed;
    Linear prior_hidden, prior_out;
    Linear post_hidden, post_out;
    ModelDims dims;

    static WorldModel create(ParamSet& ps, const ModelDims& d, Rng& rng);

    Tensor recurrent(const LatentState& prev, const Tensor& action) const;
    DiagGaussian prior(const Tensor& h) const;
    DiagGaussian posterior(const Tensor& h, const Tensor& obs) const;

    /// Throws std::invalid_argument on shape mismatch or non-finite input.
    WmStep step(const LatentState& prev, const Tensor& action, const Tensor& obs, Rng& rng) const;
    ImagineStep imagine(const LatentState& prev, const Tensor& action, Rng& rng) const;
};

/// Posterior filtering over a sequence. Step 0 starts from initial_state
/// with a zero action; step t > 0 uses actions[t - 1].
struct ObservedSequence {
    std::vector<LatentState> states;
    std::vector<DiagGaussian> priors;
    std::vector<DiagGaussian> posts;
};
ObservedSequence observe_sequence(const WorldModel& wm, const std::vector<Matrix>& obs,
                                  const std::vector<Matrix>& actions, Rng& rng);

struct WmLossOptions {
    double free_bits = 1.0;
    /// Split the KL into a prior-fitting part (0.8, posterior detached) and a
    /// posterior-regularizing part (0.2, prior detached). Off by default.
    bool kl_balance = false;
};

struct WmLoss {
    Tensor total;
    Tensor dynamics;        // sum_t mean_b max(KL_t, free_bits)
    Tensor reconstruction;  // sum_t mean_b |x_t - x_hat_t|^2
    double mean_raw_kl = 0.0;  // before the free-bits clamp, averaged over t and b
};

/// predicted_obs and obs are time-stacked [T * B, obs_dim] with row t * B + b.
WmLoss wm_loss(const std::vector<DiagGaussian>& priors, const std::vector<DiagGaussian>& posts,
               const Tensor& predicted_obs, const Tensor& obs, const WmLossOptions& opts = {});

/// Time-stacks a vector of [B, c] matrices into [T * B, c].
Matrix stack_time(const std::vector<Matrix>& steps);

}  // namespace wmb
