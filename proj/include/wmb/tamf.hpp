#pragma once

// Task-aware modular fusion: a projection of [e_v, h, s] followed by residual
// layers that blend a semantic and a dynamics adapter with a task gate.

#include <optional>
#include <vector>

#include "wmb/model_dims.hpp"
#include "wmb/numcore/nn.hpp"

namespace wmb {

/// LayerNorm -> Linear(d_z, 2 d_adapter) -> GEGLU -> Linear(d_adapter, d_z) -> layerscale.
/// The residual add happens in the enclosing layer.
struct ExpertAdapter {
    AffineLayerNorm norm;
    Linear up;
    Linear down;
    Tensor layerscale;  // [1, d_z], starts at 0

    static ExpertAdapter create(ParamSet& ps, const std::string& name, int d_z, int d_adapter, Rng& rng);
    Tensor operator()(const Tensor& z) const;
};

/// p = sigmoid(W2 GELU(W1 LN(tau))), one scalar per row of tau.
struct GateNet {
    AffineLayerNorm norm;
    Linear w1;
    Linear w2;

    static GateNet create(ParamSet& ps, const std::string& name, int d_tau, Rng& rng);
    Tensor operator()(const Tensor& tau) const;
};

struct TamfLayer {
    ExpertAdapter sem;
    ExpertAdapter dyn;
    GateNet gate;

    /// z + (1 - p) sem(z) + p dyn(z); p is [rows, 1] or [1, 1].
    Tensor operator()(const Tensor& z, const Tensor& p) const;
};

/// Per-layer gate columns. Empty for fusions without gating.
using FusionGates = std::vector<Tensor>;

struct Tamf {
    Linear h_fuse;
    std::vector<TamfLayer> layers;
    int d_m = 64;
    int state_dim = 96;

    static Tamf create(ParamSet& ps, const ModelDims& d, Rng& rng);

    Tensor initial_fusion(const Tensor& e_v, const Tensor& features) const;
    /// One [n, 1] gate column per layer for the n rows of tau.
    FusionGates gates(const Tensor& tau) const;
    /// Full stack with explicit gates, each [rows, 1] or [1, 1].
    Tensor forward(const Tensor& e_v, const Tensor& features, const FusionGates& gates) const;
};

/// z = Linear(e_v) + Linear([h, s]); no task input.
struct AdditiveFusion {
    Linear semantic;
    Linear state;
    int d_m = 64;
    int state_dim = 96;

    static AdditiveFusion create(ParamSet& ps, const ModelDims& d, Rng& rng);
    Tensor operator()(const Tensor& e_v, const Tensor& features) const;
};

/// Either fusion behind one interface.
class Fusion {
public:
    static Fusion make_tamf(ParamSet& ps, const ModelDims& d, Rng& rng);
    static Fusion make_additive(ParamSet& ps, const ModelDims& d, Rng& rng);

    bool task_aware() const { return tamf_.has_value(); }
    const Tamf& tamf() const;
    /// Gates for the rows of tau; empty for the additive fusion.
    FusionGates gates(const Tensor& tau) const;
    /// Rows of e_v / features may be a multiple of the gate rows (time-stacked).
    Tensor operator()(const Tensor& e_v, const Tensor& features, const FusionGates& gates) const;

private:
    std::optional<Tamf> tamf_;
    std::optional<AdditiveFusion> additive_;
};

/// Expands [B, 1] gates to the time-stacked [T * B, 1] layout.
FusionGates tile_gates(const FusionGates& gates, int times);

/// Synthetic two-task routing problem. A teacher stack with random non-zero
/// layerscales defines the target: task A is the teacher with every gate
/// pinned to 0, task B with every gate pinned to 1. A fresh student (task
/// encoder plus stack) is trained on both tasks with Adam.
struct RoutingResult {
    std::vector<double> gates_a;  // per layer, after training
    std::vector<double> gates_b;
    double mean_separation = 0.0;  // mean over layers of |p_A - p_B|
    double initial_loss = 0.0;
    double final_loss = 0.0;
};
RoutingResult routing_separation(std::uint64_t seed, int steps = 2000, double lr = 3e-4);

}  // namespace wmb
