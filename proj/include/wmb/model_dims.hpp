#pragma once

namespace wmb {

/// Layer sizes shared by every model component.
struct ModelDims {
    int obs_dim = 5;
    int act_dim = 3;
    int window = 4;        // observations per semantic window
    int hash_buckets = 64;  // prompt bag-of-words size
    int task_hidden = 64;
    int d_tau = 32;
    int mllm_hidden = 128;
    int d_m = 64;
    int psi_hidden = 64;
    int d_z = 64;
    int d_h = 64;
    int d_s = 32;
    int obs_embed = 16;
    int head_hidden = 64;  // prior / posterior heads
    int tamf_layers = 3;
    int d_adapter = 64;
    int policy_hidden = 64;
    int critic_hidden = 64;
    int text_hidden = 128;

    int state_dim() const { return d_h + d_s; }
};

}  // namespace wmb
