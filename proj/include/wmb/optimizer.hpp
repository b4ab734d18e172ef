#pragma once

// Bias-corrected Adam with global-norm gradient clipping.

#include <cstdint>
#include <vector>

#include "wmb/numcore/nn.hpp"

namespace wmb {

struct AdamOptions {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 100.0;  // <= 0 disables clipping
};

class Adam {
public:
    /// Frozen parameters are dropped and never touched.
    explicit Adam(const std::vector<Parameter>& params, AdamOptions opts = {});

    /// Applies one update from the current gradients. Parameters without a
    /// gradient count as zero gradient. Throws std::runtime_error naming the
    /// first parameter whose gradient is non-finite. Returns the global
    /// gradient norm before clipping.
    double step();
    void zero_grad();

    std::int64_t step_count() const { return steps_; }
    const AdamOptions& options() const { return opts_; }
    AdamOptions& options() { return opts_; }
    const std::vector<Parameter>& params() const { return params_; }

private:
    std::vector<Parameter> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    AdamOptions opts_;
    std::int64_t steps_ = 0;
};

/// sqrt(sum of squared gradient entries) over the parameters that have one.
double global_grad_norm(const std::vector<Parameter>& params);

}  // namespace wmb
