#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "wmb/numcore/rng.hpp"
#include "wmb/numcore/tensor.hpp"

namespace wmb {

struct GradCheckOptions {
    double step = 1e-5;
    /// When set, only this many randomly chosen coordinates per tensor are
    /// perturbed; otherwise every coordinate is.
    std::optional<int> max_coords_per_tensor;
    std::uint64_t coord_seed = 0;
};

/// Max over checked coordinates of |analytic - central difference| / max(1, |analytic|)
/// for a scalar map of `x`. `x` is used as a leaf; its value is restored.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  const GradCheckOptions& opts = {});

/// Same check with respect to a set of existing leaves (typically parameters)
/// read by a closure. Every leaf must require grad.
double grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                         const GradCheckOptions& opts = {});

}  // namespace wmb
