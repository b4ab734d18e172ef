#pragma once

#include <cmath>

#include "wmb/numcore/rng.hpp"
#include "wmb/numcore/tensor.hpp"

namespace wmb {

inline const double kLogStdMin = std::log(0.1);
inline const double kLogStdMax = std::log(10.0);

/// Batched diagonal Gaussian: one distribution per row, mean and log_std [rows, dim].
/// log_std always lies in [log 0.1, log 10].
class DiagGaussian {
public:
    DiagGaussian() = default;
    /// log_std is hard-clamped into range.
    DiagGaussian(Tensor mean, Tensor log_std);
    /// Network-head constructor: log_std = log(10) * tanh(raw / log(10)), a
    /// smooth squash that stays strictly inside the clamp range.
    static DiagGaussian from_raw(Tensor mean, Tensor raw_log_std);

    const Tensor& mean() const { return mean_; }
    const Tensor& log_std() const { return log_std_; }
    Tensor std() const { return exp(log_std_); }
    int rows() const { return mean_.rows(); }
    int dim() const { return mean_.cols(); }

    /// Reparameterized draw mean + std * eps.
    Tensor sample(Rng& rng) const;
    DiagGaussian detached() const { return {detach(mean_), detach(log_std_)}; }

private:
    Tensor mean_;
    Tensor log_std_;
};

/// Closed-form KL(p || q) per row, shape [rows, 1].
Tensor kl_diag_gaussian(const DiagGaussian& p, const DiagGaussian& q);

struct CosineResult {
    Tensor value;          // [rows, 1], each in [-1, 1]
    int degenerate_rows = 0;  // rows where a norm fell below 1e-8; value 0 there
};

/// Row-wise cosine similarity.
CosineResult cosine_sim(const Tensor& a, const Tensor& b);

}  // namespace wmb
