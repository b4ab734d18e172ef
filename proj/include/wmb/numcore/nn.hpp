#pragma once

#include <string>
#include <vector>

#include "wmb/numcore/rng.hpp"
#include "wmb/numcore/tensor.hpp"

namespace wmb {

struct Parameter {
    std::string name;
    Tensor tensor;
    bool frozen = false;
};

/// Ordered registry of named parameters. Order is registration order and is
/// the checkpoint order.
class ParamSet {
public:
    Tensor add(const std::string& name, Matrix init, bool frozen = false);

    const std::vector<Parameter>& all() const { return params_; }
    std::vector<Parameter>& all() { return params_; }
    const Parameter* find(const std::string& name) const;
    /// Parameters whose name starts with `prefix`.
    std::vector<Parameter> with_prefix(const std::string& prefix) const;
    std::size_t scalar_count() const;
    void zero_grad();

private:
    std::vector<Parameter> params_;
};

/// y = x W + b with W [in, out], b [1, out].
struct Linear {
    Tensor weight;
    Tensor bias;

    static Linear create(ParamSet& ps, const std::string& name, int in, int out, Rng& rng,
                         bool frozen = false, double init_gain = 1.0);
    Tensor operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }
    int in() const { return weight.rows(); }
    int out() const { return weight.cols(); }
};

/// layernorm followed by a per-channel gain and bias.
struct AffineLayerNorm {
    Tensor gain;
    Tensor bias;

    static AffineLayerNorm create(ParamSet& ps, const std::string& name, int dim);
    Tensor operator()(const Tensor& x) const { return add(mul(layernorm(x), gain), bias); }
};

/// Marks parameters as not requiring gradients for the guard's lifetime, so
/// graphs built meanwhile treat them as constants.
class FreezeGuard {
public:
    explicit FreezeGuard(const std::vector<Parameter>& params);
    ~FreezeGuard();
    FreezeGuard(const FreezeGuard&) = delete;
    FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
    std::vector<Tensor> frozen_;
};

/// Repeats a [B, c] block `times` times vertically: row t * B + b is row b.
Tensor tile_rows(const Tensor& x, int times);

/// Tensor of every parameter in `params` that is trainable.
std::vector<Tensor> trainable_tensors(const std::vector<Parameter>& params);

}  // namespace wmb
