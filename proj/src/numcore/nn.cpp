#include "wmb/numcore/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace wmb {

Tensor ParamSet::add(const std::string& name, Matrix init, bool frozen) {
    if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor t(std::move(init), !frozen);
    params_.push_back(Parameter{name, t, frozen});
    return t;
}

const Parameter* ParamSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return &p;
    return nullptr;
}

std::vector<Parameter> ParamSet::with_prefix(const std::string& prefix) const {
    std::vector<Parameter> out;
    for (const auto& p : params_)
        if (p.name.starts_with(prefix)) out.push_back(p);
    return out;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.size());
    return n;
}

void ParamSet::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

Linear Linear::create(ParamSet& ps, const std::string& name, int in, int out, Rng& rng,
                      bool frozen, double init_gain) {
    Matrix w = rng.normal_matrix(in, out) * (init_gain / std::sqrt(static_cast<double>(in)));
    Linear l;
    l.weight = ps.add(name + ".weight", std::move(w), frozen);
    l.bias = ps.add(name + ".bias", Matrix::Zero(1, out), frozen);
    return l;
}

AffineLayerNorm AffineLayerNorm::create(ParamSet& ps, const std::string& name, int dim) {
    AffineLayerNorm ln;
    ln.gain = ps.add(name + ".gain", Matrix::Ones(1, dim));
    ln.bias = ps.add(name + ".bias", Matrix::Zero(1, dim));
    return ln;
}

FreezeGuard::FreezeGuard(const std::vector<Parameter>& params) {
    for (const auto& p : params) {
        if (!p.tensor.requires_grad()) continue;
        Tensor t = p.tensor;
        t.set_requires_grad(false);
        frozen_.push_back(t);
    }
}

FreezeGuard::~FreezeGuard() {
    for (auto& t : frozen_) t.set_requires_grad(true);
}

Tensor tile_rows(const Tensor& x, int times) {
    if (times < 1) throw std::invalid_argument("tile_rows: times must be >= 1");
    if (times == 1) return x;
    std::vector<int> idx(static_cast<std::size_t>(times * x.rows()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i) % x.rows();
    return gather_rows(x, idx);
}

std::vector<Tensor> trainable_tensors(const std::vector<Parameter>& params) {
    std::vector<Tensor> out;
    for (const auto& p : params)
        if (!p.frozen) out.push_back(p.tensor);
    return out;
}

}  // namespace wmb
