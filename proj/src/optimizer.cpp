#include "wmb/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace wmb {

Adam::Adam(const std::vector<Parameter>& params, AdamOptions opts) : opts_(opts) {
    for (const auto& p : params) {
        if (p.frozen) continue;
        params_.push_back(p);
        m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
        v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    }
}

double global_grad_norm(const std::vector<Parameter>& params) {
    double sq = 0.0;
    for (const auto& p : params)
        if (p.tensor.has_grad()) sq += p.tensor.grad().squaredNorm();
    return std::sqrt(sq);
}

double Adam::step() {
    for (const auto& p : params_)
        if (p.tensor.has_grad() && !p.tensor.grad().allFinite())
            throw std::runtime_error("optimizer: non-finite gradient in parameter '" + p.name + "'");
    const double norm = global_grad_norm(params_);
    const double clip = opts_.clip_norm > 0.0 && norm > opts_.clip_norm ? opts_.clip_norm / norm : 1.0;

    ++steps_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].tensor;
        if (t.has_grad()) {
            const Matrix g = t.grad() * clip;
            m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
            v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseProduct(g);
        } else {
            m_[i] *= opts_.beta1;
            v_[i] *= opts_.beta2;
        }
        if (m_[i].isZero(0.0)) continue;
        t.mutable_value().array() -=
            opts_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opts_.eps);
    }
    return norm;
}

void Adam::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

}  // namespace wmb
