#include "wmb/numcore/distributions.hpp"

#include <stdexcept>

namespace wmb {

namespace {
constexpr double kNormEps = 1e-8;
}

DiagGaussian::DiagGaussian(Tensor mean, Tensor log_std)
    : mean_(std::move(mean)), log_std_(clamp(log_std, kLogStdMin, kLogStdMax)) {
    if (!(mean_.shape() == log_std_.shape()))
        throw std::invalid_argument("DiagGaussian: mean " + mean_.shape().str() + " vs log_std " +
                                    log_std_.shape().str());
}

DiagGaussian DiagGaussian::from_raw(Tensor mean, Tensor raw_log_std) {
    DiagGaussian d;
    if (!(mean.shape() == raw_log_std.shape()))
        throw std::invalid_argument("DiagGaussian: mean " + mean.shape().str() + " vs log_std " +
                                    raw_log_std.shape().str());
    d.mean_ = std::move(mean);
    d.log_std_ = scale(tanh(scale(raw_log_std, 1.0 / kLogStdMax)), kLogStdMax);
    return d;
}

Tensor DiagGaussian::sample(Rng& rng) const {
    Tensor eps(rng.normal_matrix(rows(), dim()));
    return add(mean_, mul(std(), eps));
}

Tensor kl_diag_gaussian(const DiagGaussian& p, const DiagGaussian& q) {
    if (!(p.mean().shape() == q.mean().shape()))
        throw std::invalid_argument("kl_diag_gaussian: dims " + p.mean().shape().str() + " vs " +
                                    q.mean().shape().str());
    // log(sq/sp) + (sp^2 + (mp - mq)^2) / (2 sq^2) - 1/2, summed over dims.
    Tensor var_ratio = exp(scale(sub(p.log_std(), q.log_std()), 2.0));
    Tensor mahal = mul(square(sub(p.mean(), q.mean())), exp(scale(q.log_std(), -2.0)));
    Tensor per_dim = add_scalar(
        add(sub(q.log_std(), p.log_std()), scale(add(var_ratio, mahal), 0.5)), -0.5);
    return sum_cols(per_dim);
}

CosineResult cosine_sim(const Tensor& a, const Tensor& b) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument("cosine_sim: shapes " + a.shape().str() + " vs " +
                                    b.shape().str());
    CosineResult out;
    const Eigen::VectorXd na = a.value().rowwise().norm();
    const Eigen::VectorXd nb = b.value().rowwise().norm();
    Matrix keep(a.rows(), 1);
    Matrix pad(a.rows(), 1);
    for (int r = 0; r < a.rows(); ++r) {
        const bool bad = na(r) < kNormEps || nb(r) < kNormEps;
        keep(r, 0) = bad ? 0.0 : 1.0;
        pad(r, 0) = bad ? 1.0 : 0.0;
        out.degenerate_rows += bad ? 1 : 0;
    }
    // Degenerate rows get a unit pad under the root so the masked-out branch
    // stays finite in both passes.
    Tensor pad_t(pad);
    Tensor norm_a = sqrt(add(sum_cols(square(a)), pad_t));
    Tensor norm_b = sqrt(add(sum_cols(square(b)), pad_t));
    Tensor dot = sum_cols(mul(a, b));
    out.value = mul(div(dot, mul(norm_a, norm_b)), Tensor(keep));
    return out;
}

}  // namespace wmb
