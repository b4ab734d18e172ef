#include "wmb/numcore/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace wmb {

namespace {

double evaluate(const std::function<Tensor()>& f) {
    NoGradGuard guard;
    const double v = f().item();
    if (!std::isfinite(v)) throw std::domain_error("grad_check: objective is not finite");
    return v;
}

std::vector<Eigen::Index> pick_coords(Eigen::Index n, const GradCheckOptions& opts, Rng& rng) {
    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    if (!opts.max_coords_per_tensor || *opts.max_coords_per_tensor >= n) return all;
    // Partial Fisher-Yates.
    const auto k = static_cast<std::size_t>(*opts.max_coords_per_tensor);
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + rng.below(all.size() - i);
        std::swap(all[i], all[j]);
    }
    all.resize(k);
    return all;
}

}  // namespace

double grad_check_leaves(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                         const GradCheckOptions& opts) {
    for (auto& leaf : leaves) {
        if (!leaf.requires_grad()) throw std::invalid_argument("grad_check: leaf does not require grad");
        leaf.zero_grad();
    }
    {
        Tensor out = f();
        if (!std::isfinite(out.item())) throw std::domain_error("grad_check: objective is not finite");
        out.backward();
    }
    Rng rng(opts.coord_seed);
    double worst = 0.0;
    for (auto& leaf : leaves) {
        const Matrix analytic =
            leaf.has_grad() ? leaf.grad() : Matrix::Zero(leaf.rows(), leaf.cols());
        Matrix& v = leaf.mutable_value();
        for (Eigen::Index idx : pick_coords(v.size(), opts, rng)) {
            double& slot = v.data()[idx];
            const double saved = slot;
            slot = saved + opts.step;
            const double up = evaluate(f);
            slot = saved - opts.step;
            const double down = evaluate(f);
            slot = saved;
            const double numeric = (up - down) / (2.0 * opts.step);
            const double a = analytic.data()[idx];
            worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
        }
        leaf.zero_grad();
    }
    return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  const GradCheckOptions& opts) {
    Tensor leaf(x.value(), true);
    return grad_check_leaves([&] { return f(leaf); }, {leaf}, opts);
}

}  // namespace wmb
