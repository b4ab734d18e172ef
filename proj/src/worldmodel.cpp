#include "wmb/worldmodel.hpp"

#include <stdexcept>

namespace wmb {

namespace {

void require_finite(const Tensor& x, const char* what) {
    if (!x.value().allFinite()) throw std::invalid_argument(std::string("world model: non-finite ") + what);
}

void require_shape(const Tensor& x, int rows, int cols, const char* what) {
    if (x.rows() != rows || x.cols() != cols)
        throw std::invalid_argument(std::string("world model: ") + what + " has shape " +
                                    Shape{x.rows(), x.cols()}.str() + ", expected " + Shape{rows, cols}.str());
}

DiagGaussian gaussian_head(const Tensor& raw, int d_s) {
    return DiagGaussian::from_raw(slice_cols(raw, 0, d_s), slice_cols(raw, d_s, 2 * d_s));
}

}  // namespace

LatentState initial_state(int batch, const ModelDims& d) {
    if (batch < 1) throw std::invalid_argument("initial_state: batch must be >= 1");
    Tensor mean = Tensor::zeros(batch, d.d_s);
    return {Tensor::zeros(batch, d.d_h), Tensor::zeros(batch, d.d_s),
            DiagGaussian(mean, Tensor::constant(batch, d.d_s, kLogStdMin))};
}

Gru Gru::create(ParamSet& ps, const std::string& name, int in, int d_h, Rng& rng) {
    Gru g;
    g.d_h = d_h;
    g.input = Linear::create(ps, name + ".input", in, 3 * d_h, rng);
    g.hidden = Linear::create(ps, name + ".hidden", d_h, 3 * d_h, rng);
    return g;
}

Tensor Gru::operator()(const Tensor& h, const Tensor& x) const {
    Tensor gx = input(x);
    Tensor gh = hidden(h);
    Tensor r = sigmoid(slice_cols(gx, 0, d_h) + slice_cols(gh, 0, d_h));
    Tensor u = sigmoid(slice_cols(gx, d_h, 2 * d_h) + slice_cols(gh, d_h, 2 * d_h));
    Tensor n = tanh(slice_cols(gx, 2 * d_h, 3 * d_h) + r * slice_cols(gh, 2 * d_h, 3 * d_h));
    // (1 - u) n + u h
    return n + u * (h - n);
}

WorldModel WorldModel::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    WorldModel wm;
    wm.dims = d;
    wm.gru = Gru::create(ps, "wm.gru", d.d_s + d.act_dim, d.d_h, rng);
    wm.embed = Linear::create(ps, "wm.embed", d.obs_dim, d.obs_embed, rng);
    wm.prior_hidden = Linear::create(ps, "wm.prior_hidden", d.d_h, d.head_hidden, rng);
    wm.prior_out = Linear::create(ps, "wm.prior_out", d.head_hidden, 2 * d.d_s, rng);
    wm.post_hidden = Linear::create(ps, "wm.post_hidden", d.d_h + d.obs_embed, d.head_hidden, rng);
    wm.post_out = Linear::create(ps, "wm.post_out", d.head_hidden, 2 * d.d_s, rng);
    return wm;
}

Tensor WorldModel::recurrent(const LatentState& prev, const Tensor& action) const {
    require_shape(action, prev.batch(), dims.act_dim, "action");
    require_finite(action, "action");
    return gru(prev.h, concat_cols({prev.s, action}));
}

DiagGaussian WorldModel::prior(const Tensor& h) const {
    return gaussian_head(prior_out(gelu(prior_hidden(h))), dims.d_s);
}

DiagGaussian WorldModel::posterior(const Tensor& h, const Tensor& obs) const {
    Tensor e = gelu(embed(obs));
    return gaussian_head(post_out(gelu(post_hidden(concat_cols({h, e})))), dims.d_s);
}

WmStep WorldModel::step(const LatentState& prev, const Tensor& action, const Tensor& obs, Rng& rng) const {
    require_shape(obs, prev.batch(), dims.obs_dim, "observation");
    require_finite(obs, "observation");
    Tensor h = recurrent(prev, action);
    DiagGaussian pr = prior(h);
    DiagGaussian po = posterior(h, obs);
    Tensor s = po.sample(rng);
    return {LatentState{h, s, po}, pr, po};
}

ImagineStep WorldModel::imagine(const LatentState& prev, const Tensor& action, Rng& rng) const {
    Tensor h = recurrent(prev, action);
    DiagGaussian pr = prior(h);
    Tensor s = pr.sample(rng);
    return {LatentState{h, s, pr}, pr};
}

ObservedSequence observe_sequence(const WorldModel& wm, const std::vector<Matrix>& obs,
                                  const std::vector<Matrix>& actions, Rng& rng) {
    if (obs.empty()) throw std::invalid_argument("observe_sequence: empty sequence");
    if (actions.size() + 1 != obs.size())
        throw std::invalid_argument("observe_sequence: need one action fewer than observations");
    const int B = static_cast<int>(obs[0].rows());
    ObservedSequence seq;
    LatentState state = initial_state(B, wm.dims);
    for (std::size_t t = 0; t < obs.size(); ++t) {
        Tensor a = t == 0 ? Tensor::zeros(B, wm.dims.act_dim) : Tensor(actions[t - 1]);
        WmStep st = wm.step(state, a, Tensor(obs[t]), rng);
        state = st.state;
        seq.states.push_back(st.state);
        seq.priors.push_back(st.prior);
        seq.posts.push_back(st.post);
    }
    return seq;
}

WmLoss wm_loss(const std::vector<DiagGaussian>& priors, const std::vector<DiagGaussian>& posts,
               const Tensor& predicted_obs, const Tensor& obs, const WmLossOptions& opts) {
    if (priors.empty() || priors.size() != posts.size())
        throw std::invalid_argument("wm_loss: priors and posteriors must be non-empty and aligned");
    const int B = priors[0].rows();
    const int T = static_cast<int>(priors.size());
    if (predicted_obs.rows() != T * B || obs.rows() != T * B || predicted_obs.cols() != obs.cols())
        throw std::invalid_argument("wm_loss: reconstruction tensors must be [T*B, obs_dim]");

    WmLoss out;
    std::vector<Tensor> terms;
    double raw = 0.0;
    for (int t = 0; t < T; ++t) {
        const auto& q = posts[static_cast<std::size_t>(t)];
        const auto& p = priors[static_cast<std::size_t>(t)];
        Tensor kl = kl_diag_gaussian(q, p);
        raw += kl.value().mean();
        if (opts.kl_balance)
            kl = scale(kl_diag_gaussian(q.detached(), p), 0.8) + scale(kl_diag_gaussian(q, p.detached()), 0.2);
        terms.push_back(mean(maximum(kl, opts.free_bits)));
    }
    Tensor dyn = terms[0];
    for (int t = 1; t < T; ++t) dyn = dyn + terms[static_cast<std::size_t>(t)];
    out.dynamics = dyn;
    out.reconstruction = scale(sum(square(obs - predicted_obs)), 1.0 / B);
    out.total = out.dynamics + out.reconstruction;
    out.mean_raw_kl = raw / T;
    return out;
}

Matrix stack_time(const std::vector<Matrix>& steps) {
    if (steps.empty()) throw std::invalid_argument("stack_time: no steps");
    const auto B = steps[0].rows();
    Matrix out(B * static_cast<Eigen::Index>(steps.size()), steps[0].cols());
    for (std::size_t t = 0; t < steps.size(); ++t) {
        if (steps[t].rows() != B || steps[t].cols() != steps[0].cols())
            throw std::invalid_argument("stack_time: ragged steps");
        out.middleRows(static_cast<Eigen::Index>(t) * B, B) = steps[t];
    }
    return out;
}

}  // namespace wmb
