#include "wmb/tamf.hpp"

#include <cmath>
#include <stdexcept>

#include "wmb/encoders.hpp"
#include "wmb/optimizer.hpp"

namespace wmb {

ExpertAdapter ExpertAdapter::create(ParamSet& ps, const std::string& name, int d_z, int d_adapter, Rng& rng) {
    ExpertAdapter a;
    a.norm = AffineLayerNorm::create(ps, name + ".norm", d_z);
    a.up = Linear::create(ps, name + ".up", d_z, 2 * d_adapter, rng);
    a.down = Linear::create(ps, name + ".down", d_adapter, d_z, rng);
    a.layerscale = ps.add(name + ".layerscale", Matrix::Zero(1, d_z));
    return a;
}

Tensor ExpertAdapter::operator()(const Tensor& z) const {
    return down(geglu(up(norm(z)))) * layerscale;
}

GateNet GateNet::create(ParamSet& ps, const std::string& name, int d_tau, Rng& rng) {
    GateNet g;
    g.norm = AffineLayerNorm::create(ps, name + ".norm", d_tau);
    g.w1 = Linear::create(ps, name + ".w1", d_tau, d_tau, rng);
    g.w2 = Linear::create(ps, name + ".w2", d_tau, 1, rng);
    return g;
}

Tensor GateNet::operator()(const Tensor& tau) const { return sigmoid(w2(gelu(w1(norm(tau))))); }

Tensor TamfLayer::operator()(const Tensor& z, const Tensor& p) const {
    Tensor one_minus_p = add_scalar(neg(p), 1.0);
    return z + one_minus_p * sem(z) + p * dyn(z);
}

Tamf Tamf::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    Tamf t;
    t.d_m = d.d_m;
    t.state_dim = d.state_dim();
    t.h_fuse = Linear::create(ps, "tamf.h_fuse", d.d_m + d.state_dim(), d.d_z, rng);
    for (int l = 0; l < d.tamf_layers; ++l) {
        const std::string base = "tamf.layer" + std::to_string(l);
        TamfLayer layer;
        layer.sem = ExpertAdapter::create(ps, base + ".sem", d.d_z, d.d_adapter, rng);
        layer.dyn = ExpertAdapter::create(ps, base + ".dyn", d.d_z, d.d_adapter, rng);
        layer.gate = GateNet::create(ps, base + ".gate", d.d_tau, rng);
        t.layers.push_back(std::move(layer));
    }
    return t;
}

Tensor Tamf::initial_fusion(const Tensor& e_v, const Tensor& features) const {
    if (e_v.cols() != d_m || features.cols() != state_dim || e_v.rows() != features.rows())
        throw std::invalid_argument("fusion: e_v " + e_v.shape().str() + " and state " + features.shape().str() +
                                    " do not match widths " + std::to_string(d_m) + " and " +
                                    std::to_string(state_dim));
    return h_fuse(concat_cols({e_v, features}));
}

FusionGates Tamf::gates(const Tensor& tau) const {
    FusionGates out;
    for (const auto& l : layers) out.push_back(l.gate(tau));
    return out;
}

Tensor Tamf::forward(const Tensor& e_v, const Tensor& features, const FusionGates& g) const {
    if (g.size() != layers.size())
        throw std::invalid_argument("fusion: expected " + std::to_string(layers.size()) + " gate columns, got " +
                                    std::to_string(g.size()));
    Tensor z = initial_fusion(e_v, features);
    for (std::size_t l = 0; l < layers.size(); ++l) z = layers[l](z, g[l]);
    return z;
}

AdditiveFusion AdditiveFusion::create(ParamSet& ps, const ModelDims& d, Rng& rng) {
    AdditiveFusion f;
    f.d_m = d.d_m;
    f.state_dim = d.state_dim();
    f.semantic = Linear::create(ps, "addfuse.semantic", d.d_m, d.d_z, rng);
    f.state = Linear::create(ps, "addfuse.state", d.state_dim(), d.d_z, rng);
    return f;
}

Tensor AdditiveFusion::operator()(const Tensor& e_v, const Tensor& features) const {
    if (e_v.cols() != d_m || features.cols() != state_dim || e_v.rows() != features.rows())
        throw std::invalid_argument("fusion: e_v " + e_v.shape().str() + " and state " + features.shape().str() +
                                    " do not match");
    return semantic(e_v) + state(features);
}

Fusion Fusion::make_tamf(ParamSet& ps, const ModelDims& d, Rng& rng) {
    Fusion f;
    f.tamf_ = Tamf::create(ps, d, rng);
    return f;
}

Fusion Fusion::make_additive(ParamSet& ps, const ModelDims& d, Rng& rng) {
    Fusion f;
    f.additive_ = AdditiveFusion::create(ps, d, rng);
    return f;
}

const Tamf& Fusion::tamf() const {
    if (!tamf_) throw std::logic_error("fusion: additive fusion has no gated stack");
    return *tamf_;
}

FusionGates Fusion::gates(const Tensor& tau) const { return tamf_ ? tamf_->gates(tau) : FusionGates{}; }

Tensor Fusion::operator()(const Tensor& e_v, const Tensor& features, const FusionGates& g) const {
    if (tamf_) {
        FusionGates expanded = g;
        for (auto& p : expanded) {
            if (p.rows() == 1 || p.rows() == e_v.rows()) continue;
            if (e_v.rows() % p.rows() != 0)
                throw std::invalid_argument("fusion: gate rows " + std::to_string(p.rows()) +
                                            " do not divide input rows " + std::to_string(e_v.rows()));
            p = tile_rows(p, e_v.rows() / p.rows());
        }
        return tamf_->forward(e_v, features, expanded);
    }
    return (*additive_)(e_v, features);
}

FusionGates tile_gates(const FusionGates& gates, int times) {
    FusionGates out;
    for (const auto& p : gates) out.push_back(tile_rows(p, times));
    return out;
}

RoutingResult routing_separation(std::uint64_t seed, int steps, double lr) {
    ModelDims d;
    const Rng base(seed);
    Rng teacher_rng = base.derive(1);
    ParamSet teacher_ps;
    Tamf teacher = Tamf::create(teacher_ps, d, teacher_rng);
    for (auto& l : teacher.layers) {
        l.sem.layerscale.mutable_value() = teacher_rng.uniform_matrix(1, d.d_z, 0.5, 1.0);
        l.dyn.layerscale.mutable_value() = teacher_rng.uniform_matrix(1, d.d_z, 0.5, 1.0);
    }

    Rng student_rng = base.derive(2);
    ParamSet ps;
    TaskEncoder task = TaskEncoder::create(ps, d, student_rng);
    Tamf student = Tamf::create(ps, d, student_rng);
    // Shared input projection so the problem is purely about the adapters and gates.
    student.h_fuse.weight.mutable_value() = teacher.h_fuse.weight.value();
    student.h_fuse.bias.mutable_value() = teacher.h_fuse.bias.value();

    const Matrix bag_a = prompt_bag_of_words("stand still upright", d.hash_buckets);
    const Matrix bag_b = prompt_bag_of_words("run forward fast", d.hash_buckets);
    Adam opt(ps.all(), AdamOptions{lr, 0.9, 0.999, 1e-8, 100.0});
    Rng data = base.derive(3);
    const int B = 16;
    const FusionGates closed(d.tamf_layers, Tensor::scalar(0.0));
    const FusionGates open(d.tamf_layers, Tensor::scalar(1.0));

    auto make_batch = [&](Rng& r, Tensor& ev, Tensor& feat, Tensor& target_a, Tensor& target_b) {
        ev = Tensor(r.normal_matrix(B, d.d_m));
        feat = Tensor(r.normal_matrix(B, d.state_dim()));
        NoGradGuard ng;
        target_a = teacher.forward(ev, feat, closed);
        target_b = teacher.forward(ev, feat, open);
    };
    auto loss_of = [&](const Tensor& ev, const Tensor& feat, const Tensor& ta, const Tensor& tb) {
        Tensor tau_a = task(Tensor(bag_a));
        Tensor tau_b = task(Tensor(bag_b));
        Tensor za = student.forward(ev, feat, student.gates(tau_a));
        Tensor zb = student.forward(ev, feat, student.gates(tau_b));
        return mean(square(za - ta)) + mean(square(zb - tb));
    };

    RoutingResult res;
    Rng probe_rng = base.derive(4);
    Tensor pev, pfeat, pta, ptb;
    make_batch(probe_rng, pev, pfeat, pta, ptb);
    {
        NoGradGuard ng;
        res.initial_loss = loss_of(pev, pfeat, pta, ptb).item();
    }
    for (int i = 0; i < steps; ++i) {
        Tensor ev, feat, ta, tb;
        make_batch(data, ev, feat, ta, tb);
        opt.zero_grad();
        loss_of(ev, feat, ta, tb).backward();
        opt.step();
    }
    NoGradGuard ng;
    res.final_loss = loss_of(pev, pfeat, pta, ptb).item();
    const FusionGates ga = student.gates(task(Tensor(bag_a)));
    const FusionGates gb = student.gates(task(Tensor(bag_b)));
    for (std::size_t l = 0; l < ga.size(); ++l) {
        res.gates_a.push_back(ga[l].item());
        res.gates_b.push_back(gb[l].item());
        res.mean_separation += std::abs(ga[l].item() - gb[l].item());
    }
    res.mean_separation /= static_cast<double>(ga.size());
    return res;
}

}  // namespace wmb
