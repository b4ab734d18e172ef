#include <doctest.h>

#include <chrono>

#include "wmb/numcore/grad_check.hpp"
#include "wmb/tamf.hpp"

using namespace wmb;

namespace {

struct Stack {
    ModelDims d;
    ParamSet ps;
    Tamf tamf;
    explicit Stack(std::uint64_t seed) {
        Rng rng(seed);
        tamf = Tamf::create(ps, d, rng);
    }
    void randomize_layerscales(Rng& rng) {
        for (auto& l : tamf.layers) {
            l.sem.layerscale.mutable_value() = rng.normal_matrix(1, d.d_z);
            l.dyn.layerscale.mutable_value() = rng.normal_matrix(1, d.d_z);
        }
    }
};

void randomize(const std::vector<Parameter>& params, Rng& rng) {
    for (auto p : params) p.tensor.mutable_value() = rng.normal_matrix(p.tensor.rows(), p.tensor.cols());
}

}  // namespace

TEST_CASE("initial fusion contract") {
    Stack s(0);
    Rng rng(1);
    Tensor ev(rng.normal_matrix(3, 64)), feat(rng.normal_matrix(3, 96));
    CHECK(s.tamf.initial_fusion(ev, feat).cols() == 64);
    CHECK_THROWS_AS(s.tamf.initial_fusion(ev, Tensor(rng.normal_matrix(3, 95))), std::invalid_argument);
    CHECK_THROWS_AS(s.tamf.initial_fusion(Tensor(rng.normal_matrix(2, 64)), feat), std::invalid_argument);

    s.tamf.h_fuse.weight.mutable_value().setZero();
    s.tamf.h_fuse.bias.mutable_value() = rng.normal_matrix(1, 64);
    Tensor z0 = s.tamf.initial_fusion(ev, feat);
    for (int r = 0; r < 3; ++r) CHECK(z0.value().row(r) == s.tamf.h_fuse.bias.value().row(0));
}

TEST_CASE("gate values") {
    Stack s(2);
    Rng rng(3);
    Tensor tau(rng.normal_matrix(1, 32));
    FusionGates g = s.tamf.gates(tau);
    REQUIRE(g.size() == 3);
    for (const auto& p : g) {
        CHECK(p.item() > 0.0);
        CHECK(p.item() < 1.0);
    }

    for (auto& l : s.tamf.layers) {
        l.gate.w1.weight.mutable_value().setZero();
        l.gate.w1.bias.mutable_value().setZero();
        l.gate.w2.weight.mutable_value().setZero();
        l.gate.w2.bias.mutable_value().setZero();
    }
    for (const auto& p : s.tamf.gates(tau)) CHECK(p.item() == 0.5);
}

TEST_CASE("gates depend on tau only") {
    Stack s(4);
    Rng rng(5);
    Matrix one = rng.normal_matrix(1, 32);
    Matrix rows(4, 32);
    for (int r = 0; r < 4; ++r) rows.row(r) = one.row(0);
    FusionGates g = s.tamf.gates(Tensor(rows));
    for (const auto& p : g)
        for (int r = 1; r < 4; ++r) CHECK(p.value()(r, 0) == p.value()(0, 0));

    // Gates are computed from tau before any state is seen; the fused output
    // changes with e_v and s while the gate values stay as computed.
    ParamSet fresh;
    Fusion f = Fusion::make_tamf(fresh, s.d, rng);
    Tensor tau(one);
    FusionGates before = f.gates(tau);
    (void)f(Tensor(rng.normal_matrix(1, 64)), Tensor(rng.normal_matrix(1, 96)), before);
    FusionGates after = f.gates(tau);
    for (std::size_t l = 0; l < before.size(); ++l) CHECK(before[l].value() == after[l].value());
}

TEST_CASE("residual identity at initialization") {
    Stack s(6);
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor ev(rng.normal_matrix(5, 64)), feat(rng.normal_matrix(5, 96)), tau(rng.normal_matrix(5, 32));
        Tensor z0 = s.tamf.initial_fusion(ev, feat);
        CHECK(s.tamf.forward(ev, feat, s.tamf.gates(tau)).value() == z0.value());
        for (const auto& l : s.tamf.layers) CHECK(l(z0, l.gate(tau)).value() == z0.value());
    }
}

TEST_CASE("branch annihilation under pinned gates") {
    Stack s(8);
    Rng rng(9);
    s.randomize_layerscales(rng);
    Tensor ev(rng.normal_matrix(4, 64)), feat(rng.normal_matrix(4, 96));
    const FusionGates closed(3, Tensor::scalar(0.0));
    const FusionGates open(3, Tensor::scalar(1.0));

    const Matrix z_closed = s.tamf.forward(ev, feat, closed).value();
    const Matrix z_open = s.tamf.forward(ev, feat, open).value();
    for (int l = 0; l < 3; ++l) randomize(s.ps.with_prefix("tamf.layer" + std::to_string(l) + ".dyn"), rng);
    CHECK(s.tamf.forward(ev, feat, closed).value() == z_closed);
    CHECK(s.tamf.forward(ev, feat, open).value() != z_open);

    const Matrix z_open2 = s.tamf.forward(ev, feat, open).value();
    for (int l = 0; l < 3; ++l) randomize(s.ps.with_prefix("tamf.layer" + std::to_string(l) + ".sem"), rng);
    CHECK(s.tamf.forward(ev, feat, open).value() == z_open2);
}

TEST_CASE("gate gradients stay local to their layer") {
    Stack s(10);
    Rng rng(11);
    s.randomize_layerscales(rng);
    Tensor tau(rng.normal_matrix(2, 32), true);
    for (int l = 0; l < 3; ++l) {
        s.ps.zero_grad();
        tau.zero_grad();
        sum(s.tamf.gates(tau)[static_cast<std::size_t>(l)]).backward();
        const std::string own = "tamf.layer" + std::to_string(l) + ".gate";
        for (const auto& p : s.ps.all()) {
            const bool has = p.tensor.has_grad() && !p.tensor.grad().isZero(0.0);
            if (p.name.starts_with(own) && p.name.find("w2.bias") != std::string::npos) CHECK(has);
            if (!p.name.starts_with(own)) CHECK_MESSAGE(!has, p.name);
        }
        CHECK(!tau.grad().isZero(0.0));
    }
}

TEST_CASE("time-stacked gates broadcast per batch row") {
    ModelDims d;
    ParamSet ps;
    Rng rng(13);
    Fusion f = Fusion::make_tamf(ps, d, rng);
    const Tamf& t = f.tamf();
    for (auto& p : ps.all())
        if (p.name.ends_with("layerscale")) p.tensor.mutable_value() = rng.normal_matrix(1, 64);
    const int B = 3, T = 4;
    Tensor tau(rng.normal_matrix(B, 32));
    Tensor ev(rng.normal_matrix(T * B, 64)), feat(rng.normal_matrix(T * B, 96));
    FusionGates g = f.gates(tau);
    Tensor stacked = f(ev, feat, g);
    Tensor manual = t.forward(ev, feat, tile_gates(g, T));
    CHECK(stacked.value() == manual.value());
    CHECK_THROWS_AS(f(Tensor(rng.normal_matrix(7, 64)), Tensor(rng.normal_matrix(7, 96)), g), std::invalid_argument);
}

TEST_CASE("additive fusion") {
    ModelDims d;
    ParamSet ps;
    Rng rng(14);
    Fusion f = Fusion::make_additive(ps, d, rng);
    CHECK_FALSE(f.task_aware());
    CHECK(f.gates(Tensor(rng.normal_matrix(2, 32))).empty());
    CHECK(ps.with_prefix("tamf.").empty());
    Tensor ev(rng.normal_matrix(2, 64)), feat(rng.normal_matrix(2, 96));
    CHECK(f(ev, feat, {}).cols() == 64);
    CHECK_THROWS_AS(f.tamf(), std::logic_error);
}

TEST_CASE("fusion gradients match finite differences") {
    Stack s(15);
    Rng rng(16);
    s.randomize_layerscales(rng);
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 12;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor ev(rng.normal_matrix(2, 64)), feat(rng.normal_matrix(2, 96)), tau(rng.normal_matrix(2, 32));
        Tensor probe(rng.normal_matrix(2, 64));
        opts.coord_seed = static_cast<std::uint64_t>(trial);
        auto full = [&] { return sum(s.tamf.forward(ev, feat, s.tamf.gates(tau)) * probe); };
        CHECK(grad_check_leaves(full, trainable_tensors(s.ps.all()), opts) < 1e-4);
        for (const auto& layer : s.tamf.layers) {
            Tensor z(rng.normal_matrix(2, 64));
            auto one = [&] { return sum(layer(z, layer.gate(tau)) * probe); };
            CHECK(grad_check_leaves(one, trainable_tensors(s.ps.all()), opts) < 1e-4);
        }
        auto wrt_inputs = [&](const Tensor& x) { return sum(square(s.tamf.forward(x, feat, s.tamf.gates(tau)))); };
        CHECK(grad_check(wrt_inputs, ev, opts) < 1e-4);
    }
}

TEST_CASE("routing separation on the synthetic two-task problem") {
    const auto t0 = std::chrono::steady_clock::now();
    RoutingResult r = routing_separation(0);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("separation " << r.mean_separation << " loss " << r.initial_loss << " -> " << r.final_loss << " in "
                          << secs << " s");
    CHECK(r.final_loss < r.initial_loss);
    CHECK(r.mean_separation > 0.2);
}
