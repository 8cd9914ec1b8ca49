// SPDX-License-Identifier: Apache-2.0
//
// Clipping rule against an independent scalar simulation, AdaDelta against a
// scalar trace oracle, loss decomposition invariants, batching contracts.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqattn/batching.hpp"
#include "seqattn/loss.hpp"
#include "seqattn/model.hpp"
#include "seqattn/optimizer.hpp"
#include "seqattn/rng.hpp"

using namespace seqattn;

namespace {

// Independent scalar simulation of the clipping listing, tracking only the
// gradient norm. Uses the same fixed-point-exact incremental update and
// log-space comparison as the implementation (algebraically identical to the
// listing; the boundary cases are exact-equality comparisons).
struct ClipSim {
    double elog = 0, elog2 = 0, rho = 0.99, kappa = 1.0;
    std::uint64_t nsteps = 0;

    // returns the output norm
    double feed(double ng, bool* rescaled = nullptr) {
        if (ng == 0) {
            ++nsteps;
            if (rescaled) *rescaled = false;
            return 0;
        }
        const double l = std::log(ng);
        const double decay = std::min(rho, double(nsteps) / double(nsteps + 1));
        elog += (1 - decay) * (l - elog);
        elog2 += (1 - rho) * (l * l - elog2);
        const double log_thr = elog + kappa * std::sqrt(std::max(0.0, elog2 - elog * elog));
        ++nsteps;
        const bool r = l > log_thr;
        if (rescaled) *rescaled = r;
        return r ? ng * std::exp(elog - l) : ng;
    }
};

Model<double> tiny_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.feature_dim = 3;
    cfg.maxout_widths = {5, 5};
    cfg.maxout_pieces = 2;
    cfg.hidden = 3;
    cfg.state = 4;
    cfg.embed = 3;
    cfg.scorer_hidden = 4;
    cfg.gate_hidden = 3;
    cfg.head_width = 5;
    cfg.head_pieces = 2;
    return Model<double>(cfg, Vocabulary::from_content({"a", "b", "c"}), seed);
}

std::vector<double> store_grads(const ParamStore<double>& store) {
    std::vector<double> out;
    for (const auto& e : store.entries())
        for (std::size_t i = 0; i < e.grad.numel(); ++i) out.push_back(e.grad[i]);
    return out;
}

} // namespace

TEST_CASE("first clip step never rescales at grad_scale 1") {
    for (double magnitude : {1e-6, 0.5, 3.0, 1e4}) {
        ClipState<double> clip;
        std::vector<double> g = {magnitude, 0.0, -magnitude};
        auto r = adaptive_clip(g, clip);
        CHECK_FALSE(r.rescaled);
        CHECK(r.output_norm == r.scaled_norm);
        CHECK(clip.nsteps == 1);
        // elog holds log ng exactly, variance term collapsed to zero
        CHECK(clip.elog == doctest::Approx(std::log(r.scaled_norm)).epsilon(1e-12));
        CHECK(r.threshold == doctest::Approx(r.scaled_norm).epsilon(1e-9));
    }
}

TEST_CASE("constant gradient norm never rescales over 50 steps") {
    const double c = 2.75;
    ClipState<double> clip;
    ClipSim sim;
    for (int step = 0; step < 50; ++step) {
        std::vector<double> g = {c};
        auto r = adaptive_clip(g, clip);
        bool sim_rescaled = true;
        const double sim_norm = sim.feed(c, &sim_rescaled);
        CHECK_FALSE(r.rescaled);
        CHECK_FALSE(sim_rescaled);
        CHECK(r.output_norm == doctest::Approx(sim_norm).epsilon(1e-12));
    }
    CHECK(clip.elog == doctest::Approx(std::log(c)).epsilon(1e-12));
}

TEST_CASE("spike after a stable run is rescaled to exp(Elog)") {
    ClipState<double> clip;
    ClipSim sim;
    for (int step = 0; step < 200; ++step) {
        std::vector<double> g = {1.0};
        adaptive_clip(g, clip);
        sim.feed(1.0);
    }
    std::vector<double> g = {60.0, 80.0}; // ng = 100
    auto r = adaptive_clip(g, clip);
    bool sim_rescaled = false;
    const double sim_norm = sim.feed(100.0, &sim_rescaled);
    CHECK(r.rescaled);
    CHECK(sim_rescaled);
    // returned norm equals exp(Elog) computed after the spike entered the
    // accumulators
    CHECK(std::abs(r.output_norm - std::exp(clip.elog)) <= 1e-9);
    CHECK(std::abs(r.output_norm - sim_norm) <= 1e-9);
    CHECK(r.output_norm < 100.0);
}

TEST_CASE("clipping follows the scalar simulation on random norm sequences") {
    Rng rng(211);
    for (int trial = 0; trial < 20; ++trial) {
        ClipState<double> clip;
        ClipSim sim;
        for (int step = 0; step < 120; ++step) {
            const double ng = std::exp(rng.normal() * 1.5);
            std::vector<double> g = {ng};
            auto r = adaptive_clip(g, clip);
            const double sim_norm = sim.feed(ng);
            CHECK(r.output_norm == doctest::Approx(sim_norm).epsilon(1e-10));
            CHECK(r.output_norm <= r.scaled_norm + 1e-12); // never increases the norm
        }
    }
}

TEST_CASE("grad_scale multiplies before the norm is taken") {
    ClipState<double> clip;
    clip.grad_scale = 1e-2;
    std::vector<double> g = {3.0, 4.0}; // raw norm 5, scaled norm 0.05
    auto r = adaptive_clip(g, clip);
    CHECK(r.scaled_norm == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(g[0] == doctest::Approx(0.03).epsilon(1e-12));
}

TEST_CASE("zero gradient skips accumulators but counts the step") {
    ClipState<double> clip;
    std::vector<double> g = {0.0, 0.0};
    auto r = adaptive_clip(g, clip);
    CHECK_FALSE(r.rescaled);
    CHECK(clip.nsteps == 1);
    CHECK(clip.elog == 0.0);
    CHECK(clip.elog2 == 0.0);
}

TEST_CASE("adadelta: zero gradient leaves parameters, decays accumulators") {
    ParamStore<double> store;
    store.add("w", Tensor<double>::vec({1.0, -2.0}));
    AdaDeltaOptimizer<double> opt(store, 0.95, 1e-6, ClipState<double>{});
    // seed accumulators with one real step
    store.grad("w") = Tensor<double>::vec({0.5, -0.25});
    opt.step();
    const Tensor<double> params_after = store.value("w");
    const double eg2_before = opt.eg2()[0][0];

    store.zero_grads();
    opt.step();
    CHECK(store.value("w") == params_after);
    CHECK(opt.eg2()[0][0] == doctest::Approx(0.95 * eg2_before).epsilon(1e-14));
}

TEST_CASE("adadelta first step closed form") {
    const double rho = 0.95, eps = 1e-6;
    ParamStore<double> store;
    store.add("w", Tensor<double>::vec({0.0, 1.0, -3.0}));
    AdaDeltaOptimizer<double> opt(store, rho, eps, ClipState<double>{});
    const Tensor<double> g = Tensor<double>::vec({0.2, -0.7, 1.1});
    store.grad("w") = g;
    opt.step();
    for (std::size_t i = 0; i < 3; ++i) {
        const double expect_dx =
            -std::sqrt(eps / ((1 - rho) * g[i] * g[i] + eps)) * g[i];
        const double base = (i == 0 ? 0.0 : (i == 1 ? 1.0 : -3.0));
        CHECK(store.value("w")[i] == doctest::Approx(base + expect_dx).epsilon(1e-12));
    }
}

TEST_CASE("adadelta 10-step trace matches scalar simulation") {
    const double rho = 0.95, eps = 1e-6;
    ParamStore<double> store;
    store.add("x", Tensor<double>::vec({2.0}));
    AdaDeltaOptimizer<double> opt(store, rho, eps, ClipState<double>{});

    double sim_x = 2.0, sim_eg2 = 0.0, sim_edx2 = 0.0;
    for (int step = 0; step < 10; ++step) {
        // quadratic loss 0.5 x^2, gradient = x
        store.grad("x")[0] = store.value("x")[0];
        opt.step();
        const double g = sim_x;
        sim_eg2 = rho * sim_eg2 + (1 - rho) * g * g;
        const double dx = -std::sqrt(sim_edx2 + eps) / std::sqrt(sim_eg2 + eps) * g;
        sim_edx2 = rho * sim_edx2 + (1 - rho) * dx * dx;
        sim_x += dx;
        CHECK(std::abs(store.value("x")[0] - sim_x) <= 1e-12);
    }
}

TEST_CASE("frozen parameters receive no update and carry no state") {
    ParamStore<double> store;
    store.add("live", Tensor<double>::vec({1.0}));
    store.add("ice", Tensor<double>::vec({5.0}), /*trainable=*/false);
    AdaDeltaOptimizer<double> opt(store, 0.95, 1e-6, ClipState<double>{});
    store.grad("live")[0] = 1.0;
    store.grad("ice")[0] = 99.0; // even a bogus gradient must be ignored
    opt.step();
    CHECK(store.value("ice")[0] == 5.0);
    CHECK(opt.eg2()[1][0] == 0.0);
    CHECK(opt.edx2()[1][0] == 0.0);
    CHECK(store.value("live")[0] != 1.0);
}

TEST_CASE("uniform head loss closed form and single-weight decay") {
    Model<double> m = tiny_model(220);
    m.store().value("decoder.g.maxout.W").fill(0.0);
    m.store().value("decoder.g.maxout.b").fill(0.0);
    m.store().value("decoder.g.out.W").fill(0.0);
    m.store().value("decoder.g.out.b").fill(0.0);
    Rng rng(221);
    Tensor<double> x(Shape{6, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    const std::vector<int> target = {2, 3, 4, Vocabulary::kEos}; // O = 4, |V| = 5

    StageFlags<double> off;
    LossBreakdown<double> bd;
    Graph<double> g(&m.store(), false);
    build_sequence_loss(g, m, x, target, off, &bd);
    CHECK(bd.total == doctest::Approx(4.0 * std::log(5.0)).epsilon(1e-12));
    CHECK(bd.penalty == 0.0);
    CHECK(bd.decay_output_mlp == 0.0);

    // one non-zero output-MLP weight w = 2 with wd = 1e-3 -> decay 0.002
    m.store().value("decoder.g.out.W")[0] = 2.0;
    StageFlags<double> wd;
    wd.wd_output_mlp = 1e-3;
    Graph<double> g2(&m.store(), false);
    build_sequence_loss(g2, m, x, target, wd, &bd);
    CHECK(bd.decay_output_mlp == doctest::Approx(0.002).epsilon(1e-12));
}

TEST_CASE("weight decay gradients touch only the decay-group weights") {
    Model<double> m = tiny_model(222);
    Rng rng(223);
    Tensor<double> x(Shape{5, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    const std::vector<int> target = {2, 4, Vocabulary::kEos};

    auto grads_for = [&](StageFlags<double> flags) {
        m.store().zero_grads();
        Graph<double> g(&m.store(), true);
        Var loss = build_sequence_loss(g, m, x, target, flags);
        g.backward(loss);
        g.accumulate_param_grads();
        return store_grads(m.store());
    };

    StageFlags<double> plain;
    StageFlags<double> decayed;
    decayed.wd_output_mlp = 1e-3;
    decayed.wd_scorer = 2e-4;
    auto g0 = grads_for(plain);
    auto g1 = grads_for(decayed);

    std::size_t pos = 0;
    for (const auto& e : m.store().entries()) {
        const double wd = e.group == DecayGroup::output_mlp ? 1e-3
                          : e.group == DecayGroup::scorer   ? 2e-4
                                                            : 0.0;
        for (std::size_t i = 0; i < e.grad.numel(); ++i, ++pos) {
            const double delta = g1[pos] - g0[pos];
            CHECK(std::abs(delta - wd * e.value[i]) <= 1e-12);
        }
    }
}

TEST_CASE("loss gradient is additive across components") {
    Model<double> m = tiny_model(224);
    Rng rng(225);
    Tensor<double> x(Shape{5, 3});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    const std::vector<int> target = {3, 2, Vocabulary::kEos};

    StageFlags<double> all;
    all.gating_enabled = true;
    all.penalty_enabled = true;
    all.wd_output_mlp = 1e-3;
    all.wd_scorer = 2e-4;

    m.store().zero_grads();
    {
        Graph<double> g(&m.store(), true);
        Var loss = build_sequence_loss(g, m, x, target, all);
        g.backward(loss);
        g.accumulate_param_grads();
    }
    auto g_total = store_grads(m.store());

    // component gradients from separate graphs: nll, penalty, decay
    m.store().zero_grads();
    {
        Graph<double> g(&m.store(), true);
        Var h = m.annotate(g, x);
        UnrollOut u = teacher_forced_unroll(g, h, target, m.bind_dec(g), m.bind_att(g, true));
        g.backward(g.scale(u.log_lik, -1.0));
        g.accumulate_param_grads();
    }
    auto g_nll = store_grads(m.store());
    m.store().zero_grads();
    {
        Graph<double> g(&m.store(), true);
        Var h = m.annotate(g, x);
        UnrollOut u = teacher_forced_unroll(g, h, target, m.bind_dec(g), m.bind_att(g, true));
        g.backward(u.penalty_sum);
        g.accumulate_param_grads();
    }
    auto g_pen = store_grads(m.store());
    m.store().zero_grads();
    {
        Graph<double> g(&m.store(), true);
        Var d = g.add(decay_term(g, m, DecayGroup::output_mlp, 1e-3),
                      decay_term(g, m, DecayGroup::scorer, 2e-4));
        g.backward(d);
        g.accumulate_param_grads();
    }
    auto g_dec = store_grads(m.store());

    for (std::size_t i = 0; i < g_total.size(); ++i)
        CHECK(std::abs(g_total[i] - (g_nll[i] + g_pen[i] + g_dec[i])) <= 1e-10);
}

TEST_CASE("make_batches splits 7 into 4 + 3") {
    Rng rng(230);
    auto batches = make_batches(7, [](std::size_t) { return std::size_t(10); }, rng);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].indices.size() == 4);
    CHECK(batches[1].indices.size() == 3);
    std::vector<bool> seen(7, false);
    for (const auto& b : batches)
        for (std::size_t i : b.indices) seen[i] = true;
    for (bool s : seen) CHECK(s);
}

TEST_CASE("make_batches sorts within groups and is deterministic") {
    std::vector<std::size_t> frames(70);
    Rng init(231);
    for (auto& f : frames) f = 5 + init.below(40);
    auto frame_count = [&](std::size_t i) { return frames[i]; };

    Rng r1(232), r2(232);
    auto b1 = make_batches(70, frame_count, r1, 32, 4);
    auto b2 = make_batches(70, frame_count, r2, 32, 4);
    REQUIRE(b1.size() == b2.size());
    for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i].indices == b2[i].indices);

    // group_size 32, batch_size 4: group boundaries align with batch
    // boundaries, so every batch is a contiguous slice of a sorted group
    for (const auto& batch : b1)
        for (std::size_t k = 1; k < batch.indices.size(); ++k)
            CHECK(frames[batch.indices[k]] >= frames[batch.indices[k - 1]]);

    Rng r3(233);
    auto b3 = make_batches(70, frame_count, r3, 32, 4);
    bool any_diff = false;
    for (std::size_t i = 0; i < b1.size() && !any_diff; ++i)
        any_diff = b1[i].indices != b3[i].indices;
    CHECK(any_diff);

    CHECK_THROWS_AS(make_batches(0, frame_count, r3), ContractViolation);
}
