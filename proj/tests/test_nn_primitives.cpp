// SPDX-License-Identifier: Apache-2.0
//
// Kernel-level tests: frozen closed-form cases, independent brute-force
// oracles, and finite-difference gradient checks.

#include <doctest.h>

#include <cmath>
#include <vector>

#include "seqattn/gradcheck.hpp"
#include "seqattn/graph.hpp"
#include "seqattn/nn.hpp"
#include "seqattn/param_store.hpp"
#include "seqattn/rng.hpp"
#include "seqattn/tensor.hpp"

using namespace seqattn;

namespace {

// Independent triple-loop oracle for y = Wx + b.
std::vector<double> naive_affine(const Tensor<double>& w, const Tensor<double>& x,
                                 const Tensor<double>& b) {
    std::vector<double> y(w.dim(0));
    for (std::size_t i = 0; i < w.dim(0); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < w.dim(1); ++j) acc += w.at(i, j) * x[j];
        y[i] = acc + b[i];
    }
    return y;
}

double scalar_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(s));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
    return t;
}

} // namespace

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 3}, std::vector<double>(5, 0.0)),
                    ContractViolation);
    Tensor<double> t(Shape{2, 3});
    CHECK(t.numel() == 6);
    CHECK(Tensor<double>::scalar(4.0).value() == 4.0);
}

TEST_CASE("affine identity and zero-weight cases") {
    Graph<double> g(nullptr, false);
    Var w = g.leaf(Tensor<double>(Shape{2, 2}, {1, 0, 0, 1}));
    Var b = g.leaf(Tensor<double>(Shape{2}));
    Var x = g.leaf(Tensor<double>::vec({3, -1}));
    auto y = g.value(g.affine(w, x, b));
    CHECK(y[0] == 3.0);
    CHECK(y[1] == -1.0);

    Var w0 = g.leaf(Tensor<double>(Shape{2, 2}));
    Var b2 = g.leaf(Tensor<double>::vec({5, 7}));
    Var x2 = g.leaf(Tensor<double>::vec({9, 9}));
    auto y2 = g.value(g.affine(w0, x2, b2));
    CHECK(y2[0] == 5.0);
    CHECK(y2[1] == 7.0);
}

TEST_CASE("affine matches triple-loop oracle") {
    Rng rng(11);
    Tensor<double> w = random_tensor(Shape{4, 3}, rng);
    Tensor<double> x = random_tensor(Shape{3}, rng);
    Tensor<double> b = random_tensor(Shape{4}, rng);
    Graph<double> g(nullptr, false);
    auto y = g.value(g.affine(g.leaf(w), g.leaf(x), g.leaf(b)));
    auto expect = naive_affine(w, x, b);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y[i] - expect[i]) <= 1e-12);
}

TEST_CASE("affine shape mismatch names both shapes") {
    Graph<double> g(nullptr, false);
    Var w = g.leaf(Tensor<double>(Shape{2, 3}));
    Var x = g.leaf(Tensor<double>(Shape{4}));
    Var b = g.leaf(Tensor<double>(Shape{2}));
    try {
        g.affine(w, x, b);
        FAIL("expected ContractViolation");
    } catch (const ContractViolation& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[4]") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("softmax closed forms") {
    Graph<double> g(nullptr, false);
    auto y = g.value(g.softmax(g.leaf(Tensor<double>::vec({0, 0}))));
    CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-15));

    auto y2 = g.value(g.softmax(g.leaf(Tensor<double>::vec({std::log(2.0), 0.0}))));
    CHECK(y2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(y2[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax is stable and shift-invariant") {
    Graph<double> g(nullptr, false);
    auto big = g.value(g.softmax(g.leaf(Tensor<double>::vec({1000, 999}))));
    auto small = g.value(g.softmax(g.leaf(Tensor<double>::vec({1, 0}))));
    CHECK(big.all_finite());
    CHECK(big[0] == small[0]);
    CHECK(big[1] == small[1]);

    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        Tensor<double> v = random_tensor(Shape{n}, rng, 3.0);
        Tensor<double> shifted = v;
        const double c = rng.uniform(-100.0, 100.0);
        for (std::size_t i = 0; i < n; ++i) shifted[i] += c;
        auto a = g.value(g.softmax(g.leaf(v)));
        auto bvals = g.value(g.softmax(g.leaf(shifted)));
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(a[i] > 0.0);
            CHECK(std::abs(a[i] - bvals[i]) <= 1e-12);
            sum += a[i];
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax rejects empty input") {
    Graph<double> g(nullptr, false);
    CHECK_THROWS_AS(g.softmax(g.leaf(Tensor<double>(Shape{0}))), ContractViolation);
}

TEST_CASE("maxout absolute-value construction") {
    Graph<double> g(nullptr, false);
    Var w = g.leaf(Tensor<double>(Shape{2, 1, 1}, {1, -1}));
    Var b = g.leaf(Tensor<double>(Shape{2, 1}));
    CHECK(g.value(g.maxout(g.leaf(Tensor<double>::vec({3})), w, b))[0] == 3.0);
    CHECK(g.value(g.maxout(g.leaf(Tensor<double>::vec({-2})), w, b))[0] == 2.0);
}

TEST_CASE("maxout tie routes gradient to piece 0") {
    ParamStore<double> store;
    Rng rng(5);
    Tensor<double> piece = random_tensor(Shape{1, 3, 2}, rng);
    Tensor<double> w(Shape{2, 3, 2});
    for (std::size_t i = 0; i < piece.numel(); ++i) {
        w[i] = piece[i];
        w[piece.numel() + i] = piece[i];
    }
    store.add("W", w);
    store.add("b", Tensor<double>(Shape{2, 3}));
    Tensor<double> x = random_tensor(Shape{2}, rng);

    Graph<double> g(&store, true);
    Var y = g.maxout(g.leaf(x), g.param("W"), g.param("b"));

    // identical pieces -> output equals the single affine map
    Graph<double> g2(nullptr, false);
    auto aff = g2.value(g2.affine(g2.leaf(Tensor<double>(Shape{3, 2}, {piece[0], piece[1],
                                                                       piece[2], piece[3],
                                                                       piece[4], piece[5]})),
                                  g2.leaf(x), g2.leaf(Tensor<double>(Shape{3}))));
    for (std::size_t i = 0; i < 3; ++i) CHECK(g.value(y)[i] == doctest::Approx(aff[i]));

    store.zero_grads();
    g.backward(g.sum(y));
    g.accumulate_param_grads();
    const Tensor<double>& gw = store.grad("W");
    double piece0 = 0.0, piece1 = 0.0;
    for (std::size_t i = 0; i < piece.numel(); ++i) {
        piece0 += std::abs(gw[i]);
        piece1 += std::abs(gw[piece.numel() + i]);
    }
    CHECK(piece0 > 0.0);
    CHECK(piece1 == 0.0);
}

TEST_CASE("maxout matches explicit per-piece oracle") {
    Rng rng(7);
    const std::size_t k = 3, m = 4, n = 5;
    Tensor<double> w = random_tensor(Shape{k, m, n}, rng);
    Tensor<double> b = random_tensor(Shape{k, m}, rng);
    Tensor<double> x = random_tensor(Shape{n}, rng);

    Graph<double> g(nullptr, false);
    auto y = g.value(g.maxout(g.leaf(x), g.leaf(w), g.leaf(b)));

    for (std::size_t j = 0; j < m; ++j) {
        double best = -1e300;
        for (std::size_t p = 0; p < k; ++p) {
            double acc = b.at(p, j);
            for (std::size_t c = 0; c < n; ++c) acc += w.at(p, j, c) * x[c];
            best = std::max(best, acc);
        }
        CHECK(y[j] == doctest::Approx(best).epsilon(1e-14));
    }
}

TEST_CASE("maxout rejects fewer than two pieces") {
    Graph<double> g(nullptr, false);
    Var w = g.leaf(Tensor<double>(Shape{1, 2, 2}));
    Var b = g.leaf(Tensor<double>(Shape{1, 2}));
    CHECK_THROWS_AS(g.maxout(g.leaf(Tensor<double>(Shape{2})), w, b), ConfigError);
}

TEST_CASE("gated step with zero parameters halves the state") {
    ParamStore<double> store;
    auto names = GruParamNames::under("gru");
    store.add(names.Wz, Tensor<double>(Shape{4, 3}));
    store.add(names.Uz, Tensor<double>(Shape{4, 4}));
    store.add(names.bz, Tensor<double>(Shape{4}));
    store.add(names.Wr, Tensor<double>(Shape{4, 3}));
    store.add(names.Ur, Tensor<double>(Shape{4, 4}));
    store.add(names.br, Tensor<double>(Shape{4}));
    store.add(names.W, Tensor<double>(Shape{4, 3}));
    store.add(names.U, Tensor<double>(Shape{4, 4}));
    store.add(names.b, Tensor<double>(Shape{4}));

    Graph<double> g(&store, false);
    Tensor<double> s0 = Tensor<double>::vec({1.0, -2.0, 0.5, 4.0});
    Var s = g.leaf(s0);
    Var u = g.leaf(Tensor<double>(Shape{3}));
    auto out = g.value(gated_step(g, s, u, bind_gru(g, names)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(0.5 * s0[i]).epsilon(1e-15));

    // saturated update gate: bz = +50 pushes z ~ 1, so s ~ tanh(0) = 0
    store.value(names.bz).fill(50.0);
    Graph<double> g2(&store, false);
    auto out2 = g2.value(gated_step(g2, g2.leaf(s0), g2.leaf(Tensor<double>(Shape{3})),
                                    bind_gru(g2, names)));
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out2[i]) <= 1e-15);
}

TEST_CASE("gated step matches scalar oracle") {
    const std::size_t h = 4, d = 3;
    ParamStore<double> store;
    Rng rng(42);
    auto names = GruParamNames::under("gru");
    add_gru_params(store, names, h, d, rng);
    Tensor<double> s_prev = random_tensor(Shape{h}, rng);
    Tensor<double> u = random_tensor(Shape{d}, rng);

    Graph<double> g(&store, false);
    auto s = g.value(gated_step(g, g.leaf(s_prev), g.leaf(u), bind_gru(g, names)));

    // step-by-step scalar re-implementation
    auto mv = [&](const char* wn, const Tensor<double>& vec) {
        const Tensor<double>& m = store.value(wn);
        std::vector<double> out(m.dim(0), 0.0);
        for (std::size_t i = 0; i < m.dim(0); ++i)
            for (std::size_t j = 0; j < m.dim(1); ++j) out[i] += m.at(i, j) * vec[j];
        return out;
    };
    auto wzu = mv("gru.Wz", u), uzs = mv("gru.Uz", s_prev);
    auto wru = mv("gru.Wr", u), urs = mv("gru.Ur", s_prev);
    auto wu = mv("gru.W", u);
    for (std::size_t i = 0; i < h; ++i) {
        const double z = scalar_sigmoid(wzu[i] + uzs[i] + store.value("gru.bz")[i]);
        const double r = scalar_sigmoid(wru[i] + urs[i] + store.value("gru.br")[i]);
        double us = store.value("gru.b")[i] + wu[i];
        for (std::size_t j = 0; j < h; ++j) {
            const double rj = scalar_sigmoid(mv("gru.Wr", u)[j] + mv("gru.Ur", s_prev)[j] +
                                             store.value("gru.br")[j]);
            us += store.value("gru.U").at(i, j) * (rj * s_prev[j]);
        }
        (void)r;
        const double cand = std::tanh(us);
        const double expect = (1.0 - z) * s_prev[i] + z * cand;
        CHECK(std::abs(s[i] - expect) <= 1e-12);
    }
}

TEST_CASE("kernels are pure: identical inputs give identical bits") {
    ParamStore<double> store;
    Rng rng(3);
    auto names = GruParamNames::under("gru");
    add_gru_params(store, names, 5, 4, rng);
    Tensor<double> s0 = random_tensor(Shape{5}, rng);
    Tensor<double> u = random_tensor(Shape{4}, rng);

    auto run = [&]() {
        Graph<double> g(&store, false);
        return g.value(gated_step(g, g.leaf(s0), g.leaf(u), bind_gru(g, names)));
    };
    CHECK(run() == run());
}

TEST_CASE("gradcheck is exact on a quadratic loss") {
    ParamStore<double> store;
    Rng rng(21);
    store.add("W", random_tensor(Shape{3, 4}, rng));
    Tensor<double> x = random_tensor(Shape{4}, rng);

    auto report = gradcheck<double>(
        store,
        [&](Graph<double>& g) {
            return g.scale(g.sumsq(g.matvec(g.param("W"), g.leaf(x))), 0.5);
        },
        1e-4, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_err <= 1e-10);
}

TEST_CASE("gradcheck excludes frozen parameters") {
    ParamStore<double> store;
    Rng rng(22);
    store.add("a", random_tensor(Shape{3}, rng));
    store.add("frozen", random_tensor(Shape{2}, rng), /*trainable=*/false);

    auto report = gradcheck<double>(store, [&](Graph<double>& g) {
        Var joined = g.concat({g.param("a"), g.param("frozen")});
        return g.sumsq(joined);
    });
    CHECK(report.pass);
    CHECK(report.items.size() == 1);
    CHECK(report.items[0].name == "a");
}

TEST_CASE("composite graph gradcheck across kernels") {
    // affine, matvec, maxout, gated step, softmax, log_softmax, mul, concat,
    // stack_rows, row, pick, dot, weighted_sum_rows in one loss
    ParamStore<double> store;
    Rng rng(33);
    auto names = GruParamNames::under("gru");
    add_gru_params(store, names, 3, 5, rng);
    store.add("W", random_tensor(Shape{4, 3}, rng));
    store.add("b", random_tensor(Shape{4}, rng));
    store.add("Wmax", random_tensor(Shape{2, 3, 4}, rng));
    store.add("bmax", random_tensor(Shape{2, 3}, rng));
    Tensor<double> x0 = random_tensor(Shape{5}, rng);
    Tensor<double> s0 = random_tensor(Shape{3}, rng);
    Tensor<double> alpha = Tensor<double>::vec({0.2, 0.3, 0.5});

    auto build = [&](Graph<double>& g) {
        Var s = gated_step(g, g.leaf(s0), g.leaf(x0), bind_gru(g, names));
        Var y = g.affine(g.param("W"), s, g.param("b"));
        Var m = g.maxout(y, g.param("Wmax"), g.param("bmax"));
        Var sm = g.softmax(y);
        Var lsm = g.log_softmax(y);
        Var rows = g.stack_rows({m, g.mul(m, m), s});
        Var ctx = g.weighted_sum_rows(rows, g.leaf(alpha));
        Var probe = g.add_n({g.pick(lsm, 2), g.dot(ctx, g.row(rows, 1)), g.sum(sm),
                             g.sumsq(g.concat({m, s}))});
        return probe;
    };
    auto report = gradcheck<double>(store, build);
    CHECK(report.pass);
    CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("orthonormal init") {
    Rng rng1(9);
    auto q1 = orthonormal_init<double>(1, rng1);
    CHECK(std::abs(std::abs(q1.at(0, 0)) - 1.0) <= 1e-12);

    Rng rng5(9);
    auto q = orthonormal_init<double>(5, rng5);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            double dot = 0.0;
            for (std::size_t r = 0; r < 5; ++r) dot += q.at(r, i) * q.at(r, j);
            max_dev = std::max(max_dev, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
    CHECK(max_dev <= 1e-10);

    Rng a(123), b(123);
    CHECK(orthonormal_init<double>(6, a) == orthonormal_init<double>(6, b));
}

TEST_CASE("rng streams are deterministic and disjoint") {
    Rng a = Rng::stream(77, 1);
    Rng b = Rng::stream(77, 1);
    Rng c = Rng::stream(77, 2);
    CHECK(a.next_u64() == b.next_u64());
    Rng a2 = Rng::stream(77, 1);
    CHECK(a2.next_u64() != c.next_u64());
    Rng u(5);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const auto v = u.below(7);
        CHECK(v < 7);
    }
}
