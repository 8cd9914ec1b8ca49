// SPDX-License-Identifier: Apache-2.0
//
// Soft alignment over encoder annotations. Scores come from a one-hidden-layer
// tanh MLP over (previous decoder state, annotation); before normalization the
// exponentiated scores are multiplied by a learned gate d(delta) of the offset
// between each input position and the previous expected attention position.
// The monotonicity penalty hinges on the summed CDF difference between
// consecutive alignment rows; both live as fused tape ops in graph.hpp.

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "seqattn/graph.hpp"
#include "seqattn/nn.hpp"
#include "seqattn/param_store.hpp"
#include "seqattn/rng.hpp"
#include "seqattn/tensor.hpp"

namespace seqattn {

struct AttentionDims {
    std::size_t state_dim = 0;      // decoder state entering the scorer
    std::size_t annotation_dim = 0; // 2H
    std::size_t scorer_hidden = 24;
    std::size_t gate_hidden = 10;
};

struct AttentionNames {
    std::string scorer_Ws, scorer_Wh, scorer_b1, scorer_w2, scorer_b2;
    std::string gate_W1, gate_b1, gate_w2, gate_b2;

    static AttentionNames under(const std::string& p) {
        return {p + ".scorer.Ws", p + ".scorer.Wh", p + ".scorer.b1", p + ".scorer.w2",
                p + ".scorer.b2", p + ".gate.W1",   p + ".gate.b1",   p + ".gate.w2",
                p + ".gate.b2"};
    }
};

// The gate hidden layer sees raw offsets up to the frame count, so it starts
// from constant 1e-3 weights with biases spread over (-5, 5); the same init is
// re-applied by the trainer when the schedule first enables gating.
template <typename T>
void apply_gate_manual_init(ParamStore<T>& store, const AttentionNames& n, Rng& rng) {
    store.value(n.gate_W1).fill(T(1e-3));
    Tensor<T>& b1 = store.value(n.gate_b1);
    for (std::size_t i = 0; i < b1.numel(); ++i) b1[i] = static_cast<T>(rng.uniform(-5.0, 5.0));
}

template <typename T>
void add_attention_params(ParamStore<T>& store, const AttentionNames& n,
                          const AttentionDims& dims, Rng& rng) {
    const std::size_t sh = dims.scorer_hidden, gh = dims.gate_hidden;
    store.add(n.scorer_Ws, dense_init<T>(sh, dims.state_dim, rng), true, DecayGroup::scorer);
    store.add(n.scorer_Wh, dense_init<T>(sh, dims.annotation_dim, rng), true,
              DecayGroup::scorer);
    store.add(n.scorer_b1, Tensor<T>(Shape{sh}));
    store.add(n.scorer_w2, dense_init<T>(1, sh, rng), true, DecayGroup::scorer);
    store.add(n.scorer_b2, Tensor<T>(Shape{1}));
    store.add(n.gate_W1, Tensor<T>(Shape{gh, 1}));
    store.add(n.gate_b1, Tensor<T>(Shape{gh}));
    store.add(n.gate_w2, dense_init<T>(1, gh, rng));
    store.add(n.gate_b2, Tensor<T>(Shape{1}));
    apply_gate_manual_init(store, n, rng);
}

struct AttentionVars {
    Var scorer_Ws, scorer_Wh, scorer_b1, scorer_w2, scorer_b2;
    Var gate_W1, gate_b1, gate_w2, gate_b2;
    bool gating_enabled = true;
};

template <typename T>
AttentionVars bind_attention(Graph<T>& g, const AttentionNames& n, bool gating_enabled) {
    AttentionVars v;
    v.scorer_Ws = g.param(n.scorer_Ws);
    v.scorer_Wh = g.param(n.scorer_Wh);
    v.scorer_b1 = g.param(n.scorer_b1);
    v.scorer_w2 = g.param(n.scorer_w2);
    v.scorer_b2 = g.param(n.scorer_b2);
    v.gate_W1 = g.param(n.gate_W1);
    v.gate_b1 = g.param(n.gate_b1);
    v.gate_w2 = g.param(n.gate_w2);
    v.gate_b2 = g.param(n.gate_b2);
    v.gating_enabled = gating_enabled;
    return v;
}

// e_i = w2 . tanh(Ws s_prev + Wh h_i + b1) + b2, one scalar per annotation,
// weights shared across positions.
template <typename T>
Var attention_scores(Graph<T>& g, Var s_prev, Var annotations, const AttentionVars& v) {
    const std::size_t n_pos = g.value(annotations).dim(0);
    Var state_part = g.affine(v.scorer_Ws, s_prev, v.scorer_b1);
    Var ann_part = g.affine(v.scorer_Wh, annotations,
                            g.leaf(Tensor<T>(Shape{g.value(v.scorer_b1).numel()})));
    Var hidden = g.tanh(g.add_rowwise(ann_part, state_part));
    Var e = g.affine(v.scorer_w2, hidden, v.scorer_b2);
    return g.reshape(e, Shape{n_pos});
}

// d(delta) for a vector of offsets: sigmoid(w2 . tanh(W1 delta + b1) + b2).
template <typename T>
Var gate_values(Graph<T>& g, Var offsets, const AttentionVars& v) {
    const std::size_t n = g.value(offsets).numel();
    Var col = g.reshape(offsets, Shape{n, 1});
    Var hidden = g.tanh(g.affine(v.gate_W1, col, v.gate_b1));
    Var out = g.sigmoid(g.affine(v.gate_w2, hidden, v.gate_b2));
    return g.reshape(out, Shape{n});
}

// Gating disabled reduces exactly to the stable softmax code path.
template <typename T>
Var gate_and_normalize(Graph<T>& g, Var scores, Var prev_expected_pos, const AttentionVars& v,
                       bool* degenerate = nullptr) {
    if (!v.gating_enabled) {
        if (degenerate) *degenerate = false;
        return g.softmax(scores);
    }
    const std::size_t n = g.value(scores).numel();
    Var offsets = g.position_offsets(prev_expected_pos, n);
    Var d = gate_values(g, offsets, v);
    return g.gated_normalize(scores, d, degenerate);
}

template <typename T>
Var attention_context(Graph<T>& g, Var alpha, Var annotations) {
    return g.weighted_sum_rows(annotations, alpha);
}

// Alignment bookkeeping carried between decoder steps. At the first output
// step alpha is a one-hot at position 1, so offsets are i - 1 and the penalty
// against it is always zero.
struct AttentionState {
    Var prev_alpha;
    Var prev_expected_pos;
};

template <typename T>
AttentionState initial_attention_state(Graph<T>& g, std::size_t n_positions) {
    return {g.leaf(one_hot<T>(n_positions, 0)), g.leaf(Tensor<T>::scalar(T(1)))};
}

template <typename T>
AttentionState advance_attention_state(Graph<T>& g, Var alpha) {
    return {alpha, g.expected_position(alpha)};
}

// Plain-tensor expected position (1-based), same contract as the tape op.
template <typename T>
T expected_position_value(const Tensor<T>& alpha) {
    SEQATTN_CHECK(alpha.rank() == 1 && alpha.numel() >= 1,
                  "expected_position needs a vector");
    double sum = 0;
    for (std::size_t i = 0; i < alpha.numel(); ++i) {
        SEQATTN_CHECK(alpha[i] >= T(0), "expected_position: negative weight at ", i);
        sum += static_cast<double>(alpha[i]);
    }
    SEQATTN_CHECK(std::abs(sum - 1.0) <= 1e-6, "expected_position: input not normalized (sum = ",
                  sum, ")");
    T e = 0;
    for (std::size_t i = 0; i < alpha.numel(); ++i) e += alpha[i] * static_cast<T>(i + 1);
    return e;
}

// Samples d over [lo, hi] for plotting the learned gate shape.
template <typename T>
std::vector<std::pair<double, double>> gate_shape_dump(ParamStore<T>& store,
                                                       const AttentionNames& names, double lo,
                                                       double hi, double step) {
    SEQATTN_CHECK(step > 0, "gate_shape_dump needs a positive step");
    std::vector<double> deltas;
    for (double x = lo; x <= hi + 1e-12; x += step) deltas.push_back(x);
    Tensor<T> delta_t(Shape{deltas.size()});
    for (std::size_t i = 0; i < deltas.size(); ++i) delta_t[i] = static_cast<T>(deltas[i]);

    Graph<T> g(&store, /*enable_grads=*/false);
    AttentionVars v;
    v.gate_W1 = g.param(names.gate_W1);
    v.gate_b1 = g.param(names.gate_b1);
    v.gate_w2 = g.param(names.gate_w2);
    v.gate_b2 = g.param(names.gate_b2);
    const Tensor<T>& d = g.value(gate_values(g, g.leaf(std::move(delta_t)), v));

    std::vector<std::pair<double, double>> table(deltas.size());
    for (std::size_t i = 0; i < deltas.size(); ++i)
        table[i] = {deltas[i], static_cast<double>(d[i])};
    return table;
}

} // namespace seqattn
