// SPDX-License-Identifier: Apache-2.0
//
// Output RNN. One fused step drives both training and search:
//   e     = scorer(s_prev, h)          (attention, pre-update state)
//   alpha = gate_and_normalize(e, E[alpha_prev])
//   c     = sum_i alpha_i h_i
//   s     = gated_step(s_prev, [embed(y_prev); c])
//   p     = softmax(out_affine(maxout([embed(y_prev); s; c])))
// y_prev feeds both the state update and the output head through one shared
// embedding.

#pragma once

#include <string>
#include <vector>

#include "seqattn/attention.hpp"
#include "seqattn/graph.hpp"
#include "seqattn/nn.hpp"
#include "seqattn/param_store.hpp"
#include "seqattn/rng.hpp"
#include "seqattn/tensor.hpp"
#include "seqattn/vocab.hpp"

namespace seqattn {

struct DecoderDims {
    std::size_t vocab = 0;
    std::size_t embed = 12;
    std::size_t state = 32;
    std::size_t annotation_dim = 0; // 2H
    std::size_t head_width = 32;
    std::size_t head_pieces = 2;
};

struct DecoderNames {
    GruParamNames f;
    std::string embedding, head_W, head_b, out_W, out_b, s0;

    static DecoderNames under(const std::string& p) {
        DecoderNames n;
        n.f = GruParamNames::under(p + ".f");
        n.embedding = p + ".embedding";
        n.head_W = p + ".g.maxout.W";
        n.head_b = p + ".g.maxout.b";
        n.out_W = p + ".g.out.W";
        n.out_b = p + ".g.out.b";
        n.s0 = p + ".s0";
        return n;
    }
};

template <typename T>
void add_decoder_params(ParamStore<T>& store, const DecoderNames& names, const DecoderDims& dims,
                        Rng& rng) {
    SEQATTN_CONFIG_CHECK(dims.vocab >= 3, "vocabulary needs BOS, EOS and >= 1 content symbol");
    SEQATTN_CONFIG_CHECK(dims.head_pieces >= 2, "output maxout needs >= 2 pieces");
    store.add(names.embedding, gaussian_tensor<T>(Shape{dims.vocab, dims.embed}, 0.1, rng));
    add_gru_params(store, names.f, dims.state, dims.embed + dims.annotation_dim, rng);
    const std::size_t head_in = dims.embed + dims.state + dims.annotation_dim;
    Tensor<T> hw(Shape{dims.head_pieces, dims.head_width, head_in});
    for (std::size_t i = 0; i < hw.numel(); ++i)
        hw[i] = static_cast<T>(rng.normal() / std::sqrt(double(head_in)));
    store.add(names.head_W, std::move(hw), true, DecayGroup::output_mlp);
    store.add(names.head_b,
              gaussian_tensor<T>(Shape{dims.head_pieces, dims.head_width}, 0.1, rng));
    store.add(names.out_W, dense_init<T>(dims.vocab, dims.head_width, rng), true,
              DecayGroup::output_mlp);
    store.add(names.out_b, Tensor<T>(Shape{dims.vocab}));
    store.add(names.s0, Tensor<T>(Shape{dims.state}));
}

struct DecoderVars {
    GruVars f;
    Var embedding, head_W, head_b, out_W, out_b, s0;
};

template <typename T>
DecoderVars bind_decoder(Graph<T>& g, const DecoderNames& names) {
    DecoderVars v;
    v.f = bind_gru(g, names.f);
    v.embedding = g.param(names.embedding);
    v.head_W = g.param(names.head_W);
    v.head_b = g.param(names.head_b);
    v.out_W = g.param(names.out_W);
    v.out_b = g.param(names.out_b);
    v.s0 = g.param(names.s0);
    return v;
}

// Learned initial state plus the one-hot-at-position-1 attention state.
template <typename T>
std::pair<Var, AttentionState> initial_state(Graph<T>& g, const DecoderVars& v,
                                             std::size_t n_positions) {
    return {v.s0, initial_attention_state(g, n_positions)};
}

struct DecoderStepOut {
    Var state;
    Var alpha;
    Var context;
    Var log_probs;
};

template <typename T>
DecoderStepOut decoder_step(Graph<T>& g, Var s_prev, int y_prev, Var annotations,
                            const AttentionState& att, const DecoderVars& dec,
                            const AttentionVars& attn) {
    const std::size_t vocab = g.value(dec.embedding).dim(0);
    SEQATTN_CHECK(y_prev >= 0 && y_prev < static_cast<int>(vocab), "token ", y_prev,
                  " out of range for vocabulary of ", vocab);
    SEQATTN_CHECK(g.value(annotations).dim(0) >= 1, "decoder_step needs annotations");

    DecoderStepOut out;
    Var e = attention_scores(g, s_prev, annotations, attn);
    out.alpha = gate_and_normalize(g, e, att.prev_expected_pos, attn);
    out.context = attention_context(g, out.alpha, annotations);
    Var emb = g.row(dec.embedding, static_cast<std::size_t>(y_prev));
    Var u = g.concat({emb, out.context});
    out.state = gated_step(g, s_prev, u, dec.f);
    Var head_in = g.concat({emb, out.state, out.context});
    Var hidden = g.maxout(head_in, dec.head_W, dec.head_b);
    out.log_probs = g.log_softmax(g.affine(dec.out_W, hidden, dec.out_b));
    return out;
}

struct UnrollOut {
    Var log_lik;     // sum over target tokens of log p(y_o | ...)
    Var penalty_sum; // sum of monotonicity penalties, one per step
    std::vector<Var> alignment;
};

// Teacher forcing: the ground-truth previous token conditions every step,
// starting from BOS. Targets must end with EOS and never contain BOS.
template <typename T>
UnrollOut teacher_forced_unroll(Graph<T>& g, Var annotations, const std::vector<int>& target,
                                const DecoderVars& dec, const AttentionVars& attn) {
    SEQATTN_CHECK(!target.empty(), "teacher_forced_unroll: empty target");
    SEQATTN_CHECK(target.back() == Vocabulary::kEos,
                  "teacher_forced_unroll: target must end with EOS");
    for (int t : target)
        SEQATTN_CHECK(t != Vocabulary::kBos, "teacher_forced_unroll: target contains BOS");

    const std::size_t n_positions = g.value(annotations).dim(0);
    auto [s, att] = initial_state(g, dec, n_positions);

    UnrollOut out;
    std::vector<Var> logps, penalties;
    int y_prev = Vocabulary::kBos;
    for (int y : target) {
        DecoderStepOut step = decoder_step(g, s, y_prev, annotations, att, dec, attn);
        logps.push_back(g.pick(step.log_probs, static_cast<std::size_t>(y)));
        penalties.push_back(g.monotonicity_penalty(att.prev_alpha, step.alpha));
        out.alignment.push_back(step.alpha);
        att = advance_attention_state(g, step.alpha);
        s = step.state;
        y_prev = y;
    }
    out.log_lik = g.add_n(logps);
    out.penalty_sum = g.add_n(penalties);
    return out;
}

} // namespace seqattn
