// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Sequence loss = NLL + monotonicity penalty (coefficient
// 1 when enabled) + selective weight decay: wd/2 * ||W||^2 over the output-MLP
// and scorer weight groups, biases excluded. Framewise loss is the per-frame
// cross-entropy used by the pretraining stage.

#pragma once

#include <vector>

#include "seqattn/decoder.hpp"
#include "seqattn/graph.hpp"
#include "seqattn/model.hpp"

namespace seqattn {

template <typename T>
struct StageFlags {
    bool freeze_encoder_ff = false;
    bool gating_enabled = false;
    bool penalty_enabled = false;
    T wd_output_mlp = 0;
    T wd_scorer = 0;
    T grad_scale = 1; // consumed by the clipping step, not by the loss
};

template <typename T>
struct LossBreakdown {
    T nll = 0;
    T penalty = 0;
    T decay_output_mlp = 0;
    T decay_scorer = 0;
    T total = 0;

    LossBreakdown& operator+=(const LossBreakdown& o) {
        nll += o.nll;
        penalty += o.penalty;
        decay_output_mlp += o.decay_output_mlp;
        decay_scorer += o.decay_scorer;
        total += o.total;
        return *this;
    }
    void scale_by(T s) {
        nll *= s;
        penalty *= s;
        decay_output_mlp *= s;
        decay_scorer *= s;
        total *= s;
    }
};

template <typename T>
Var decay_term(Graph<T>& g, Model<T>& model, DecayGroup group, T wd) {
    std::vector<Var> terms;
    for (const auto& e : model.store().entries())
        if (e.group == group) terms.push_back(g.sumsq(g.param(e.name)));
    SEQATTN_CHECK(!terms.empty(), "no parameters in decay group ", decay_group_name(group));
    return g.scale(g.add_n(terms), wd / T(2));
}

// Builds the full loss for one utterance on g and reports the component
// values. The tape stays alive in g; callers run backward() themselves.
template <typename T>
Var build_sequence_loss(Graph<T>& g, Model<T>& model, const Tensor<T>& features_raw,
                        const std::vector<int>& target, const StageFlags<T>& flags,
                        LossBreakdown<T>* breakdown = nullptr,
                        std::vector<Tensor<T>>* alignment_rows = nullptr) {
    Var annotations = model.annotate(g, features_raw);
    DecoderVars dec = model.bind_dec(g);
    AttentionVars att = model.bind_att(g, flags.gating_enabled);
    UnrollOut unroll = teacher_forced_unroll(g, annotations, target, dec, att);

    Var loss = g.scale(unroll.log_lik, T(-1));
    const T nll = g.value(loss).value();
    T penalty = 0;
    if (flags.penalty_enabled) {
        penalty = g.value(unroll.penalty_sum).value();
        loss = g.add(loss, unroll.penalty_sum);
    }
    T decay_out = 0, decay_sc = 0;
    if (flags.wd_output_mlp != T(0)) {
        Var d = decay_term(g, model, DecayGroup::output_mlp, flags.wd_output_mlp);
        decay_out = g.value(d).value();
        loss = g.add(loss, d);
    }
    if (flags.wd_scorer != T(0)) {
        Var d = decay_term(g, model, DecayGroup::scorer, flags.wd_scorer);
        decay_sc = g.value(d).value();
        loss = g.add(loss, d);
    }

    const T total = g.value(loss).value();
    if (!std::isfinite(static_cast<double>(total)))
        throw NumericError(detail::format_msg("sequence loss not finite: nll=", nll,
                                              " penalty=", penalty, " decay=", decay_out, "+",
                                              decay_sc));
    if (breakdown) *breakdown = {nll, penalty, decay_out, decay_sc, total};
    if (alignment_rows) {
        alignment_rows->clear();
        for (Var row : unroll.alignment) alignment_rows->push_back(g.value(row));
    }
    return loss;
}

// Per-frame cross-entropy over the synthetic frame labels (summed over
// frames). Labels align with the raw frames; no terminal frame here.
template <typename T>
Var build_framewise_loss(Graph<T>& g, Model<T>& model, const Tensor<T>& features_raw,
                         const std::vector<int>& frame_labels) {
    SEQATTN_CHECK(features_raw.rank() == 2 && features_raw.dim(0) == frame_labels.size(),
                  "frame labels (", frame_labels.size(), ") do not match frames (",
                  features_raw.dim(0), ")");
    Var logp = framewise_logits(g, g.leaf(features_raw),
                                model.bind_enc(g, /*with_pretrain_head=*/true));
    std::vector<std::size_t> idx(frame_labels.size());
    const std::size_t classes = g.value(logp).dim(1);
    for (std::size_t i = 0; i < frame_labels.size(); ++i) {
        SEQATTN_CHECK(frame_labels[i] >= 0 && frame_labels[i] < static_cast<int>(classes),
                      "frame label ", frame_labels[i], " out of range for ", classes,
                      " classes");
        idx[i] = static_cast<std::size_t>(frame_labels[i]);
    }
    Var picked = g.gather_rows(logp, std::move(idx));
    Var loss = g.scale(g.sum(picked), T(-1));
    if (!std::isfinite(static_cast<double>(g.value(loss).value())))
        throw NumericError("framewise loss not finite");
    return loss;
}

} // namespace seqattn
