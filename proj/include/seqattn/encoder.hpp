// SPDX-License-Identifier: Apache-2.0
//
// Encoder: Maxout feedforward cascade into a bidirectional gated RNN.
// Annotations are the per-frame concatenation of forward and backward states.
// The pretrain head turns cascade outputs into per-frame label log-probs for
// the framewise pretraining stage.

#pragma once

#include <string>
#include <vector>

#include "seqattn/graph.hpp"
#include "seqattn/nn.hpp"
#include "seqattn/param_store.hpp"
#include "seqattn/rng.hpp"
#include "seqattn/tensor.hpp"

namespace seqattn {

struct EncoderDims {
    std::size_t feature_dim = 0;
    std::vector<std::size_t> maxout_widths = {24, 24};
    std::size_t maxout_pieces = 2;
    std::size_t hidden = 24;          // per direction
    std::size_t pretrain_classes = 0; // 0 = no pretrain head

    std::size_t annotation_dim() const { return 2 * hidden; }
    std::size_t cascade_out() const {
        return maxout_widths.empty() ? feature_dim : maxout_widths.back();
    }
};

struct EncoderNames {
    std::vector<std::pair<std::string, std::string>> ff; // (W, b) per layer
    GruParamNames fwd, bwd;
    std::string pretrain_W, pretrain_b;

    static EncoderNames under(const std::string& p, std::size_t n_layers) {
        EncoderNames n;
        for (std::size_t i = 0; i < n_layers; ++i) {
            const std::string base = p + ".ff" + std::to_string(i);
            n.ff.emplace_back(base + ".W", base + ".b");
        }
        n.fwd = GruParamNames::under(p + ".fwd");
        n.bwd = GruParamNames::under(p + ".bwd");
        n.pretrain_W = p + ".pretrain.W";
        n.pretrain_b = p + ".pretrain.b";
        return n;
    }
};

template <typename T>
void add_encoder_params(ParamStore<T>& store, const EncoderNames& names, const EncoderDims& dims,
                        Rng& rng) {
    SEQATTN_CONFIG_CHECK(dims.maxout_pieces >= 2, "maxout needs at least 2 pieces, got ",
                         dims.maxout_pieces);
    std::size_t in = dims.feature_dim;
    for (std::size_t i = 0; i < names.ff.size(); ++i) {
        const std::size_t out = dims.maxout_widths[i];
        Tensor<T> w(Shape{dims.maxout_pieces, out, in});
        for (std::size_t e = 0; e < w.numel(); ++e)
            w[e] = static_cast<T>(rng.normal() / std::sqrt(double(in)));
        store.add(names.ff[i].first, std::move(w));
        // small random biases keep the pieces off an exact tie at the
        // all-zero terminal frame
        store.add(names.ff[i].second,
                  gaussian_tensor<T>(Shape{dims.maxout_pieces, out}, 0.1, rng));
        in = out;
    }
    add_gru_params(store, names.fwd, dims.hidden, dims.cascade_out(), rng);
    add_gru_params(store, names.bwd, dims.hidden, dims.cascade_out(), rng);
    if (dims.pretrain_classes > 0) {
        store.add(names.pretrain_W, dense_init<T>(dims.pretrain_classes, dims.cascade_out(), rng));
        store.add(names.pretrain_b, Tensor<T>(Shape{dims.pretrain_classes}));
    }
}

struct EncoderVars {
    std::vector<std::pair<Var, Var>> ff;
    GruVars fwd, bwd;
    Var pretrain_W, pretrain_b;
    bool has_pretrain = false;
};

template <typename T>
EncoderVars bind_encoder(Graph<T>& g, const EncoderNames& names, bool with_pretrain_head) {
    EncoderVars v;
    for (const auto& [w, b] : names.ff) v.ff.emplace_back(g.param(w), g.param(b));
    v.fwd = bind_gru(g, names.fwd);
    v.bwd = bind_gru(g, names.bwd);
    if (with_pretrain_head) {
        v.pretrain_W = g.param(names.pretrain_W);
        v.pretrain_b = g.param(names.pretrain_b);
        v.has_pretrain = true;
    }
    return v;
}

// Appends one all-zero frame marking the end of the utterance. Applied once
// by the caller before encoding; not idempotent by design.
template <typename T>
Tensor<T> append_terminal_frame(const Tensor<T>& x) {
    SEQATTN_CHECK(x.rank() == 2, "feature sequence must be I x F, got ", shape_str(x.shape()));
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor<T> out(Shape{rows + 1, cols});
    for (std::size_t i = 0; i < rows * cols; ++i) out[i] = x[i];
    return out;
}

// Maxout cascade over frame rows.
template <typename T>
Var encoder_cascade(Graph<T>& g, Var frames, const EncoderVars& v) {
    Var cur = frames;
    for (const auto& [w, b] : v.ff) cur = g.maxout(cur, w, b);
    return cur;
}

// Full encoder: cascade then forward and backward gated RNNs from zero
// initial states; h_i = concat(fwd_i, bwd_i).
template <typename T>
Var encode(Graph<T>& g, Var frames, const EncoderVars& v, std::size_t hidden) {
    Var ff = encoder_cascade(g, frames, v);
    const std::size_t n_frames = g.value(ff).dim(0);

    std::vector<Var> inputs(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) inputs[i] = g.row(ff, i);

    std::vector<Var> fwd(n_frames), bwd(n_frames);
    Var s = g.leaf(Tensor<T>(Shape{hidden}));
    for (std::size_t i = 0; i < n_frames; ++i) {
        s = gated_step(g, s, inputs[i], v.fwd);
        fwd[i] = s;
    }
    s = g.leaf(Tensor<T>(Shape{hidden}));
    for (std::size_t i = n_frames; i-- > 0;) {
        s = gated_step(g, s, inputs[i], v.bwd);
        bwd[i] = s;
    }

    std::vector<Var> rows(n_frames);
    for (std::size_t i = 0; i < n_frames; ++i) rows[i] = g.concat({fwd[i], bwd[i]});
    return g.stack_rows(rows);
}

// Per-frame label log-probabilities from the cascade output (pretraining).
template <typename T>
Var framewise_logits(Graph<T>& g, Var frames, const EncoderVars& v) {
    if (!v.has_pretrain)
        throw ConfigError("framewise_logits: encoder has no pretrain head configured");
    Var ff = encoder_cascade(g, frames, v);
    return g.log_softmax_rows(g.affine(v.pretrain_W, ff, v.pretrain_b));
}

} // namespace seqattn
