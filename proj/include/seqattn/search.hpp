// SPDX-License-Identifier: Apache-2.0
//
// Greedy and beam decoding. Hypotheses are ranked by raw accumulated
// log-probability (no length normalization). A hypothesis that emits EOS
// retires to a completed pool and stops competing for beam slots; the search
// stops when the pool holds `width` entries or after I output steps (frame
// count post terminal-append), whichever comes first. BOS is never proposed.

#pragma once

#include <algorithm>
#include <vector>

#include "seqattn/decoder.hpp"
#include "seqattn/model.hpp"

namespace seqattn {

template <typename T>
struct DecodeHypothesis {
    std::vector<int> tokens; // content tokens, EOS not stored
    T log_prob = 0;          // includes the EOS emission once finished
    bool finished = false;
    std::vector<Tensor<T>> alignment; // one row per decoder step taken
};

template <typename T>
struct NBestList {
    std::vector<DecodeHypothesis<T>> hypotheses; // sorted by log_prob descending
    std::size_t width = 0;
};

// Argmax over emittable tokens (everything but BOS), ties to the lowest id.
template <typename T>
int argmax_emittable(const Tensor<T>& log_probs) {
    int best = Vocabulary::kEos;
    for (int t = Vocabulary::kEos + 1; t < static_cast<int>(log_probs.numel()); ++t)
        if (log_probs[static_cast<std::size_t>(t)] > log_probs[static_cast<std::size_t>(best)])
            best = t;
    return best;
}

template <typename T>
DecodeHypothesis<T> greedy_decode(const Model<T>& model, const Tensor<T>& features_raw) {
    Graph<T> g(const_cast<ParamStore<T>*>(&model.store()), /*enable_grads=*/false);
    Var annotations = model.annotate(g, features_raw);
    const std::size_t cap = g.value(annotations).dim(0);
    DecoderVars dec = model.bind_dec(g);
    AttentionVars attn = model.bind_att(g, model.gating());
    auto [s, att] = initial_state(g, dec, cap);

    DecodeHypothesis<T> hyp;
    int y_prev = Vocabulary::kBos;
    for (std::size_t step = 0; step < cap; ++step) {
        DecoderStepOut out = decoder_step(g, s, y_prev, annotations, att, dec, attn);
        const int best = argmax_emittable(g.value(out.log_probs));
        hyp.log_prob += g.value(out.log_probs)[static_cast<std::size_t>(best)];
        hyp.alignment.push_back(g.value(out.alpha));
        att = advance_attention_state(g, out.alpha);
        s = out.state;
        if (best == Vocabulary::kEos) {
            hyp.finished = true;
            break;
        }
        hyp.tokens.push_back(best);
        y_prev = best;
    }
    return hyp;
}

template <typename T>
NBestList<T> beam_decode(const Model<T>& model, const Tensor<T>& features_raw,
                         std::size_t width, std::size_t n_best = 1) {
    if (width < 1) throw ConfigError("beam width must be >= 1");
    if (n_best < 1) throw ConfigError("n_best must be >= 1");
    n_best = std::min(n_best, width);

    Graph<T> g(const_cast<ParamStore<T>*>(&model.store()), /*enable_grads=*/false);
    Var annotations = model.annotate(g, features_raw);
    const std::size_t cap = g.value(annotations).dim(0);
    DecoderVars dec = model.bind_dec(g);
    AttentionVars attn = model.bind_att(g, model.gating());

    struct LiveHyp {
        std::vector<int> tokens;
        T log_prob = 0;
        Var state;
        AttentionState att;
        std::vector<Tensor<T>> alignment;
    };

    auto [s0, att0] = initial_state(g, dec, cap);
    std::vector<LiveHyp> live(1);
    live[0].state = s0;
    live[0].att = att0;

    std::vector<DecodeHypothesis<T>> completed;
    const int vocab = static_cast<int>(model.vocab().size());

    for (std::size_t step = 0; step < cap && !live.empty() && completed.size() < width;
         ++step) {
        struct Candidate {
            std::size_t parent;
            int token;
            T log_prob;
        };
        std::vector<Candidate> expansions;
        std::vector<Var> new_states(live.size());
        std::vector<AttentionState> new_atts(live.size());
        std::vector<Tensor<T>> new_rows(live.size());

        for (std::size_t p = 0; p < live.size(); ++p) {
            const int y_prev = live[p].tokens.empty() ? Vocabulary::kBos : live[p].tokens.back();
            DecoderStepOut out =
                decoder_step(g, live[p].state, y_prev, annotations, live[p].att, dec, attn);
            new_states[p] = out.state;
            new_atts[p] = advance_attention_state(g, out.alpha);
            new_rows[p] = g.value(out.alpha);
            for (int t = Vocabulary::kEos; t < vocab; ++t)
                expansions.push_back(
                    {p, t, live[p].log_prob + g.value(out.log_probs)[static_cast<std::size_t>(t)]});
        }

        // candidates were generated in (parent, token) order; the stable sort
        // therefore breaks log-prob ties toward lower parent then lower token
        std::stable_sort(expansions.begin(), expansions.end(),
                         [](const Candidate& a, const Candidate& b) {
                             return a.log_prob > b.log_prob;
                         });

        // keep the top `width` candidates; of those, EOS winners retire to
        // the completed pool and stop competing for slots in later steps
        std::vector<LiveHyp> next_live;
        std::size_t taken = 0;
        for (const Candidate& c : expansions) {
            if (taken >= width) break;
            ++taken;
            if (c.token == Vocabulary::kEos) {
                DecodeHypothesis<T> done;
                done.tokens = live[c.parent].tokens;
                done.log_prob = c.log_prob;
                done.finished = true;
                done.alignment = live[c.parent].alignment;
                done.alignment.push_back(new_rows[c.parent]);
                completed.push_back(std::move(done));
                continue;
            }
            LiveHyp child;
            child.tokens = live[c.parent].tokens;
            child.tokens.push_back(c.token);
            child.log_prob = c.log_prob;
            child.state = new_states[c.parent];
            child.att = new_atts[c.parent];
            child.alignment = live[c.parent].alignment;
            child.alignment.push_back(new_rows[c.parent]);
            next_live.push_back(std::move(child));
        }
        live = std::move(next_live);
    }

    NBestList<T> result;
    result.width = width;
    if (completed.empty()) {
        // nothing reached EOS within the cap: fall back to the best live
        // hypothesis, flagged unfinished
        SEQATTN_CHECK(!live.empty(), "beam search lost every hypothesis");
        const LiveHyp* best = &live[0];
        for (const LiveHyp& h : live)
            if (h.log_prob > best->log_prob) best = &h;
        DecodeHypothesis<T> fallback;
        fallback.tokens = best->tokens;
        fallback.log_prob = best->log_prob;
        fallback.finished = false;
        fallback.alignment = best->alignment;
        result.hypotheses.push_back(std::move(fallback));
        return result;
    }
    std::stable_sort(completed.begin(), completed.end(),
                     [](const DecodeHypothesis<T>& a, const DecodeHypothesis<T>& b) {
                         return a.log_prob > b.log_prob;
                     });
    if (completed.size() > n_best) completed.resize(n_best);
    result.hypotheses = std::move(completed);
    return result;
}

// Replays the decoder over a fixed emitted sequence (content tokens, EOS
// step appended) and records the alignment rows: len(tokens)+1 rows of I.
template <typename T>
Tensor<T> dump_alignment(const Model<T>& model, const Tensor<T>& features_raw,
                         const std::vector<int>& tokens) {
    for (int t : tokens)
        SEQATTN_CHECK(model.vocab().is_content(t), "dump_alignment: token ", t,
                      " is not a content symbol");

    Graph<T> g(const_cast<ParamStore<T>*>(&model.store()), /*enable_grads=*/false);
    Var annotations = model.annotate(g, features_raw);
    const std::size_t n_positions = g.value(annotations).dim(0);
    DecoderVars dec = model.bind_dec(g);
    AttentionVars attn = model.bind_att(g, model.gating());
    auto [s, att] = initial_state(g, dec, n_positions);

    std::vector<int> steps = tokens;
    steps.push_back(Vocabulary::kEos);

    Tensor<T> rows(Shape{steps.size(), n_positions});
    int y_prev = Vocabulary::kBos;
    for (std::size_t o = 0; o < steps.size(); ++o) {
        DecoderStepOut out = decoder_step(g, s, y_prev, annotations, att, dec, attn);
        for (std::size_t i = 0; i < n_positions; ++i) rows.at(o, i) = g.value(out.alpha)[i];
        att = advance_attention_state(g, out.alpha);
        s = out.state;
        y_prev = steps[o];
    }
    return rows;
}

} // namespace seqattn
