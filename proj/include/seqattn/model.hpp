// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "seqattn/attention.hpp"
#include "seqattn/decoder.hpp"
#include "seqattn/encoder.hpp"
#include "seqattn/graph.hpp"
#include "seqattn/param_store.hpp"
#include "seqattn/rng.hpp"
#include "seqattn/vocab.hpp"

namespace seqattn {

struct ModelConfig {
    std::size_t feature_dim = 8;
    std::vector<std::size_t> maxout_widths = {24, 24};
    std::size_t maxout_pieces = 2;
    std::size_t hidden = 24; // per encoder direction
    std::size_t state = 32;
    std::size_t embed = 12;
    std::size_t scorer_hidden = 24;
    std::size_t gate_hidden = 10;
    std::size_t head_width = 32;
    std::size_t head_pieces = 2;
    bool pretrain_head = true;

    bool operator==(const ModelConfig&) const = default;
};

// Parameter container plus the graph builders every consumer shares.
template <typename T>
class Model {
public:
    Model(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed)
        : cfg_(std::move(cfg)),
          vocab_(std::move(vocab)),
          enc_names_(EncoderNames::under("encoder", cfg_.maxout_widths.size())),
          att_names_(AttentionNames::under("attention")),
          dec_names_(DecoderNames::under("decoder")) {
        Rng rng = Rng::stream(seed, 0x1417u);
        add_encoder_params(store_, enc_names_, encoder_dims(), rng);
        add_attention_params(store_, att_names_, attention_dims(), rng);
        add_decoder_params(store_, dec_names_, decoder_dims(), rng);
    }

    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    const ModelConfig& config() const { return cfg_; }

    // Whether the relative-position gate participates in attention. Off until
    // the schedule first enables it; restored from checkpoints so decoding
    // matches the training-time configuration.
    bool gating() const { return gating_; }
    void set_gating(bool enabled) { gating_ = enabled; }
    const Vocabulary& vocab() const { return vocab_; }
    const EncoderNames& encoder_names() const { return enc_names_; }
    const AttentionNames& attention_names() const { return att_names_; }
    const DecoderNames& decoder_names() const { return dec_names_; }

    EncoderDims encoder_dims() const {
        EncoderDims d;
        d.feature_dim = cfg_.feature_dim;
        d.maxout_widths = cfg_.maxout_widths;
        d.maxout_pieces = cfg_.maxout_pieces;
        d.hidden = cfg_.hidden;
        d.pretrain_classes = cfg_.pretrain_head ? vocab_.content_size() : 0;
        return d;
    }
    AttentionDims attention_dims() const {
        AttentionDims d;
        d.state_dim = cfg_.state;
        d.annotation_dim = 2 * cfg_.hidden;
        d.scorer_hidden = cfg_.scorer_hidden;
        d.gate_hidden = cfg_.gate_hidden;
        return d;
    }
    DecoderDims decoder_dims() const {
        DecoderDims d;
        d.vocab = vocab_.size();
        d.embed = cfg_.embed;
        d.state = cfg_.state;
        d.annotation_dim = 2 * cfg_.hidden;
        d.head_width = cfg_.head_width;
        d.head_pieces = cfg_.head_pieces;
        return d;
    }

    // Appends the terminal zero frame and encodes. All consumers (training,
    // search, dumps) go through this, so the length cap I+1 is uniform.
    Var annotate(Graph<T>& g, const Tensor<T>& features_raw) const {
        Var frames = g.leaf(append_terminal_frame(features_raw));
        return encode(g, frames, bind_encoder(g, enc_names_, /*with_pretrain_head=*/false),
                      cfg_.hidden);
    }

    EncoderVars bind_enc(Graph<T>& g, bool with_pretrain_head) const {
        return bind_encoder(g, enc_names_, with_pretrain_head);
    }
    AttentionVars bind_att(Graph<T>& g, bool gating_enabled) const {
        return bind_attention(g, att_names_, gating_enabled);
    }
    DecoderVars bind_dec(Graph<T>& g) const { return bind_decoder(g, dec_names_); }

    // Names of the feedforward-cascade entries, the freeze unit of the
    // staged schedule.
    std::vector<std::string> encoder_ff_param_names() const {
        std::vector<std::string> out;
        for (const auto& [w, b] : enc_names_.ff) {
            out.push_back(w);
            out.push_back(b);
        }
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& e : store_.entries()) n += e.value.numel();
        return n;
    }

private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    ParamStore<T> store_;
    EncoderNames enc_names_;
    AttentionNames att_names_;
    DecoderNames dec_names_;
    bool gating_ = false;
};

} // namespace seqattn
