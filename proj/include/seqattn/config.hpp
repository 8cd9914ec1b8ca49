// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON file, strict about unknown keys (typos
// fail loudly), every default resolved into the effective config that gets
// embedded in checkpoints and metrics logs.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqattn/common.hpp"
#include "seqattn/data.hpp"
#include "seqattn/model.hpp"

namespace seqattn {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::vector<std::string>& allowed,
                       const std::string& context) {
    SEQATTN_CONFIG_CHECK(obj.is_object(), context, " must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        SEQATTN_CONFIG_CHECK(ok, "unknown key '", it.key(), "' in ", context);
    }
}

template <typename V>
V get_or(const json& obj, const std::string& key, const V& fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<V>();
    } catch (const json::exception& e) {
        throw ConfigError(detail::format_msg("bad value for '", key, "': ", e.what()));
    }
}

// One stage of the training schedule, active for epochs in
// (previous until_epoch, until_epoch].
struct StageConfig {
    int until_epoch = 0;
    bool freeze_encoder_ff = false;
    bool gating_enabled = false;
    bool penalty_enabled = false;
    double wd_output_mlp = 0.0;
    double wd_scorer = 0.0;
    double grad_scale = 1.0;

    static StageConfig from_json(const json& j) {
        check_keys(j,
                   {"until_epoch", "freeze_encoder_ff", "gating_enabled", "penalty_enabled",
                    "wd_output_mlp", "wd_scorer", "grad_scale"},
                   "schedule stage");
        StageConfig s;
        SEQATTN_CONFIG_CHECK(j.contains("until_epoch"), "schedule stage needs until_epoch");
        s.until_epoch = j.at("until_epoch").get<int>();
        s.freeze_encoder_ff = get_or(j, "freeze_encoder_ff", s.freeze_encoder_ff);
        s.gating_enabled = get_or(j, "gating_enabled", s.gating_enabled);
        s.penalty_enabled = get_or(j, "penalty_enabled", s.penalty_enabled);
        s.wd_output_mlp = get_or(j, "wd_output_mlp", s.wd_output_mlp);
        s.wd_scorer = get_or(j, "wd_scorer", s.wd_scorer);
        s.grad_scale = get_or(j, "grad_scale", s.grad_scale);
        return s;
    }

    json to_json() const {
        json j;
        j["until_epoch"] = until_epoch;
        j["freeze_encoder_ff"] = freeze_encoder_ff;
        j["gating_enabled"] = gating_enabled;
        j["penalty_enabled"] = penalty_enabled;
        j["wd_output_mlp"] = wd_output_mlp;
        j["wd_scorer"] = wd_scorer;
        j["grad_scale"] = grad_scale;
        return j;
    }
};

struct ExperimentConfig {
    ModelConfig model;
    std::string vocab_file;

    int pretrain_epochs = 0;
    std::vector<StageConfig> stages;

    double rho_ad = 0.95;
    double eps_ad = 1e-6;
    double rho_clip = 0.99;
    double kappa = 1.0;

    int group_size = 32;
    int batch_size = 4;

    std::uint64_t seed = 1;
    double early_stop_dev_ser = -1.0; // < 0 disables early stopping
    int eval_beam_width = 0;          // 0 = greedy dev evaluation

    int total_epochs() const { return stages.empty() ? 0 : stages.back().until_epoch; }

    const StageConfig& stage_for(int epoch) const {
        for (const auto& s : stages)
            if (epoch <= s.until_epoch) return s;
        throw ConfigError(detail::format_msg("epoch ", epoch, " beyond the schedule"));
    }

    void validate() const {
        SEQATTN_CONFIG_CHECK(model.feature_dim >= 1, "model.feature_dim must be >= 1");
        SEQATTN_CONFIG_CHECK(!model.maxout_widths.empty(), "model.maxout_widths must be nonempty");
        for (std::size_t w : model.maxout_widths)
            SEQATTN_CONFIG_CHECK(w >= 1, "model.maxout_widths entries must be >= 1");
        SEQATTN_CONFIG_CHECK(model.maxout_pieces >= 2, "model.maxout_pieces must be >= 2");
        SEQATTN_CONFIG_CHECK(model.hidden >= 1 && model.state >= 1 && model.embed >= 1 &&
                                 model.scorer_hidden >= 1 && model.gate_hidden >= 1 &&
                                 model.head_width >= 1,
                             "model dimensions must be >= 1");
        SEQATTN_CONFIG_CHECK(model.head_pieces >= 2, "model.head_pieces must be >= 2");
        SEQATTN_CONFIG_CHECK(pretrain_epochs >= 0, "schedule.pretrain_epochs must be >= 0");
        SEQATTN_CONFIG_CHECK(!stages.empty(), "schedule.stages must be nonempty");
        int prev = 0;
        for (const auto& s : stages) {
            SEQATTN_CONFIG_CHECK(s.until_epoch > prev,
                                 "schedule stages: until_epoch must be strictly increasing");
            SEQATTN_CONFIG_CHECK(s.grad_scale > 0, "stage grad_scale must be > 0");
            SEQATTN_CONFIG_CHECK(s.wd_output_mlp >= 0 && s.wd_scorer >= 0,
                                 "stage weight decays must be >= 0");
            prev = s.until_epoch;
        }
        SEQATTN_CONFIG_CHECK(rho_ad > 0 && rho_ad < 1, "optimizer.rho_ad must lie in (0,1)");
        SEQATTN_CONFIG_CHECK(eps_ad > 0, "optimizer.eps_ad must be > 0");
        SEQATTN_CONFIG_CHECK(rho_clip > 0 && rho_clip < 1, "optimizer.rho_clip must lie in (0,1)");
        SEQATTN_CONFIG_CHECK(kappa >= 0, "optimizer.kappa must be >= 0");
        SEQATTN_CONFIG_CHECK(group_size >= 1 && batch_size >= 1,
                             "batching sizes must be >= 1");
        SEQATTN_CONFIG_CHECK(eval_beam_width >= 0, "training.eval_beam_width must be >= 0");
    }

    static ExperimentConfig from_json(const json& j) {
        check_keys(j, {"model", "schedule", "optimizer", "batching", "training"},
                   "experiment config");
        ExperimentConfig c;
        if (j.contains("model")) {
            const json& m = j.at("model");
            check_keys(m,
                       {"feature_dim", "maxout_widths", "maxout_pieces", "hidden", "state",
                        "embed", "scorer_hidden", "gate_hidden", "head_width", "head_pieces",
                        "pretrain_head", "vocab_file"},
                       "model section");
            c.model.feature_dim = get_or<std::size_t>(m, "feature_dim", c.model.feature_dim);
            c.model.maxout_widths =
                get_or<std::vector<std::size_t>>(m, "maxout_widths", c.model.maxout_widths);
            c.model.maxout_pieces = get_or<std::size_t>(m, "maxout_pieces", c.model.maxout_pieces);
            c.model.hidden = get_or<std::size_t>(m, "hidden", c.model.hidden);
            c.model.state = get_or<std::size_t>(m, "state", c.model.state);
            c.model.embed = get_or<std::size_t>(m, "embed", c.model.embed);
            c.model.scorer_hidden = get_or<std::size_t>(m, "scorer_hidden", c.model.scorer_hidden);
            c.model.gate_hidden = get_or<std::size_t>(m, "gate_hidden", c.model.gate_hidden);
            c.model.head_width = get_or<std::size_t>(m, "head_width", c.model.head_width);
            c.model.head_pieces = get_or<std::size_t>(m, "head_pieces", c.model.head_pieces);
            c.model.pretrain_head = get_or(m, "pretrain_head", c.model.pretrain_head);
            c.vocab_file = get_or<std::string>(m, "vocab_file", c.vocab_file);
        }
        if (j.contains("schedule")) {
            const json& s = j.at("schedule");
            check_keys(s, {"pretrain_epochs", "stages"}, "schedule section");
            c.pretrain_epochs = get_or(s, "pretrain_epochs", c.pretrain_epochs);
            if (s.contains("stages"))
                for (const auto& st : s.at("stages")) c.stages.push_back(StageConfig::from_json(st));
        }
        if (c.stages.empty()) {
            StageConfig s;
            s.until_epoch = 10;
            c.stages.push_back(s);
        }
        if (j.contains("optimizer")) {
            const json& o = j.at("optimizer");
            check_keys(o, {"rho_ad", "eps_ad", "rho_clip", "kappa"}, "optimizer section");
            c.rho_ad = get_or(o, "rho_ad", c.rho_ad);
            c.eps_ad = get_or(o, "eps_ad", c.eps_ad);
            c.rho_clip = get_or(o, "rho_clip", c.rho_clip);
            c.kappa = get_or(o, "kappa", c.kappa);
        }
        if (j.contains("batching")) {
            const json& b = j.at("batching");
            check_keys(b, {"group_size", "batch_size"}, "batching section");
            c.group_size = get_or(b, "group_size", c.group_size);
            c.batch_size = get_or(b, "batch_size", c.batch_size);
        }
        if (j.contains("training")) {
            const json& t = j.at("training");
            check_keys(t, {"seed", "early_stop_dev_ser", "eval_beam_width"}, "training section");
            c.seed = get_or<std::uint64_t>(t, "seed", c.seed);
            c.early_stop_dev_ser = get_or(t, "early_stop_dev_ser", c.early_stop_dev_ser);
            c.eval_beam_width = get_or(t, "eval_beam_width", c.eval_beam_width);
        }
        c.validate();
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        SEQATTN_CONFIG_CHECK(in.good(), "cannot open config file: ", path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError(detail::format_msg("malformed config ", path, ": ", e.what()));
        }
        return from_json(j);
    }

    // Every field, defaults resolved.
    json to_json() const {
        json j;
        j["model"]["feature_dim"] = model.feature_dim;
        j["model"]["maxout_widths"] = model.maxout_widths;
        j["model"]["maxout_pieces"] = model.maxout_pieces;
        j["model"]["hidden"] = model.hidden;
        j["model"]["state"] = model.state;
        j["model"]["embed"] = model.embed;
        j["model"]["scorer_hidden"] = model.scorer_hidden;
        j["model"]["gate_hidden"] = model.gate_hidden;
        j["model"]["head_width"] = model.head_width;
        j["model"]["head_pieces"] = model.head_pieces;
        j["model"]["pretrain_head"] = model.pretrain_head;
        j["model"]["vocab_file"] = vocab_file;
        j["schedule"]["pretrain_epochs"] = pretrain_epochs;
        j["schedule"]["stages"] = json::array();
        for (const auto& s : stages) j["schedule"]["stages"].push_back(s.to_json());
        j["optimizer"]["rho_ad"] = rho_ad;
        j["optimizer"]["eps_ad"] = eps_ad;
        j["optimizer"]["rho_clip"] = rho_clip;
        j["optimizer"]["kappa"] = kappa;
        j["batching"]["group_size"] = group_size;
        j["batching"]["batch_size"] = batch_size;
        j["training"]["seed"] = seed;
        j["training"]["early_stop_dev_ser"] = early_stop_dev_ser;
        j["training"]["eval_beam_width"] = eval_beam_width;
        return j;
    }
};

// Synth spec file shares the strict-key convention.
inline SynthSpec synth_spec_from_json(const json& j) {
    check_keys(j,
               {"vocab_size", "feature_dim", "len_range", "duration_range", "noise_sigma",
                "repeat_prob", "seed"},
               "synth spec");
    SynthSpec s;
    s.vocab_size = get_or(j, "vocab_size", s.vocab_size);
    s.feature_dim = get_or(j, "feature_dim", s.feature_dim);
    if (j.contains("len_range")) {
        const auto r = j.at("len_range").get<std::vector<int>>();
        SEQATTN_CONFIG_CHECK(r.size() == 2, "len_range must be [min, max]");
        s.len_min = r[0];
        s.len_max = r[1];
    }
    if (j.contains("duration_range")) {
        const auto r = j.at("duration_range").get<std::vector<int>>();
        SEQATTN_CONFIG_CHECK(r.size() == 2, "duration_range must be [min, max]");
        s.dur_min = r[0];
        s.dur_max = r[1];
    }
    s.noise_sigma = get_or(j, "noise_sigma", s.noise_sigma);
    s.repeat_prob = get_or(j, "repeat_prob", s.repeat_prob);
    s.seed = get_or<std::uint64_t>(j, "seed", s.seed);
    s.validate();
    return s;
}

inline SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    SEQATTN_CONFIG_CHECK(in.good(), "cannot open synth spec: ", path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(detail::format_msg("malformed synth spec ", path, ": ", e.what()));
    }
    return synth_spec_from_json(j);
}

} // namespace seqattn
