// SPDX-License-Identifier: Apache-2.0
//
// Training driver. Optional framewise pretraining (cross-entropy on the
// synthetic frame labels through the encoder cascade), then staged sequence
// training: per-stage encoder-ff freezing, gating enablement (with the manual
// gate init applied once, when gating first turns on), monotonicity penalty,
// selective weight decay and gradient scale. Loss is summed over target
// tokens and averaged over the utterances of a batch; batch members may be
// evaluated on worker threads, with gradients reduced in fixed utterance
// order so thread count never changes the result.

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "seqattn/batching.hpp"
#include "seqattn/checkpoint.hpp"
#include "seqattn/config.hpp"
#include "seqattn/data.hpp"
#include "seqattn/loss.hpp"
#include "seqattn/metrics.hpp"
#include "seqattn/model.hpp"
#include "seqattn/optimizer.hpp"
#include "seqattn/search.hpp"

namespace seqattn {

// rng stream tags; never reuse across purposes
inline constexpr std::uint64_t kStreamPretrainShuffle = 0x9E70000ULL;
inline constexpr std::uint64_t kStreamSequenceShuffle = 0x5E90000ULL;
inline constexpr std::uint64_t kStreamGateInit = 0x6A7EULL;

template <typename T>
std::vector<int> target_token_ids(const Vocabulary& vocab, const Utterance& utt) {
    std::vector<int> ids;
    ids.reserve(utt.target.size() + 1);
    for (const auto& s : utt.target) ids.push_back(vocab.id_of(s));
    ids.push_back(Vocabulary::kEos);
    return ids;
}

// Greedy (or beam) decode of every utterance, pooled symbol error rate.
template <typename T>
EvalReport evaluate_ser(const Model<T>& model, const Dataset& data, int beam_width = 0) {
    std::vector<std::pair<std::string, std::vector<std::string>>> refs, hyps;
    for (const auto& utt : data.utterances) {
        const Tensor<T> feats = utt.feature_tensor<T>();
        std::vector<int> tokens;
        if (beam_width > 0) {
            NBestList<T> nbest = beam_decode(model, feats, static_cast<std::size_t>(beam_width));
            tokens = nbest.hypotheses.at(0).tokens;
        } else {
            tokens = greedy_decode(model, feats).tokens;
        }
        std::vector<std::string> hyp_syms;
        for (int t : tokens) hyp_syms.push_back(model.vocab().name(t));
        refs.emplace_back(utt.id, utt.target);
        hyps.emplace_back(utt.id, std::move(hyp_syms));
    }
    return corpus_error_rate(refs, hyps);
}

template <typename T>
class Trainer {
public:
    Trainer(ExperimentConfig cfg, Model<T> model, Dataset train, Dataset dev,
            std::string out_dir, int threads = 1)
        : cfg_(std::move(cfg)),
          model_(std::move(model)),
          train_(std::move(train)),
          dev_(std::move(dev)),
          out_dir_(std::move(out_dir)),
          threads_(threads < 1 ? 1 : threads),
          opt_(make_optimizer()) {
        std::filesystem::create_directories(out_dir_);
        SEQATTN_CONFIG_CHECK(!train_.utterances.empty(), "training dataset is empty");
    }

    // Resumes training state from a checkpoint. An override config may extend
    // the schedule (the paper's runs changed hyper-parameters mid-flight);
    // the model architecture must stay identical.
    static Trainer resume_from(const std::string& checkpoint_path, Dataset train, Dataset dev,
                               std::string out_dir, int threads = 1,
                               const ExperimentConfig* override_config = nullptr) {
        LoadedCheckpoint<T> loaded = load_checkpoint<T>(checkpoint_path);
        ExperimentConfig cfg = loaded.config;
        if (override_config) {
            SEQATTN_CONFIG_CHECK(override_config->model == loaded.config.model,
                                 "resume: override config changes the model architecture");
            cfg = *override_config;
        }
        Trainer t(cfg, loaded.build_model(), std::move(train), std::move(dev),
                  std::move(out_dir), threads);
        t.progress_ = loaded.progress;
        if (loaded.has_optimizer()) t.opt_ = loaded.build_optimizer(t.model_.store());
        return t;
    }

    Model<T>& model() { return model_; }
    const TrainProgress& progress() const { return progress_; }
    const ExperimentConfig& config() const { return cfg_; }

    std::string best_path() const { return out_dir_ + "/best.ckpt"; }
    std::string last_path() const { return out_dir_ + "/last.ckpt"; }

    void run() {
        log_run_start();
        try {
            pretrain_phase();
            sequence_phase();
        } catch (const NumericError&) {
            // dump state for post-mortem before propagating
            save_checkpoint(out_dir_ + "/crash.ckpt", model_, cfg_, progress_, &opt_);
            throw;
        }
        progress_.phase = "done";
        save_checkpoint(last_path(), model_, cfg_, progress_, &opt_);
        if (progress_.best_dev_ser < 0) {
            // no dev set: best is simply the final model
            save_checkpoint(best_path(), model_, cfg_, progress_, &opt_);
        }
    }

private:
    AdaDeltaOptimizer<T> make_optimizer() {
        ClipState<T> clip;
        clip.rho_clip = static_cast<T>(cfg_.rho_clip);
        clip.kappa = static_cast<T>(cfg_.kappa);
        return AdaDeltaOptimizer<T>(model_.store(), static_cast<T>(cfg_.rho_ad),
                                    static_cast<T>(cfg_.eps_ad), clip);
    }

    void log_run_start() {
        json j;
        j["type"] = "run_start";
        j["config"] = cfg_.to_json();
        j["phase"] = progress_.phase;
        j["n_train"] = train_.utterances.size();
        j["n_dev"] = dev_.utterances.size();
        j["threads"] = threads_;
        log_line(j);
    }

    void log_line(const json& j) {
        std::ofstream out(out_dir_ + "/metrics.jsonl", std::ios::app);
        SEQATTN_DATA_CHECK(out.good(), "cannot append to metrics log in ", out_dir_);
        out << j.dump() << "\n";
    }

    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    void pretrain_phase() {
        if (cfg_.pretrain_epochs <= 0 || progress_.pretrain_epochs_done >= cfg_.pretrain_epochs)
            return;
        SEQATTN_CONFIG_CHECK(model_.config().pretrain_head,
                             "pretraining requested but model.pretrain_head is disabled");
        for (const auto& u : train_.utterances)
            SEQATTN_CONFIG_CHECK(!u.frame_labels.empty(),
                                 "pretraining needs frame_labels; utterance ", u.id,
                                 " has none");
        progress_.phase = "pretrain";
        for (int epoch = progress_.pretrain_epochs_done + 1; epoch <= cfg_.pretrain_epochs;
             ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            Rng shuffle = Rng::stream(cfg_.seed, kStreamPretrainShuffle + std::uint64_t(epoch));
            auto batches = make_batches(
                train_.utterances.size(),
                [&](std::size_t i) { return train_.utterances[i].n_frames; }, shuffle,
                std::size_t(cfg_.group_size), std::size_t(cfg_.batch_size));

            double loss_sum = 0;
            for (const auto& batch : batches) {
                model_.store().zero_grads();
                const T inv = T(1) / T(batch.indices.size());
                run_over_batch(batch, [&](std::size_t idx, Graph<T>& g, std::size_t) {
                    const auto& utt = train_.utterances[idx];
                    return build_framewise_loss(g, model_, utt.feature_tensor<T>(),
                                                utt.frame_labels);
                }, inv, &loss_sum);
                opt_.clip().grad_scale = T(1);
                opt_.step();
            }
            progress_.pretrain_epochs_done = epoch;
            save_checkpoint(last_path(), model_, cfg_, progress_, &opt_);
            json j;
            j["type"] = "pretrain_epoch";
            j["epoch"] = epoch;
            j["frame_nll_per_utt"] = loss_sum / double(train_.utterances.size());
            j["wall_s"] = seconds_since(t0);
            log_line(j);
        }
    }

    void sequence_phase() {
        if (progress_.epochs_done >= cfg_.total_epochs()) return;
        if (progress_.phase != "sequence") {
            // fresh optimizer for the sequence objective
            opt_ = make_optimizer();
            progress_.phase = "sequence";
        }
        for (int epoch = progress_.epochs_done + 1; epoch <= cfg_.total_epochs(); ++epoch) {
            const auto t0 = std::chrono::steady_clock::now();
            const StageConfig& stage = cfg_.stage_for(epoch);
            apply_stage(stage);

            Rng shuffle = Rng::stream(cfg_.seed, kStreamSequenceShuffle + std::uint64_t(epoch));
            auto batches = make_batches(
                train_.utterances.size(),
                [&](std::size_t i) { return train_.utterances[i].n_frames; }, shuffle,
                std::size_t(cfg_.group_size), std::size_t(cfg_.batch_size));

            StageFlags<T> flags;
            flags.freeze_encoder_ff = stage.freeze_encoder_ff;
            flags.gating_enabled = stage.gating_enabled;
            flags.penalty_enabled = stage.penalty_enabled;
            flags.wd_output_mlp = static_cast<T>(stage.wd_output_mlp);
            flags.wd_scorer = static_cast<T>(stage.wd_scorer);

            LossBreakdown<double> epoch_loss;
            std::size_t rescaled_steps = 0;
            std::vector<LossBreakdown<T>> slot_loss;
            for (const auto& batch : batches) {
                model_.store().zero_grads();
                const T inv = T(1) / T(batch.indices.size());
                slot_loss.assign(batch.indices.size(), LossBreakdown<T>{});
                run_over_batch(batch, [&](std::size_t idx, Graph<T>& g, std::size_t slot) {
                    const auto& utt = train_.utterances[idx];
                    return build_sequence_loss(g, model_, utt.feature_tensor<T>(),
                                               target_token_ids<T>(model_.vocab(), utt), flags,
                                               &slot_loss[slot]);
                }, inv, nullptr);
                for (const auto& bd : slot_loss)
                    epoch_loss += LossBreakdown<double>{
                        double(bd.nll), double(bd.penalty), double(bd.decay_output_mlp),
                        double(bd.decay_scorer), double(bd.total)};
                opt_.clip().grad_scale = static_cast<T>(stage.grad_scale);
                if (opt_.step().rescaled) ++rescaled_steps;
            }
            epoch_loss.scale_by(1.0 / double(train_.utterances.size()));

            double dev_ser = -1;
            if (!dev_.utterances.empty()) {
                model_.set_gating(stage.gating_enabled);
                dev_ser = evaluate_ser(model_, dev_, cfg_.eval_beam_width).error_rate;
            }
            progress_.epochs_done = epoch;
            const bool improved =
                dev_ser >= 0 && (progress_.best_dev_ser < 0 || dev_ser < progress_.best_dev_ser);
            if (improved) progress_.best_dev_ser = dev_ser;
            if (improved) save_checkpoint(best_path(), model_, cfg_, progress_, &opt_);
            save_checkpoint(last_path(), model_, cfg_, progress_, &opt_);

            json j;
            j["type"] = "epoch";
            j["epoch"] = epoch;
            j["stage_until_epoch"] = stage.until_epoch;
            j["gating"] = stage.gating_enabled;
            j["penalty"] = stage.penalty_enabled;
            j["freeze_encoder_ff"] = stage.freeze_encoder_ff;
            j["grad_scale"] = stage.grad_scale;
            j["nll_per_utt"] = epoch_loss.nll;
            j["penalty_per_utt"] = epoch_loss.penalty;
            j["decay_per_utt"] = epoch_loss.decay_output_mlp + epoch_loss.decay_scorer;
            j["total_per_utt"] = epoch_loss.total;
            j["rescaled_steps"] = rescaled_steps;
            j["dev_ser"] = dev_ser < 0 ? json(nullptr) : json(dev_ser);
            j["best_dev_ser"] =
                progress_.best_dev_ser < 0 ? json(nullptr) : json(progress_.best_dev_ser);
            j["wall_s"] = seconds_since(t0);
            log_line(j);

            if (cfg_.early_stop_dev_ser >= 0 && dev_ser >= 0 &&
                dev_ser <= cfg_.early_stop_dev_ser)
                break;
        }
    }

    void apply_stage(const StageConfig& stage) {
        for (const auto& name : model_.encoder_ff_param_names())
            model_.store().set_trainable(name, !stage.freeze_encoder_ff);
        if (stage.gating_enabled && !progress_.gating_initialized) {
            Rng rng = Rng::stream(cfg_.seed, kStreamGateInit);
            apply_gate_manual_init(model_.store(), model_.attention_names(), rng);
            progress_.gating_initialized = true;
        }
        model_.set_gating(stage.gating_enabled);
    }

    // Evaluates the loss builder over each utterance of the batch (worker
    // threads permitted), then accumulates gradients in fixed index order.
    template <typename BuildLoss>
    void run_over_batch(const Batch& batch, BuildLoss&& build, T grad_scale,
                        double* loss_sum) {
        const std::size_t n = batch.indices.size();
        std::vector<Graph<T>> graphs;
        graphs.reserve(n);
        for (std::size_t k = 0; k < n; ++k) graphs.emplace_back(&model_.store(), true);
        std::vector<T> losses(n, T(0));

        auto work = [&](std::size_t k) {
            Var loss = build(batch.indices[k], graphs[k], k);
            losses[k] = graphs[k].value(loss).value();
            graphs[k].backward(loss);
        };
        if (threads_ <= 1 || n <= 1) {
            for (std::size_t k = 0; k < n; ++k) work(k);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t k = 0; k < n; ++k) pool.emplace_back(work, k);
            for (auto& th : pool) th.join();
        }
        for (std::size_t k = 0; k < n; ++k) {
            graphs[k].accumulate_param_grads(grad_scale);
            if (loss_sum) *loss_sum += double(losses[k]);
        }
    }

    ExperimentConfig cfg_;
    Model<T> model_;
    Dataset train_;
    Dataset dev_;
    std::string out_dir_;
    int threads_;
    TrainProgress progress_;
    AdaDeltaOptimizer<T> opt_;
};

} // namespace seqattn
