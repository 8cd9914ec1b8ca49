// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands: synth, train, decode, eval, diag.
// Global flags: --seed, --threads, --force, --precision {f32,f64}.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
// failure.

#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqattn/checkpoint.hpp"
#include "seqattn/config.hpp"
#include "seqattn/gradcheck.hpp"
#include "seqattn/data.hpp"
#include "seqattn/metrics.hpp"
#include "seqattn/model.hpp"
#include "seqattn/search.hpp"
#include "seqattn/trainer.hpp"

namespace seqattn {

namespace cli_detail {

namespace fs = std::filesystem;

struct SynthArgs {
    std::string spec_file, out_dir;
    std::size_t n_train = 0, n_dev = 0, n_test = 0;
};

struct TrainArgs {
    std::string config_file, train_dir, dev_dir, out_dir;
    bool resume = false;
};

struct DecodeArgs {
    std::string checkpoint, data_dir, out_file, alignments_dir;
    int beam = 0;
    bool greedy = false;
    std::size_t nbest = 1;
};

struct EvalArgs {
    std::string data_dir, hyp_file, map_file, report_file;
};

struct DiagArgs {
    std::string checkpoint;
    std::vector<double> gate_shape; // lo hi step
    std::string gate_out;
    std::string gradcheck; // "I=7,O=4,seed=1" ("" = not requested)
    bool gradcheck_requested = false;
};

inline int run_synth(const SynthArgs& a, bool force, std::optional<std::uint64_t> seed) {
    SynthSpec spec = load_synth_spec(a.spec_file);
    if (seed) spec.seed = *seed;

    if (fs::exists(a.out_dir) && !fs::is_empty(a.out_dir) && !force)
        throw ConfigError(detail::format_msg("output directory ", a.out_dir,
                                             " is not empty (use --force to overwrite)"));
    fs::create_directories(a.out_dir);

    // shared prototypes, disjoint per-utterance streams across the splits
    save_dataset(synth_generate(spec, a.n_train, 0, "train"), a.out_dir + "/train");
    save_dataset(synth_generate(spec, a.n_dev, a.n_train, "dev"), a.out_dir + "/dev");
    save_dataset(synth_generate(spec, a.n_test, a.n_train + a.n_dev, "test"),
                 a.out_dir + "/test");
    Vocabulary::from_content(synth_vocab(spec)).save(a.out_dir + "/vocab.txt");
    std::cout << "wrote " << a.n_train << "/" << a.n_dev << "/" << a.n_test
              << " utterances under " << a.out_dir << "\n";
    return 0;
}

template <typename T>
int run_train(const TrainArgs& a, int threads, std::optional<std::uint64_t> seed) {
    SEQATTN_CONFIG_CHECK(a.resume || !a.config_file.empty(),
                         "train needs --config (or --resume)");
    Dataset train = load_dataset(a.train_dir);
    Dataset dev = a.dev_dir.empty() ? Dataset{} : load_dataset(a.dev_dir);

    if (a.resume) {
        const std::string ckpt = a.out_dir + "/last.ckpt";
        std::optional<ExperimentConfig> override_cfg;
        if (!a.config_file.empty()) override_cfg = ExperimentConfig::load(a.config_file);
        Trainer<T> trainer =
            Trainer<T>::resume_from(ckpt, std::move(train), std::move(dev), a.out_dir, threads,
                                    override_cfg ? &*override_cfg : nullptr);
        trainer.run();
        std::cout << "resumed training finished at epoch " << trainer.progress().epochs_done
                  << "\n";
        return 0;
    }

    
    ExperimentConfig cfg = ExperimentConfig::load(a.config_file);
    if (seed) cfg.seed = *seed;
    SEQATTN_CONFIG_CHECK(!cfg.vocab_file.empty(), "config model.vocab_file is required");
    Vocabulary vocab = Vocabulary::load(cfg.vocab_file);

    if (!train.utterances.empty())
        SEQATTN_CONFIG_CHECK(train.utterances[0].feature_dim == cfg.model.feature_dim,
                             "config feature_dim ", cfg.model.feature_dim,
                             " does not match dataset feature_dim ",
                             train.utterances[0].feature_dim);

    Model<T> model(cfg.model, vocab, cfg.seed);
    Trainer<T> trainer(cfg, std::move(model), std::move(train), std::move(dev), a.out_dir,
                       threads);
    trainer.run();
    std::cout << "training finished at epoch " << trainer.progress().epochs_done
              << (trainer.progress().best_dev_ser >= 0
                      ? detail::format_msg(", best dev SER ", trainer.progress().best_dev_ser)
                      : std::string())
              << "\n";
    return 0;
}

template <typename T>
void check_dataset_vocab(const Dataset& data, const Model<T>& model) {
    for (const auto& u : data.utterances) {
        SEQATTN_DATA_CHECK(u.feature_dim == model.config().feature_dim, "utterance ", u.id,
                           " has feature_dim ", u.feature_dim, ", checkpoint expects ",
                           model.config().feature_dim);
        for (const auto& s : u.target)
            SEQATTN_DATA_CHECK(
                model.vocab().contains_symbol(s),
                "vocab mismatch: dataset symbol '", s, "' not in checkpoint vocabulary");
    }
}

template <typename T>
int run_decode(const DecodeArgs& a) {
    SEQATTN_CONFIG_CHECK(a.greedy != (a.beam > 0), "decode needs exactly one of --greedy or --beam W");
    SEQATTN_CONFIG_CHECK(a.nbest >= 1, "--nbest must be >= 1");
    SEQATTN_CONFIG_CHECK(a.greedy ? a.nbest == 1 : true, "--nbest requires --beam");

    LoadedCheckpoint<T> loaded = load_checkpoint<T>(a.checkpoint);
    Model<T> model = loaded.build_model();
    Dataset data = load_dataset(a.data_dir);
    check_dataset_vocab(data, model);

    if (!a.alignments_dir.empty()) fs::create_directories(a.alignments_dir);

    std::ofstream out(a.out_file, std::ios::binary | std::ios::trunc);
    SEQATTN_DATA_CHECK(out.good(), "cannot write hypothesis file: ", a.out_file);
    for (const auto& utt : data.utterances) {
        const Tensor<T> feats = utt.feature_tensor<T>();
        std::vector<DecodeHypothesis<T>> hyps;
        if (a.greedy) {
            hyps.push_back(greedy_decode(model, feats));
        } else {
            NBestList<T> nbest =
                beam_decode(model, feats, static_cast<std::size_t>(a.beam), a.nbest);
            hyps = std::move(nbest.hypotheses);
        }

        json line;
        line["id"] = utt.id;
        line["hypotheses"] = json::array();
        for (const auto& h : hyps) {
            json hj;
            std::vector<std::string> syms;
            for (int t : h.tokens) syms.push_back(model.vocab().name(t));
            hj["tokens"] = syms;
            hj["log_prob"] = static_cast<double>(h.log_prob);
            hj["finished"] = h.finished;
            line["hypotheses"].push_back(std::move(hj));
        }
        out << line.dump() << "\n";

        if (!a.alignments_dir.empty() && !hyps.empty()) {
            const auto& top = hyps[0];
            json aj;
            aj["id"] = utt.id;
            std::vector<std::string> syms;
            for (int t : top.tokens) syms.push_back(model.vocab().name(t));
            aj["tokens"] = syms;
            aj["rows"] = json::array();
            for (const auto& row : top.alignment) {
                json r = json::array();
                for (std::size_t i = 0; i < row.numel(); ++i)
                    r.push_back(static_cast<double>(row[i]));
                aj["rows"].push_back(std::move(r));
            }
            std::ofstream af(fs::path(a.alignments_dir) / (utt.id + ".json"),
                             std::ios::binary | std::ios::trunc);
            SEQATTN_DATA_CHECK(af.good(), "cannot write alignment file for ", utt.id);
            af << aj.dump() << "\n";
        }
    }
    std::cout << "decoded " << data.utterances.size() << " utterances into " << a.out_file
              << "\n";
    return 0;
}

inline std::vector<std::pair<std::string, std::vector<std::string>>> read_hyp_file(
    const std::string& path) {
    std::ifstream in(path);
    SEQATTN_DATA_CHECK(in.good(), "cannot open hypothesis file: ", path);
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            const auto& hyps = j.at("hypotheses");
            SEQATTN_DATA_CHECK(!hyps.empty(), "no hypotheses for ", j.at("id").get<std::string>());
            out.emplace_back(j.at("id").get<std::string>(),
                             hyps.at(0).at("tokens").get<std::vector<std::string>>());
        } catch (const json::exception& e) {
            throw DataError(detail::format_msg("malformed hypothesis file ", path, " line ",
                                               lineno, ": ", e.what()));
        }
    }
    return out;
}

inline int run_eval(const EvalArgs& a) {
    Dataset refs_data = load_dataset(a.data_dir);
    auto hyp_entries = read_hyp_file(a.hyp_file);
    std::unordered_map<std::string, std::vector<std::string>> by_id;
    for (auto& [id, tokens] : hyp_entries) {
        SEQATTN_DATA_CHECK(by_id.emplace(id, std::move(tokens)).second,
                           "duplicate hypothesis id: ", id);
    }

    std::optional<LabelMap> map;
    if (!a.map_file.empty()) map = load_label_map(a.map_file);

    std::vector<std::pair<std::string, std::vector<std::string>>> refs, hyps;
    for (const auto& u : refs_data.utterances) {
        auto it = by_id.find(u.id);
        SEQATTN_DATA_CHECK(it != by_id.end(), "no hypothesis for utterance ", u.id);
        // the mapping applies to both sides before scoring
        refs.emplace_back(u.id, map ? map_labels(u.target, *map) : u.target);
        hyps.emplace_back(u.id, map ? map_labels(it->second, *map) : it->second);
    }
    EvalReport report = corpus_error_rate(refs, hyps);

    json j;
    j["substitutions"] = report.substitutions;
    j["insertions"] = report.insertions;
    j["deletions"] = report.deletions;
    j["ref_token_count"] = report.ref_token_count;
    j["error_rate"] = report.error_rate;
    const std::string text = j.dump(2);
    std::cout << text << "\n";
    const std::string report_path =
        a.report_file.empty() ? a.hyp_file + ".eval.json" : a.report_file;
    std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
    SEQATTN_DATA_CHECK(out.good(), "cannot write eval report: ", report_path);
    out << text << "\n";
    return 0;
}

inline std::unordered_map<std::string, std::string> parse_kv_spec(const std::string& s) {
    std::unordered_map<std::string, std::string> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const std::size_t comma = s.find(',', pos);
        const std::string item = s.substr(pos, comma == std::string::npos ? std::string::npos
                                                                          : comma - pos);
        const std::size_t eq = item.find('=');
        SEQATTN_CONFIG_CHECK(eq != std::string::npos, "bad key=value item: '", item, "'");
        out[item.substr(0, eq)] = item.substr(eq + 1);
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

template <typename T>
int run_diag(const DiagArgs& a) {
    SEQATTN_CONFIG_CHECK(!a.gate_shape.empty() || a.gradcheck_requested,
                         "diag needs --gate-shape or --gradcheck");
    LoadedCheckpoint<T> loaded = load_checkpoint<T>(a.checkpoint);
    Model<T> model = loaded.build_model();

    if (!a.gate_shape.empty()) {
        SEQATTN_CONFIG_CHECK(a.gate_shape.size() == 3, "--gate-shape needs LO HI STEP");
        auto table = gate_shape_dump(model.store(), model.attention_names(), a.gate_shape[0],
                                     a.gate_shape[1], a.gate_shape[2]);
        std::ostringstream os;
        os << "delta\td\n";
        for (const auto& [delta, d] : table) os << delta << "\t" << d << "\n";
        if (a.gate_out.empty()) {
            std::cout << os.str();
        } else {
            std::ofstream out(a.gate_out, std::ios::binary | std::ios::trunc);
            SEQATTN_DATA_CHECK(out.good(), "cannot write gate table: ", a.gate_out);
            out << os.str();
        }
        return 0;
    }

    // --gradcheck: finite-difference check of the loaded model on a random
    // synthetic utterance; the checkpoint fixes the model dims, the spec
    // string sets sequence lengths and the seed
    auto kv = parse_kv_spec(a.gradcheck.empty() ? "I=7,O=4,seed=1" : a.gradcheck);
    std::size_t n_frames = 7, n_tokens = 4;
    std::uint64_t seed = 1;
    double eps = 1e-5, tol = 1e-4;
    for (const auto& [k, v] : kv) {
        if (k == "I") n_frames = std::stoul(v);
        else if (k == "O") n_tokens = std::stoul(v);
        else if (k == "seed") seed = std::stoull(v);
        else if (k == "eps") eps = std::stod(v);
        else if (k == "tol") tol = std::stod(v);
        else throw ConfigError(detail::format_msg("unknown gradcheck key: ", k));
    }
    SEQATTN_CONFIG_CHECK(n_tokens >= 1 && n_frames >= 1, "gradcheck needs I >= 1 and O >= 1");

    Rng rng = Rng::stream(seed, 0xD1A6u);
    Tensor<T> feats(Shape{n_frames, model.config().feature_dim});
    for (std::size_t i = 0; i < feats.numel(); ++i) feats[i] = static_cast<T>(rng.normal());
    std::vector<int> target;
    for (std::size_t i = 0; i + 1 < n_tokens; ++i)
        target.push_back(Vocabulary::kContentStart +
                         static_cast<int>(rng.below(model.vocab().content_size())));
    target.push_back(Vocabulary::kEos);

    StageFlags<T> flags;
    flags.gating_enabled = model.gating();
    flags.penalty_enabled = true;
    const StageConfig& last_stage = loaded.config.stages.back();
    flags.wd_output_mlp = static_cast<T>(last_stage.wd_output_mlp);
    flags.wd_scorer = static_cast<T>(last_stage.wd_scorer);

    auto report = gradcheck<T>(model.store(), [&](Graph<T>& g) {
        return build_sequence_loss(g, model, feats, target, flags);
    }, static_cast<T>(eps), static_cast<T>(tol));
    std::cout << report.summary();
    if (!report.pass) throw NumericError("gradient check failed");
    return 0;
}

} // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"attention-based sequence transduction engine"};
    app.require_subcommand(1);

    std::string precision = "f64";
    int threads = 1;
    bool force = false;
    std::optional<std::uint64_t> seed;
    std::uint64_t seed_value = 0;
    app.add_option("--precision", precision, "numeric precision (f32 or f64)")
        ->check(CLI::IsMember({"f32", "f64"}));
    app.add_option("--threads", threads, "worker threads (1 = bit-reproducible path)");
    app.add_flag("--force", force, "overwrite existing outputs");
    auto* seed_opt = app.add_option("--seed", seed_value, "override the configured seed");

    cli_detail::SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--spec", synth.spec_file, "synth spec JSON")->required();
    synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
    synth_cmd->add_option("--n-train", synth.n_train, "training utterances")->required();
    synth_cmd->add_option("--n-dev", synth.n_dev, "development utterances")->required();
    synth_cmd->add_option("--n-test", synth.n_test, "test utterances")->required();

    cli_detail::TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", train.config_file, "experiment config JSON");
    train_cmd->add_option("--train", train.train_dir, "training dataset directory")->required();
    train_cmd->add_option("--dev", train.dev_dir, "development dataset directory");
    train_cmd->add_option("--out", train.out_dir, "output directory")->required();
    train_cmd->add_flag("--resume", train.resume, "resume from <out>/last.ckpt");

    cli_detail::DecodeArgs decode;
    auto* decode_cmd = app.add_subcommand("decode", "decode a dataset");
    decode_cmd->add_option("--checkpoint", decode.checkpoint, "checkpoint file")->required();
    decode_cmd->add_option("--data", decode.data_dir, "dataset directory")->required();
    decode_cmd->add_option("--out", decode.out_file, "hypothesis file (JSON lines)")->required();
    decode_cmd->add_option("--beam", decode.beam, "beam width");
    decode_cmd->add_flag("--greedy", decode.greedy, "greedy decoding");
    decode_cmd->add_option("--nbest", decode.nbest, "hypotheses per utterance");
    decode_cmd->add_option("--dump-alignments", decode.alignments_dir,
                           "directory for per-utterance alignment JSON");

    cli_detail::EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "score hypotheses against references");
    eval_cmd->add_option("--data", eval.data_dir, "reference dataset directory")->required();
    eval_cmd->add_option("--hyp", eval.hyp_file, "hypothesis file")->required();
    eval_cmd->add_option("--map", eval.map_file, "label map (from<TAB>to lines)");
    eval_cmd->add_option("--report", eval.report_file, "report output path");

    cli_detail::DiagArgs diag;
    auto* diag_cmd = app.add_subcommand("diag", "diagnostics on a checkpoint");
    diag_cmd->add_option("--checkpoint", diag.checkpoint, "checkpoint file")->required();
    diag_cmd->add_option("--gate-shape", diag.gate_shape, "sample the gate: LO HI STEP")
        ->expected(3);
    diag_cmd->add_option("--out", diag.gate_out, "write the gate table here");
    auto* gc_opt = diag_cmd->add_option("--gradcheck", diag.gradcheck,
                                        "finite-difference check, e.g. I=7,O=4,seed=1");
    gc_opt->expected(0, 1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (seed_opt->count() > 0) seed = seed_value;
    diag.gradcheck_requested = gc_opt->count() > 0;

    try {
        if (synth_cmd->parsed()) return cli_detail::run_synth(synth, force, seed);
        if (train_cmd->parsed())
            return precision == "f32" ? cli_detail::run_train<float>(train, threads, seed)
                                      : cli_detail::run_train<double>(train, threads, seed);
        if (decode_cmd->parsed())
            return precision == "f32" ? cli_detail::run_decode<float>(decode)
                                      : cli_detail::run_decode<double>(decode);
        if (eval_cmd->parsed()) return cli_detail::run_eval(eval);
        if (diag_cmd->parsed())
            return precision == "f32" ? cli_detail::run_diag<float>(diag)
                                      : cli_detail::run_diag<double>(diag);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("seqattn");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

inline int run_cli(int argc, char** argv) {
    return run_cli(argc, static_cast<const char* const*>(argv));
}

} // namespace seqattn
