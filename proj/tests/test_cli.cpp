// SPDX-License-Identifier: Apache-2.0
//
// CLI surface and file-format contracts: synth layout and determinism,
// strict config parsing, checkpoint byte-identity, train smoke + resume,
// decode/eval/diag behaviors and exit codes.

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "seqattn/checkpoint.hpp"
#include "seqattn/cli.hpp"
#include "seqattn/trainer.hpp"

using namespace seqattn;
namespace fs = std::filesystem;

namespace {

fs::path temp_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "seqattn_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
}

const char* kSpecJson = R"({"vocab_size": 4, "feature_dim": 5, "len_range": [2, 4],
    "duration_range": [1, 3], "noise_sigma": 0.05, "repeat_prob": 0.5, "seed": 21})";

std::string config_json(const fs::path& vocab, int pretrain, int warm_until, int total) {
    std::ostringstream os;
    os << R"({
      "model": {"feature_dim": 5, "maxout_widths": [8, 8], "hidden": 6, "state": 8,
                "embed": 5, "scorer_hidden": 6, "gate_hidden": 5, "head_width": 8,
                "vocab_file": ")"
       << vocab.string() << R"("},
      "schedule": {"pretrain_epochs": )"
       << pretrain << R"(, "stages": [
          {"until_epoch": )"
       << warm_until << R"(, "freeze_encoder_ff": true},
          {"until_epoch": )"
       << total
       << R"(, "gating_enabled": true, "penalty_enabled": true,
           "wd_output_mlp": 1e-3, "wd_scorer": 2e-4}]},
      "training": {"seed": 31}
    })";
    return os.str();
}

// one shared synth corpus + one shared training run for the CLI tests
struct Workspace {
    fs::path root = temp_root();
    fs::path data = root / "data";
    fs::path run = root / "run";

    Workspace() {
        if (fs::exists(data / "vocab.txt") && fs::exists(run / "best.ckpt")) return;
        write_file(root / "spec.json", kSpecJson);
        REQUIRE(run_cli({"synth", "--spec", (root / "spec.json").string(), "--out",
                         data.string(), "--n-train", "24", "--n-dev", "8", "--n-test",
                         "8"}) == 0);
        write_file(root / "config.json", config_json(data / "vocab.txt", 1, 2, 4));
        REQUIRE(run_cli({"train", "--config", (root / "config.json").string(), "--train",
                         (data / "train").string(), "--dev", (data / "dev").string(), "--out",
                         run.string()}) == 0);
    }
};

Workspace& workspace() {
    static Workspace ws;
    return ws;
}

} // namespace

TEST_CASE("synth writes three loadable datasets plus the vocabulary") {
    Workspace& ws = workspace();
    CHECK(load_dataset((ws.data / "train").string()).utterances.size() == 24);
    CHECK(load_dataset((ws.data / "dev").string()).utterances.size() == 8);
    CHECK(load_dataset((ws.data / "test").string()).utterances.size() == 8);
    Vocabulary v = Vocabulary::load((ws.data / "vocab.txt").string());
    CHECK(v.content_size() == 4);
}

TEST_CASE("synth refuses a non-empty output dir without --force and is rerun-identical") {
    Workspace& ws = workspace();
    const fs::path spec = ws.root / "spec.json";
    CHECK(run_cli({"synth", "--spec", spec.string(), "--out", ws.data.string(), "--n-train",
                   "24", "--n-dev", "8", "--n-test", "8"}) == 1);

    const std::string before = file_bytes(ws.data / "train" / "manifest.json");
    const std::string blob_before = file_bytes(ws.data / "train" / "train_000000.f32");
    CHECK(run_cli({"--force", "synth", "--spec", spec.string(), "--out", ws.data.string(),
                   "--n-train", "24", "--n-dev", "8", "--n-test", "8"}) == 0);
    CHECK(file_bytes(ws.data / "train" / "manifest.json") == before);
    CHECK(file_bytes(ws.data / "train" / "train_000000.f32") == blob_before);
}

TEST_CASE("synth with n_dev=0 writes an empty but valid manifest") {
    const fs::path out = temp_root() / "nodev";
    write_file(temp_root() / "spec2.json", kSpecJson);
    CHECK(run_cli({"synth", "--spec", (temp_root() / "spec2.json").string(), "--out",
                   out.string(), "--n-train", "3", "--n-dev", "0", "--n-test", "2"}) == 0);
    CHECK(load_dataset((out / "dev").string()).utterances.empty());
}

TEST_CASE("config parsing rejects unknown keys and bad schedules") {
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(R"({"modle": {}})")), ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::from_json(json::parse(R"({"model": {"hiden": 4}})")), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::from_json(json::parse(
                        R"({"schedule": {"stages": [{"until_epoch": 3}, {"until_epoch": 2}]}})")),
                    ConfigError);
    // defaults resolve into the effective config
    ExperimentConfig c = ExperimentConfig::from_json(json::parse(R"({})"));
    json j = c.to_json();
    CHECK(j.at("optimizer").at("rho_ad") == 0.95);
    CHECK(j.at("batching").at("batch_size") == 4);
}

TEST_CASE("train smoke: checkpoints and a parseable metrics log with the config") {
    Workspace& ws = workspace();
    CHECK(fs::exists(ws.run / "best.ckpt"));
    CHECK(fs::exists(ws.run / "last.ckpt"));

    std::ifstream log(ws.run / "metrics.jsonl");
    REQUIRE(log.good());
    std::string line;
    std::size_t lines = 0, epochs = 0, pretrain = 0;
    bool config_embedded = false;
    while (std::getline(log, line)) {
        ++lines;
        json j = json::parse(line); // throws on malformed lines
        if (j.at("type") == "run_start" && j.contains("config")) config_embedded = true;
        if (j.at("type") == "epoch") ++epochs;
        if (j.at("type") == "pretrain_epoch") ++pretrain;
    }
    CHECK(config_embedded);
    CHECK(pretrain == 1);
    CHECK(epochs == 4);
}

TEST_CASE("checkpoint save -> load -> save is byte-identical") {
    Workspace& ws = workspace();
    const fs::path first = ws.run / "last.ckpt";
    LoadedCheckpoint<double> loaded = load_checkpoint<double>(first.string());
    Model<double> model = loaded.build_model();
    AdaDeltaOptimizer<double> opt = loaded.build_optimizer(model.store());
    const fs::path second = temp_root() / "resaved.ckpt";
    save_checkpoint(second.string(), model, loaded.config, loaded.progress, &opt);
    CHECK(file_bytes(first) == file_bytes(second));
}

TEST_CASE("checkpoint rejects dimension mismatches against the config") {
    Workspace& ws = workspace();
    LoadedCheckpoint<double> loaded = load_checkpoint<double>((ws.run / "best.ckpt").string());
    loaded.config.model.hidden += 1; // architecture no longer matches the tensors
    CHECK_THROWS_AS(loaded.build_model(), DataError);
}

TEST_CASE("resume continues the epoch counter without re-initialization") {
    Workspace& ws = workspace();
    const fs::path run2 = temp_root() / "resume_run";
    fs::remove_all(run2);
    fs::create_directories(run2);
    fs::copy(ws.run / "last.ckpt", run2 / "last.ckpt");

    // extend the schedule from 4 to 5 epochs and resume
    write_file(temp_root() / "config5.json",
               config_json(ws.data / "vocab.txt", 1, 2, 5));
    CHECK(run_cli({"train", "--config", (temp_root() / "config5.json").string(), "--train",
                   (ws.data / "train").string(), "--dev", (ws.data / "dev").string(), "--out",
                   run2.string(), "--resume"}) == 0);
    LoadedCheckpoint<double> after = load_checkpoint<double>((run2 / "last.ckpt").string());
    CHECK(after.progress.epochs_done == 5);

    std::ifstream log(run2 / "metrics.jsonl");
    std::string line;
    std::size_t epoch_lines = 0;
    while (std::getline(log, line))
        if (json::parse(line).at("type") == "epoch") ++epoch_lines;
    CHECK(epoch_lines == 1); // only the new epoch ran here
}

TEST_CASE("deterministic training: identical runs produce identical best checkpoints") {
    Workspace& ws = workspace();
    const fs::path run2 = temp_root() / "det_run";
    fs::remove_all(run2);
    CHECK(run_cli({"train", "--config", (ws.root / "config.json").string(), "--train",
                   (ws.data / "train").string(), "--dev", (ws.data / "dev").string(), "--out",
                   run2.string()}) == 0);
    CHECK(file_bytes(ws.run / "best.ckpt") == file_bytes(run2 / "best.ckpt"));
}

TEST_CASE("decode: greedy equals beam 1 byte for byte; nbest is ranked") {
    Workspace& ws = workspace();
    const fs::path g = temp_root() / "hyp_greedy.jsonl";
    const fs::path b1 = temp_root() / "hyp_beam1.jsonl";
    CHECK(run_cli({"decode", "--checkpoint", (ws.run / "best.ckpt").string(), "--data",
                   (ws.data / "test").string(), "--out", g.string(), "--greedy"}) == 0);
    CHECK(run_cli({"decode", "--checkpoint", (ws.run / "best.ckpt").string(), "--data",
                   (ws.data / "test").string(), "--out", b1.string(), "--beam", "1"}) == 0);
    CHECK(file_bytes(g) == file_bytes(b1));

    const fs::path b3 = temp_root() / "hyp_beam3.jsonl";
    const fs::path aligns = temp_root() / "aligns";
    CHECK(run_cli({"decode", "--checkpoint", (ws.run / "best.ckpt").string(), "--data",
                   (ws.data / "test").string(), "--out", b3.string(), "--beam", "4", "--nbest",
                   "3", "--dump-alignments", aligns.string()}) == 0);
    std::ifstream in(b3);
    std::string line;
    while (std::getline(in, line)) {
        json j = json::parse(line);
        const auto& hyps = j.at("hypotheses");
        CHECK(!hyps.empty());
        CHECK(hyps.size() <= 3);
        for (std::size_t i = 1; i < hyps.size(); ++i)
            CHECK(hyps[i].at("log_prob").get<double>() <=
                  hyps[i - 1].at("log_prob").get<double>());
        // alignment file: rows = emitted tokens + EOS step
        json aj = json::parse(file_bytes(aligns / (j.at("id").get<std::string>() + ".json")));
        CHECK(aj.at("rows").size() == hyps[0].at("tokens").size() + 1);
        for (const auto& row : aj.at("rows")) {
            double sum = 0;
            for (const auto& v : row) sum += v.get<double>();
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("decode rejects a dataset whose symbols are outside the vocabulary") {
    Workspace& ws = workspace();
    const fs::path bad = temp_root() / "bad_data";
    Dataset ds = load_dataset((ws.data / "test").string());
    ds.utterances[0].target[0] = "zz_not_a_symbol";
    save_dataset(ds, bad.string());
    CHECK(run_cli({"decode", "--checkpoint", (ws.run / "best.ckpt").string(), "--data",
                   bad.string(), "--out", (temp_root() / "x.jsonl").string(), "--greedy"}) ==
          2);
}

TEST_CASE("eval: exact hypotheses score zero; mapping applies to both sides") {
    Workspace& ws = workspace();
    // construct a hypothesis file that copies the references
    Dataset test = load_dataset((ws.data / "test").string());
    const fs::path perfect = temp_root() / "perfect.jsonl";
    {
        std::ofstream out(perfect);
        for (const auto& u : test.utterances) {
            json j;
            j["id"] = u.id;
            j["hypotheses"] = json::array();
            json h;
            h["tokens"] = u.target;
            h["log_prob"] = 0.0;
            h["finished"] = true;
            j["hypotheses"].push_back(h);
            out << j.dump() << "\n";
        }
    }
    CHECK(run_cli({"eval", "--data", (ws.data / "test").string(), "--hyp", perfect.string()}) ==
          0);
    json report = json::parse(file_bytes(perfect.string() + ".eval.json"));
    CHECK(report.at("error_rate") == 0.0);
    CHECK(report.at("substitutions").get<int>() + report.at("insertions").get<int>() +
              report.at("deletions").get<int>() ==
          0);

    // map everything onto one symbol: any decode scores zero errors
    const fs::path map = temp_root() / "collapse.tsv";
    {
        std::ofstream out(map);
        for (int i = 0; i < 4; ++i) out << synth_symbol_name(i) << "\tX\n";
    }
    const fs::path hyp = temp_root() / "hyp_greedy.jsonl"; // from the decode test
    REQUIRE(fs::exists(hyp));
    const fs::path report2 = temp_root() / "mapped.eval.json";
    CHECK(run_cli({"eval", "--data", (ws.data / "test").string(), "--hyp", hyp.string(),
                   "--map", map.string(), "--report", report2.string()}) == 0);
    json mapped = json::parse(file_bytes(report2));
    CHECK(mapped.at("substitutions") == 0); // only length errors can remain
}

TEST_CASE("diag gate-shape table spans the range with values in (0,1)") {
    Workspace& ws = workspace();
    const fs::path table = temp_root() / "gate.tsv";
    CHECK(run_cli({"diag", "--checkpoint", (ws.run / "best.ckpt").string(), "--gate-shape",
                   "-20", "40", "1", "--out", table.string()}) == 0);
    std::ifstream in(table);
    std::string header;
    std::getline(in, header);
    CHECK(header == "delta\td");
    std::size_t rows = 0;
    double delta, d;
    while (in >> delta >> d) {
        CHECK(d > 0.0);
        CHECK(d < 1.0);
        ++rows;
    }
    CHECK(rows == 61);
}

TEST_CASE("diag gradcheck exits 0 on a healthy checkpoint") {
    Workspace& ws = workspace();
    CHECK(run_cli({"diag", "--checkpoint", (ws.run / "best.ckpt").string(), "--gradcheck",
                   "I=5,O=3,seed=3"}) == 0);
}

TEST_CASE("usage errors exit nonzero") {
    CHECK(run_cli({"diag"}) == 1);                        // missing --checkpoint
    CHECK(run_cli({"nonsense"}) == 1);                    // unknown subcommand
    CHECK(run_cli({"train", "--train", "x", "--out", "y"}) == 1); // no config, no resume
    CHECK(run_cli({"decode", "--checkpoint", "nope.ckpt", "--data", "x", "--out", "y",
                   "--greedy"}) == 2); // missing checkpoint file is a data error
}

TEST_CASE("f32 precision path trains and decodes") {
    Workspace& ws = workspace();
    const fs::path run32 = temp_root() / "run_f32";
    write_file(temp_root() / "config_f32.json", config_json(ws.data / "vocab.txt", 0, 1, 2));
    CHECK(run_cli({"--precision", "f32", "train", "--config",
                   (temp_root() / "config_f32.json").string(), "--train",
                   (ws.data / "train").string(), "--dev", (ws.data / "dev").string(), "--out",
                   run32.string()}) == 0);
    LoadedCheckpoint<float> loaded = load_checkpoint<float>((run32 / "best.ckpt").string());
    CHECK(loaded.header.at("tensors").at(0).at("dtype") == "f32");
    CHECK(run_cli({"--precision", "f32", "decode", "--checkpoint",
                   (run32 / "best.ckpt").string(), "--data", (ws.data / "test").string(),
                   "--out", (temp_root() / "hyp32.jsonl").string(), "--greedy"}) == 0);
}

TEST_CASE("multithreaded batch gradients match the single-threaded path") {
    Workspace& ws = workspace();
    const fs::path run_mt = temp_root() / "run_mt";
    fs::remove_all(run_mt);
    CHECK(run_cli({"--threads", "4", "train", "--config", (ws.root / "config.json").string(),
                   "--train", (ws.data / "train").string(), "--dev", (ws.data / "dev").string(),
                   "--out", run_mt.string()}) == 0);
    CHECK(file_bytes(run_mt / "best.ckpt") == file_bytes(ws.run / "best.ckpt"));
}
