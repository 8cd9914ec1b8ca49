// SPDX-License-Identifier: Apache-2.0
//
// Synthetic pseudo-speech corpus. Each content symbol has a fixed prototype
// feature vector (one draw per dataset); an utterance is a random symbol
// sequence, each symbol expanded to a uniform-random number of frames of
// prototype plus Gaussian noise. Repeats are forced with repeat_prob to
// reproduce the repeated-phoneme confusion failure mode. Everything is a pure
// function of the spec seed.
//
// On-disk layout per dataset directory:
//   manifest.json  - array of {id, n_frames, feature_dim, target,
//                    frame_labels?, feature_file}
//   <id>.f32       - raw little-endian float32 row-major frames

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "seqattn/common.hpp"
#include "seqattn/rng.hpp"
#include "seqattn/tensor.hpp"

namespace seqattn {

struct SynthSpec {
    int vocab_size = 12; // content symbols
    int feature_dim = 8;
    int len_min = 4, len_max = 10;  // symbols per utterance
    int dur_min = 2, dur_max = 6;   // frames per symbol
    double noise_sigma = 0.1;
    double repeat_prob = 0.5;
    std::uint64_t seed = 1;

    void validate() const {
        SEQATTN_CONFIG_CHECK(vocab_size >= 1, "synth: vocab_size must be >= 1");
        SEQATTN_CONFIG_CHECK(feature_dim >= 1, "synth: feature_dim must be >= 1");
        SEQATTN_CONFIG_CHECK(len_min >= 1 && len_max >= len_min, "synth: bad length range");
        SEQATTN_CONFIG_CHECK(dur_min >= 1 && dur_max >= dur_min, "synth: bad duration range");
        SEQATTN_CONFIG_CHECK(noise_sigma >= 0, "synth: noise_sigma must be >= 0");
        SEQATTN_CONFIG_CHECK(repeat_prob >= 0 && repeat_prob <= 1,
                             "synth: repeat_prob must lie in [0,1]");
    }
};

struct Utterance {
    std::string id;
    std::size_t n_frames = 0;
    std::size_t feature_dim = 0;
    std::vector<float> features;      // row-major n_frames x feature_dim
    std::vector<std::string> target;  // content symbols; EOS appended at load into a model
    std::vector<int> frame_labels;    // content ordinals, empty when unknown

    template <typename T>
    Tensor<T> feature_tensor() const {
        Tensor<T> t(Shape{n_frames, feature_dim});
        for (std::size_t i = 0; i < features.size(); ++i) t[i] = static_cast<T>(features[i]);
        return t;
    }
};

struct Dataset {
    std::vector<Utterance> utterances;
};

inline std::string synth_symbol_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%02d", i);
    return buf;
}

inline std::vector<std::string> synth_vocab(const SynthSpec& spec) {
    std::vector<std::string> v;
    for (int i = 0; i < spec.vocab_size; ++i) v.push_back(synth_symbol_name(i));
    return v;
}

// Prototypes come from stream 0 of the seed regardless of the split, so
// train/dev/test generated with different stream offsets share them.
inline std::vector<std::vector<double>> synth_prototypes(const SynthSpec& spec) {
    Rng rng = Rng::stream(spec.seed, 0);
    std::vector<std::vector<double>> protos(static_cast<std::size_t>(spec.vocab_size));
    const double scale = 1.0 / std::sqrt(double(spec.feature_dim));
    for (auto& p : protos) {
        p.resize(static_cast<std::size_t>(spec.feature_dim));
        for (double& v : p) v = scale * rng.normal();
    }
    return protos;
}

inline Dataset synth_generate(const SynthSpec& spec, std::size_t n_utterances,
                              std::uint64_t stream_offset = 0,
                              const std::string& id_prefix = "utt") {
    spec.validate();
    const auto protos = synth_prototypes(spec);

    Dataset ds;
    ds.utterances.reserve(n_utterances);
    for (std::size_t k = 0; k < n_utterances; ++k) {
        Rng rng = Rng::stream(spec.seed, stream_offset + k + 1);
        const int n_syms = static_cast<int>(rng.range(spec.len_min, spec.len_max));
        std::vector<int> syms(static_cast<std::size_t>(n_syms));
        for (int& s : syms) s = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab_size)));
        if (n_syms >= 2 && rng.uniform() < spec.repeat_prob) {
            const int src = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_syms - 1)));
            const int dst =
                src + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_syms - 1 - src)));
            syms[static_cast<std::size_t>(dst)] = syms[static_cast<std::size_t>(src)];
        }

        Utterance u;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%s_%06zu", id_prefix.c_str(), k);
        u.id = idbuf;
        u.feature_dim = static_cast<std::size_t>(spec.feature_dim);
        for (int s : syms) {
            u.target.push_back(synth_symbol_name(s));
            const int dur = static_cast<int>(rng.range(spec.dur_min, spec.dur_max));
            for (int f = 0; f < dur; ++f) {
                u.frame_labels.push_back(s);
                for (int c = 0; c < spec.feature_dim; ++c)
                    u.features.push_back(static_cast<float>(
                        protos[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)] +
                        spec.noise_sigma * rng.normal()));
            }
        }
        u.n_frames = u.frame_labels.size();
        ds.utterances.push_back(std::move(u));
    }
    return ds;
}

// ---- file I/O ---------------------------------------------------------

namespace detail {

inline void write_f32_le(std::ofstream& out, const std::vector<float>& values) {
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        const unsigned char bytes[4] = {
            static_cast<unsigned char>(bits & 0xffu),
            static_cast<unsigned char>((bits >> 8) & 0xffu),
            static_cast<unsigned char>((bits >> 16) & 0xffu),
            static_cast<unsigned char>((bits >> 24) & 0xffu)};
        out.write(reinterpret_cast<const char*>(bytes), 4);
    }
}

inline std::vector<float> read_f32_le(const std::string& path, std::size_t expected,
                                      const std::string& utt_id) {
    std::ifstream in(path, std::ios::binary);
    SEQATTN_DATA_CHECK(in.good(), "cannot open feature blob for utterance ", utt_id, ": ", path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    SEQATTN_DATA_CHECK(raw.size() == expected * 4, "feature blob for utterance ", utt_id,
                       " has ", raw.size(), " bytes, expected ", expected * 4);
    std::vector<float> values(expected);
    for (std::size_t i = 0; i < expected; ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
        std::memcpy(&values[i], &bits, 4);
    }
    return values;
}

} // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& u : ds.utterances) {
        nlohmann::json entry;
        entry["id"] = u.id;
        entry["n_frames"] = u.n_frames;
        entry["feature_dim"] = u.feature_dim;
        entry["target"] = u.target;
        if (!u.frame_labels.empty()) entry["frame_labels"] = u.frame_labels;
        entry["feature_file"] = u.id + ".f32";
        manifest.push_back(std::move(entry));

        std::ofstream blob(fs::path(dir) / (u.id + ".f32"), std::ios::binary);
        SEQATTN_DATA_CHECK(blob.good(), "cannot write feature blob for ", u.id);
        detail::write_f32_le(blob, u.features);
    }
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    SEQATTN_DATA_CHECK(out.good(), "cannot write manifest in ", dir);
    out << manifest.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(manifest_path);
    SEQATTN_DATA_CHECK(in.good(), "cannot open manifest: ", manifest_path);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(detail::format_msg("malformed manifest ", manifest_path, ": ", e.what()));
    }
    SEQATTN_DATA_CHECK(manifest.is_array(), "manifest must be a JSON array: ", manifest_path);

    Dataset ds;
    for (const auto& entry : manifest) {
        try {
            Utterance u;
            u.id = entry.at("id").get<std::string>();
            u.n_frames = entry.at("n_frames").get<std::size_t>();
            u.feature_dim = entry.at("feature_dim").get<std::size_t>();
            u.target = entry.at("target").get<std::vector<std::string>>();
            if (entry.contains("frame_labels"))
                u.frame_labels = entry.at("frame_labels").get<std::vector<int>>();
            const std::string file = entry.at("feature_file").get<std::string>();
            u.features = detail::read_f32_le((fs::path(dir) / file).string(),
                                             u.n_frames * u.feature_dim, u.id);
            SEQATTN_DATA_CHECK(u.frame_labels.empty() || u.frame_labels.size() == u.n_frames,
                               "utterance ", u.id, ": frame_labels length ",
                               u.frame_labels.size(), " != n_frames ", u.n_frames);
            ds.utterances.push_back(std::move(u));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(detail::format_msg("malformed manifest entry in ", manifest_path,
                                               ": ", e.what()));
        }
    }
    return ds;
}

// ---- label mapping -----------------------------------------------------

using LabelMap = std::unordered_map<std::string, std::string>;

inline LabelMap load_label_map(const std::string& path) {
    std::ifstream in(path);
    SEQATTN_DATA_CHECK(in.good(), "cannot open label map: ", path);
    LabelMap map;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        SEQATTN_DATA_CHECK(tab != std::string::npos && tab > 0 && tab + 1 < line.size(),
                           "label map ", path, " line ", lineno, ": expected 'from<TAB>to'");
        map[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return map;
}

// Many-to-one substitution; no merging of the result.
inline std::vector<std::string> map_labels(const std::vector<std::string>& tokens,
                                           const LabelMap& map) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto it = map.find(t);
        SEQATTN_DATA_CHECK(it != map.end(), "label map has no entry for symbol: ", t);
        out.push_back(it->second);
    }
    return out;
}

} // namespace seqattn
