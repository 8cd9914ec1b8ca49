// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file: magic, little-endian u64 JSON length, JSON header, raw
// little-endian tensor blob. The header carries the format version, the
// effective config, the vocabulary, a tensor index of {name, shape, dtype,
// offset}, optional optimizer state and a training-progress snapshot.
// nlohmann::json objects serialize with sorted keys, so save -> load -> save
// reproduces the file byte for byte.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqattn/config.hpp"
#include "seqattn/model.hpp"
#include "seqattn/optimizer.hpp"

namespace seqattn {

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'Q', 'A', 'T', 'T', 'N', '1'};
inline constexpr int kCheckpointVersion = 1;

struct TrainProgress {
    std::string phase = "init"; // init | pretrain | sequence | done
    int pretrain_epochs_done = 0;
    int epochs_done = 0;
    double best_dev_ser = -1.0; // < 0: no dev evaluation yet
    bool gating_initialized = false;

    json to_json() const {
        json j;
        j["phase"] = phase;
        j["pretrain_epochs_done"] = pretrain_epochs_done;
        j["epochs_done"] = epochs_done;
        j["best_dev_ser"] = best_dev_ser;
        j["gating_initialized"] = gating_initialized;
        return j;
    }
    static TrainProgress from_json(const json& j) {
        TrainProgress p;
        p.phase = j.at("phase").get<std::string>();
        p.pretrain_epochs_done = j.at("pretrain_epochs_done").get<int>();
        p.epochs_done = j.at("epochs_done").get<int>();
        p.best_dev_ser = j.at("best_dev_ser").get<double>();
        p.gating_initialized = j.at("gating_initialized").get<bool>();
        return p;
    }
};

namespace detail {

template <typename T>
const char* dtype_name();
template <>
inline const char* dtype_name<double>() {
    return "f64";
}
template <>
inline const char* dtype_name<float>() {
    return "f32";
}

template <typename T>
void append_tensor_bytes(std::string& blob, const Tensor<T>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if constexpr (sizeof(T) == 8) {
            std::uint64_t bits;
            double v = static_cast<double>(t[i]);
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b) blob.push_back(char((bits >> (8 * b)) & 0xff));
        } else {
            std::uint32_t bits;
            float v = static_cast<float>(t[i]);
            std::memcpy(&bits, &v, 4);
            for (int b = 0; b < 4; ++b) blob.push_back(char((bits >> (8 * b)) & 0xff));
        }
    }
}

template <typename T>
Tensor<T> read_tensor_bytes(const std::string& blob, std::size_t offset, Shape shape) {
    Tensor<T> t(std::move(shape));
    const std::size_t bytes = t.numel() * sizeof(T);
    SEQATTN_DATA_CHECK(offset + bytes <= blob.size(), "checkpoint blob too short: need ",
                       offset + bytes, " bytes, have ", blob.size());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if constexpr (sizeof(T) == 8) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= std::uint64_t(static_cast<unsigned char>(blob[offset + 8 * i + b]))
                        << (8 * b);
            double v;
            std::memcpy(&v, &bits, 8);
            t[i] = static_cast<T>(v);
        } else {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= std::uint32_t(static_cast<unsigned char>(blob[offset + 4 * i + b]))
                        << (8 * b);
            float v;
            std::memcpy(&v, &bits, 4);
            t[i] = static_cast<T>(v);
        }
    }
    return t;
}

} // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model,
                     const ExperimentConfig& config, const TrainProgress& progress,
                     const AdaDeltaOptimizer<T>* optimizer = nullptr) {
    json header;
    header["format_version"] = kCheckpointVersion;
    header["config"] = config.to_json();
    header["vocab"] = model.vocab().content_symbols();
    header["gating_enabled"] = model.gating();
    header["progress"] = progress.to_json();

    std::string blob;
    json tensors = json::array();
    auto add_tensor = [&](const std::string& name, const Tensor<T>& t) {
        json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["dtype"] = detail::dtype_name<T>();
        e["offset"] = blob.size();
        tensors.push_back(std::move(e));
        detail::append_tensor_bytes(blob, t);
    };
    for (const auto& e : model.store().entries()) add_tensor(e.name, e.value);
    header["tensors"] = std::move(tensors);

    if (optimizer) {
        json opt;
        opt["rho_ad"] = static_cast<double>(optimizer->rho());
        opt["eps_ad"] = static_cast<double>(optimizer->eps());
        const auto& clip = optimizer->clip();
        opt["clip"]["elog"] = static_cast<double>(clip.elog);
        opt["clip"]["elog2"] = static_cast<double>(clip.elog2);
        opt["clip"]["nsteps"] = clip.nsteps;
        opt["clip"]["rho_clip"] = static_cast<double>(clip.rho_clip);
        opt["clip"]["kappa"] = static_cast<double>(clip.kappa);
        opt["clip"]["grad_scale"] = static_cast<double>(clip.grad_scale);
        json opt_tensors = json::array();
        const auto& entries = model.store().entries();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            json e1;
            e1["name"] = "eg2:" + entries[i].name;
            e1["shape"] = optimizer->eg2()[i].shape();
            e1["dtype"] = detail::dtype_name<T>();
            e1["offset"] = blob.size();
            opt_tensors.push_back(std::move(e1));
            detail::append_tensor_bytes(blob, optimizer->eg2()[i]);
            json e2;
            e2["name"] = "edx2:" + entries[i].name;
            e2["shape"] = optimizer->edx2()[i].shape();
            e2["dtype"] = detail::dtype_name<T>();
            e2["offset"] = blob.size();
            opt_tensors.push_back(std::move(e2));
            detail::append_tensor_bytes(blob, optimizer->edx2()[i]);
        }
        opt["tensors"] = std::move(opt_tensors);
        header["optimizer"] = std::move(opt);
    } else {
        header["optimizer"] = nullptr;
    }

    const std::string header_str = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    SEQATTN_DATA_CHECK(out.good(), "cannot write checkpoint: ", path);
    out.write(kCheckpointMagic, 8);
    const std::uint64_t len = header_str.size();
    char lenbuf[8];
    for (int b = 0; b < 8; ++b) lenbuf[b] = char((len >> (8 * b)) & 0xff);
    out.write(lenbuf, 8);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    SEQATTN_DATA_CHECK(out.good(), "short write on checkpoint: ", path);
}

template <typename T>
struct LoadedCheckpoint {
    ExperimentConfig config;
    Vocabulary vocab;
    TrainProgress progress;
    bool gating_enabled = false;
    // raw header + blob retained for optimizer restoration
    json header;
    std::string blob;

    Model<T> build_model() const {
        Model<T> model(config.model, vocab, config.seed);
        for (const auto& e : header.at("tensors")) {
            const std::string name = e.at("name").get<std::string>();
            const Shape shape = e.at("shape").get<Shape>();
            SEQATTN_DATA_CHECK(e.at("dtype").get<std::string>() == detail::dtype_name<T>(),
                               "checkpoint dtype mismatch for ", name, " (expected ",
                               detail::dtype_name<T>(), ")");
            SEQATTN_DATA_CHECK(model.store().contains(name),
                               "checkpoint tensor not in model: ", name);
            auto& entry = model.store().entry(name);
            SEQATTN_DATA_CHECK(entry.value.shape() == shape, "checkpoint tensor ", name,
                               " has shape ", shape_str(shape), ", model expects ",
                               shape_str(entry.value.shape()));
            entry.value =
                detail::read_tensor_bytes<T>(blob, e.at("offset").get<std::size_t>(), shape);
        }
        model.set_gating(gating_enabled);
        return model;
    }

    bool has_optimizer() const { return !header.at("optimizer").is_null(); }

    AdaDeltaOptimizer<T> build_optimizer(ParamStore<T>& store) const {
        SEQATTN_DATA_CHECK(has_optimizer(), "checkpoint carries no optimizer state");
        const json& opt = header.at("optimizer");
        ClipState<T> clip;
        clip.elog = static_cast<T>(opt.at("clip").at("elog").get<double>());
        clip.elog2 = static_cast<T>(opt.at("clip").at("elog2").get<double>());
        clip.nsteps = opt.at("clip").at("nsteps").get<std::uint64_t>();
        clip.rho_clip = static_cast<T>(opt.at("clip").at("rho_clip").get<double>());
        clip.kappa = static_cast<T>(opt.at("clip").at("kappa").get<double>());
        clip.grad_scale = static_cast<T>(opt.at("clip").at("grad_scale").get<double>());
        AdaDeltaOptimizer<T> optimizer(store, static_cast<T>(opt.at("rho_ad").get<double>()),
                                       static_cast<T>(opt.at("eps_ad").get<double>()), clip);
        for (const auto& e : opt.at("tensors")) {
            const std::string name = e.at("name").get<std::string>();
            const auto colon = name.find(':');
            SEQATTN_DATA_CHECK(colon != std::string::npos, "bad optimizer tensor name: ", name);
            const std::string kind = name.substr(0, colon);
            const std::string param = name.substr(colon + 1);
            const int idx = store.id_of(param);
            Tensor<T> t = detail::read_tensor_bytes<T>(blob, e.at("offset").get<std::size_t>(),
                                                       e.at("shape").get<Shape>());
            SEQATTN_DATA_CHECK(t.shape() == store.entry(idx).value.shape(),
                               "optimizer tensor shape mismatch for ", name);
            if (kind == "eg2")
                optimizer.eg2()[static_cast<std::size_t>(idx)] = std::move(t);
            else if (kind == "edx2")
                optimizer.edx2()[static_cast<std::size_t>(idx)] = std::move(t);
            else
                throw DataError(detail::format_msg("unknown optimizer tensor kind: ", kind));
        }
        return optimizer;
    }
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    SEQATTN_DATA_CHECK(in.good(), "cannot open checkpoint: ", path);
    char magic[8];
    in.read(magic, 8);
    SEQATTN_DATA_CHECK(in.gcount() == 8 && std::memcmp(magic, kCheckpointMagic, 8) == 0,
                       "not a checkpoint file: ", path);
    char lenbuf[8];
    in.read(lenbuf, 8);
    SEQATTN_DATA_CHECK(in.gcount() == 8, "truncated checkpoint header: ", path);
    std::uint64_t len = 0;
    for (int b = 0; b < 8; ++b)
        len |= std::uint64_t(static_cast<unsigned char>(lenbuf[b])) << (8 * b);
    std::string header_str(len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(len));
    SEQATTN_DATA_CHECK(static_cast<std::uint64_t>(in.gcount()) == len,
                       "truncated checkpoint header: ", path);

    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw DataError(detail::format_msg("malformed checkpoint header in ", path, ": ",
                                           e.what()));
    }
    SEQATTN_DATA_CHECK(header.at("format_version").get<int>() == kCheckpointVersion,
                       "unsupported checkpoint version in ", path);
    LoadedCheckpoint<T> loaded;
    loaded.config = ExperimentConfig::from_json(header.at("config"));
    loaded.vocab = Vocabulary::from_content(header.at("vocab").get<std::vector<std::string>>());
    loaded.progress = TrainProgress::from_json(header.at("progress"));
    loaded.gating_enabled = header.at("gating_enabled").get<bool>();
    loaded.header = std::move(header);
    loaded.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return loaded;
}

} // namespace seqattn
