#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "criqa/error.hpp"
#include "criqa/model/network.hpp"

namespace criqa {

// Archive layout: <dir>/manifest.json + <dir>/params.bin (+ optim.bin when
// optimizer state is saved). Blobs are raw row-major little-endian float32;
// the manifest indexes every tensor by name, shape, and byte offset, so a
// reload reproduces forward outputs bit-exactly on the same platform.

/// Optimizer state in archive form: first and second moments per parameter,
/// in the model's canonical parameter order.
struct OptimBlob {
    long adam_step = 0;
    std::vector<MatX<float>> m, v;
};

namespace ckpt_detail {

inline void write_f32_blob(std::ofstream& out, const MatX<float>& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(m.size()) * 4);
}

template <class Real>
MatX<float> to_f32(const MatX<Real>& m) {
    return m.template cast<float>();
}

}  // namespace ckpt_detail

template <class Real>
void save_checkpoint(CrossRefModelT<Real>& model, const std::filesystem::path& dir,
                     long step, const OptimBlob* optim = nullptr,
                     const nlohmann::json& extra = nlohmann::json::object()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("save_checkpoint: cannot create " + dir.string());

    nlohmann::json manifest;
    manifest["version"] = 1;
    manifest["config"] = model.config();
    manifest["step"] = step;
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();

    std::ofstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IoError("save_checkpoint: cannot open params.bin in " + dir.string());
    nlohmann::json index = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (Param<Real>* p : model.params()) {
        const MatX<float> f = ckpt_detail::to_f32(p->value);
        ckpt_detail::write_f32_blob(bin, f);
        index.push_back({{"name", p->name},
                         {"rows", p->value.rows()},
                         {"cols", p->value.cols()},
                         {"dtype", "f32"},
                         {"offset", offset}});
        offset += static_cast<std::uint64_t>(f.size()) * 4;
    }
    if (!bin) throw IoError("save_checkpoint: write failed for params.bin");
    bin.close();
    manifest["params"] = std::move(index);

    if (optim != nullptr) {
        std::ofstream obin(dir / "optim.bin", std::ios::binary);
        if (!obin) throw IoError("save_checkpoint: cannot open optim.bin");
        for (const auto& m : optim->m) ckpt_detail::write_f32_blob(obin, m);
        for (const auto& v : optim->v) ckpt_detail::write_f32_blob(obin, v);
        if (!obin) throw IoError("save_checkpoint: write failed for optim.bin");
        manifest["optim"] = {{"adam_step", optim->adam_step}};
    }

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw IoError("save_checkpoint: cannot open manifest.json");
    mf << manifest.dump(2) << "\n";
    if (!mf) throw IoError("save_checkpoint: write failed for manifest.json");
}

template <class Real>
struct LoadedCheckpointT {
    CrossRefModelT<Real> model;
    long step = 0;
    nlohmann::json manifest;
};

using LoadedCheckpoint = LoadedCheckpointT<float>;

namespace ckpt_detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw CheckpointError("cannot open " + path.string());
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<char> bytes(static_cast<std::size_t>(size));
    in.read(bytes.data(), size);
    if (in.gcount() != size) throw CheckpointError("short read on " + path.string());
    return bytes;
}

}  // namespace ckpt_detail

template <class Real = float>
LoadedCheckpointT<Real> load_checkpoint(const std::filesystem::path& dir,
                                        const ModelConfig* expected = nullptr) {
    namespace fs = std::filesystem;
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream mf(manifest_path);
    if (!mf) throw CheckpointError("load_checkpoint: missing " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("load_checkpoint: malformed manifest: " +
                              std::string(e.what()));
    }

    if (manifest.value("version", -1) != 1) {
        throw CheckpointError("load_checkpoint: unsupported archive version " +
                              manifest.value("version", nlohmann::json()).dump());
    }
    ModelConfig cfg;
    try {
        cfg = manifest.at("config").get<ModelConfig>();
    } catch (const std::exception& e) {
        throw CheckpointError("load_checkpoint: bad config block: " +
                              std::string(e.what()));
    }
    if (expected != nullptr && nlohmann::json(*expected) != nlohmann::json(cfg)) {
        throw CheckpointError(
            "load_checkpoint: archive config does not match the requested config; "
            "archive holds " + nlohmann::json(cfg).dump());
    }

    LoadedCheckpointT<Real> loaded{CrossRefModelT<Real>(cfg), manifest.value("step", 0L),
                                   manifest};

    const std::vector<char> blob = ckpt_detail::read_file(dir / "params.bin");
    const auto& index = manifest.at("params");
    const std::vector<Param<Real>*> params = loaded.model.params();
    if (index.size() != params.size()) {
        throw CheckpointError("load_checkpoint: archive has " +
                              std::to_string(index.size()) + " parameters, model has " +
                              std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = index[i];
        const std::string name = entry.at("name").get<std::string>();
        if (name != params[i]->name) {
            throw CheckpointError("load_checkpoint: parameter order mismatch at index " +
                                  std::to_string(i) + ": archive '" + name +
                                  "', model '" + params[i]->name + "'");
        }
        const auto rows = entry.at("rows").get<Eigen::Index>();
        const auto cols = entry.at("cols").get<Eigen::Index>();
        if (rows != params[i]->value.rows() || cols != params[i]->value.cols()) {
            throw CheckpointError(
                "load_checkpoint: parameter " + name + ": archive shape " +
                std::to_string(rows) + "x" + std::to_string(cols) + ", model expects " +
                std::to_string(params[i]->value.rows()) + "x" +
                std::to_string(params[i]->value.cols()));
        }
        if (entry.at("dtype").get<std::string>() != "f32") {
            throw CheckpointError("load_checkpoint: parameter " + name +
                                  ": unsupported dtype");
        }
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const std::uint64_t bytes = static_cast<std::uint64_t>(rows) * cols * 4;
        if (offset + bytes > blob.size()) {
            throw CheckpointError("load_checkpoint: parameter " + name +
                                  ": byte span [" + std::to_string(offset) + ", " +
                                  std::to_string(offset + bytes) +
                                  ") exceeds blob size " + std::to_string(blob.size()));
        }
        MatX<float> f(rows, cols);
        std::memcpy(f.data(), blob.data() + offset, static_cast<std::size_t>(bytes));
        params[i]->value = f.template cast<Real>();
    }
    return loaded;
}

/// Restores optimizer moments saved next to the parameters; returns false
/// when the archive carries no optimizer state.
template <class Real>
bool load_optim_blob(const std::filesystem::path& dir, CrossRefModelT<Real>& model,
                     OptimBlob& out) {
    namespace fs = std::filesystem;
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw CheckpointError("load_optim_blob: missing manifest in " + dir.string());
    nlohmann::json manifest;
    mf >> manifest;
    if (!manifest.contains("optim")) return false;
    out.adam_step = manifest["optim"].value("adam_step", 0L);

    const std::vector<char> blob = ckpt_detail::read_file(dir / "optim.bin");
    const std::vector<Param<Real>*> params = model.params();
    std::size_t need = 0;
    for (const Param<Real>* p : params) need += p->count() * 4;
    if (blob.size() != 2 * need) {
        throw CheckpointError("load_optim_blob: optim.bin holds " +
                              std::to_string(blob.size()) + " bytes, expected " +
                              std::to_string(2 * need));
    }
    out.m.clear();
    out.v.clear();
    std::size_t offset = 0;
    for (int half = 0; half < 2; ++half) {
        auto& dst = half == 0 ? out.m : out.v;
        for (const Param<Real>* p : params) {
            MatX<float> f(p->value.rows(), p->value.cols());
            std::memcpy(f.data(), blob.data() + offset, p->count() * 4);
            offset += p->count() * 4;
            dst.push_back(std::move(f));
        }
    }
    return true;
}

}  // namespace criqa
