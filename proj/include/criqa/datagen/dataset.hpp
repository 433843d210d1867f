#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "criqa/datagen/distortion.hpp"
#include "criqa/datagen/synthesize.hpp"
#include "criqa/error.hpp"
#include "criqa/image.hpp"
#include "criqa/pfm.hpp"
#include "criqa/png_io.hpp"
#include "criqa/rng.hpp"
#include "criqa/ssim.hpp"

namespace criqa {

/// One supervised example: a degraded view, the structural-similarity map
/// against its clean source, and which view that source was (so reference
/// samplers can exclude it).
struct TrainingRecord {
    std::string scene_id;
    ImageGrid query;
    ScoreMap target;
    int source_view_index = -1;
    DistortionSpec distortion;
};

inline TrainingRecord build_training_record(const Scene& scene, int source_view_index,
                                            const DistortionSpec& spec,
                                            const SsimParams& ssim_params = {}) {
    if (source_view_index < 0 ||
        source_view_index >= static_cast<int>(scene.views.size())) {
        throw ValidationError("build_training_record: source view index " +
                              std::to_string(source_view_index) + " out of range for " +
                              std::to_string(scene.views.size()) + " views");
    }
    const ImageGrid& source = scene.views[source_view_index];
    TrainingRecord rec;
    rec.scene_id = scene.scene_id;
    rec.query = apply_distortion(source, spec);
    rec.target = clamp_unit(ssim_map(rec.query, source, ssim_params));
    rec.source_view_index = source_view_index;
    rec.distortion = spec;
    return rec;
}

// ---------------------------------------------------------------------------
// Manifest

struct RecordEntry {
    std::string query_path;
    std::string target_path;
    int source_view_index = -1;
    DistortionSpec distortion;
};

struct SceneEntry {
    std::string scene_id;
    std::vector<std::string> view_paths;
    std::vector<RecordEntry> records;
};

struct DatasetManifest {
    int version = 1;
    std::uint64_t global_seed = 0;
    std::string split = "train";
    std::vector<SceneEntry> scenes;
};

inline void to_json(nlohmann::json& j, const DistortionSpec& s) {
    j = nlohmann::json{{"kind", to_string(s.kind)},
                       {"severity", s.severity},
                       {"seed", s.seed}};
}
inline void from_json(const nlohmann::json& j, DistortionSpec& s) {
    s.kind = distortion_kind_from_string(j.at("kind").get<std::string>());
    s.severity = j.at("severity").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
}

inline void to_json(nlohmann::json& j, const RecordEntry& r) {
    j = nlohmann::json{{"query_path", r.query_path},
                       {"target_path", r.target_path},
                       {"source_view_index", r.source_view_index},
                       {"distortion", r.distortion}};
}
inline void from_json(const nlohmann::json& j, RecordEntry& r) {
    j.at("query_path").get_to(r.query_path);
    j.at("target_path").get_to(r.target_path);
    j.at("source_view_index").get_to(r.source_view_index);
    j.at("distortion").get_to(r.distortion);
}

inline void to_json(nlohmann::json& j, const SceneEntry& s) {
    j = nlohmann::json{{"scene_id", s.scene_id},
                       {"view_paths", s.view_paths},
                       {"records", s.records}};
}
inline void from_json(const nlohmann::json& j, SceneEntry& s) {
    j.at("scene_id").get_to(s.scene_id);
    j.at("view_paths").get_to(s.view_paths);
    j.at("records").get_to(s.records);
}

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = nlohmann::json{{"version", m.version},
                       {"global_seed", m.global_seed},
                       {"split", m.split},
                       {"scenes", m.scenes}};
}
inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
    j.at("version").get_to(m.version);
    j.at("global_seed").get_to(m.global_seed);
    j.at("split").get_to(m.split);
    j.at("scenes").get_to(m.scenes);
}

inline void write_manifest(const DatasetManifest& manifest,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_manifest: cannot open " + path.string());
    out << nlohmann::json(manifest).dump(2) << "\n";
    if (!out) throw IoError("write_manifest: write failed for " + path.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_manifest: cannot open " + path.string());
    try {
        nlohmann::json j;
        in >> j;
        return j.get<DatasetManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("read_manifest: malformed " + path.string() + ": " + e.what());
    }
}

/// Returns one line per problem; empty means the manifest and tree agree.
inline std::vector<std::string> validate_manifest(const DatasetManifest& manifest,
                                                  const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::vector<std::string> issues;
    auto check = [&](const std::string& rel) {
        if (!fs::exists(root / rel)) issues.push_back("missing file: " + rel);
    };
    for (const SceneEntry& scene : manifest.scenes) {
        for (const std::string& p : scene.view_paths) check(p);
        for (const RecordEntry& rec : scene.records) {
            check(rec.query_path);
            check(rec.target_path);
            if (rec.source_view_index < 0 ||
                rec.source_view_index >= static_cast<int>(scene.view_paths.size())) {
                issues.push_back("scene " + scene.scene_id + ": source view index " +
                                 std::to_string(rec.source_view_index) +
                                 " outside view list");
            }
        }
    }
    return issues;
}

// ---------------------------------------------------------------------------
// Generation

struct DatagenConfig {
    int n_scenes = 2;
    int records_per_scene = 4;
    int n_views = 6;
    int base_height = 320;
    int base_width = 320;
    std::vector<std::string> base_image_paths;  // procedural bases when empty
    std::vector<DistortionKind> kinds{
        DistortionKind::gaussian_blur,   DistortionKind::additive_noise,
        DistortionKind::block_artifact,  DistortionKind::elastic_warp,
        DistortionKind::intensity_shift, DistortionKind::mixture};
    std::vector<double> severities{0.1, 0.3, 0.5, 0.7, 0.9};
    JitterCfg jitter;
    SsimParams ssim;
    std::uint64_t global_seed = 0;
    std::string split = "train";

    void validate() const {
        if (n_scenes < 1 && base_image_paths.empty()) {
            throw ConfigError("DatagenConfig: need n_scenes >= 1 or base images");
        }
        if (records_per_scene < 1) throw ConfigError("DatagenConfig: records_per_scene >= 1");
        if (n_views < 2) throw ConfigError("DatagenConfig: n_views >= 2");
        if (kinds.empty()) throw ConfigError("DatagenConfig: empty distortion kind list");
        if (severities.empty()) throw ConfigError("DatagenConfig: empty severity grid");
        for (double s : severities) {
            if (!(s >= 0.0 && s <= 1.0)) {
                throw ConfigError("DatagenConfig: severity outside [0,1]");
            }
        }
        jitter.validate();
        ssim.validate();
    }
};

inline void to_json(nlohmann::json& j, const JitterCfg& c) {
    j = nlohmann::json{{"corner_frac", c.corner_frac},
                       {"crop_frac", c.crop_frac},
                       {"gain_jitter", c.gain_jitter},
                       {"bias_jitter", c.bias_jitter}};
}

inline void from_json(const nlohmann::json& j, JitterCfg& c) {
    j.at("corner_frac").get_to(c.corner_frac);
    j.at("crop_frac").get_to(c.crop_frac);
    j.at("gain_jitter").get_to(c.gain_jitter);
    j.at("bias_jitter").get_to(c.bias_jitter);
}

inline void to_json(nlohmann::json& j, const DatagenConfig& c) {
    std::vector<std::string> kind_names;
    for (DistortionKind k : c.kinds) kind_names.push_back(to_string(k));
    j = nlohmann::json{{"n_scenes", c.n_scenes},
                       {"records_per_scene", c.records_per_scene},
                       {"n_views", c.n_views},
                       {"base_height", c.base_height},
                       {"base_width", c.base_width},
                       {"base_image_paths", c.base_image_paths},
                       {"kinds", kind_names},
                       {"severities", c.severities},
                       {"jitter", c.jitter},
                       {"ssim", c.ssim},
                       {"global_seed", c.global_seed},
                       {"split", c.split}};
}

inline void from_json(const nlohmann::json& j, DatagenConfig& c) {
    j.at("n_scenes").get_to(c.n_scenes);
    j.at("records_per_scene").get_to(c.records_per_scene);
    j.at("n_views").get_to(c.n_views);
    j.at("base_height").get_to(c.base_height);
    j.at("base_width").get_to(c.base_width);
    j.at("base_image_paths").get_to(c.base_image_paths);
    c.kinds.clear();
    for (const auto& name : j.at("kinds")) {
        c.kinds.push_back(distortion_kind_from_string(name.get<std::string>()));
    }
    j.at("severities").get_to(c.severities);
    j.at("jitter").get_to(c.jitter);
    j.at("ssim").get_to(c.ssim);
    j.at("global_seed").get_to(c.global_seed);
    j.at("split").get_to(c.split);
}

namespace datagen_detail {

inline std::string zero_pad(int value, int digits) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%0*d", digits, value);
    return buf;
}

}  // namespace datagen_detail

/// Writes the full dataset tree under output_dir and returns its manifest.
/// Every artifact is a pure function of (global_seed, scene_id, record index),
/// so regeneration — serial or parallel — reproduces files byte-for-byte.
inline DatasetManifest generate_dataset(const DatagenConfig& config,
                                        const std::filesystem::path& output_dir) {
    namespace fs = std::filesystem;
    config.validate();

    const int n_scenes = config.base_image_paths.empty()
                             ? config.n_scenes
                             : static_cast<int>(config.base_image_paths.size());

    std::error_code ec;
    fs::create_directories(output_dir, ec);
    if (ec) {
        throw IoError("generate_dataset: cannot create " + output_dir.string() + ": " +
                      ec.message());
    }

    DatasetManifest manifest;
    manifest.global_seed = config.global_seed;
    manifest.split = config.split;

    for (int s = 0; s < n_scenes; ++s) {
        const std::string scene_id = "scene_" + datagen_detail::zero_pad(s, 3);
        ImageGrid base;
        if (config.base_image_paths.empty()) {
            base = make_procedural_base(derive_seed(config.global_seed, scene_id, "base"),
                                        config.base_height, config.base_width);
        } else {
            base = read_png(config.base_image_paths[s]);
        }
        Scene scene = synthesize_views(
            base, config.n_views, derive_seed(config.global_seed, scene_id, "views"),
            config.jitter);
        scene.scene_id = scene_id;

        SceneEntry entry;
        entry.scene_id = scene_id;
        fs::create_directories(output_dir / scene_id / "views");
        fs::create_directories(output_dir / scene_id / "queries");
        fs::create_directories(output_dir / scene_id / "targets");
        for (int v = 0; v < static_cast<int>(scene.views.size()); ++v) {
            const std::string rel =
                scene_id + "/views/v" + datagen_detail::zero_pad(v, 3) + ".png";
            write_png(scene.views[v], output_dir / rel);
            entry.view_paths.push_back(rel);
        }

        for (int r = 0; r < config.records_per_scene; ++r) {
            DistortionSpec spec;
            spec.kind = config.kinds[r % config.kinds.size()];
            spec.severity = config.severities[r % config.severities.size()];
            spec.seed = derive_seed(config.global_seed, scene_id, "distort", r);
            const int src = r % config.n_views;

            const TrainingRecord rec =
                build_training_record(scene, src, spec, config.ssim);

            RecordEntry re;
            re.query_path = scene_id + "/queries/r" + datagen_detail::zero_pad(r, 3) + ".png";
            re.target_path = scene_id + "/targets/r" + datagen_detail::zero_pad(r, 3) + ".pfm";
            re.source_view_index = src;
            re.distortion = spec;
            write_png(rec.query, output_dir / re.query_path);
            write_score_map(rec.target, output_dir / re.target_path,
                            re.query_path, "ssim_target");
            entry.records.push_back(std::move(re));
        }
        manifest.scenes.push_back(std::move(entry));
    }

    write_manifest(manifest, output_dir / "manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// Ingestion of externally rendered images

/// Builds a dataset from NVS renders: `render_dir` and `gt_dir` hold
/// filename-aligned PNG pairs, `refs_dir` the capture set usable as
/// references. Mismatches are reported through warn() and skipped; targets
/// are computed on the fly. The emitted tree and manifest match generated
/// datasets exactly, so downstream consumers cannot tell the difference.
inline DatasetManifest ingest_external_renders(const std::filesystem::path& render_dir,
                                               const std::filesystem::path& gt_dir,
                                               const std::filesystem::path& refs_dir,
                                               const std::filesystem::path& output_dir,
                                               const SsimParams& ssim_params = {},
                                               const std::string& split = "eval") {
    namespace fs = std::filesystem;
    for (const auto& dir : {render_dir, gt_dir, refs_dir}) {
        if (!fs::is_directory(dir)) {
            throw IoError("ingest_external_renders: not a directory: " + dir.string());
        }
    }

    auto list_pngs = [](const fs::path& dir) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file() && e.path().extension() == ".png") {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        return files;
    };

    const std::string scene_id = "ingested";
    fs::create_directories(output_dir / scene_id / "views");
    fs::create_directories(output_dir / scene_id / "queries");
    fs::create_directories(output_dir / scene_id / "targets");

    SceneEntry entry;
    entry.scene_id = scene_id;
    std::vector<ImageGrid> pending_gt;

    int view_idx = 0;
    for (const fs::path& ref : list_pngs(refs_dir)) {
        const std::string rel =
            scene_id + "/views/v" + datagen_detail::zero_pad(view_idx++, 3) + ".png";
        write_png(read_png(ref), output_dir / rel);
        entry.view_paths.push_back(rel);
    }

    int record_idx = 0;
    for (const fs::path& render_path : list_pngs(render_dir)) {
        const fs::path gt_path = gt_dir / render_path.filename();
        if (!fs::exists(gt_path)) {
            warn("ingest: no ground truth for " + render_path.filename().string() +
                 ", skipped");
            continue;
        }
        const ImageGrid render = read_png(render_path);
        const ImageGrid gt = read_png(gt_path);
        if (!render.same_shape(gt)) {
            warn("ingest: dimension mismatch for " + render_path.filename().string() +
                 ", skipped");
            continue;
        }

        // The ground truth joins the view pool as this record's source view,
        // so reference sampling can exclude it like any generated record.
        const std::string view_rel =
            scene_id + "/views/v" + datagen_detail::zero_pad(view_idx, 3) + ".png";
        write_png(gt, output_dir / view_rel);
        entry.view_paths.push_back(view_rel);

        RecordEntry re;
        re.query_path =
            scene_id + "/queries/r" + datagen_detail::zero_pad(record_idx, 3) + ".png";
        re.target_path =
            scene_id + "/targets/r" + datagen_detail::zero_pad(record_idx, 3) + ".pfm";
        re.source_view_index = view_idx;
        re.distortion = DistortionSpec{DistortionKind::mixture, 1.0, 0};
        write_png(render, output_dir / re.query_path);
        const ScoreMap target = clamp_unit(ssim_map(render, gt, ssim_params));
        write_score_map(target, output_dir / re.target_path, re.query_path, "ssim_target");
        entry.records.push_back(std::move(re));
        ++view_idx;
        ++record_idx;
    }

    if (entry.records.empty()) {
        throw ValidationError("ingest_external_renders: no usable render/GT pairs");
    }

    DatasetManifest manifest;
    manifest.split = split;
    manifest.scenes.push_back(std::move(entry));
    write_manifest(manifest, output_dir / "manifest.json");
    return manifest;
}

// ---------------------------------------------------------------------------
// Loading

inline ImageGrid load_view(const std::filesystem::path& root, const SceneEntry& scene,
                           int view_index) {
    if (view_index < 0 || view_index >= static_cast<int>(scene.view_paths.size())) {
        throw ValidationError("load_view: index out of range");
    }
    return read_png(root / scene.view_paths[view_index]);
}

struct LoadedRecord {
    ImageGrid query;
    ScoreMap target;
    int source_view_index = -1;
    DistortionSpec distortion;
};

inline LoadedRecord load_record(const std::filesystem::path& root,
                                const RecordEntry& entry) {
    LoadedRecord rec;
    rec.query = read_png(root / entry.query_path);
    rec.target = read_pfm(root / entry.target_path);
    rec.source_view_index = entry.source_view_index;
    rec.distortion = entry.distortion;
    if (rec.target.height != rec.query.height || rec.target.width != rec.query.width) {
        throw ShapeError("load_record: target dimensions do not match query for " +
                         entry.query_path);
    }
    return rec;
}

}  // namespace criqa
