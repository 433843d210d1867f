#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "criqa/datagen/dataset.hpp"
#include "criqa/error.hpp"
#include "criqa/image.hpp"
#include "criqa/model/checkpoint.hpp"
#include "criqa/model/network.hpp"
#include "criqa/rng.hpp"
#include "criqa/ssim.hpp"

namespace criqa {

struct TrainConfig {
    int crop_size = 140;  // must be a multiple of the model's patch size
    int n_ref = 5;
    int batch_size = 4;
    double learning_rate = 5e-4;  // constant; no schedule
    double weight_decay = 1e-2;
    int total_steps = 1000;
    std::uint64_t seed = 0;
    int checkpoint_every = 500;
    bool log_timing = false;  // wall_ms logs 0 unless set, keeping logs replayable
    SsimParams ssim;

    /// Config-level invariants; train_step itself tolerates learning_rate 0
    /// (the documented null-update case).
    void validate(int patch_size) const {
        if (crop_size < patch_size || crop_size % patch_size != 0) {
            throw ConfigError("TrainConfig: crop_size " + std::to_string(crop_size) +
                              " must be a positive multiple of patch size " +
                              std::to_string(patch_size));
        }
        if (n_ref < 1) throw ConfigError("TrainConfig: n_ref must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (!(learning_rate > 0.0)) {
            throw ConfigError("TrainConfig: learning_rate must be > 0");
        }
        if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
        if (total_steps < 1) throw ConfigError("TrainConfig: total_steps must be >= 1");
        if (checkpoint_every < 1) {
            throw ConfigError("TrainConfig: checkpoint_every must be >= 1");
        }
        ssim.validate();
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"crop_size", c.crop_size},
                       {"n_ref", c.n_ref},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"weight_decay", c.weight_decay},
                       {"total_steps", c.total_steps},
                       {"seed", c.seed},
                       {"checkpoint_every", c.checkpoint_every},
                       {"log_timing", c.log_timing},
                       {"ssim", c.ssim}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("crop_size").get_to(c.crop_size);
    j.at("n_ref").get_to(c.n_ref);
    j.at("batch_size").get_to(c.batch_size);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("weight_decay").get_to(c.weight_decay);
    j.at("total_steps").get_to(c.total_steps);
    j.at("seed").get_to(c.seed);
    j.at("checkpoint_every").get_to(c.checkpoint_every);
    if (j.contains("log_timing")) j.at("log_timing").get_to(c.log_timing);
    if (j.contains("ssim")) j.at("ssim").get_to(c.ssim);
}

// ---------------------------------------------------------------------------
// AdamW: adaptive moments with decoupled (lr-scaled) weight decay.

template <class Real>
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long t = 0;
    std::vector<MatX<Real>> m, v;

    void init(const std::vector<Param<Real>*>& params) {
        t = 0;
        m.clear();
        v.clear();
        for (const Param<Real>* p : params) {
            m.push_back(MatX<Real>::Zero(p->value.rows(), p->value.cols()));
            v.push_back(MatX<Real>::Zero(p->value.rows(), p->value.cols()));
        }
    }

    void step(const std::vector<Param<Real>*>& params, double lr, double weight_decay) {
        if (m.size() != params.size()) {
            throw TrainingError("AdamW: optimizer state does not match parameter list");
        }
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& value = params[i]->value;
            const auto& grad = params[i]->grad;
            m[i] = (beta1 * m[i].array() + (1.0 - beta1) * grad.array()).matrix();
            v[i] = (beta2 * v[i].array() + (1.0 - beta2) * grad.array().square()).matrix();
            const auto m_hat = m[i].array() / static_cast<Real>(bc1);
            const auto v_hat = v[i].array() / static_cast<Real>(bc2);
            value.array() -= static_cast<Real>(lr) *
                             (m_hat / (v_hat.sqrt() + static_cast<Real>(eps)) +
                              static_cast<Real>(weight_decay) * value.array());
        }
    }

    OptimBlob to_blob() const {
        OptimBlob blob;
        blob.adam_step = t;
        for (const auto& mi : m) blob.m.push_back(mi.template cast<float>());
        for (const auto& vi : v) blob.v.push_back(vi.template cast<float>());
        return blob;
    }

    void from_blob(const OptimBlob& blob) {
        t = blob.adam_step;
        m.clear();
        v.clear();
        for (const auto& mi : blob.m) m.push_back(mi.template cast<Real>());
        for (const auto& vi : blob.v) v.push_back(vi.template cast<Real>());
    }
};

// ---------------------------------------------------------------------------
// Batch sampling

/// Decoded-image cache; desk-scale datasets fit in memory comfortably.
class ImageCache {
  public:
    explicit ImageCache(std::filesystem::path root) : root_(std::move(root)) {}

    const ImageGrid& get(const std::string& rel_path) {
        auto it = cache_.find(rel_path);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(rel_path, read_png(root_ / rel_path)).first->second;
    }

    const std::filesystem::path& root() const { return root_; }

  private:
    std::filesystem::path root_;
    std::unordered_map<std::string, ImageGrid> cache_;
};

struct BatchEntry {
    ImageGrid query;               // crop_size x crop_size
    ScoreMap target;               // SSIM recomputed on the crop, clamped
    std::vector<ImageGrid> refs;   // n_ref independent crops
    // provenance
    std::string record_id;         // "<scene_id>/r<idx>"
    int scene_index = -1;
    int record_index = -1;
    int source_view_index = -1;
    int query_y = 0, query_x = 0;
    std::vector<int> ref_view_indices;
    std::vector<std::pair<int, int>> ref_offsets;
};

struct Batch {
    std::vector<BatchEntry> entries;
};

/// Rejects manifests the sampler cannot serve; called once before training.
inline void validate_for_training(const DatasetManifest& manifest, const TrainConfig& cfg) {
    if (manifest.scenes.empty()) {
        throw ValidationError("training manifest has no scenes");
    }
    for (const SceneEntry& scene : manifest.scenes) {
        if (static_cast<int>(scene.view_paths.size()) < cfg.n_ref + 1) {
            throw ValidationError("scene " + scene.scene_id + " has " +
                                  std::to_string(scene.view_paths.size()) +
                                  " views; need at least n_ref+1 = " +
                                  std::to_string(cfg.n_ref + 1));
        }
        if (scene.records.empty()) {
            throw ValidationError("scene " + scene.scene_id + " has no records");
        }
    }
}

/// Draws one batch. Scenes are weighted equally (scene first, then record);
/// the query and its target share one crop offset, references get their own;
/// the query's source view never enters the reference set. All draws come
/// from `step_rng` in a fixed order, so (seed, step) determines the batch.
inline Batch sample_batch(const DatasetManifest& manifest, ImageCache& images,
                          const TrainConfig& cfg, Rng& step_rng) {
    const int crop_sz = cfg.crop_size;
    Batch batch;
    for (int b = 0; b < cfg.batch_size; ++b) {
        BatchEntry entry;
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const int si = step_rng.uniform_int(0, static_cast<int>(manifest.scenes.size()) - 1);
            const SceneEntry& scene = manifest.scenes[si];
            const int ri = step_rng.uniform_int(0, static_cast<int>(scene.records.size()) - 1);
            const RecordEntry& rec = scene.records[ri];

            const ImageGrid& query_full = images.get(rec.query_path);
            if (query_full.height < crop_sz || query_full.width < crop_sz) {
                warn("sample_batch: record " + rec.query_path + " smaller than crop " +
                     std::to_string(crop_sz) + ", skipped");
                continue;
            }
            const ImageGrid& source_full =
                images.get(scene.view_paths[rec.source_view_index]);

            const int qy = step_rng.uniform_int(0, query_full.height - crop_sz);
            const int qx = step_rng.uniform_int(0, query_full.width - crop_sz);

            // n_ref distinct views, source excluded, uniform without replacement.
            std::vector<int> pool;
            for (int v = 0; v < static_cast<int>(scene.view_paths.size()); ++v) {
                if (v != rec.source_view_index) pool.push_back(v);
            }
            for (int k = 0; k < cfg.n_ref; ++k) {
                const int j = step_rng.uniform_int(k, static_cast<int>(pool.size()) - 1);
                std::swap(pool[k], pool[j]);
            }
            pool.resize(cfg.n_ref);

            std::vector<ImageGrid> ref_crops;
            std::vector<std::pair<int, int>> ref_offsets;
            bool refs_ok = true;
            for (int v : pool) {
                const ImageGrid& ref_full = images.get(scene.view_paths[v]);
                if (ref_full.height < crop_sz || ref_full.width < crop_sz) {
                    warn("sample_batch: view " + scene.view_paths[v] +
                         " smaller than crop, record skipped");
                    refs_ok = false;
                    break;
                }
                const int ry = step_rng.uniform_int(0, ref_full.height - crop_sz);
                const int rx = step_rng.uniform_int(0, ref_full.width - crop_sz);
                ref_crops.push_back(crop(ref_full, ry, rx, crop_sz, crop_sz));
                ref_offsets.emplace_back(ry, rx);
            }
            if (!refs_ok) continue;

            entry.query = crop(query_full, qy, qx, crop_sz, crop_sz);
            const ImageGrid source_crop = crop(source_full, qy, qx, crop_sz, crop_sz);
            // SSIM windows reaching past a crop boundary see reflected crop
            // pixels, not the original surroundings, so the target is
            // recomputed on exactly the pixels the model sees.
            entry.target = clamp_unit(ssim_map(entry.query, source_crop, cfg.ssim));
            entry.refs = std::move(ref_crops);
            entry.record_id = scene.scene_id + "/r" + std::to_string(ri);
            entry.scene_index = si;
            entry.record_index = ri;
            entry.source_view_index = rec.source_view_index;
            entry.query_y = qy;
            entry.query_x = qx;
            entry.ref_view_indices = std::move(pool);
            entry.ref_offsets = std::move(ref_offsets);
            placed = true;
        }
        if (!placed) {
            throw TrainingError(
                "sample_batch: no record large enough for crop size " +
                std::to_string(crop_sz) + " after 100 draws");
        }
        batch.entries.push_back(std::move(entry));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Loss

/// Mean absolute difference across a batch of equally-shaped maps.
inline double l1_loss(const std::vector<ScoreMap>& pred,
                      const std::vector<ScoreMap>& target) {
    if (pred.size() != target.size() || pred.empty()) {
        throw ShapeError("l1_loss: batch size mismatch or empty batch");
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!pred[i].same_shape(target[i])) {
            throw ShapeError("l1_loss: map shape mismatch at batch index " +
                             std::to_string(i));
        }
        for (std::size_t k = 0; k < pred[i].data.size(); ++k) {
            sum += std::abs(static_cast<double>(pred[i].data[k]) - target[i].data[k]);
        }
        count += pred[i].data.size();
    }
    return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Optimization step

template <class Real>
double train_step(CrossRefModelT<Real>& model, const Batch& batch, AdamW<Real>& optim,
                  const TrainConfig& cfg) {
    if (batch.entries.empty()) throw TrainingError("train_step: empty batch");
    const int patch = model.config().patch_size;

    model.zero_grad();
    double abs_sum = 0.0;
    std::size_t pixel_total = 0;
    for (const BatchEntry& e : batch.entries) pixel_total += e.target.data.size();

    for (const BatchEntry& entry : batch.entries) {
        typename CrossRefModelT<Real>::TrainCache cache;
        const MatX<Real> pred = model.training_forward(entry.query, entry.refs, cache);
        const MatX<Real> target = map_to_token_matrix<Real>(entry.target, patch);
        const MatX<Real> diff = pred - target;
        abs_sum += static_cast<double>(diff.cwiseAbs().sum());
        const Real scale = Real(1) / static_cast<Real>(pixel_total);
        const MatX<Real> d_pred =
            diff.unaryExpr([scale](Real d) {
                return d > Real(0) ? scale : (d < Real(0) ? -scale : Real(0));
            });
        model.backward(cache, d_pred);
    }

    const double loss = abs_sum / static_cast<double>(pixel_total);
    if (!std::isfinite(loss)) {
        std::string ids;
        for (const BatchEntry& e : batch.entries) {
            ids += (ids.empty() ? "" : ", ") + e.record_id;
        }
        throw TrainingError("train_step: non-finite loss; batch records: " + ids);
    }
    optim.step(model.trainable_params(), cfg.learning_rate, cfg.weight_decay);
    return loss;
}

// ---------------------------------------------------------------------------
// Training loop with checkpointing, loss log, and resume.

namespace train_detail {

inline std::string ckpt_dir_name(int step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%06d", step);
    return buf;
}

inline std::string log_line(int step, double loss, double lr, std::uint64_t wall_ms) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%llu", step, loss, lr,
                  static_cast<unsigned long long>(wall_ms));
    return buf;
}

/// Highest-step checkpoint directory under out_dir, or empty path.
inline std::filesystem::path find_latest_checkpoint(const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::path best;
    int best_step = -1;
    if (!fs::is_directory(out_dir)) return best;
    for (const auto& e : fs::directory_iterator(out_dir)) {
        if (!e.is_directory()) continue;
        const std::string name = e.path().filename().string();
        if (name.rfind("ckpt_", 0) != 0) continue;
        if (!fs::exists(e.path() / "manifest.json")) continue;
        const int step = std::atoi(name.substr(5).c_str());
        if (step > best_step) {
            best_step = step;
            best = e.path();
        }
    }
    return best;
}

}  // namespace train_detail

struct TrainResult {
    std::filesystem::path final_checkpoint;
    double final_loss = 0.0;
    int steps_run = 0;
};

/// Runs (or resumes) the optimization loop. Checkpoints land in
/// out_dir/ckpt_<step>/ via write-temp-then-rename; the loss log is
/// out_dir/loss_log.csv with columns step,loss,lr,wall_ms. Batches are drawn
/// from a per-step derived RNG, so a resumed run replays the exact loss
/// trajectory the uninterrupted run would have produced.
template <class Real = float>
TrainResult train(const DatasetManifest& manifest, const std::filesystem::path& data_root,
                  const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    model_cfg.validate();
    cfg.validate(model_cfg.patch_size);
    validate_for_training(manifest, cfg);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("train: cannot create " + out_dir.string());

    CrossRefModelT<Real> model(model_cfg);
    model.init_params(cfg.seed);
    AdamW<Real> optim;
    optim.init(model.trainable_params());

    int start_step = 0;
    const fs::path resume_from = train_detail::find_latest_checkpoint(out_dir);
    if (!resume_from.empty()) {
        LoadedCheckpointT<Real> loaded = load_checkpoint<Real>(resume_from, &model_cfg);
        if (loaded.step < cfg.total_steps) {
            model = std::move(loaded.model);
            OptimBlob blob;
            if (load_optim_blob(resume_from, model, blob)) optim.from_blob(blob);
            start_step = static_cast<int>(loaded.step);
        } else {
            return TrainResult{resume_from, 0.0, 0};
        }
    }

    // Loss log: keep exactly the lines for steps <= start_step, then append.
    const fs::path log_path = out_dir / "loss_log.csv";
    std::vector<std::string> kept{"step,loss,lr,wall_ms"};
    if (start_step > 0 && fs::exists(log_path)) {
        std::ifstream in(log_path);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            if (std::atoi(line.c_str()) <= start_step) kept.push_back(line);
        }
    }
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw IoError("train: cannot open " + log_path.string());
    for (const std::string& line : kept) log << line << "\n";
    log.flush();

    ImageCache images(data_root);
    const nlohmann::json extra{
        {"rng", {{"scheme", "per-step-derived"}, {"train_seed", cfg.seed}}},
        {"train", cfg}};

    auto save = [&](int step) {
        const fs::path final_dir = out_dir / train_detail::ckpt_dir_name(step);
        const fs::path tmp_dir = out_dir / (train_detail::ckpt_dir_name(step) + ".tmp");
        fs::remove_all(tmp_dir);
        const OptimBlob blob = optim.to_blob();
        save_checkpoint(model, tmp_dir, step, &blob, extra);
        fs::remove_all(final_dir);
        fs::rename(tmp_dir, final_dir);
        return final_dir;
    };

    double loss = 0.0;
    fs::path last_ckpt = resume_from;
    for (int step = start_step + 1; step <= cfg.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng step_rng(derive_seed(cfg.seed, "batch", step));
        const Batch batch = sample_batch(manifest, images, cfg, step_rng);
        try {
            loss = train_step(model, batch, optim, cfg);
        } catch (const TrainingError& e) {
            throw TrainingError("step " + std::to_string(step) + ": " + e.what());
        }
        std::uint64_t wall_ms = 0;
        if (cfg.log_timing) {
            wall_ms = static_cast<std::uint64_t>(
                std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::steady_clock::now() - t0)
                    .count());
        }
        log << train_detail::log_line(step, loss, cfg.learning_rate, wall_ms) << "\n";
        log.flush();
        if (step % cfg.checkpoint_every == 0 || step == cfg.total_steps) {
            last_ckpt = save(step);
        }
    }
    return TrainResult{last_ckpt, loss, cfg.total_steps - start_step};
}

}  // namespace criqa
