#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "criqa/correlation.hpp"
#include "criqa/datagen/dataset.hpp"
#include "criqa/error.hpp"
#include "criqa/image.hpp"
#include "criqa/model/network.hpp"
#include "criqa/pfm.hpp"
#include "criqa/png_io.hpp"
#include "criqa/psnr.hpp"
#include "criqa/ssim.hpp"

namespace criqa {

inline double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

// ---------------------------------------------------------------------------
// Evaluation items: one scored query with its references and ground truth,
// pre-cropped to dimensions the network accepts.

struct EvalItem {
    std::string scene_id;
    std::string image_id;
    ImageGrid query;             // center-cropped to a patch multiple
    ImageGrid gt;                // source view under the same crop window
    std::vector<ImageGrid> refs; // remaining views, each center-cropped
    ScoreMap target;             // SSIM(query, gt) recomputed on the crop
};

namespace eval_detail {

/// Largest centered window whose sides are patch multiples within the grid cap.
inline CropRect model_crop_rect(int height, int width, int patch, int max_grid) {
    int h = std::min(height - height % patch, max_grid * patch);
    int w = std::min(width - width % patch, max_grid * patch);
    if (h < patch || w < patch) {
        throw ShapeError("image smaller than one patch; cannot evaluate");
    }
    return CropRect{(height - h) / 2, (width - w) / 2, h, w};
}

}  // namespace eval_detail

struct EvalOptions {
    int n_ref = -1;  // references per item; -1 = every non-source view
    SsimParams ssim;
    std::filesystem::path maps_dir;  // when set, predicted maps land here as PFM
};

/// Loads every record of a manifest as an EvalItem. Queries keep their source
/// view as ground truth; all other views become references in index order
/// (first n_ref of them when n_ref >= 0).
inline std::vector<EvalItem> build_eval_items(const DatasetManifest& manifest,
                                              const std::filesystem::path& root,
                                              int patch, int max_grid,
                                              const EvalOptions& opts) {
    std::vector<EvalItem> items;
    for (const SceneEntry& scene : manifest.scenes) {
        std::vector<ImageGrid> views;
        views.reserve(scene.view_paths.size());
        for (const std::string& rel : scene.view_paths) views.push_back(read_png(root / rel));
        for (const RecordEntry& rec : scene.records) {
            if (rec.source_view_index < 0 ||
                rec.source_view_index >= static_cast<int>(views.size())) {
                throw ValidationError("eval: record " + rec.query_path +
                                      " has out-of-range source view index");
            }
            EvalItem item;
            item.scene_id = scene.scene_id;
            item.image_id = std::filesystem::path(rec.query_path).stem().string();

            const ImageGrid query_full = read_png(root / rec.query_path);
            const ImageGrid& gt_full = views[rec.source_view_index];
            if (!query_full.same_shape(gt_full)) {
                throw ShapeError("eval: query " + rec.query_path +
                                 " and its source view differ in shape");
            }
            const CropRect rect = eval_detail::model_crop_rect(
                query_full.height, query_full.width, patch, max_grid);
            item.query = crop(query_full, rect.y0, rect.x0, rect.height, rect.width);
            item.gt = crop(gt_full, rect.y0, rect.x0, rect.height, rect.width);
            item.target = clamp_unit(ssim_map(item.query, item.gt, opts.ssim));

            for (int v = 0; v < static_cast<int>(views.size()); ++v) {
                if (v == rec.source_view_index) continue;
                if (opts.n_ref >= 0 &&
                    static_cast<int>(item.refs.size()) >= opts.n_ref) {
                    break;
                }
                const ImageGrid& ref = views[v];
                const CropRect rr = eval_detail::model_crop_rect(
                    ref.height, ref.width, patch, max_grid);
                item.refs.push_back(crop(ref, rr.y0, rr.x0, rr.height, rr.width));
            }
            if (item.refs.empty()) {
                throw ValidationError("eval: scene " + scene.scene_id +
                                      " leaves no reference views for " + rec.query_path);
            }
            items.push_back(std::move(item));
        }
    }
    if (items.empty()) throw ValidationError("eval: manifest produced no items");
    return items;
}

// ---------------------------------------------------------------------------
// Scorers: anything that turns an item into a predicted score map.

using Scorer = std::function<ScoreMap(const EvalItem&)>;

/// Predicts a map for one query. References beyond `expected_n_ref` are
/// trimmed from the tail with a warning; short lists are an error (the model
/// never pads, because invented references would dilute cross-attention).
template <class Real>
std::pair<ScoreMap, double> score_image(const CrossRefModelT<Real>& model,
                                        const ImageGrid& query,
                                        std::vector<ImageGrid> refs,
                                        int expected_n_ref = -1) {
    if (expected_n_ref >= 1) {
        if (static_cast<int>(refs.size()) < expected_n_ref) {
            throw ValidationError(
                "score_image: got " + std::to_string(refs.size()) +
                " references but the model expects " + std::to_string(expected_n_ref) +
                "; short lists are not padded — supply at least that many "
                "(longer lists are trimmed from the tail)");
        }
        if (static_cast<int>(refs.size()) > expected_n_ref) {
            warn("score_image: trimming " + std::to_string(refs.size()) + " references to " +
                 std::to_string(expected_n_ref));
            refs.resize(static_cast<std::size_t>(expected_n_ref));
        }
    }
    ScoreMap map = model.forward(query, refs).map;
    const double mean = mean_score(map);
    return {std::move(map), mean};
}

template <class Real>
Scorer make_model_scorer(const CrossRefModelT<Real>& model, int expected_n_ref = -1) {
    return [&model, expected_n_ref](const EvalItem& item) {
        return score_image(model, item.query, item.refs, expected_n_ref).first;
    };
}

/// Upper-bound scorer: echoes the SSIM target. Pearson through the whole
/// evaluation path must come out exactly 1.
inline Scorer make_oracle_scorer() {
    return [](const EvalItem& item) { return item.target; };
}

// ---------------------------------------------------------------------------
// Report types

struct PerImageRow {
    std::string image_id;
    double ssim = 0.0;
    double cross = 0.0;
    double psnr = 0.0;
    std::string map_path;  // relative PFM path when maps were exported
};

struct SceneResult {
    std::string scene_id;
    double mean_ssim = 0.0;
    double mean_cross = 0.0;
    double mean_psnr = 0.0;
    double pearson_images = 0.0;  // NaN when undefined for this scene
    std::vector<PerImageRow> per_image;
};

struct EvalReport {
    std::vector<SceneResult> scenes;
    double pearson_cross_vs_ssim = 0.0;  // across scene means
    double spearman_rank_corr = 0.0;     // across scene means
    double mean_scene_pearson = 0.0;     // mean of defined per-scene correlations
    nlohmann::json config;
    std::string checkpoint_id;
};

namespace eval_detail {

// Non-finite doubles serialize as JSON null; read them back as NaN so a
// round trip is lossless.
inline nlohmann::json num_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

inline double num_from(const nlohmann::json& j) {
    if (j.is_null()) return nan_value();
    return j.get<double>();
}

}  // namespace eval_detail

inline void to_json(nlohmann::json& j, const PerImageRow& r) {
    j = nlohmann::json{{"image_id", r.image_id},
                       {"ssim", eval_detail::num_or_null(r.ssim)},
                       {"cross", eval_detail::num_or_null(r.cross)},
                       {"psnr", eval_detail::num_or_null(r.psnr)},
                       {"map_path", r.map_path}};
}

inline void from_json(const nlohmann::json& j, PerImageRow& r) {
    j.at("image_id").get_to(r.image_id);
    r.ssim = eval_detail::num_from(j.at("ssim"));
    r.cross = eval_detail::num_from(j.at("cross"));
    r.psnr = eval_detail::num_from(j.at("psnr"));
    if (j.contains("map_path")) j.at("map_path").get_to(r.map_path);
}

inline void to_json(nlohmann::json& j, const SceneResult& s) {
    j = nlohmann::json{{"scene_id", s.scene_id},
                       {"mean_ssim", eval_detail::num_or_null(s.mean_ssim)},
                       {"mean_cross", eval_detail::num_or_null(s.mean_cross)},
                       {"mean_psnr", eval_detail::num_or_null(s.mean_psnr)},
                       {"pearson_images", eval_detail::num_or_null(s.pearson_images)},
                       {"per_image", s.per_image}};
}

inline void from_json(const nlohmann::json& j, SceneResult& s) {
    j.at("scene_id").get_to(s.scene_id);
    s.mean_ssim = eval_detail::num_from(j.at("mean_ssim"));
    s.mean_cross = eval_detail::num_from(j.at("mean_cross"));
    s.mean_psnr = eval_detail::num_from(j.at("mean_psnr"));
    s.pearson_images = eval_detail::num_from(j.at("pearson_images"));
    j.at("per_image").get_to(s.per_image);
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
    j = nlohmann::json{
        {"scenes", r.scenes},
        {"pearson_cross_vs_ssim", eval_detail::num_or_null(r.pearson_cross_vs_ssim)},
        {"spearman_rank_corr", eval_detail::num_or_null(r.spearman_rank_corr)},
        {"mean_scene_pearson", eval_detail::num_or_null(r.mean_scene_pearson)},
        {"config", r.config},
        {"checkpoint_id", r.checkpoint_id}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
    j.at("scenes").get_to(r.scenes);
    r.pearson_cross_vs_ssim = eval_detail::num_from(j.at("pearson_cross_vs_ssim"));
    r.spearman_rank_corr = eval_detail::num_from(j.at("spearman_rank_corr"));
    r.mean_scene_pearson = eval_detail::num_from(j.at("mean_scene_pearson"));
    r.config = j.at("config");
    j.at("checkpoint_id").get_to(r.checkpoint_id);
}

// ---------------------------------------------------------------------------
// Scene evaluation

/// Scores every item and aggregates per scene. Scenes whose internal
/// cross-vs-ssim correlation is undefined (constant scores, single image)
/// keep their row with pearson_images = NaN, draw a warning, and stay out of
/// every aggregate.
inline EvalReport evaluate_scenes(const Scorer& scorer, const std::vector<EvalItem>& items,
                                  const EvalOptions& opts = {}) {
    namespace fs = std::filesystem;
    if (items.empty()) throw ValidationError("evaluate_scenes: no items");
    if (!opts.maps_dir.empty()) fs::create_directories(opts.maps_dir);

    // Group results by scene, preserving first-appearance order.
    std::vector<SceneResult> scenes;
    auto scene_for = [&scenes](const std::string& id) -> SceneResult& {
        for (SceneResult& s : scenes) {
            if (s.scene_id == id) return s;
        }
        scenes.push_back(SceneResult{});
        scenes.back().scene_id = id;
        return scenes.back();
    };

    for (const EvalItem& item : items) {
        ScoreMap pred = scorer(item);
        if (pred.height != item.target.height || pred.width != item.target.width) {
            throw ShapeError("evaluate_scenes: scorer returned a map of wrong shape for " +
                             item.scene_id + "/" + item.image_id);
        }
        PerImageRow row;
        row.image_id = item.image_id;
        row.ssim = mean_score(item.target);
        row.cross = mean_score(pred);
        row.psnr = psnr(item.query, item.gt);
        if (!opts.maps_dir.empty()) {
            const fs::path rel = fs::path(item.scene_id) / (item.image_id + ".pfm");
            fs::create_directories(opts.maps_dir / item.scene_id);
            write_score_map(pred, opts.maps_dir / rel, item.image_id, "cross");
            row.map_path = rel.generic_string();
        }
        scene_for(item.scene_id).per_image.push_back(std::move(row));
    }

    for (SceneResult& s : scenes) {
        std::vector<double> ssims, crosses;
        double sum_ssim = 0, sum_cross = 0, sum_psnr = 0;
        for (const PerImageRow& r : s.per_image) {
            ssims.push_back(r.ssim);
            crosses.push_back(r.cross);
            sum_ssim += r.ssim;
            sum_cross += r.cross;
            sum_psnr += r.psnr;
        }
        const double n = static_cast<double>(s.per_image.size());
        s.mean_ssim = sum_ssim / n;
        s.mean_cross = sum_cross / n;
        s.mean_psnr = sum_psnr / n;
        try {
            s.pearson_images = pearson(crosses, ssims);
        } catch (const UndefinedCorrelationError& e) {
            s.pearson_images = nan_value();
            warn("scene " + s.scene_id + ": per-image correlation undefined (" +
                 e.what() + "); excluded from aggregates");
        }
    }

    EvalReport report;
    report.scenes = std::move(scenes);

    std::vector<double> scene_cross, scene_ssim, scene_pearson;
    for (const SceneResult& s : report.scenes) {
        if (std::isnan(s.pearson_images)) continue;
        scene_cross.push_back(s.mean_cross);
        scene_ssim.push_back(s.mean_ssim);
        scene_pearson.push_back(s.pearson_images);
    }
    auto guarded = [](const char* what, auto&& fn) {
        try {
            return fn();
        } catch (const UndefinedCorrelationError&) {
            warn(std::string("report: ") + what + " undefined across scenes");
            return nan_value();
        }
    };
    report.pearson_cross_vs_ssim =
        guarded("pearson", [&] { return pearson(scene_cross, scene_ssim); });
    report.spearman_rank_corr =
        guarded("spearman", [&] { return spearman(scene_cross, scene_ssim); });
    if (scene_pearson.empty()) {
        report.mean_scene_pearson = nan_value();
    } else {
        double sum = 0;
        for (double v : scene_pearson) sum += v;
        report.mean_scene_pearson = sum / static_cast<double>(scene_pearson.size());
    }
    return report;
}

template <class Real>
EvalReport evaluate_scenes(const CrossRefModelT<Real>& model, const DatasetManifest& manifest,
                           const std::filesystem::path& root, const EvalOptions& opts = {}) {
    const std::vector<EvalItem> items = build_eval_items(
        manifest, root, model.config().patch_size, model.config().max_grid, opts);
    return evaluate_scenes(make_model_scorer(model), items, opts);
}

// ---------------------------------------------------------------------------
// Scene ranking

struct RankRow {
    std::string scene_id;
    double mean_ssim = 0.0;
    double mean_cross = 0.0;
    int rank_ssim = 0;   // dense, 0 = best (highest score)
    int rank_cross = 0;
};

struct RankTable {
    std::vector<RankRow> rows;  // sorted by rank_cross
    double spearman = 0.0;      // between the two score vectors, ties averaged
};

namespace eval_detail {

/// Dense descending ranks: best value -> 0, equal values share a rank.
inline std::vector<int> dense_ranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&values](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    std::vector<int> ranks(values.size(), 0);
    int rank = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        if (k > 0 && values[order[k]] != values[order[k - 1]]) ++rank;
        ranks[order[k]] = rank;
    }
    return ranks;
}

}  // namespace eval_detail

/// Ranks scenes by mean CrossScore and by mean SSIM and reports how well the
/// two orderings agree. Scenes with undefined internal correlation are
/// dropped first; fewer than three rankable scenes is an error.
inline RankTable rank_scenes(const EvalReport& report) {
    std::vector<const SceneResult*> usable;
    for (const SceneResult& s : report.scenes) {
        if (!std::isnan(s.pearson_images) && !std::isnan(s.mean_cross) &&
            !std::isnan(s.mean_ssim)) {
            usable.push_back(&s);
        }
    }
    if (usable.size() < 3) {
        throw ValidationError("rank_scenes: need at least 3 scenes with defined scores, have " +
                              std::to_string(usable.size()));
    }
    std::vector<double> cross, ssim;
    for (const SceneResult* s : usable) {
        cross.push_back(s->mean_cross);
        ssim.push_back(s->mean_ssim);
    }
    const std::vector<int> rc = eval_detail::dense_ranks(cross);
    const std::vector<int> rs = eval_detail::dense_ranks(ssim);

    RankTable table;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        table.rows.push_back(RankRow{usable[i]->scene_id, usable[i]->mean_ssim,
                                     usable[i]->mean_cross, rs[i], rc[i]});
    }
    std::sort(table.rows.begin(), table.rows.end(),
              [](const RankRow& a, const RankRow& b) { return a.rank_cross < b.rank_cross; });
    table.spearman = spearman(cross, ssim);
    return table;
}

// ---------------------------------------------------------------------------
// Model comparison

struct ComparisonRow {
    std::string label;
    double mean_ssim = 0.0;
    double mean_cross = 0.0;
    double mean_psnr = 0.0;
    double mae_cross_vs_ssim = 0.0;  // pixelwise |prediction - ssim target|
};

struct ComparisonTable {
    ComparisonRow a, b;
    // metric name -> "a", "b", or "tie" (winner under that metric's direction)
    std::map<std::string, std::string> ordering;
};

namespace eval_detail {

inline std::string winner(double a, double b, bool higher_is_better) {
    if (a == b) return "tie";
    const bool a_wins = higher_is_better ? (a > b) : (a < b);
    return a_wins ? "a" : "b";
}

}  // namespace eval_detail

/// Ordering induced by two rows: higher wins on quality scores, lower wins on
/// the error column.
inline std::map<std::string, std::string> comparison_orderings(const ComparisonRow& a,
                                                               const ComparisonRow& b) {
    return {{"ssim", eval_detail::winner(a.mean_ssim, b.mean_ssim, true)},
            {"cross", eval_detail::winner(a.mean_cross, b.mean_cross, true)},
            {"psnr", eval_detail::winner(a.mean_psnr, b.mean_psnr, true)},
            {"mae_cross_vs_ssim",
             eval_detail::winner(a.mae_cross_vs_ssim, b.mae_cross_vs_ssim, false)}};
}

inline ComparisonRow summarize_scorer(const Scorer& scorer, const std::vector<EvalItem>& items,
                                      std::string label) {
    if (items.empty()) throw ValidationError("compare_models: no items");
    ComparisonRow row;
    row.label = std::move(label);
    double mae_sum = 0.0;
    std::size_t mae_count = 0;
    for (const EvalItem& item : items) {
        const ScoreMap pred = scorer(item);
        if (!pred.same_shape(item.target)) {
            throw ShapeError("compare_models: prediction shape mismatch for " + item.image_id);
        }
        row.mean_ssim += mean_score(item.target);
        row.mean_cross += mean_score(pred);
        row.mean_psnr += psnr(item.query, item.gt);
        for (std::size_t k = 0; k < pred.data.size(); ++k) {
            mae_sum += std::abs(static_cast<double>(pred.data[k]) - item.target.data[k]);
        }
        mae_count += pred.data.size();
    }
    const double n = static_cast<double>(items.size());
    row.mean_ssim /= n;
    row.mean_cross /= n;
    row.mean_psnr /= n;
    row.mae_cross_vs_ssim = mae_sum / static_cast<double>(mae_count);
    return row;
}

inline ComparisonTable compare_models(const Scorer& scorer_a, const Scorer& scorer_b,
                                      const std::vector<EvalItem>& items,
                                      const std::string& label_a = "a",
                                      const std::string& label_b = "b") {
    ComparisonTable table;
    table.a = summarize_scorer(scorer_a, items, label_a);
    table.b = summarize_scorer(scorer_b, items, label_b);
    table.ordering = comparison_orderings(table.a, table.b);
    return table;
}

template <class Real>
ComparisonTable compare_models(const CrossRefModelT<Real>& model_a,
                               const CrossRefModelT<Real>& model_b,
                               const std::vector<EvalItem>& items,
                               const std::string& label_a = "a",
                               const std::string& label_b = "b") {
    return compare_models(make_model_scorer(model_a), make_model_scorer(model_b), items,
                          label_a, label_b);
}

// ---------------------------------------------------------------------------
// Reference ablation

struct AblationResult {
    ScoreMap map_on;    // real references
    ScoreMap map_off;   // references replaced by zero images of the same shape
    double mean_on = 0.0;
    double mean_off = 0.0;
    double l1_delta = 0.0;  // mean |on - off| per pixel
};

/// Re-scores a query with every reference blanked to zero. The gap between
/// the two maps measures how much the prediction actually draws on the
/// references rather than on the query alone.
template <class Real>
AblationResult ablate_references(const CrossRefModelT<Real>& model, const ImageGrid& query,
                                 const std::vector<ImageGrid>& refs) {
    AblationResult result;
    result.map_on = model.forward(query, refs).map;
    std::vector<ImageGrid> zeroed;
    zeroed.reserve(refs.size());
    for (const ImageGrid& r : refs) {
        zeroed.push_back(ImageGrid(r.height, r.width, r.channels, 0.0f));
    }
    result.map_off = model.forward(query, zeroed).map;
    result.mean_on = mean_score(result.map_on);
    result.mean_off = mean_score(result.map_off);
    double sum = 0.0;
    for (std::size_t k = 0; k < result.map_on.data.size(); ++k) {
        sum += std::abs(static_cast<double>(result.map_on.data[k]) - result.map_off.data[k]);
    }
    result.l1_delta = sum / static_cast<double>(result.map_on.data.size());
    return result;
}

template <class Real>
AblationResult ablate_references(const CrossRefModelT<Real>& model, const EvalItem& item) {
    return ablate_references(model, item.query, item.refs);
}

// ---------------------------------------------------------------------------
// Attention export

struct AttentionExport {
    std::vector<ScoreMap> heatmaps;  // one per reference, at patch-grid resolution
    std::vector<std::filesystem::path> files;
    double total_mass = 0.0;  // sums to 1 over all heatmaps
};

/// Slices the captured cross-attention row of one query patch, averaged over
/// heads of the last decoder layer, into per-reference heatmaps on each
/// reference's patch grid. Writes <idx>.pfm files plus index.json when
/// out_dir is non-empty.
template <class Real>
AttentionExport export_attention(const CrossRefModelT<Real>& model, const ImageGrid& query,
                                 const std::vector<ImageGrid>& refs, int patch_row,
                                 int patch_col,
                                 const std::filesystem::path& out_dir = {}) {
    const ForwardResultT<Real> fwd = model.forward(query, refs, /*capture_attention=*/true);
    const AttentionRecordT<Real>& rec = *fwd.attention;
    if (patch_row < 0 || patch_row >= rec.query_rows || patch_col < 0 ||
        patch_col >= rec.query_cols) {
        throw ValidationError("export_attention: patch (" + std::to_string(patch_row) + "," +
                              std::to_string(patch_col) + ") outside query grid " +
                              std::to_string(rec.query_rows) + "x" +
                              std::to_string(rec.query_cols));
    }
    const auto& heads = rec.layers.back();
    const Eigen::Index row = static_cast<Eigen::Index>(patch_row) * rec.query_cols + patch_col;
    Eigen::Matrix<Real, 1, Eigen::Dynamic> mass =
        Eigen::Matrix<Real, 1, Eigen::Dynamic>::Zero(heads[0].cols());
    for (const MatX<Real>& h : heads) mass += h.row(row);
    mass /= static_cast<Real>(heads.size());

    AttentionExport out;
    for (std::size_t i = 0; i < rec.ref_grids.size(); ++i) {
        const auto [rows, cols] = rec.ref_grids[i];
        ScoreMap heat(rows, cols);
        const int offset = rec.ref_offsets[i];
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                heat.at(r, c) = static_cast<float>(mass(offset + r * cols + c));
            }
        }
        out.total_mass += static_cast<double>(mass.segment(offset, rows * cols).sum());
        out.heatmaps.push_back(std::move(heat));
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        nlohmann::json index;
        index["patch"] = {patch_row, patch_col};
        index["layer"] = rec.layers.size() - 1;
        index["heads"] = "mean";
        index["total_mass"] = out.total_mass;
        for (std::size_t i = 0; i < out.heatmaps.size(); ++i) {
            const std::filesystem::path file = out_dir / (std::to_string(i) + ".pfm");
            write_pfm(out.heatmaps[i], file);
            index["files"].push_back(file.filename().string());
            out.files.push_back(file);
        }
        std::ofstream js(out_dir / "index.json");
        js << index.dump(2) << "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report rendering: JSON + CSV tables, colour overlays of exported maps.

namespace eval_detail {

constexpr std::array<std::array<float, 3>, 4> kScoreStops = {{
    {0.0f, 0.0f, 1.0f},           // 0.0  blue
    {0.0f, 1.0f, 0.0f},           // 1/3  green
    {1.0f, 165.0f / 255.0f, 0.0f},  // 2/3  orange
    {1.0f, 0.0f, 0.0f},           // 1.0  red
}};

}  // namespace eval_detail

/// Descending-quality colour code: red at 1.0 through orange and green down
/// to blue at 0.0, piecewise linear between the stops.
inline std::array<float, 3> score_to_rgb(float v) {
    using eval_detail::kScoreStops;
    const float x = std::min(std::max(v, 0.0f), 1.0f) * 3.0f;
    const int lo = std::min(static_cast<int>(x), 2);
    const float t = x - static_cast<float>(lo);
    std::array<float, 3> rgb;
    for (int c = 0; c < 3; ++c) {
        rgb[c] = kScoreStops[lo][c] + t * (kScoreStops[lo + 1][c] - kScoreStops[lo][c]);
    }
    return rgb;
}

inline ImageGrid colorize(const ScoreMap& map) {
    ImageGrid img(map.height, map.width, 3);
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            const std::array<float, 3> rgb = score_to_rgb(map.at(y, x));
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
        }
    }
    return img;
}

namespace eval_detail {

inline std::string csv_num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace eval_detail

/// Writes report.json, report.csv, and (for rows whose map_path resolves
/// under maps_root) colour overlays overlays/<scene>_<image>.png. The CSV
/// carries one row per image plus one "mean" summary row per scene.
inline void render_report(const EvalReport& report, const std::filesystem::path& out_dir,
                          const std::filesystem::path& maps_root = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) {
        throw IoError("render_report: cannot create " + out_dir.string());
    }

    {
        std::ofstream js(out_dir / "report.json");
        if (!js) throw IoError("render_report: cannot write report.json");
        js << nlohmann::json(report).dump(2) << "\n";
    }
    {
        std::ofstream csv(out_dir / "report.csv");
        if (!csv) throw IoError("render_report: cannot write report.csv");
        csv << "scene_id,image_id,ssim,cross,psnr\n";
        for (const SceneResult& s : report.scenes) {
            for (const PerImageRow& r : s.per_image) {
                csv << s.scene_id << "," << r.image_id << "," << eval_detail::csv_num(r.ssim)
                    << "," << eval_detail::csv_num(r.cross) << ","
                    << eval_detail::csv_num(r.psnr) << "\n";
            }
            csv << s.scene_id << ",mean," << eval_detail::csv_num(s.mean_ssim) << ","
                << eval_detail::csv_num(s.mean_cross) << ","
                << eval_detail::csv_num(s.mean_psnr) << "\n";
        }
    }
    if (!maps_root.empty()) {
        bool made_dir = false;
        for (const SceneResult& s : report.scenes) {
            for (const PerImageRow& r : s.per_image) {
                if (r.map_path.empty()) continue;
                const fs::path pfm = maps_root / r.map_path;
                if (!fs::exists(pfm)) {
                    warn("render_report: missing map " + pfm.string() + ", overlay skipped");
                    continue;
                }
                if (!made_dir) {
                    fs::create_directories(out_dir / "overlays");
                    made_dir = true;
                }
                write_png(colorize(read_pfm(pfm)),
                          out_dir / "overlays" / (s.scene_id + "_" + r.image_id + ".png"));
            }
        }
    }
}

}  // namespace criqa
