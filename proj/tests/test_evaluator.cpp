#include "criqa/eval/evaluator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"

using namespace criqa;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.encoder_depth = 1;
    cfg.decoder_layers = 1;
    cfg.attention_heads = 2;
    cfg.mlp_hidden = 16;
    cfg.max_grid = 8;
    return cfg;
}

/// Two-scene dataset with severity variation inside each scene, so per-scene
/// correlations are well defined.
struct EvalFixture {
    oracles::TempDir dir;
    DatasetManifest manifest;
    std::vector<EvalItem> items;

    EvalFixture() {
        DatagenConfig cfg;
        cfg.n_scenes = 2;
        cfg.records_per_scene = 3;
        cfg.n_views = 3;
        cfg.base_height = 256;
        cfg.base_width = 256;
        cfg.kinds = {DistortionKind::additive_noise};
        cfg.severities = {0.2, 0.8};
        cfg.global_seed = 23;
        manifest = generate_dataset(cfg, dir.path());
        items = build_eval_items(manifest, dir.path(), 4, 8, EvalOptions{});
    }

    static const EvalFixture& get() {
        static EvalFixture fixture;
        return fixture;
    }
};

/// 14-scene published comparison: mean structural similarity next to the
/// cross-reference score for renderings of the same scenes.
struct SceneTableRow {
    const char* scene_id;
    double ssim;
    double cross;
};

constexpr SceneTableRow kSceneTable[] = {
    {"426", 0.74, 0.80}, {"34", 0.66, 0.78},  {"10", 0.64, 0.77}, {"135", 0.64, 0.78},
    {"238", 0.61, 0.66}, {"284", 0.61, 0.61}, {"103", 0.59, 0.73}, {"441", 0.58, 0.75},
    {"345", 0.56, 0.73}, {"311", 0.55, 0.72}, {"175", 0.51, 0.62}, {"244", 0.50, 0.58},
    {"82", 0.44, 0.55},  {"4", 0.40, 0.53},
};

EvalReport report_from_scene_table() {
    EvalReport report;
    for (const SceneTableRow& row : kSceneTable) {
        SceneResult scene;
        scene.scene_id = row.scene_id;
        scene.mean_ssim = row.ssim;
        scene.mean_cross = row.cross;
        scene.pearson_images = 1.0;  // all scenes rankable
        report.scenes.push_back(std::move(scene));
    }
    return report;
}

}  // namespace

TEST(ModelCropRect, CentresAndCapsThePatchGrid) {
    const CropRect full = eval_detail::model_crop_rect(140, 140, 14, 10);
    EXPECT_EQ(full.y0, 0);
    EXPECT_EQ(full.x0, 0);
    EXPECT_EQ(full.height, 140);
    EXPECT_EQ(full.width, 140);

    const CropRect trimmed = eval_detail::model_crop_rect(150, 145, 14, 10);
    EXPECT_EQ(trimmed.height, 140);
    EXPECT_EQ(trimmed.width, 140);
    EXPECT_EQ(trimmed.y0, 5);
    EXPECT_EQ(trimmed.x0, 2);

    const CropRect capped = eval_detail::model_crop_rect(256, 256, 4, 8);
    EXPECT_EQ(capped.height, 32);
    EXPECT_EQ(capped.width, 32);
    EXPECT_EQ(capped.y0, 112);

    EXPECT_THROW(eval_detail::model_crop_rect(3, 3, 4, 8), ShapeError);
}

TEST(BuildEvalItems, CropsToPatchMultiplesAndExcludesTheSource) {
    const EvalFixture& data = EvalFixture::get();
    ASSERT_EQ(data.items.size(), 6u);

    const EvalItem& first = data.items[0];
    EXPECT_EQ(first.scene_id, "scene_000");
    EXPECT_EQ(first.image_id, "r000");
    EXPECT_EQ(first.query.height, 32);
    EXPECT_EQ(first.query.width, 32);
    ASSERT_EQ(first.refs.size(), 2u);  // 3 views minus the source

    // The query crop is the centered window of the stored image, and the
    // target is the clamped structural similarity of exactly that window.
    const RecordEntry& rec = data.manifest.scenes[0].records[0];
    const ImageGrid query_full = read_png(data.dir.path() / rec.query_path);
    const ImageGrid query_crop = crop(query_full, 112, 112, 32, 32);
    EXPECT_EQ(first.query.data, query_crop.data);
    const ScoreMap expected = clamp_unit(ssim_map(first.query, first.gt, SsimParams{}));
    EXPECT_LE(oracles::max_abs_diff(first.target, expected), 1e-9);

    // References arrive in view-index order, skipping the source view.
    const SceneEntry& scene = data.manifest.scenes[0];
    ASSERT_EQ(rec.source_view_index, 0);
    const ImageGrid ref_full = read_png(data.dir.path() / scene.view_paths[1]);
    EXPECT_EQ(first.refs[0].data, crop(ref_full, 112, 112, 32, 32).data);

    EvalOptions one_ref;
    one_ref.n_ref = 1;
    const std::vector<EvalItem> trimmed =
        build_eval_items(data.manifest, data.dir.path(), 4, 8, one_ref);
    EXPECT_EQ(trimmed[0].refs.size(), 1u);
    EXPECT_EQ(trimmed[0].refs[0].data, first.refs[0].data);
}

TEST(BuildEvalItems, RejectsBrokenRecords) {
    const EvalFixture& data = EvalFixture::get();

    DatasetManifest bad_source = data.manifest;
    bad_source.scenes[0].records[0].source_view_index = 7;
    EXPECT_THROW(build_eval_items(bad_source, data.dir.path(), 4, 8, EvalOptions{}),
                 ValidationError);

    // A query that does not match its source view's shape.
    oracles::TempDir scratch;
    Rng rng(41);
    write_png(oracles::random_image(rng, 64, 64, 3), data.dir.path() / "odd_query.png");
    DatasetManifest bad_shape = data.manifest;
    bad_shape.scenes[0].records[0].query_path = "odd_query.png";
    EXPECT_THROW(build_eval_items(bad_shape, data.dir.path(), 4, 8, EvalOptions{}),
                 ShapeError);

    EvalOptions no_refs;
    no_refs.n_ref = 0;
    EXPECT_THROW(build_eval_items(data.manifest, data.dir.path(), 4, 8, no_refs),
                 ValidationError);

    EXPECT_THROW(evaluate_scenes(make_oracle_scorer(), {}), ValidationError);
}

TEST(ScoreImage, TrimsLongListsAndRefusesShortOnes) {
    const EvalFixture& data = EvalFixture::get();
    CrossRefModel model(tiny_model());
    model.init_params(2);

    const EvalItem& item = data.items[0];
    std::vector<ImageGrid> three = item.refs;
    three.push_back(item.refs[0]);
    ASSERT_EQ(three.size(), 3u);

    oracles::WarnCapture capture;
    const auto [map, mean] = score_image(model, item.query, three, 2);
    EXPECT_TRUE(capture.any_contains("trimming"));
    const ScoreMap direct = model.forward(item.query, item.refs).map;
    EXPECT_EQ(map.data, direct.data);  // trimmed tail == first two references
    EXPECT_EQ(mean, mean_score(map));

    try {
        score_image(model, item.query, {item.refs[0]}, 2);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("not padded"), std::string::npos);
    }

    // Without an expectation every reference is used as given.
    const auto [all_map, all_mean] = score_image(model, item.query, three);
    EXPECT_EQ(all_map.data, model.forward(item.query, three).map.data);
    EXPECT_GT(all_mean, 0.0);
}

TEST(EvaluateScenes, OracleScorerGivesPerfectCorrelationEndToEnd) {
    const EvalFixture& data = EvalFixture::get();
    const EvalReport report = evaluate_scenes(make_oracle_scorer(), data.items);

    ASSERT_EQ(report.scenes.size(), 2u);
    for (const SceneResult& scene : report.scenes) {
        ASSERT_EQ(scene.per_image.size(), 3u);
        double sum_cross = 0.0, sum_ssim = 0.0;
        for (const PerImageRow& row : scene.per_image) {
            EXPECT_EQ(row.cross, row.ssim);  // the oracle echoes the target
            EXPECT_TRUE(std::isfinite(row.psnr));
            sum_cross += row.cross;
            sum_ssim += row.ssim;
        }
        EXPECT_DOUBLE_EQ(scene.mean_cross, sum_cross / 3.0);
        EXPECT_DOUBLE_EQ(scene.mean_ssim, sum_ssim / 3.0);
        EXPECT_NEAR(scene.pearson_images, 1.0, 1e-12);
    }
    EXPECT_NEAR(report.pearson_cross_vs_ssim, 1.0, 1e-12);
    EXPECT_NEAR(report.mean_scene_pearson, 1.0, 1e-12);
}

TEST(EvaluateScenes, ConstantScorerIsExcludedWithWarnings) {
    const EvalFixture& data = EvalFixture::get();
    const Scorer flat = [](const EvalItem& item) {
        return ScoreMap(item.target.height, item.target.width, 0.5f);
    };

    oracles::WarnCapture capture;
    const EvalReport report = evaluate_scenes(flat, data.items);
    for (const SceneResult& scene : report.scenes) {
        EXPECT_TRUE(std::isnan(scene.pearson_images));
        EXPECT_DOUBLE_EQ(scene.mean_cross, 0.5);
    }
    EXPECT_TRUE(std::isnan(report.pearson_cross_vs_ssim));
    EXPECT_TRUE(std::isnan(report.spearman_rank_corr));
    EXPECT_TRUE(std::isnan(report.mean_scene_pearson));
    EXPECT_TRUE(capture.any_contains("excluded from aggregates"));
    EXPECT_TRUE(capture.any_contains("undefined across scenes"));

    EXPECT_THROW(rank_scenes(report), ValidationError);
}

TEST(EvaluateScenes, PartiallyDefinedScenesKeepPartialAggregates) {
    const EvalFixture& data = EvalFixture::get();
    const Scorer mixed = [](const EvalItem& item) {
        if (item.scene_id == "scene_000") {
            return ScoreMap(item.target.height, item.target.width, 0.5f);
        }
        return item.target;
    };

    oracles::WarnCapture capture;
    const EvalReport report = evaluate_scenes(mixed, data.items);
    EXPECT_TRUE(std::isnan(report.scenes[0].pearson_images));
    EXPECT_NEAR(report.scenes[1].pearson_images, 1.0, 1e-12);
    EXPECT_NEAR(report.mean_scene_pearson, 1.0, 1e-12);
    // One usable scene cannot support a cross-scene correlation.
    EXPECT_TRUE(std::isnan(report.pearson_cross_vs_ssim));
}

TEST(EvaluateScenes, WritesMapsAndValidatesScorerShape) {
    const EvalFixture& data = EvalFixture::get();
    oracles::TempDir maps;
    EvalOptions opts;
    opts.maps_dir = maps.path();

    const EvalReport report = evaluate_scenes(make_oracle_scorer(), data.items, opts);
    const PerImageRow& row = report.scenes[0].per_image[0];
    EXPECT_EQ(row.map_path, "scene_000/r000.pfm");
    const ScoreMap reloaded = read_pfm(maps.path() / row.map_path);
    EXPECT_EQ(reloaded.data, data.items[0].target.data);

    const Scorer wrong_shape = [](const EvalItem& item) {
        return ScoreMap(item.target.height / 2, item.target.width, 0.5f);
    };
    EXPECT_THROW(evaluate_scenes(wrong_shape, data.items), ShapeError);
}

TEST(EvalReportJson, RoundTripsIncludingUndefinedEntries) {
    const EvalFixture& data = EvalFixture::get();
    const Scorer flat = [](const EvalItem& item) {
        return ScoreMap(item.target.height, item.target.width, 0.5f);
    };
    oracles::WarnCapture mute;
    EvalReport original = evaluate_scenes(flat, data.items);
    original.config = {{"n_ref", 2}};
    original.checkpoint_id = "ckpt_000004";

    const nlohmann::json encoded = original;
    EXPECT_TRUE(encoded.at("pearson_cross_vs_ssim").is_null());

    const EvalReport decoded = encoded.get<EvalReport>();
    EXPECT_EQ(nlohmann::json(decoded), encoded);
    EXPECT_TRUE(std::isnan(decoded.mean_scene_pearson));
    EXPECT_EQ(decoded.checkpoint_id, "ckpt_000004");
}

TEST(RankScenes, DenseRanksWithTiesAndMinimumSceneCount) {
    EvalReport report;
    const char* ids[] = {"a", "b", "c", "d"};
    const double cross[] = {0.9, 0.7, 0.7, 0.3};
    const double ssim[] = {0.8, 0.6, 0.5, 0.2};
    for (int i = 0; i < 4; ++i) {
        SceneResult s;
        s.scene_id = ids[i];
        s.mean_cross = cross[i];
        s.mean_ssim = ssim[i];
        s.pearson_images = 1.0;
        report.scenes.push_back(std::move(s));
    }

    const RankTable table = rank_scenes(report);
    ASSERT_EQ(table.rows.size(), 4u);
    EXPECT_EQ(table.rows[0].scene_id, "a");
    EXPECT_EQ(table.rows[0].rank_cross, 0);
    // Tied cross means share a dense rank; the lone remaining value follows.
    EXPECT_EQ(table.rows[1].rank_cross, 1);
    EXPECT_EQ(table.rows[2].rank_cross, 1);
    EXPECT_EQ(table.rows[3].rank_cross, 2);
    EXPECT_EQ(table.rows[3].scene_id, "d");
    EXPECT_EQ(table.rows[3].rank_ssim, 3);

    report.scenes.resize(2);
    EXPECT_THROW(rank_scenes(report), ValidationError);
}

TEST(RankScenes, ReproducesThePublishedSceneTable) {
    const EvalReport report = report_from_scene_table();
    const RankTable table = rank_scenes(report);

    // Rank correlation of the two score columns, ties averaged.
    EXPECT_NEAR(table.spearman, 0.857615894039735, 1e-12);
    EXPECT_NEAR(table.spearman, 0.85, 0.01);

    // The orderings agree at both ends: the same scene tops both columns and
    // the same scene sits at the bottom of both.
    EXPECT_EQ(table.rows.front().scene_id, "426");
    EXPECT_EQ(table.rows.front().rank_ssim, 0);
    EXPECT_EQ(table.rows.back().scene_id, "4");
    EXPECT_EQ(table.rows.back().rank_cross, 11);  // dense: ties compress ranks
    EXPECT_EQ(table.rows.back().rank_ssim, 11);

    // The plain linear correlation over the same columns.
    std::vector<double> cross, ssim;
    for (const SceneTableRow& row : kSceneTable) {
        cross.push_back(row.cross);
        ssim.push_back(row.ssim);
    }
    EXPECT_NEAR(pearson(cross, ssim), 0.850581839370228, 1e-12);
}

TEST(CompareModels, TiesAndPublishedOrderings) {
    const EvalFixture& data = EvalFixture::get();

    const ComparisonTable self =
        compare_models(make_oracle_scorer(), make_oracle_scorer(), data.items);
    for (const auto& [metric, winner] : self.ordering) EXPECT_EQ(winner, "tie");

    // Against a flat scorer the oracle wins on pixel error, while the
    // item-derived columns tie by construction.
    const Scorer flat = [](const EvalItem& item) {
        return ScoreMap(item.target.height, item.target.width, 0.5f);
    };
    const ComparisonTable table =
        compare_models(make_oracle_scorer(), flat, data.items, "oracle", "flat");
    EXPECT_EQ(table.a.label, "oracle");
    EXPECT_DOUBLE_EQ(table.a.mae_cross_vs_ssim, 0.0);
    EXPECT_GT(table.b.mae_cross_vs_ssim, 0.0);
    EXPECT_EQ(table.ordering.at("mae_cross_vs_ssim"), "a");
    EXPECT_EQ(table.ordering.at("ssim"), "tie");
    EXPECT_EQ(table.ordering.at("psnr"), "tie");

    // Published two-system comparison: the stronger renderer leads on every
    // reported metric.
    ComparisonRow ibrnet;
    ibrnet.mean_ssim = 0.44;
    ibrnet.mean_cross = 0.71;
    ibrnet.mean_psnr = 18.51;
    ComparisonRow pixelnerf;
    pixelnerf.mean_ssim = 0.26;
    pixelnerf.mean_cross = 0.40;
    pixelnerf.mean_psnr = 9.17;
    const auto ordering = comparison_orderings(ibrnet, pixelnerf);
    EXPECT_EQ(ordering.at("ssim"), "a");
    EXPECT_EQ(ordering.at("cross"), "a");
    EXPECT_EQ(ordering.at("psnr"), "a");
}

TEST(AblateReferences, ZeroedReferencesEraseSceneIdentity) {
    const EvalFixture& data = EvalFixture::get();
    CrossRefModel model(tiny_model());
    model.init_params(6);

    const EvalItem& scene0 = data.items[0];
    const EvalItem& scene1 = data.items[3];
    ASSERT_NE(scene0.scene_id, scene1.scene_id);

    const AblationResult a = ablate_references(model, scene0.query, scene0.refs);
    const AblationResult b = ablate_references(model, scene0.query, scene1.refs);

    // Real references change the map; zeroed ones cannot say which scene they
    // came from, so the off-maps coincide.
    EXPECT_GT(a.l1_delta, 0.0);
    EXPECT_LE(oracles::max_abs_diff(a.map_off, b.map_off), 1e-6);
    EXPECT_DOUBLE_EQ(a.mean_off, mean_score(a.map_off));
}

TEST(ExportAttention, MassLayoutFilesAndPermutationEquivariance) {
    CrossRefModel model(tiny_model());
    model.init_params(8);
    Rng rng(61);
    const ImageGrid query = oracles::random_image(rng, 32, 32, 3);
    std::vector<ImageGrid> refs;
    refs.push_back(oracles::random_image(rng, 32, 32, 3));
    refs.push_back(oracles::random_image(rng, 16, 32, 3));

    oracles::TempDir out;
    const AttentionExport exported =
        export_attention(model, query, refs, 0, 1, out.path());
    ASSERT_EQ(exported.heatmaps.size(), 2u);
    EXPECT_EQ(exported.heatmaps[0].height, 8);
    EXPECT_EQ(exported.heatmaps[0].width, 8);
    EXPECT_EQ(exported.heatmaps[1].height, 4);
    EXPECT_EQ(exported.heatmaps[1].width, 8);
    EXPECT_NEAR(exported.total_mass, 1.0, 1e-6);

    ASSERT_EQ(exported.files.size(), 2u);
    EXPECT_EQ(read_pfm(out.path() / "0.pfm").data, exported.heatmaps[0].data);
    EXPECT_EQ(read_pfm(out.path() / "1.pfm").data, exported.heatmaps[1].data);
    const nlohmann::json index =
        nlohmann::json::parse(oracles::read_text_file(out.path() / "index.json"));
    EXPECT_EQ(index["patch"], nlohmann::json({0, 1}));
    EXPECT_EQ(index["files"].size(), 2u);

    // Swapping the reference list swaps the per-reference heatmaps.
    const AttentionExport swapped =
        export_attention(model, query, {refs[1], refs[0]}, 0, 1);
    EXPECT_LE(oracles::max_abs_diff(swapped.heatmaps[0], exported.heatmaps[1]), 1e-6);
    EXPECT_LE(oracles::max_abs_diff(swapped.heatmaps[1], exported.heatmaps[0]), 1e-6);

    EXPECT_THROW(export_attention(model, query, refs, 8, 0), ValidationError);
    EXPECT_THROW(export_attention(model, query, refs, 0, -1), ValidationError);
}

TEST(Colormap, StopsAndColorizedOverlay) {
    const auto blue = score_to_rgb(0.0f);
    EXPECT_EQ(blue, (std::array<float, 3>{0.0f, 0.0f, 1.0f}));
    const auto red = score_to_rgb(1.0f);
    EXPECT_EQ(red, (std::array<float, 3>{1.0f, 0.0f, 0.0f}));
    const auto green = score_to_rgb(1.0f / 3.0f);
    EXPECT_NEAR(green[0], 0.0f, 1e-6);
    EXPECT_NEAR(green[1], 1.0f, 1e-6);
    EXPECT_NEAR(green[2], 0.0f, 1e-6);
    const auto orange = score_to_rgb(2.0f / 3.0f);
    EXPECT_NEAR(orange[0], 1.0f, 1e-6);
    EXPECT_NEAR(orange[1], 165.0f / 255.0f, 1e-6);
    // Halfway between blue and green.
    const auto teal = score_to_rgb(1.0f / 6.0f);
    EXPECT_NEAR(teal[1], 0.5f, 1e-6);
    EXPECT_NEAR(teal[2], 0.5f, 1e-6);
    // Out-of-range scores clamp to the endpoints.
    EXPECT_EQ(score_to_rgb(-2.0f), blue);
    EXPECT_EQ(score_to_rgb(3.0f), red);

    ScoreMap map(2, 3, 0.0f);
    map.at(1, 2) = 1.0f;
    const ImageGrid img = colorize(map);
    EXPECT_EQ(img.channels, 3);
    EXPECT_EQ(img.at(0, 0, 2), 1.0f);  // blue corner
    EXPECT_EQ(img.at(1, 2, 0), 1.0f);  // red corner
}

TEST(RenderReport, WritesJsonCsvAndOverlays) {
    const EvalFixture& data = EvalFixture::get();
    oracles::TempDir maps, out;
    EvalOptions opts;
    opts.maps_dir = maps.path();
    EvalReport report = evaluate_scenes(make_oracle_scorer(), data.items, opts);

    render_report(report, out.path(), maps.path());

    const nlohmann::json encoded =
        nlohmann::json::parse(oracles::read_text_file(out.path() / "report.json"));
    EXPECT_EQ(nlohmann::json(encoded.get<EvalReport>()), nlohmann::json(report));

    const std::string csv = oracles::read_text_file(out.path() / "report.csv");
    ASSERT_EQ(csv.rfind("scene_id,image_id,ssim,cross,psnr\n", 0), 0u);
    int lines = 0, mean_rows = 0;
    for (std::size_t i = 0; i < csv.size(); ++i) lines += csv[i] == '\n';
    for (std::size_t pos = csv.find(",mean,"); pos != std::string::npos;
         pos = csv.find(",mean,", pos + 1)) {
        ++mean_rows;
    }
    EXPECT_EQ(lines, 1 + 6 + 2);  // header + per-image rows + scene summaries
    EXPECT_EQ(mean_rows, 2);

    EXPECT_TRUE(std::filesystem::exists(out.path() / "overlays" / "scene_000_r000.png"));
    const ImageGrid overlay = read_png(out.path() / "overlays" / "scene_001_r002.png");
    EXPECT_EQ(overlay.channels, 3);
    EXPECT_EQ(overlay.height, 32);

    // A dangling map path draws a warning instead of an overlay.
    oracles::TempDir out2;
    report.scenes[0].per_image[0].map_path = "scene_000/vanished.pfm";
    oracles::WarnCapture capture;
    render_report(report, out2.path(), maps.path());
    EXPECT_TRUE(capture.any_contains("overlay skipped"));
    EXPECT_FALSE(
        std::filesystem::exists(out2.path() / "overlays" / "scene_000_r000.png"));

    // Refusing to write under a regular file is an explicit error.
    std::ofstream block(out.path() / "blocker");
    block << "x";
    block.close();
    EXPECT_THROW(render_report(report, out.path() / "blocker" / "sub", {}), IoError);
}
