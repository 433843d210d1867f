#include "criqa/train/trainer.hpp"

#include <gtest/gtest.h>

#include <set>
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

TrainConfig tiny_train() {
    TrainConfig cfg;
    cfg.crop_size = 32;
    cfg.n_ref = 2;
    cfg.batch_size = 2;
    cfg.total_steps = 4;
    cfg.checkpoint_every = 2;
    cfg.seed = 0;
    return cfg;
}

/// One small generated dataset shared by every test in this file.
struct DataFixture {
    oracles::TempDir dir;
    DatasetManifest manifest;

    DataFixture() {
        DatagenConfig cfg;
        cfg.n_scenes = 1;
        cfg.records_per_scene = 2;
        cfg.n_views = 3;
        cfg.base_height = 256;
        cfg.base_width = 256;
        cfg.kinds = {DistortionKind::additive_noise};
        cfg.severities = {0.5};
        cfg.global_seed = 11;
        manifest = generate_dataset(cfg, dir.path());
    }

    static const DataFixture& get() {
        static DataFixture fixture;
        return fixture;
    }
};

ScoreMap constant_map(int h, int w, float v) { return ScoreMap(h, w, v); }

}  // namespace

TEST(TrainConfig, ValidatesAndRoundTrips) {
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate(14));  // 140 is a multiple of 14
    EXPECT_THROW(cfg.validate(16), ConfigError);

    TrainConfig bad = tiny_train();
    bad.crop_size = 30;
    EXPECT_THROW(bad.validate(4), ConfigError);
    bad = tiny_train();
    bad.n_ref = 0;
    EXPECT_THROW(bad.validate(4), ConfigError);
    bad = tiny_train();
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(4), ConfigError);
    bad = tiny_train();
    bad.learning_rate = 0.0;
    EXPECT_THROW(bad.validate(4), ConfigError);
    bad = tiny_train();
    bad.weight_decay = -0.1;
    EXPECT_THROW(bad.validate(4), ConfigError);
    bad = tiny_train();
    bad.total_steps = 0;
    EXPECT_THROW(bad.validate(4), ConfigError);
    bad = tiny_train();
    bad.checkpoint_every = 0;
    EXPECT_THROW(bad.validate(4), ConfigError);

    TrainConfig original = tiny_train();
    original.log_timing = true;
    original.learning_rate = 1e-3;
    TrainConfig restored = nlohmann::json(original).get<TrainConfig>();
    EXPECT_EQ(nlohmann::json(original), nlohmann::json(restored));
}

TEST(L1Loss, PinsValuesAndRejectsMismatch) {
    const ScoreMap a = constant_map(4, 4, 1.0f);
    const ScoreMap b = constant_map(4, 4, 0.0f);
    EXPECT_EQ(l1_loss({a}, {a}), 0.0);
    EXPECT_EQ(l1_loss({a}, {b}), 1.0);
    EXPECT_NEAR(l1_loss({constant_map(4, 4, 0.8f)}, {constant_map(4, 4, 0.5f)}), 0.3,
                1e-6);

    // Batch mean weights every pixel equally across entries of equal size.
    EXPECT_NEAR(l1_loss({a, constant_map(4, 4, 0.5f)}, {b, b}), 0.75, 1e-6);

    EXPECT_THROW(l1_loss({a}, {constant_map(4, 5, 1.0f)}), ShapeError);
    EXPECT_THROW(l1_loss({a, a}, {a}), ShapeError);
    EXPECT_THROW(l1_loss({}, {}), ShapeError);
}

TEST(ValidateForTraining, RejectsUnderspecifiedManifests) {
    const TrainConfig cfg = tiny_train();

    DatasetManifest empty;
    EXPECT_THROW(validate_for_training(empty, cfg), ValidationError);

    const DatasetManifest& good = DataFixture::get().manifest;
    EXPECT_NO_THROW(validate_for_training(good, cfg));

    TrainConfig greedy = cfg;
    greedy.n_ref = 3;  // needs 4 views, the fixture has 3
    EXPECT_THROW(validate_for_training(good, greedy), ValidationError);

    DatasetManifest no_records = good;
    no_records.scenes[0].records.clear();
    EXPECT_THROW(validate_for_training(no_records, cfg), ValidationError);
}

TEST(SampleBatch, IsDeterministicPerStepSeed) {
    const DataFixture& data = DataFixture::get();
    const TrainConfig cfg = tiny_train();
    ImageCache images(data.dir.path());

    Rng rng_a(derive_seed(cfg.seed, "batch", 5));
    Rng rng_b(derive_seed(cfg.seed, "batch", 5));
    const Batch a = sample_batch(data.manifest, images, cfg, rng_a);
    const Batch b = sample_batch(data.manifest, images, cfg, rng_b);
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        EXPECT_EQ(a.entries[i].record_id, b.entries[i].record_id);
        EXPECT_EQ(a.entries[i].query_y, b.entries[i].query_y);
        EXPECT_EQ(a.entries[i].query_x, b.entries[i].query_x);
        EXPECT_EQ(a.entries[i].ref_view_indices, b.entries[i].ref_view_indices);
        EXPECT_EQ(a.entries[i].ref_offsets, b.entries[i].ref_offsets);
        EXPECT_EQ(a.entries[i].query.data, b.entries[i].query.data);
        EXPECT_EQ(a.entries[i].target.data, b.entries[i].target.data);
    }

    Rng rng_c(derive_seed(cfg.seed, "batch", 6));
    const Batch c = sample_batch(data.manifest, images, cfg, rng_c);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        if (a.entries[i].query_y != c.entries[i].query_y ||
            a.entries[i].query_x != c.entries[i].query_x ||
            a.entries[i].record_index != c.entries[i].record_index ||
            a.entries[i].ref_offsets != c.entries[i].ref_offsets) {
            any_difference = true;
        }
    }
    EXPECT_TRUE(any_difference);
}

TEST(SampleBatch, NeverSamplesTheSourceViewAsReference) {
    const DataFixture& data = DataFixture::get();
    const TrainConfig cfg = tiny_train();
    ImageCache images(data.dir.path());

    for (int step = 1; step <= 30; ++step) {
        Rng rng(derive_seed(cfg.seed, "batch", step));
        const Batch batch = sample_batch(data.manifest, images, cfg, rng);
        for (const BatchEntry& e : batch.entries) {
            ASSERT_EQ(static_cast<int>(e.ref_view_indices.size()), cfg.n_ref);
            std::set<int> distinct(e.ref_view_indices.begin(), e.ref_view_indices.end());
            EXPECT_EQ(distinct.size(), e.ref_view_indices.size());
            EXPECT_EQ(distinct.count(e.source_view_index), 0u);
            // With n_ref + 1 views the reference set is forced: every view
            // except the query's source.
            std::set<int> expected;
            for (int v = 0; v < 3; ++v) {
                if (v != e.source_view_index) expected.insert(v);
            }
            EXPECT_EQ(distinct, expected);
        }
    }
}

TEST(SampleBatch, CropsAlignWithRecordedProvenance) {
    const DataFixture& data = DataFixture::get();
    const TrainConfig cfg = tiny_train();
    ImageCache images(data.dir.path());

    Rng rng(derive_seed(cfg.seed, "batch", 9));
    const Batch batch = sample_batch(data.manifest, images, cfg, rng);
    for (const BatchEntry& e : batch.entries) {
        const SceneEntry& scene = data.manifest.scenes[e.scene_index];
        const RecordEntry& rec = scene.records[e.record_index];

        const ImageGrid query_full = read_png(data.dir.path() / rec.query_path);
        const ImageGrid query_crop =
            crop(query_full, e.query_y, e.query_x, cfg.crop_size, cfg.crop_size);
        EXPECT_EQ(e.query.data, query_crop.data);

        const ImageGrid source_full =
            read_png(data.dir.path() / scene.view_paths[rec.source_view_index]);
        const ImageGrid source_crop =
            crop(source_full, e.query_y, e.query_x, cfg.crop_size, cfg.crop_size);
        const ScoreMap expected = clamp_unit(ssim_map(query_crop, source_crop, cfg.ssim));
        EXPECT_LE(oracles::max_abs_diff(e.target, expected), 1e-9);

        ASSERT_EQ(e.refs.size(), e.ref_view_indices.size());
        for (std::size_t k = 0; k < e.refs.size(); ++k) {
            const ImageGrid ref_full =
                read_png(data.dir.path() / scene.view_paths[e.ref_view_indices[k]]);
            const ImageGrid ref_crop = crop(ref_full, e.ref_offsets[k].first,
                                            e.ref_offsets[k].second, cfg.crop_size,
                                            cfg.crop_size);
            EXPECT_EQ(e.refs[k].data, ref_crop.data);
        }
    }
}

namespace {

/// Scene with one croppable record and one record whose query is too small.
struct MixedSizeFixture {
    oracles::TempDir dir;
    DatasetManifest manifest;

    MixedSizeFixture() {
        namespace fs = std::filesystem;
        fs::create_directories(dir.path() / "hand");
        Rng rng(91);
        SceneEntry scene;
        scene.scene_id = "hand";
        for (int v = 0; v < 3; ++v) {
            const std::string rel = "hand/v" + std::to_string(v) + ".png";
            write_png(oracles::random_image(rng, 64, 64, 3), dir.path() / rel);
            scene.view_paths.push_back(rel);
        }
        scene.records.push_back(make_record(rng, "hand/q_big.png", 64, 0));
        scene.records.push_back(make_record(rng, "hand/q_small.png", 32, 1));
        manifest.scenes.push_back(std::move(scene));
    }

    RecordEntry make_record(Rng& rng, const std::string& rel, int side, int source) {
        write_png(oracles::random_image(rng, side, side, 3), dir.path() / rel);
        RecordEntry rec;
        rec.query_path = rel;
        rec.target_path = rel;  // unused by the sampler, which recomputes targets
        rec.source_view_index = source;
        return rec;
    }
};

}  // namespace

TEST(SampleBatch, SkipsTooSmallRecordsWithWarning) {
    MixedSizeFixture data;
    TrainConfig cfg = tiny_train();
    cfg.crop_size = 48;
    cfg.batch_size = 6;
    ImageCache images(data.dir.path());

    oracles::WarnCapture capture;
    Rng rng(derive_seed(3, "batch", 1));
    const Batch batch = sample_batch(data.manifest, images, cfg, rng);
    for (const BatchEntry& e : batch.entries) EXPECT_EQ(e.record_index, 0);
    EXPECT_TRUE(capture.any_contains("smaller than crop"));
}

TEST(SampleBatch, GivesUpWhenNothingIsCroppable) {
    MixedSizeFixture data;
    DatasetManifest small_only = data.manifest;
    small_only.scenes[0].records.erase(small_only.scenes[0].records.begin());

    TrainConfig cfg = tiny_train();
    cfg.crop_size = 48;
    ImageCache images(data.dir.path());

    oracles::WarnCapture capture;
    Rng rng(derive_seed(3, "batch", 1));
    try {
        sample_batch(small_only, images, cfg, rng);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("100 draws"), std::string::npos);
    }
}

TEST(TrainStep, ZeroLearningRateLeavesParamsBitExact) {
    const DataFixture& data = DataFixture::get();
    TrainConfig cfg = tiny_train();
    cfg.learning_rate = 0.0;  // train_step's documented null-update case
    cfg.weight_decay = 0.0;
    ImageCache images(data.dir.path());

    CrossRefModel model(tiny_model());
    model.init_params(3);
    std::vector<MatX<float>> before;
    for (const Param<float>* p : model.params()) before.push_back(p->value);

    AdamW<float> optim;
    optim.init(model.trainable_params());
    Rng rng(derive_seed(cfg.seed, "batch", 1));
    const Batch batch = sample_batch(data.manifest, images, cfg, rng);
    const double loss = train_step(model, batch, optim, cfg);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_GT(loss, 0.0);

    const auto params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_EQ((params[i]->value - before[i]).cwiseAbs().maxCoeff(), 0.0f)
            << params[i]->name;
    }
}

TEST(TrainStep, SingleUpdateDescendsOnTheSameBatch) {
    const DataFixture& data = DataFixture::get();
    TrainConfig cfg = tiny_train();
    cfg.weight_decay = 0.0;
    ImageCache images(data.dir.path());

    int descended = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        CrossRefModel model(tiny_model());
        model.init_params(seed);
        AdamW<float> optim;
        optim.init(model.trainable_params());

        Rng rng(derive_seed(seed, "batch", 1));
        const Batch batch = sample_batch(data.manifest, images, cfg, rng);
        const double before = train_step(model, batch, optim, cfg);

        std::vector<ScoreMap> pred, target;
        for (const BatchEntry& e : batch.entries) {
            pred.push_back(model.forward(e.query, e.refs).map);
            target.push_back(e.target);
        }
        if (l1_loss(pred, target) < before) ++descended;
    }
    EXPECT_GE(descended, 19);
}

TEST(TrainStep, NaNTargetNamesTheRecordAndSkipsTheUpdate) {
    Rng rng(17);
    BatchEntry entry;
    entry.query = oracles::random_image(rng, 32, 32, 3);
    entry.refs.push_back(oracles::random_image(rng, 32, 32, 3));
    entry.refs.push_back(oracles::random_image(rng, 32, 32, 3));
    entry.target = ScoreMap(32, 32, 0.5f);
    entry.target.data[0] = std::numeric_limits<float>::quiet_NaN();
    entry.record_id = "scene_000/r0";
    Batch batch;
    batch.entries.push_back(std::move(entry));

    CrossRefModel model(tiny_model());
    model.init_params(5);
    std::vector<MatX<float>> before;
    for (const Param<float>* p : model.params()) before.push_back(p->value);
    AdamW<float> optim;
    optim.init(model.trainable_params());

    try {
        train_step(model, batch, optim, tiny_train());
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("scene_000/r0"), std::string::npos);
    }
    const auto params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        EXPECT_EQ((params[i]->value - before[i]).cwiseAbs().maxCoeff(), 0.0f);
    }

    EXPECT_THROW(train_step(model, Batch{}, optim, tiny_train()), TrainingError);
}

TEST(Train, WritesLogAndCheckpointsAndRerunsIdentically) {
    const DataFixture& data = DataFixture::get();
    const TrainConfig cfg = tiny_train();
    oracles::TempDir out1, out2;

    const TrainResult r1 =
        train(data.manifest, data.dir.path(), tiny_model(), cfg, out1.path());
    EXPECT_EQ(r1.steps_run, 4);
    EXPECT_EQ(r1.final_checkpoint, out1.path() / "ckpt_000004");
    EXPECT_TRUE(std::filesystem::exists(out1.path() / "ckpt_000002" / "manifest.json"));
    EXPECT_TRUE(std::filesystem::exists(out1.path() / "ckpt_000004" / "params.bin"));

    const std::string log = oracles::read_text_file(out1.path() / "loss_log.csv");
    ASSERT_EQ(log.rfind("step,loss,lr,wall_ms\n", 0), 0u);
    int lines = 0;
    for (char ch : log) lines += ch == '\n';
    EXPECT_EQ(lines, 5);  // header + one row per step
    EXPECT_NE(log.find("\n1,"), std::string::npos);
    EXPECT_NE(log.find(",0\n"), std::string::npos);  // wall_ms stays 0 by default

    // Checkpoints carry the batch RNG scheme and the training config.
    const LoadedCheckpoint loaded = load_checkpoint<float>(r1.final_checkpoint);
    EXPECT_EQ(loaded.step, 4);
    ASSERT_TRUE(loaded.manifest.contains("rng"));
    EXPECT_EQ(loaded.manifest["rng"]["scheme"], "per-step-derived");
    ASSERT_TRUE(loaded.manifest.contains("train"));
    EXPECT_EQ(loaded.manifest["train"].get<TrainConfig>().total_steps, cfg.total_steps);

    const TrainResult r2 =
        train(data.manifest, data.dir.path(), tiny_model(), cfg, out2.path());
    EXPECT_EQ(r2.final_loss, r1.final_loss);
    EXPECT_EQ(oracles::read_text_file(out2.path() / "loss_log.csv"), log);
}

TEST(Train, ResumeReplaysTheUninterruptedTrajectory) {
    const DataFixture& data = DataFixture::get();
    oracles::TempDir straight_dir, resumed_dir;

    TrainConfig full = tiny_train();
    full.total_steps = 6;
    full.checkpoint_every = 2;
    train(data.manifest, data.dir.path(), tiny_model(), full, straight_dir.path());

    TrainConfig head = full;
    head.total_steps = 3;
    head.checkpoint_every = 3;
    train(data.manifest, data.dir.path(), tiny_model(), head, resumed_dir.path());
    ASSERT_TRUE(std::filesystem::exists(resumed_dir.path() / "ckpt_000003"));

    TrainConfig tail = full;
    tail.checkpoint_every = 3;
    const TrainResult resumed =
        train(data.manifest, data.dir.path(), tiny_model(), tail, resumed_dir.path());
    EXPECT_EQ(resumed.steps_run, 3);
    EXPECT_EQ(resumed.final_checkpoint, resumed_dir.path() / "ckpt_000006");

    // Identical loss trajectory and identical final weights, byte for byte.
    EXPECT_EQ(oracles::read_text_file(resumed_dir.path() / "loss_log.csv"),
              oracles::read_text_file(straight_dir.path() / "loss_log.csv"));
    EXPECT_EQ(oracles::read_text_file(resumed_dir.path() / "ckpt_000006" / "params.bin"),
              oracles::read_text_file(straight_dir.path() / "ckpt_000006" / "params.bin"));

    // A finished run is a no-op.
    const TrainResult done =
        train(data.manifest, data.dir.path(), tiny_model(), tail, resumed_dir.path());
    EXPECT_EQ(done.steps_run, 0);
    EXPECT_EQ(done.final_checkpoint, resumed_dir.path() / "ckpt_000006");
}

TEST(Train, RejectsCropNotDivisibleByPatch) {
    const DataFixture& data = DataFixture::get();
    TrainConfig cfg = tiny_train();
    cfg.crop_size = 30;
    oracles::TempDir out;
    EXPECT_THROW(train(data.manifest, data.dir.path(), tiny_model(), cfg, out.path()),
                 ConfigError);
}
