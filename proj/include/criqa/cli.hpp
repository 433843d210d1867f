#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "criqa/datagen/dataset.hpp"
#include "criqa/error.hpp"
#include "criqa/eval/evaluator.hpp"
#include "criqa/model/checkpoint.hpp"
#include "criqa/train/trainer.hpp"

namespace criqa::cli {

/// Parsed command line before dispatch. Every run is reproducible from this
/// plus the files it names.
struct CliConfig {
    std::string subcommand;
    std::string config_path;            // optional JSON document
    std::vector<std::string> overrides; // dotted key=value pairs
    int verbosity = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int workers = 1;
};

namespace detail {

/// Overlays a user config document onto the schema defaults. Keys absent
/// from the schema are errors: silent typos in config files cost real runs.
inline void merge_config(nlohmann::json& schema, const nlohmann::json& overlay,
                         const std::string& prefix) {
    if (!overlay.is_object()) {
        throw ConfigError("config: expected an object at '" +
                          (prefix.empty() ? "<root>" : prefix) + "'");
    }
    for (const auto& [key, value] : overlay.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!schema.contains(key)) {
            throw ConfigError("config: unknown key '" + path + "'");
        }
        if (schema[key].is_object() && value.is_object()) {
            merge_config(schema[key], value, path);
        } else {
            schema[key] = value;
        }
    }
}

/// Applies one `dotted.path=value` override. The path must name an existing
/// schema key; the value is parsed as JSON unless the target is a string.
inline void apply_override(nlohmann::json& config, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string dotted = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json* node = &config;
    std::size_t start = 0;
    std::string walked;
    while (true) {
        const std::size_t dot = dotted.find('.', start);
        const std::string key = dotted.substr(start, dot - start);
        walked = walked.empty() ? key : walked + "." + key;
        if (!node->is_object() || !node->contains(key)) {
            throw ConfigError("override names unknown config key '" + walked + "'");
        }
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }

    if (node->is_string()) {
        *node = raw;
        return;
    }
    const nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        throw ConfigError("override '" + dotted + "': cannot parse value '" + raw + "'");
    }
    *node = value;
}

/// Resolves the effective config: schema defaults <- config file <- --set
/// overrides, in that order.
inline nlohmann::json resolve_config(nlohmann::json schema, const CliConfig& cli) {
    if (!cli.config_path.empty()) {
        std::ifstream in(cli.config_path);
        if (!in) throw IoError("cannot open config file " + cli.config_path);
        nlohmann::json overlay;
        try {
            in >> overlay;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + cli.config_path + ": " + e.what());
        }
        merge_config(schema, overlay, "");
    }
    for (const std::string& assignment : cli.overrides) {
        apply_override(schema, assignment);
    }
    return schema;
}

/// Every run announces what it is about to do, machine-parsably.
inline void log_resolved(const CliConfig& cli, const nlohmann::json& config) {
    std::cout << "resolved_config " << config.dump() << "\n";
    std::cout << "seed " << cli.seed << "\n";
}

template <class T>
T config_as(const nlohmann::json& j) {
    try {
        return j.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

/// Accepts either a checkpoint directory itself or a training output
/// directory holding ckpt_* subdirectories (latest wins).
inline std::filesystem::path resolve_checkpoint_dir(const std::filesystem::path& given) {
    namespace fs = std::filesystem;
    if (fs::exists(given / "manifest.json")) return given;
    const fs::path latest = train_detail::find_latest_checkpoint(given);
    if (latest.empty()) {
        throw IoError("no checkpoint found at " + given.string() +
                      " (expected manifest.json or ckpt_* subdirectories)");
    }
    return latest;
}

inline std::string checkpoint_id_of(const std::filesystem::path& dir) {
    std::filesystem::path p = dir;
    if (p.filename().empty()) p = p.parent_path();
    return p.filename().string();
}

/// Center-crops an image to dimensions the model accepts, warning when
/// pixels are dropped.
inline ImageGrid fit_to_model(const ImageGrid& img, const ModelConfig& cfg,
                              const std::string& name) {
    const CropRect rect = eval_detail::model_crop_rect(img.height, img.width,
                                                       cfg.patch_size, cfg.max_grid);
    if (rect.height == img.height && rect.width == img.width) return img;
    warn(name + ": center-cropped " + std::to_string(img.width) + "x" +
         std::to_string(img.height) + " to " + std::to_string(rect.width) + "x" +
         std::to_string(rect.height) + " (patch multiple)");
    return crop(img, rect.y0, rect.x0, rect.height, rect.width);
}

/// Finds one eval item by scene/image id; empty selectors mean "first".
inline const EvalItem& select_item(const std::vector<EvalItem>& items,
                                   const std::string& scene_id,
                                   const std::string& image_id) {
    for (const EvalItem& item : items) {
        if (!scene_id.empty() && item.scene_id != scene_id) continue;
        if (!image_id.empty() && item.image_id != image_id) continue;
        return item;
    }
    throw ValidationError("no record matches scene '" + scene_id + "' image '" +
                          image_id + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommand handlers. Each takes the parsed CliConfig plus its own flags and
// returns nothing; failures surface as exceptions mapped to exit codes in run().

namespace detail {

inline void run_gen_data(const CliConfig& cli, const std::string& out) {
    nlohmann::json schema;
    schema["datagen"] = DatagenConfig{};
    nlohmann::json resolved = resolve_config(schema, cli);
    if (cli.seed_given) resolved["datagen"]["global_seed"] = cli.seed;
    const DatagenConfig cfg = config_as<DatagenConfig>(resolved.at("datagen"));
    cfg.validate();
    log_resolved(cli, resolved);

    const DatasetManifest manifest = generate_dataset(cfg, out);
    const std::vector<std::string> issues = validate_manifest(manifest, out);
    if (!issues.empty()) {
        throw IoError("generated tree failed validation: " + issues.front());
    }
    std::size_t records = 0;
    for (const SceneEntry& s : manifest.scenes) records += s.records.size();
    std::cout << "gen-data wrote " << manifest.scenes.size() << " scenes, " << records
              << " records to " << out << "\n";
}

inline void run_ingest(const CliConfig& cli, const std::string& renders,
                       const std::string& gt, const std::string& refs,
                       const std::string& out) {
    nlohmann::json schema;
    schema["ssim"] = SsimParams{};
    schema["split"] = "eval";
    const nlohmann::json resolved = resolve_config(schema, cli);
    log_resolved(cli, resolved);

    const DatasetManifest manifest = ingest_external_renders(
        renders, gt, refs, out, config_as<SsimParams>(resolved.at("ssim")),
        resolved.at("split").get<std::string>());
    std::size_t records = 0;
    for (const SceneEntry& s : manifest.scenes) records += s.records.size();
    std::cout << "ingest wrote " << records << " records to " << out << "\n";
}

inline void run_train(const CliConfig& cli, const std::string& data,
                      const std::string& out) {
    nlohmann::json schema;
    schema["model"] = ModelConfig{};
    schema["train"] = TrainConfig{};
    nlohmann::json resolved = resolve_config(schema, cli);
    if (cli.seed_given) resolved["train"]["seed"] = cli.seed;
    const ModelConfig model_cfg = config_as<ModelConfig>(resolved.at("model"));
    const TrainConfig train_cfg = config_as<TrainConfig>(resolved.at("train"));
    model_cfg.validate();
    train_cfg.validate(model_cfg.patch_size);
    log_resolved(cli, resolved);

    const std::filesystem::path root(data);
    const DatasetManifest manifest = read_manifest(root / "manifest.json");
    const std::vector<std::string> issues = validate_manifest(manifest, root);
    if (!issues.empty()) {
        throw ValidationError("dataset at " + data + " failed validation: " +
                              issues.front());
    }
    const TrainResult result = train<float>(manifest, root, model_cfg, train_cfg, out);
    std::cout << "train finished steps=" << result.steps_run << " loss=" << result.final_loss
              << " checkpoint=" << result.final_checkpoint.string() << "\n";
}

inline void run_score(const CliConfig& cli, const std::string& query_path,
                      const std::vector<std::string>& ref_paths, const std::string& ckpt,
                      const std::string& out) {
    nlohmann::json schema;
    schema["n_ref"] = -1;  // -1: take the count the checkpoint was trained with
    const nlohmann::json resolved = resolve_config(schema, cli);
    log_resolved(cli, resolved);

    const std::filesystem::path ckpt_dir = resolve_checkpoint_dir(ckpt);
    LoadedCheckpointT<float> loaded = load_checkpoint<float>(ckpt_dir);
    int expected = resolved.at("n_ref").get<int>();
    if (expected < 0 && loaded.manifest.contains("train")) {
        expected = loaded.manifest["train"].value("n_ref", -1);
    }

    const ModelConfig& mc = loaded.model.config();
    const ImageGrid query = fit_to_model(read_png(query_path), mc, "query");
    std::vector<ImageGrid> refs;
    for (const std::string& p : ref_paths) {
        refs.push_back(fit_to_model(read_png(p), mc, p));
    }
    const auto [map, mean] = score_image(loaded.model, query, std::move(refs), expected);
    write_score_map(map, out, query_path, "cross");
    char line[64];
    std::snprintf(line, sizeof(line), "mean %.6f\n", mean);
    std::cout << line;
}

/// Shared setup for the subcommands that walk a manifest with a checkpoint.
struct EvalSetup {
    LoadedCheckpointT<float> loaded;
    std::vector<EvalItem> items;
    std::string checkpoint_id;
};

inline EvalSetup load_eval_setup(const std::string& manifest_path, const std::string& ckpt,
                                 const EvalOptions& opts) {
    EvalSetup setup;
    const std::filesystem::path ckpt_dir = resolve_checkpoint_dir(ckpt);
    setup.loaded = load_checkpoint<float>(ckpt_dir);
    setup.checkpoint_id = checkpoint_id_of(ckpt_dir);
    const std::filesystem::path mpath(manifest_path);
    const DatasetManifest manifest = read_manifest(mpath);
    setup.items = build_eval_items(manifest, mpath.parent_path(),
                                   setup.loaded.model.config().patch_size,
                                   setup.loaded.model.config().max_grid, opts);
    return setup;
}

inline void run_eval(const CliConfig& cli, const std::string& manifest_path,
                     const std::string& ckpt, const std::string& out) {
    nlohmann::json schema;
    schema["n_ref"] = -1;
    schema["ssim"] = SsimParams{};
    schema["write_maps"] = true;
    const nlohmann::json resolved = resolve_config(schema, cli);
    log_resolved(cli, resolved);

    EvalOptions opts;
    opts.n_ref = resolved.at("n_ref").get<int>();
    opts.ssim = config_as<SsimParams>(resolved.at("ssim"));
    const std::filesystem::path out_dir(out);
    if (resolved.at("write_maps").get<bool>()) opts.maps_dir = out_dir / "maps";

    EvalSetup setup = load_eval_setup(manifest_path, ckpt, opts);
    EvalReport report = evaluate_scenes(make_model_scorer(setup.loaded.model),
                                        setup.items, opts);
    report.config = resolved;
    report.checkpoint_id = setup.checkpoint_id;
    render_report(report, out_dir, opts.maps_dir);

    try {
        const RankTable table = rank_scenes(report);
        std::ofstream csv(out_dir / "ranking.csv");
        csv << "scene_id,rank_cross,rank_ssim,mean_cross,mean_ssim\n";
        for (const RankRow& r : table.rows) {
            csv << r.scene_id << "," << r.rank_cross << "," << r.rank_ssim << ","
                << eval_detail::csv_num(r.mean_cross) << ","
                << eval_detail::csv_num(r.mean_ssim) << "\n";
        }
        std::cout << "rank_spearman " << eval_detail::csv_num(table.spearman) << "\n";
    } catch (const ValidationError&) {
        // fewer than three rankable scenes; the report stands on its own
    }
    std::cout << "eval wrote " << (out_dir / "report.json").string()
              << " pearson=" << eval_detail::csv_num(report.pearson_cross_vs_ssim)
              << " spearman=" << eval_detail::csv_num(report.spearman_rank_corr) << "\n";
}

inline void run_ablate(const CliConfig& cli, const std::string& manifest_path,
                       const std::string& ckpt, const std::string& out,
                       const std::string& scene_id, const std::string& image_id) {
    nlohmann::json schema;
    schema["n_ref"] = -1;
    schema["ssim"] = SsimParams{};
    const nlohmann::json resolved = resolve_config(schema, cli);
    log_resolved(cli, resolved);

    EvalOptions opts;
    opts.n_ref = resolved.at("n_ref").get<int>();
    opts.ssim = config_as<SsimParams>(resolved.at("ssim"));
    EvalSetup setup = load_eval_setup(manifest_path, ckpt, opts);
    const EvalItem& item = select_item(setup.items, scene_id, image_id);

    const AblationResult result = ablate_references(setup.loaded.model, item);
    const std::filesystem::path out_dir(out);
    std::filesystem::create_directories(out_dir);
    write_score_map(result.map_on, out_dir / "map_on.pfm", item.image_id, "cross");
    write_score_map(result.map_off, out_dir / "map_off.pfm", item.image_id,
                    "cross_zero_refs");
    nlohmann::json stats{{"scene_id", item.scene_id},
                         {"image_id", item.image_id},
                         {"mean_on", result.mean_on},
                         {"mean_off", result.mean_off},
                         {"l1_delta", result.l1_delta}};
    std::ofstream js(out_dir / "ablation.json");
    js << stats.dump(2) << "\n";
    std::cout << "ablate mean_on=" << eval_detail::csv_num(result.mean_on)
              << " mean_off=" << eval_detail::csv_num(result.mean_off)
              << " l1_delta=" << eval_detail::csv_num(result.l1_delta) << "\n";
}

inline void run_attn(const CliConfig& cli, const std::string& manifest_path,
                     const std::string& ckpt, const std::string& out, int row, int col,
                     const std::string& scene_id, const std::string& image_id) {
    nlohmann::json schema;
    schema["n_ref"] = -1;
    schema["ssim"] = SsimParams{};
    const nlohmann::json resolved = resolve_config(schema, cli);
    log_resolved(cli, resolved);

    EvalOptions opts;
    opts.n_ref = resolved.at("n_ref").get<int>();
    opts.ssim = config_as<SsimParams>(resolved.at("ssim"));
    EvalSetup setup = load_eval_setup(manifest_path, ckpt, opts);
    const EvalItem& item = select_item(setup.items, scene_id, image_id);

    const std::filesystem::path dir =
        std::filesystem::path(out) / "attention" / (item.scene_id + "_" + item.image_id);
    const AttentionExport exported =
        export_attention(setup.loaded.model, item.query, item.refs, row, col, dir);
    std::cout << "attn wrote " << exported.heatmaps.size() << " heatmaps to "
              << dir.string() << " mass=" << eval_detail::csv_num(exported.total_mass)
              << "\n";
}

inline void run_report(const CliConfig& cli, const std::string& report_path,
                       const std::string& out) {
    nlohmann::json schema = nlohmann::json::object();
    const nlohmann::json resolved = resolve_config(schema, cli);
    log_resolved(cli, resolved);

    std::ifstream in(report_path);
    if (!in) throw IoError("cannot open report " + report_path);
    EvalReport report;
    try {
        nlohmann::json j;
        in >> j;
        report = j.get<EvalReport>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed report " + report_path + ": " + e.what());
    }
    const std::filesystem::path maps_root =
        std::filesystem::path(report_path).parent_path() / "maps";
    render_report(report, out, maps_root);
    std::cout << "report wrote " << (std::filesystem::path(out) / "report.csv").string()
              << "\n";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv) {
    CliConfig cli;

    CLI::App app{"cross-reference image quality assessment"};
    app.require_subcommand(1);

    auto add_common = [&cli](CLI::App* sub) {
        sub->add_option("--config", cli.config_path, "JSON config document");
        sub->add_option("--set", cli.overrides,
                        "dotted-path config overrides, key=value");
        sub->add_flag("-v,--verbose", cli.verbosity, "increase verbosity");
        sub->add_option("--seed", cli.seed, "root RNG seed override");
        sub->add_option("--workers", cli.workers, "parallelism bound")
            ->check(CLI::PositiveNumber);
    };

    std::string out, data, manifest_path, ckpt, query_path, report_path;
    std::string renders, gt, refs_dir, scene_id, image_id;
    std::vector<std::string> ref_paths;
    int patch_row = 0, patch_col = 0;

    CLI::App* gen = app.add_subcommand("gen-data", "synthesize a training dataset");
    gen->add_option("--out", out, "output dataset directory")->required();
    add_common(gen);

    CLI::App* ingest = app.add_subcommand("ingest", "build a dataset from rendered images");
    ingest->add_option("--renders", renders, "directory of rendered images")->required();
    ingest->add_option("--gt", gt, "directory of ground-truth images")->required();
    ingest->add_option("--refs", refs_dir, "directory of reference views")->required();
    ingest->add_option("--out", out, "output dataset directory")->required();
    add_common(ingest);

    CLI::App* train_cmd = app.add_subcommand("train", "fit the model on a dataset");
    train_cmd->add_option("--data", data, "dataset root (holds manifest.json)")->required();
    train_cmd->add_option("--out", out, "checkpoint/log output directory")->required();
    add_common(train_cmd);

    CLI::App* score = app.add_subcommand("score", "predict a score map for one query");
    score->add_option("--query", query_path, "query image (PNG)")->required();
    score->add_option("--refs", ref_paths, "reference images (PNG)")
        ->required()
        ->expected(-1);
    score->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    score->add_option("--out", out, "output score map (PFM)")->required();
    add_common(score);

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--manifest", manifest_path, "dataset manifest.json")->required();
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--out", out, "report output directory")->required();
    add_common(eval_cmd);

    CLI::App* ablate = app.add_subcommand("ablate", "score with and without references");
    ablate->add_option("--manifest", manifest_path, "dataset manifest.json")->required();
    ablate->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    ablate->add_option("--out", out, "output directory")->required();
    ablate->add_option("--scene", scene_id, "scene id (default: first)");
    ablate->add_option("--image", image_id, "image id (default: first)");
    add_common(ablate);

    CLI::App* attn = app.add_subcommand("attn", "export cross-attention heatmaps");
    attn->add_option("--manifest", manifest_path, "dataset manifest.json")->required();
    attn->add_option("--ckpt", ckpt, "checkpoint directory")->required();
    attn->add_option("--out", out, "output directory")->required();
    attn->add_option("--row", patch_row, "query patch row");
    attn->add_option("--col", patch_col, "query patch column");
    attn->add_option("--scene", scene_id, "scene id (default: first)");
    attn->add_option("--image", image_id, "image id (default: first)");
    add_common(attn);

    CLI::App* report = app.add_subcommand("report", "re-render tables from report.json");
    report->add_option("--report", report_path, "existing report.json")->required();
    report->add_option("--out", out, "output directory")->required();
    add_common(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help() << std::flush;
        return 2;
    }

    CLI::App* chosen = app.get_subcommands().front();
    cli.subcommand = chosen->get_name();
    cli.seed_given = chosen->count("--seed") > 0;

    try {
        if (cli.subcommand == "gen-data") {
            detail::run_gen_data(cli, out);
        } else if (cli.subcommand == "ingest") {
            detail::run_ingest(cli, renders, gt, refs_dir, out);
        } else if (cli.subcommand == "train") {
            detail::run_train(cli, data, out);
        } else if (cli.subcommand == "score") {
            detail::run_score(cli, query_path, ref_paths, ckpt, out);
        } else if (cli.subcommand == "eval") {
            detail::run_eval(cli, manifest_path, ckpt, out);
        } else if (cli.subcommand == "ablate") {
            detail::run_ablate(cli, manifest_path, ckpt, out, scene_id, image_id);
        } else if (cli.subcommand == "attn") {
            detail::run_attn(cli, manifest_path, ckpt, out, patch_row, patch_col, scene_id,
                             image_id);
        } else if (cli.subcommand == "report") {
            detail::run_report(cli, report_path, out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace criqa::cli
