// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: dataset generation/import, modality preparation,
// per-stream training, fusion and evaluation, report rendering.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msgar/msgar.hpp"

namespace {

using msgar::json;

/// Applies a "dotted.path=value" override onto the raw config JSON. Values
/// parse as JSON when possible and fall back to strings.
void apply_override(json& config, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must look like key.path=value: " + assignment);
    std::string path = assignment.substr(0, eq);
    std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &config;
    std::stringstream ss(path);
    std::string key;
    std::vector<std::string> keys;
    while (std::getline(ss, key, '.')) keys.push_back(key);
    if (keys.empty()) throw std::invalid_argument("empty override path");
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) node = &(*node)[keys[i]];
    (*node)[keys.back()] = value;
}

msgar::RunConfig load_config(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
    json j = json::parse(msgar::read_file(config_path));
    for (const auto& o : overrides) apply_override(j, o);
    std::filesystem::path p(config_path);
    auto base = p.has_parent_path() ? p.parent_path() : std::filesystem::path(".");
    return msgar::run_config_from_json(j, base);
}

json confusion_to_json(const msgar::ConfusionMatrix& cm) {
    json rows = json::array();
    for (int g = 0; g < cm.classes; ++g) {
        json row = json::array();
        for (int p = 0; p < cm.classes; ++p) row.push_back(cm.at(g, p));
        rows.push_back(row);
    }
    return rows;
}

msgar::ConfusionMatrix confusion_from_json(const json& j) {
    msgar::ConfusionMatrix cm(static_cast<int>(j.size()));
    for (int g = 0; g < cm.classes; ++g)
        for (int p = 0; p < cm.classes; ++p) cm.at(g, p) = j.at(g).at(p).get<long long>();
    return cm;
}

int run(int argc, char** argv) {
    CLI::App app{"multi-stream group activity recognition"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--set", overrides, "override a config key, e.g. --set train.epochs=5");

    auto* gen = app.add_subcommand("gen-synthetic", "generate the synthetic dataset");

    auto* prep = app.add_subcommand("prepare", "precompute a derived modality cache");
    std::string modality;
    bool force = false;
    prep->add_option("--modality", modality, "flow | warped_flow | posemap")->required();
    prep->add_flag("--force", force, "recompute existing cache entries");

    auto* imp = app.add_subcommand("import", "convert a dataset layout to the canonical index");
    std::string dataset, dataset_root, split = "train", ids_csv;
    int frame_w = 0, frame_h = 0;
    imp->add_option("--dataset", dataset, "volleyball | collective")->required();
    imp->add_option("--root", dataset_root, "dataset root directory")->required();
    imp->add_option("--ids", ids_csv, "comma-separated video/sequence ids")->required();
    imp->add_option("--split", split, "train | test");
    imp->add_option("--frame-width", frame_w, "annotation frame width in pixels");
    imp->add_option("--frame-height", frame_h, "annotation frame height in pixels");

    auto* train = app.add_subcommand("train", "train one stream");
    std::string stream;
    train->add_option("--stream", stream, "rgb | flow | warped_flow | posemap")->required();

    auto* dump = app.add_subcommand("dump-scores", "re-dump scores from a checkpoint");
    dump->add_option("--stream", stream, "rgb | flow | warped_flow | posemap")->required();

    auto* fuse = app.add_subcommand("fuse", "fuse stream score dumps");
    std::string mode;
    bool single_frame = false;
    fuse->add_option("--mode", mode, "max | avg | svm");
    fuse->add_flag("--single-frame", single_frame, "spatial streams only (rgb, posemap)");

    auto* eval = app.add_subcommand("evaluate", "evaluate fused predictions");
    bool merge_moving = false;
    eval->add_flag("--merge-moving", merge_moving, "merge crossing+walking into moving");
    eval->add_flag("--single-frame", single_frame, "evaluate the single-frame fusion output");

    auto* report = app.add_subcommand("report", "render metrics tables and figures");

    CLI11_PARSE(app, argc, argv);

    msgar::RunConfig cfg = load_config(config_path, overrides);

    if (gen->parsed()) {
        auto ds = msgar::generate_synthetic(cfg.synthetic, cfg.data_root);
        std::cout << "generated " << ds.train.size() << " train / " << ds.test.size()
                  << " test clips under " << cfg.data_root.string() << "\n";
        return 0;
    }
    if (prep->parsed()) {
        int n = msgar::prepare_modality(cfg, msgar::modality_from_string(modality), force);
        std::cout << "prepared " << n << " clips for modality " << modality << "\n";
        return 0;
    }
    if (imp->parsed()) {
        std::vector<std::string> ids;
        std::stringstream ss(ids_csv);
        std::string id;
        while (std::getline(ss, id, ',')) ids.push_back(id);
        std::vector<msgar::ValidatedClip> clips;
        if (dataset == "volleyball") {
            msgar::VolleyballParseOptions opts;
            opts.window = cfg.window;
            if (frame_w > 0) opts.frame_width = frame_w;
            if (frame_h > 0) opts.frame_height = frame_h;
            clips = msgar::parse_volleyball(dataset_root, ids, opts);
        } else if (dataset == "collective") {
            msgar::CollectiveParseOptions opts;
            opts.window = cfg.window;
            if (frame_w > 0) opts.frame_width = frame_w;
            if (frame_h > 0) opts.frame_height = frame_h;
            clips = msgar::parse_collective(dataset_root, ids, opts);
        } else {
            throw std::invalid_argument("unknown dataset: " + dataset);
        }
        auto out = split == "test" ? cfg.index_test : cfg.index_train;
        msgar::write_clip_index(out, clips);
        std::cout << "wrote " << clips.size() << " clips to " << out.string() << "\n";
        return 0;
    }
    if (train->parsed()) {
        auto res = msgar::train_stream(cfg, msgar::modality_from_string(stream));
        std::cout << "trained " << stream << ": final L_total = "
                  << res.history.back().l_total << ", checkpoint "
                  << res.checkpoint_path.string() << "\n";
        return 0;
    }
    if (dump->parsed()) {
        msgar::dump_scores(cfg, msgar::modality_from_string(stream));
        std::cout << "dumped scores for " << stream << "\n";
        return 0;
    }
    if (fuse->parsed()) {
        msgar::FusionConfig fc = cfg.fusion;
        if (!mode.empty()) fc.mode = msgar::fusion_mode_from_string(mode);
        if (single_frame) fc = msgar::spatial_only(fc);
        fc.validate();
        msgar::FusionModel model = msgar::fit_fusion_model(cfg, fc);
        std::string suffix = single_frame ? "_single_frame" : "";
        msgar::save_fusion_model(cfg.out_dir / ("fusion_model" + suffix + ".json"), model);
        auto fused = msgar::apply_fusion(cfg, model, "test");
        msgar::write_fused_records(cfg.out_dir / ("fused_test" + suffix + ".jsonl"), fused);
        std::cout << "fused " << fused.size() << " clips with mode "
                  << msgar::to_string(fc.mode) << "\n";
        return 0;
    }
    if (eval->parsed()) {
        std::string suffix = single_frame ? "_single_frame" : "";
        auto fused = msgar::read_fused_records(cfg.out_dir / ("fused_test" + suffix + ".jsonl"));
        auto clips = msgar::read_clip_index(cfg.index_test, cfg.space);
        auto group = msgar::evaluate(fused, clips, cfg.space.num_groups());
        auto actions = msgar::evaluate_actions(fused, clips, cfg.space.num_actions());
        std::vector<int> excluded;
        double group_mpca = msgar::mpca(group.confusion, &excluded);
        for (int c : excluded)
            std::cerr << "warning: class without ground-truth support excluded from MPCA: "
                      << cfg.space.group_classes[c] << "\n";
        json metrics{{"split", "test"},
                     {"group_accuracy", group.accuracy},
                     {"group_mpca", group_mpca},
                     {"action_accuracy", actions.accuracy},
                     {"group_classes", cfg.space.group_classes},
                     {"confusion", confusion_to_json(group.confusion)}};
        if (merge_moving) {
            auto [mapping, merged_names] = msgar::moving_merge_mapping(cfg.space.group_classes);
            auto merged = msgar::merge_classes(group.confusion, mapping,
                                               static_cast<int>(merged_names.size()));
            metrics["merged"] = {{"group_classes", merged_names},
                                 {"group_accuracy", msgar::mca(merged)},
                                 {"group_mpca", msgar::mpca(merged)},
                                 {"confusion", confusion_to_json(merged)}};
        }
        msgar::write_file_atomic(cfg.out_dir / ("metrics" + suffix + ".json"), metrics.dump(2));
        std::cout << "group accuracy " << group.accuracy * 100.0 << "%  MPCA "
                  << group_mpca * 100.0 << "%  action accuracy " << actions.accuracy * 100.0
                  << "%\n";
        if (merge_moving)
            std::cout << "merged (moving): MPCA "
                      << metrics["merged"]["group_mpca"].get<double>() * 100.0 << "%\n";
        return 0;
    }
    if (report->parsed()) {
        namespace fs = std::filesystem;
        fs::path report_dir = cfg.out_dir / "report";
        fs::create_directories(report_dir);
        int rendered = 0;
        if (fs::exists(cfg.out_dir / "history"))
            for (const auto& entry : fs::directory_iterator(cfg.out_dir / "history")) {
                json h = json::parse(msgar::read_file(entry.path()));
                std::vector<double> losses;
                for (const auto& e : h.at("epochs")) losses.push_back(e.at("l_total").get<double>());
                auto name = h.at("stream").get<std::string>();
                msgar::save_png(report_dir / ("loss_" + name + ".png"),
                                msgar::render_loss_curve(losses));
                ++rendered;
            }
        for (const std::string suffix : {"", "_single_frame"}) {
            auto metrics_path = cfg.out_dir / ("metrics" + suffix + ".json");
            if (!fs::exists(metrics_path)) continue;
            json m = json::parse(msgar::read_file(metrics_path));
            auto cm = confusion_from_json(m.at("confusion"));
            auto names = m.at("group_classes").get<std::vector<std::string>>();
            msgar::write_confusion_csv(report_dir / ("confusion" + suffix + ".csv"), cm, names);
            msgar::save_png(report_dir / ("confusion" + suffix + ".png"),
                            msgar::render_confusion_heatmap(cm));
            std::vector<std::pair<std::string, double>> table{
                {"group_accuracy", m.at("group_accuracy").get<double>()},
                {"group_mpca", m.at("group_mpca").get<double>()},
                {"action_accuracy", m.at("action_accuracy").get<double>()}};
            msgar::write_metrics_csv(report_dir / ("metrics" + suffix + ".csv"), table);
            ++rendered;
        }
        std::cout << "rendered " << rendered << " report artifacts under "
                  << report_dir.string() << "\n";
        return 0;
    }
    throw std::logic_error("no subcommand handled");
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", e.what()}}.dump() << std::endl;
        return 1;
    }
}
