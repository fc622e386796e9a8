// spinefuse: synthetic-phantom, DRR rendering and multi-view fusion runner.

#include "spinefuse/spinefuse.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace spinefuse;

namespace {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out_dir = ".";
};

struct PipelineOverrides {
    std::optional<int> views;
    std::optional<std::string> volume;
    std::optional<std::string> annotation;
    std::optional<double> step_mm;
    std::optional<double> noise_sigma_px;
    std::optional<double> p_miss;
    std::optional<double> p_spurious;
    std::optional<int> count;
    std::optional<std::string> first_label;
    std::optional<double> jitter_mm;
};

RunConfig build_config(const GlobalOptions& g, const PipelineOverrides& o) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.threads) cfg.threads = *g.threads;
    if (o.views) cfg.views = *o.views;
    if (o.volume) cfg.volume_path = *o.volume;
    if (o.annotation) cfg.annotation_path = *o.annotation;
    if (o.step_mm) cfg.step_mm = *o.step_mm;
    if (o.noise_sigma_px) cfg.detector_oracle.noise_sigma_px = *o.noise_sigma_px;
    if (o.p_miss) cfg.detector_oracle.p_miss = *o.p_miss;
    if (o.p_spurious) cfg.detector_oracle.p_spurious = *o.p_spurious;
    if (o.count) cfg.phantom.count = *o.count;
    if (o.first_label) cfg.phantom.first_label = parse_label(*o.first_label).index;
    if (o.jitter_mm) cfg.phantom.jitter_mm = *o.jitter_mm;
    return cfg;
}

fs::path ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail_config("cannot create output directory " + dir + ": " + ec.message());
    return fs::path(dir);
}

std::string view_stem(int k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "view_%02d", k);
    return buf;
}

int cmd_phantom(const GlobalOptions& g, const PipelineOverrides& o) {
    RunConfig cfg = build_config(g, o);
    check_category_count(cfg.categories);
    const auto phantom = phantom_for(cfg);
    const auto out = ensure_out_dir(g.out_dir);
    save_volume(out / "phantom.json", phantom.volume);
    save_annotation(out / "phantom_annotation.json", phantom.annotation);
    std::cout << "wrote " << (out / "phantom.json").string() << " (" << phantom.volume.dims()[0] << "x"
              << phantom.volume.dims()[1] << "x" << phantom.volume.dims()[2] << ", " << phantom.annotation.size()
              << " vertebrae)\n";
    return 0;
}

int cmd_render(const GlobalOptions& g, const PipelineOverrides& o, bool display) {
    RunConfig cfg = build_config(g, o);
    if (cfg.views < 1) fail_config("view count K must be >= 1");
    if (cfg.volume_path && !fs::exists(*cfg.volume_path)) fail_config("input file not found: " + cfg.volume_path->string());
    if (cfg.annotation_path && !fs::exists(*cfg.annotation_path)) {
        fail_config("input file not found: " + cfg.annotation_path->string());
    }

    Phantom inputs = [&] {
        if (!cfg.volume_path) return phantom_for(cfg);
        auto volume = load_volume(*cfg.volume_path);
        if ((volume.spacing().array() - cfg.resample_mm).abs().maxCoeff() > 1e-9) {
            volume = resample_isotropic(volume, cfg.resample_mm);
        }
        return Phantom{std::move(volume), cfg.annotation_path ? load_annotation(*cfg.annotation_path) : Annotation3{}};
    }();

    const auto out = ensure_out_dir(g.out_dir);
    const auto views = views_for(cfg, inputs.volume, cfg.views);
    const RayCastVolume caster(inputs.volume);
    auto projected = nlohmann::json::array();
    for (const auto& view : views) {
        const auto image = render_drr(caster, view, cfg.step_mm, cfg.resolved_threads());
        write_drr_pgm(out / (view_stem(view.view_index()) + ".pgm"), image);
        if (display) write_drr_pgm(out / (view_stem(view.view_index()) + "_display.pgm"), image, PgmTransform::display);
        auto entries = nlohmann::json::array();
        for (const auto& p : project_annotation(view, inputs.annotation)) {
            entries.push_back({{"label", label_name(p.label)}, {"uv_mm", {p.uv[0], p.uv[1]}}});
        }
        projected.push_back({{"view", view.view_index()}, {"theta_deg", view.theta_deg()}, {"centroids", entries}});
    }
    detail::write_text_file(out / "projected_annotations.json", projected.dump(2) + "\n");
    std::cout << "rendered " << views.size() << " views into " << out.string() << "\n";
    return 0;
}

int cmd_run(const GlobalOptions& g, const PipelineOverrides& o, bool dump_dp, bool dump_probmaps, bool no_render,
            bool save_drr) {
    RunConfig cfg = build_config(g, o);
    if (no_render) cfg.render = false;
    const auto result = run_pipeline(cfg);
    const auto out = ensure_out_dir(g.out_dir);

    detail::write_text_file(out / "fused.json", centroids_to_json(result.fusion.centroids).dump(2) + "\n");
    detail::write_text_file(out / "eval.json", eval_to_json(result.eval).dump(2) + "\n");

    auto detections = nlohmann::json::array();
    for (const auto& view : result.per_view) {
        for (const auto& d : detections_to_json(view.detections)) detections.push_back(d);
    }
    detail::write_text_file(out / "detections.json", detections.dump(2) + "\n");

    if (save_drr) {
        for (const auto& image : result.images) {
            write_drr_pgm(out / (view_stem(image.geometry.view_index()) + ".pgm"), image);
        }
    }
    if (dump_probmaps) {
        auto maps = nlohmann::json::array();
        for (const auto& view : result.per_view) {
            if (view.probmap.rows() > 0) maps.push_back(probmap_to_json(view.probmap));
        }
        auto voted = probmap_to_json(result.fusion.voted);
        voted["view"] = "voted";
        maps.push_back(voted);
        detail::write_text_file(out / "probmaps.json", maps.dump(2) + "\n");
    }
    if (dump_dp) {
        nlohmann::json dp = {{"voted", dp_result_to_json(result.fusion.labels.dp)},
                             {"anchored", result.fusion.labels.anchored},
                             {"row_argmax", result.fusion.labels.row_argmax},
                             {"view_weights", result.fusion.view_weights}};
        auto views = nlohmann::json::array();
        for (const auto& view : result.per_view) {
            if (view.probmap.rows() == 0) continue;
            auto entry = dp_result_to_json(dp_table(view.probmap, cfg.dp));
            entry["view"] = view.probmap.view_index;
            views.push_back(std::move(entry));
        }
        dp["views"] = std::move(views);
        detail::write_text_file(out / "dp.json", dp.dump(2) + "\n");
    }

    for (const auto& c : result.fusion.centroids) {
        std::printf("%-4s center=(%.3f, %.3f, %.3f) mm support=%d residual=%.3g\n", label_name(c.label).c_str(),
                    c.center[0], c.center[1], c.center[2], c.support, c.residual);
    }
    for (const auto& u : result.fusion.unlocalized) {
        std::printf("group %d (label %d) unlocalized: %s\n", u.group, u.label, u.reason.c_str());
    }
    std::printf("id_rate=%.4f l_error_mm=%.4f matched=%d missed=%d spurious=%d\n", result.eval.id_rate,
                result.eval.l_error_mm, result.eval.matched, result.eval.missed, result.eval.spurious);
    if (!result.fusion.labels.anchored) {
        std::fprintf(stderr, "warning: label chain could not be anchored; per-row argmax used\n");
    }
    return 0;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            fail_config("bad integer list: " + text);
        }
    }
    if (out.empty()) fail_config("empty integer list");
    return out;
}

int cmd_sweep(const GlobalOptions& g, const PipelineOverrides& o, const std::string& k_list, int seed_count) {
    RunConfig cfg = build_config(g, o);
    const auto ks = parse_int_list(k_list);
    if (seed_count < 1) fail_config("--seeds must be >= 1");
    std::vector<std::uint64_t> seeds;
    const std::uint64_t first = g.seed.value_or(0);
    for (int i = 0; i < seed_count; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
    cfg.views = ks.front();
    cfg.validate();

    const auto rows = sweep_k(cfg, ks, seeds);
    const auto summary = summarize_sweep(rows);
    const auto out = ensure_out_dir(g.out_dir);
    detail::write_text_file(out / "sweep.csv", sweep_csv(rows));
    detail::write_text_file(out / "sweep_summary.csv", sweep_summary_csv(summary));
    for (const auto& s : summary) {
        std::printf("K=%-3d runs=%d failed=%d id_rate=%.4f+-%.4f l_error_mm=%.4f+-%.4f\n", s.views, s.l_error_mm.count,
                    s.failed, s.id_rate.mean, s.id_rate.stdev, s.l_error_mm.mean, s.l_error_mm.stdev);
    }
    for (const auto& r : rows) {
        if (!r.error.empty()) std::fprintf(stderr, "K=%d seed=%llu failed: %s\n", r.views,
                                           static_cast<unsigned long long>(r.seed), r.error.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spinefuse: multi-view vertebra localization and identification on simulated DRRs"};
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand

    GlobalOptions g;
    app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Master seed (sweep: first seed)");
    app.add_option("--threads", g.threads, "Worker threads (default: $SPINEFUSE_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
    app.add_option("--out-dir", g.out_dir, "Output directory");

    PipelineOverrides o;
    auto add_input = [&](CLI::App* sub) {
        sub->add_option("--volume", o.volume, "Volume header (.json) instead of the phantom");
        sub->add_option("--annotation", o.annotation, "Annotation JSON for --volume");
    };
    auto add_geometry = [&](CLI::App* sub) {
        sub->add_option("--k", o.views, "Number of views K");
        sub->add_option("--step", o.step_mm, "Ray sampling step (mm)");
    };
    auto add_oracle = [&](CLI::App* sub) {
        sub->add_option("--noise-sigma", o.noise_sigma_px, "Detector oracle jitter (px)");
        sub->add_option("--p-miss", o.p_miss, "Detector oracle miss probability");
        sub->add_option("--p-spurious", o.p_spurious, "Detector oracle spurious rate per view");
    };
    auto add_phantom = [&](CLI::App* sub) {
        sub->add_option("--count", o.count, "Phantom vertebra count");
        sub->add_option("--first-label", o.first_label, "Phantom first label (e.g. L1)");
        sub->add_option("--jitter", o.jitter_mm, "Phantom per-vertebra jitter (mm)");
    };

    auto* phantom = app.add_subcommand("phantom", "Write a synthetic spine phantom and its annotation");
    add_phantom(phantom);

    bool display = false;
    auto* render = app.add_subcommand("render", "Render K DRRs and project the annotation");
    add_input(render);
    add_geometry(render);
    add_phantom(render);
    render->add_flag("--display", display, "Also write exp(-integral) display images");

    bool dump_dp = false, dump_probmaps = false, no_render = false, save_drr = false;
    auto* run = app.add_subcommand("run", "Run the full pipeline and evaluate");
    add_input(run);
    add_geometry(run);
    add_oracle(run);
    add_phantom(run);
    run->add_flag("--dump-dp", dump_dp, "Write DP tables to dp.json");
    run->add_flag("--dump-probmaps", dump_probmaps, "Write probability maps to probmaps.json");
    run->add_flag("--no-render", no_render, "Skip DRR rendering");
    run->add_flag("--save-drr", save_drr, "Write the rendered DRRs");

    std::string k_list = "5,10,20";
    int seed_count = 20;
    auto* sweep = app.add_subcommand("sweep", "Ablation over K and seeds; writes sweep.csv");
    sweep->add_option("--k-list", k_list, "Comma-separated view counts");
    sweep->add_option("--seeds", seed_count, "Number of consecutive seeds");
    add_oracle(sweep);
    add_phantom(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*phantom) return cmd_phantom(g, o);
        if (*render) return cmd_render(g, o, display);
        if (*run) return cmd_run(g, o, dump_dp, dump_probmaps, no_render, save_drr);
        if (*sweep) return cmd_sweep(g, o, k_list, seed_count);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
