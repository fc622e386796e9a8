#pragma once

#include "spinefuse/detect2d.hpp"
#include "spinefuse/drr.hpp"
#include "spinefuse/error.hpp"
#include "spinefuse/fusion.hpp"
#include "spinefuse/geometry.hpp"
#include "spinefuse/ident2d.hpp"
#include "spinefuse/metrics.hpp"
#include "spinefuse/parallel.hpp"
#include "spinefuse/phantom.hpp"
#include "spinefuse/random.hpp"
#include "spinefuse/sequence_dp.hpp"
#include "spinefuse/volume.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace spinefuse {

/// Everything a pipeline run depends on. Defaults: K = 10, alpha = 0.1,
/// beta = 0.8, 1 mm resampling, 22 mm squares.
struct RunConfig {
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0: SPINEFUSE_THREADS or hardware concurrency

    PhantomSpec phantom;
    std::optional<std::filesystem::path> volume_path;
    std::optional<std::filesystem::path> annotation_path;

    int views = 10;
    double sad_mm = 1000.0;
    double sdd_mm = 1500.0;
    DetectorGrid detector;

    bool render = true;
    double step_mm = 0.5;
    double resample_mm = 1.0;

    DetectorOracleSpec detector_oracle;
    bool use_heatmap = true;
    double heatmap_sigma_px = 4.0;
    double rho_min = 0.5;
    double delta_min_px = 8.0;

    double neighbor_confusion = 0.1;
    std::optional<double> pixel_noise;
    double label_radius_mm = 30.0;
    double square_mm = 22.0;
    int categories = kDefaultCategories;
    RowOrder row_order = RowOrder::ascending_v;

    DpParams dp;
    double match_radius_mm = 20.0;

    unsigned resolved_threads() const { return threads > 0 ? threads : default_thread_count(); }

    /// Checks every module precondition up front.
    void validate() const {
        if (views < 2) fail_config("fusion needs K >= 2 views, got " + std::to_string(views));
        if (!(sad_mm > 0.0 && sdd_mm > sad_mm)) fail_config("geometry requires 0 < sad < sdd");
        detector.validate();
        if (!(step_mm > 0.0)) fail_config("ray step must be > 0");
        if (!(resample_mm > 0.0)) fail_config("resample spacing must be > 0");
        detector_oracle.validate();
        if (!(heatmap_sigma_px > 0.0)) fail_config("heatmap sigma must be > 0");
        if (!(rho_min >= 0.0) || !(delta_min_px >= 0.0)) fail_config("peak thresholds must be >= 0");
        if (!(neighbor_confusion >= 0.0 && neighbor_confusion <= 0.5)) fail_config("neighbour confusion must be in [0, 0.5]");
        if (pixel_noise && !(*pixel_noise > 0.0)) fail_config("pixel noise concentration must be > 0");
        if (!(label_radius_mm > 0.0)) fail_config("label radius must be > 0");
        if (!(square_mm > 0.0)) fail_config("aggregation square must be > 0");
        check_category_count(categories);
        dp.validate();
        if (!(match_radius_mm > 0.0)) fail_config("match radius must be > 0");
        if (volume_path.has_value() != annotation_path.has_value()) {
            fail_config("a volume input needs both volume and annotation paths");
        }
        for (const auto* path : {&volume_path, &annotation_path}) {
            if (*path && !std::filesystem::exists(**path)) fail_config("input file not found: " + (*path)->string());
        }
        if (!volume_path) {
            if (phantom.count < 1 || phantom.count > categories) fail_config("phantom vertebra count must be in [1, c]");
            if (phantom.categories != categories) fail_config("phantom and identification category counts differ");
        }
    }
};

namespace detail {

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

} // namespace detail

/// Overlays the values present in `j` onto `cfg`.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j) {
    using detail::read_opt;
    try {
        read_opt(j, "seed", cfg.seed);
        read_opt(j, "threads", cfg.threads);
        if (j.contains("phantom")) {
            const auto& p = j.at("phantom");
            if (p.contains("dims")) {
                const auto d = p.at("dims").get<std::vector<int>>();
                if (d.size() != 3) fail_config("phantom.dims must have 3 entries");
                cfg.phantom.dims = {d[0], d[1], d[2]};
            }
            read_opt(p, "spacing_mm", cfg.phantom.spacing_mm);
            read_opt(p, "count", cfg.phantom.count);
            if (p.contains("first_label")) {
                const auto& fl = p.at("first_label");
                cfg.phantom.first_label = fl.is_string() ? parse_label(fl.get<std::string>()).index : fl.get<int>();
            }
            read_opt(p, "vertebra_spacing_mm", cfg.phantom.vertebra_spacing_mm);
            if (p.contains("semi_axes_mm")) cfg.phantom.semi_axes_mm = detail::vec3_from_json(p.at("semi_axes_mm"), "semi_axes_mm");
            read_opt(p, "body_radius_mm", cfg.phantom.body_radius_mm);
            read_opt(p, "mu_bone", cfg.phantom.mu_bone);
            read_opt(p, "curvature_per_mm", cfg.phantom.curvature_per_mm);
            read_opt(p, "jitter_mm", cfg.phantom.jitter_mm);
        }
        if (j.contains("input")) {
            const auto& in = j.at("input");
            if (in.contains("volume")) cfg.volume_path = in.at("volume").get<std::string>();
            if (in.contains("annotation")) cfg.annotation_path = in.at("annotation").get<std::string>();
        }
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            read_opt(g, "views", cfg.views);
            read_opt(g, "sad_mm", cfg.sad_mm);
            read_opt(g, "sdd_mm", cfg.sdd_mm);
            if (g.contains("detector")) {
                const auto& d = g.at("detector");
                read_opt(d, "nu", cfg.detector.nu);
                read_opt(d, "nv", cfg.detector.nv);
                read_opt(d, "pu_mm", cfg.detector.pu);
                read_opt(d, "pv_mm", cfg.detector.pv);
            }
        }
        if (j.contains("render")) {
            const auto& r = j.at("render");
            read_opt(r, "enabled", cfg.render);
            read_opt(r, "step_mm", cfg.step_mm);
            read_opt(r, "resample_mm", cfg.resample_mm);
        }
        if (j.contains("detector_oracle")) {
            const auto& d = j.at("detector_oracle");
            read_opt(d, "noise_sigma_px", cfg.detector_oracle.noise_sigma_px);
            read_opt(d, "p_miss", cfg.detector_oracle.p_miss);
            read_opt(d, "p_spurious", cfg.detector_oracle.p_spurious);
        }
        if (j.contains("heatmap")) {
            const auto& h = j.at("heatmap");
            read_opt(h, "enabled", cfg.use_heatmap);
            read_opt(h, "sigma_px", cfg.heatmap_sigma_px);
            read_opt(h, "rho_min", cfg.rho_min);
            read_opt(h, "delta_min_px", cfg.delta_min_px);
        }
        if (j.contains("classifier_oracle")) {
            const auto& c = j.at("classifier_oracle");
            read_opt(c, "neighbor_confusion", cfg.neighbor_confusion);
            if (c.contains("pixel_noise")) {
                cfg.pixel_noise = c.at("pixel_noise").is_null() ? std::nullopt
                                                                 : std::optional<double>(c.at("pixel_noise").get<double>());
            }
            read_opt(c, "label_radius_mm", cfg.label_radius_mm);
        }
        if (j.contains("identification")) {
            const auto& id = j.at("identification");
            read_opt(id, "square_mm", cfg.square_mm);
            read_opt(id, "categories", cfg.categories);
            cfg.phantom.categories = cfg.categories;
            if (id.contains("row_order")) {
                const auto order = id.at("row_order").get<std::string>();
                if (order == "ascending_v") {
                    cfg.row_order = RowOrder::ascending_v;
                } else if (order == "descending_v") {
                    cfg.row_order = RowOrder::descending_v;
                } else {
                    fail_config("row_order must be ascending_v or descending_v");
                }
            }
        }
        if (j.contains("dp")) {
            read_opt(j.at("dp"), "alpha", cfg.dp.alpha);
            read_opt(j.at("dp"), "beta", cfg.dp.beta);
        }
        if (j.contains("evaluation")) read_opt(j.at("evaluation"), "match_radius_mm", cfg.match_radius_mm);
    } catch (const nlohmann::json::exception& e) {
        fail_config(std::string("invalid config: ") + e.what());
    }
}

inline RunConfig load_config(const std::filesystem::path& path) {
    RunConfig cfg;
    std::ifstream in(path);
    if (!in) fail_config("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail_config("malformed config " + path.string() + ": " + e.what());
    }
    apply_config_json(cfg, j);
    return cfg;
}

/// The phantom generated for a run, seeded from the run seed.
inline Phantom phantom_for(const RunConfig& cfg) {
    PhantomSpec spec = cfg.phantom;
    spec.categories = cfg.categories;
    spec.seed = derive_seed(cfg.seed, 0x70);
    return make_phantom(spec);
}

/// Volume and ground truth for a run: the configured files (resampled to
/// resample_mm) or a generated phantom.
inline Phantom load_inputs(const RunConfig& cfg) {
    if (cfg.volume_path) {
        auto volume = load_volume(*cfg.volume_path);
        auto annotation = load_annotation(*cfg.annotation_path);
        const Vec3& s = volume.spacing();
        if ((s.array() - cfg.resample_mm).abs().maxCoeff() > 1e-9) volume = resample_isotropic(volume, cfg.resample_mm);
        return Phantom{std::move(volume), std::move(annotation)};
    }
    return phantom_for(cfg);
}

inline std::vector<ProjectionGeometry> views_for(const RunConfig& cfg, const Volume3& volume, int views) {
    return make_views(views, cfg.sad_mm, cfg.sdd_mm, cfg.detector, volume.center());
}

/// Ground-truth centroids projected into one view, labels attached.
inline std::vector<ProjectedLabel> project_annotation(const ProjectionGeometry& g, const Annotation3& gt) {
    std::vector<ProjectedLabel> out;
    for (const auto& e : gt.entries()) out.push_back({e.label, project_point(g, e.center)});
    return out;
}

/// Oracle outputs for one view: detections (sorted along the spine) and the
/// aggregated probability map, one row per detection.
struct ViewOracleOutput {
    std::vector<Detection2D> detections;
    ProbMap probmap;
};

inline ViewOracleOutput simulate_view(const RunConfig& cfg, const ProjectionGeometry& g, const Annotation3& gt) {
    const auto projected = project_annotation(g, gt);
    std::vector<Vec2> gt_uv;
    for (const auto& p : projected) gt_uv.push_back(p.uv);

    DetectorOracleSpec det_spec = cfg.detector_oracle;
    det_spec.seed = derive_seed(cfg.seed, 0x64, static_cast<std::uint64_t>(g.view_index()));
    auto raw = oracle_detect(gt_uv, det_spec, g.detector(), g.view_index());

    ViewOracleOutput out;
    if (cfg.use_heatmap) {
        std::vector<Vec2> centers;
        for (const auto& d : raw) centers.push_back(d.uv);
        const auto heatmap = synth_heatmap(centers, g.detector(), cfg.heatmap_sigma_px);
        out.detections = find_peaks(heatmap, cfg.rho_min, cfg.delta_min_px, g.view_index());
    } else {
        out.detections = std::move(raw);
    }
    sort_by_v(out.detections, cfg.row_order);
    out.probmap = ProbMap{RowMatrix(0, cfg.categories), g.view_index()};
    if (out.detections.empty()) return out;

    auto labels = std::make_shared<const LabelImage>(label_image_from_centroids(projected, g.detector(), cfg.label_radius_mm));
    ClassifierOracleSpec cls{neighbor_confusion(cfg.categories, cfg.neighbor_confusion), cfg.pixel_noise,
                             derive_seed(cfg.seed, 0x63, static_cast<std::uint64_t>(g.view_index()))};
    const auto field = oracle_field(std::move(labels), std::move(cls));
    auto agg = aggregate_probmap(field, out.detections, cfg.square_mm, g.view_index());
    std::vector<Detection2D> kept;
    for (int idx : agg.rows_from) kept.push_back(out.detections[static_cast<std::size_t>(idx)]);
    out.detections = std::move(kept);
    out.probmap = std::move(agg.map);
    return out;
}

struct PipelineResult {
    Phantom inputs;
    std::vector<ProjectionGeometry> geometries;
    std::vector<DrrImage> images;  // empty unless rendering is enabled
    std::vector<ViewOracleOutput> per_view;
    FusionResult fusion;
    EvalResult eval;
};

/// Inputs, rendering, oracles, fusion and evaluation for one configuration.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const unsigned threads = cfg.resolved_threads();
    PipelineResult r{load_inputs(cfg), {}, {}, {}, {}, {}};
    r.geometries = views_for(cfg, r.inputs.volume, cfg.views);

    if (cfg.render) {
        const RayCastVolume caster(r.inputs.volume);
        for (const auto& g : r.geometries) r.images.push_back(render_drr(caster, g, cfg.step_mm, threads));
    }

    r.per_view.resize(r.geometries.size());
    parallel_for(r.geometries.size(), threads, [&](std::size_t k) {
        r.per_view[k] = simulate_view(cfg, r.geometries[k], r.inputs.annotation);
    });

    std::vector<ViewObservation> observations;
    for (std::size_t k = 0; k < r.geometries.size(); ++k) {
        observations.push_back({r.geometries[k], r.per_view[k].detections, r.per_view[k].probmap});
    }
    r.fusion = fuse_all(observations, cfg.dp, cfg.row_order);
    r.eval = evaluate(r.fusion.centroids, r.inputs.annotation, cfg.match_radius_mm);
    return r;
}

// ---------------------------------------------------------------------------
// Ablation over the view count.

struct SweepRow {
    int views = 0;
    std::uint64_t seed = 0;
    std::optional<EvalResult> eval;
    std::string error;  // set when the run failed
};

struct SweepSummary {
    int views = 0;
    SampleStats id_rate;
    SampleStats l_error_mm;
    int failed = 0;
};

/// Runs the pipeline for every (K, seed) pair. Rendering is skipped (the
/// oracles read the projected ground truth only). Failures are recorded in
/// the row, not thrown.
inline std::vector<SweepRow> sweep_k(const RunConfig& base, std::span<const int> k_values,
                                     std::span<const std::uint64_t> seeds) {
    for (int k : k_values) {
        if (k < 2) fail_config("sweep view counts must be >= 2, got " + std::to_string(k));
    }
    std::vector<SweepRow> rows;
    for (int k : k_values)
        for (auto s : seeds) rows.push_back({k, s, std::nullopt, {}});

    const unsigned threads = base.resolved_threads();
    parallel_for(rows.size(), threads, [&](std::size_t i) {
        RunConfig cfg = base;
        cfg.views = rows[i].views;
        cfg.seed = rows[i].seed;
        cfg.render = false;
        cfg.threads = 1;
        try {
            rows[i].eval = run_pipeline(cfg).eval;
        } catch (const std::exception& e) {
            rows[i].error = e.what();
        }
    });
    return rows;
}

inline std::vector<SweepSummary> summarize_sweep(std::span<const SweepRow> rows) {
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_k;
    std::map<int, int> failed;
    std::vector<int> order;
    for (const auto& r : rows) {
        if (!by_k.contains(r.views) && !failed.contains(r.views)) order.push_back(r.views);
        if (r.eval) {
            by_k[r.views].first.push_back(r.eval->id_rate);
            by_k[r.views].second.push_back(r.eval->l_error_mm);
        } else {
            failed[r.views] += 1;
        }
    }
    std::vector<SweepSummary> out;
    for (int k : order) {
        SweepSummary s;
        s.views = k;
        s.id_rate = sample_stats(by_k[k].first);
        s.l_error_mm = sample_stats(by_k[k].second);
        s.failed = failed[k];
        out.push_back(s);
    }
    return out;
}

/// `K,seed,id_rate,l_error_mm,matched,missed,spurious`; failed runs print nan.
inline std::string sweep_csv(std::span<const SweepRow> rows) {
    std::ostringstream os;
    os.precision(17);
    os << "K,seed,id_rate,l_error_mm,matched,missed,spurious\n";
    for (const auto& r : rows) {
        os << r.views << ',' << r.seed << ',';
        if (r.eval) {
            os << r.eval->id_rate << ',' << r.eval->l_error_mm << ',' << r.eval->matched << ',' << r.eval->missed << ','
               << r.eval->spurious << '\n';
        } else {
            os << "nan,nan,0,0,0\n";
        }
    }
    return os.str();
}

inline std::string sweep_summary_csv(std::span<const SweepSummary> summary) {
    std::ostringstream os;
    os.precision(17);
    os << "K,runs,failed,id_rate_mean,id_rate_stdev,l_error_mm_mean,l_error_mm_stdev\n";
    for (const auto& s : summary) {
        os << s.views << ',' << s.l_error_mm.count << ',' << s.failed << ',' << s.id_rate.mean << ',' << s.id_rate.stdev
           << ',' << s.l_error_mm.mean << ',' << s.l_error_mm.stdev << '\n';
    }
    return os.str();
}

} // namespace spinefuse
