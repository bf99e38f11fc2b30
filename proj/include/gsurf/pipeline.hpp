#pragma once

// End-to-end orchestration: dataset layout on disk, the sequential
// per-frame reconstruction driver shared by stage 1 and stage 2, novel-view
// export with its manifest, refiner application over exported directories,
// and evaluation helpers. The driver is strictly deterministic given the
// seed: identical inputs produce byte-identical checkpoints for any thread
// count.

#include <functional>
#include <optional>
#include <random>

#include "gsurf/bubbles.hpp"
#include "gsurf/config.hpp"
#include "gsurf/io.hpp"
#include "gsurf/mesh.hpp"
#include "gsurf/optim.hpp"
#include "gsurf/refine.hpp"
#include "gsurf/synth.hpp"

namespace gsurf {

// ---------------------------------------------------------------------------
// Dataset directory
//
//   cameras.txt                      camera rig
//   meta.txt                         frames, dt, scene bounds
//   views/<cam_id>/frame_%05d.png    per-view images, t starting at 1
//   masks/<cam_id>/frame_%05d.png    16-bit instance masks (input views)
//   gt/points/frame_%05d.bin         ground-truth surface point clouds
//   gt/velocity.csv                  ground-truth bubble velocities

struct DatasetMeta {
    int frames = 0;
    double dt = 0.0;
    Vec3 bounds_lo, bounds_hi;
};

inline void write_dataset_meta(const fs::path& root, const DatasetMeta& m) {
    ensure_parent_dir(root / "meta.txt");
    std::ofstream os(root / "meta.txt");
    os << "[meta]\n";
    os << "frames = " << m.frames << "\n";
    os << "dt = " << format_double(m.dt) << "\n";
    os << "bounds_lo = " << format_double(m.bounds_lo.x) << ' ' << format_double(m.bounds_lo.y) << ' '
       << format_double(m.bounds_lo.z) << "\n";
    os << "bounds_hi = " << format_double(m.bounds_hi.x) << ' ' << format_double(m.bounds_hi.y) << ' '
       << format_double(m.bounds_hi.z) << "\n";
}

inline DatasetMeta read_dataset_meta(const fs::path& root) {
    const KvFile f = parse_kv_file(root / "meta.txt");
    const KvSection* s = f.first("meta");
    if (!s) throw Error("parse", "meta.txt lacks a [meta] section");
    DatasetMeta m;
    m.frames = static_cast<int>(s->number("frames"));
    m.dt = s->number("dt");
    const auto lo = s->numbers("bounds_lo"), hi = s->numbers("bounds_hi");
    if (lo.size() != 3 || hi.size() != 3) throw Error("parse", "meta bounds need 3 numbers each");
    m.bounds_lo = {lo[0], lo[1], lo[2]};
    m.bounds_hi = {hi[0], hi[1], hi[2]};
    return m;
}

struct Dataset {
    fs::path root;
    DatasetMeta meta;
    std::vector<CameraModel> cameras;

    static Dataset open(const fs::path& root) {
        Dataset d;
        d.root = root;
        d.meta = read_dataset_meta(root);
        d.cameras = read_cameras(root / "cameras.txt");
        return d;
    }

    fs::path image_path(const std::string& cam_id, int t0) const {
        return root / "views" / cam_id / frame_file_name(t0 + 1);
    }
    fs::path mask_path(const std::string& cam_id, int t0) const {
        return root / "masks" / cam_id / frame_file_name(t0 + 1);
    }
    Image3 image(const std::string& cam_id, int t0) const { return read_png8(image_path(cam_id, t0)); }
    std::vector<InstanceMask> masks(const std::string& cam_id, int t0) const {
        return decode_instances(read_png16(mask_path(cam_id, t0)));
    }
};

// Renders a synthetic scene to the dataset layout.
inline void write_synthetic_dataset(const fs::path& root, const GroundTruthScene& scene,
                                    const std::vector<CameraModel>& cameras, int gt_points_per_bubble = 1024) {
    fs::create_directories(root);
    write_cameras(root / "cameras.txt", cameras);
    DatasetMeta meta;
    meta.frames = scene.spec.frames;
    meta.dt = scene.spec.dt;
    meta.bounds_lo = scene.spec.bounds_lo;
    meta.bounds_hi = scene.spec.bounds_hi;
    write_dataset_meta(root, meta);
    for (int t = 0; t < scene.spec.frames; ++t) {
        for (const CameraModel& cam : cameras) {
            const GroundTruthRender gr = render_ground_truth(scene, t, cam);
            write_png8(root / "views" / cam.id / frame_file_name(t + 1), gr.color);
            write_png16(root / "masks" / cam.id / frame_file_name(t + 1), gr.mask);
        }
        write_points(root / "gt" / "points" / frame_file_name(t + 1, "bin"),
                     scene.surface_points(t, gt_points_per_bubble));
    }
    write_velocity_csv(root / "gt" / "velocity.csv", scene.centroid_velocity);
}

// ---------------------------------------------------------------------------
// Sequential reconstruction driver

struct NovelSupervision {
    CameraModel camera;
    double weight = 0.0;
    std::function<Image3(int t0)> image; // refined frame loader
};

struct ReconstructionRun {
    SceneSequence sequence;
    std::vector<std::vector<LossBreakdown>> traces; // per frame
    bool hull_empty = false;
    std::vector<int> surfel_counts; // per frame (constant after frame 0)
};

struct StageOptions {
    std::optional<std::vector<Surfel>> initial_surfels; // resume instead of seeding
    std::optional<double> initial_gamma;
    bool densify = true;
    int iterations_frame0 = -1; // -1: use the config values
    int iterations_frame = -1;
};

// Runs the per-frame loop: warm start by advection, optimize against every
// supervising view, rebind bubbles from the frame's masks, update velocity
// state. Zero-weight novel views must not be passed in (drop them at the
// call site); every view listed here supervises both appearance and
// geometry.
inline ReconstructionRun run_reconstruction(const Dataset& data,
                                            const std::vector<CameraModel>& input_cameras,
                                            const std::vector<NovelSupervision>& novel,
                                            const ReconstructionConfig& cfg, const StageOptions& opt) {
    if (input_cameras.empty()) throw Error("no_views", "reconstruction requires at least one input view");
    for (const NovelSupervision& n : novel)
        if (n.weight <= 0.0) throw Error("bad_weight", "drop zero-weight novel views before the run");

    const int T = data.meta.frames;
    const int iters0 = opt.iterations_frame0 >= 0 ? opt.iterations_frame0 : cfg.iterations_frame0;
    const int iters = opt.iterations_frame >= 0 ? opt.iterations_frame : cfg.iterations_frame;

    ReconstructionRun run;
    run.sequence.dt = data.meta.dt;
    run.sequence.gamma = opt.initial_gamma.value_or(cfg.gamma_init);
    std::mt19937_64 rng(cfg.seed);

    std::vector<Surfel> surfels;
    AdamState adam;
    BubbleTracker tracker;
    std::map<int32_t, Vec3> centroids_prev, centroids_prev2;
    std::vector<Vec3> surfel_vel_prev;

    for (int t = 0; t < T; ++t) {
        // --- load observations for this frame
        std::vector<Image3> targets;
        std::vector<std::vector<InstanceMask>> masks;
        targets.reserve(input_cameras.size() + novel.size());
        for (const CameraModel& cam : input_cameras) {
            targets.push_back(data.image(cam.id, t));
            masks.push_back(data.masks(cam.id, t));
        }
        for (const NovelSupervision& n : novel) targets.push_back(n.image(t));

        // --- initialize surfels
        if (t == 0) {
            if (opt.initial_surfels) {
                surfels = *opt.initial_surfels;
            } else {
                InitResult init = initialize_frame0(masks, input_cameras, data.meta.bounds_lo,
                                                    data.meta.bounds_hi, cfg, rng);
                surfels = std::move(init.surfels);
                run.hull_empty = init.hull_empty;
            }
            adam.init(surfels.size(), cfg);
        } else if (cfg.bubble_guidance) {
            std::map<int32_t, Vec3> u_b;
            for (const auto& [id, c1] : centroids_prev) {
                if (id == 0) continue;
                std::optional<Vec3> c2;
                auto it = centroids_prev2.find(id);
                if (it != centroids_prev2.end()) c2 = it->second;
                u_b[id] = bubble_velocity(c2, c1, data.meta.dt, cfg.init_bubble_velocity);
            }
            std::vector<Vec3> nucleation_vel = surfel_vel_prev;
            if (nucleation_vel.empty())
                nucleation_vel.assign(surfels.size(), cfg.init_nucleation_velocity);
            surfels = advect(surfels, u_b, nucleation_vel, data.meta.dt);
        }
        // Without guidance the previous frame's surfels are reused as-is.

        // --- supervising views
        std::vector<SupervisedView> views;
        for (size_t v = 0; v < input_cameras.size(); ++v)
            views.push_back({&input_cameras[v], &targets[v], cfg.stage2_weight_input});
        for (size_t nvi = 0; nvi < novel.size(); ++nvi)
            views.push_back({&novel[nvi].camera, &targets[input_cameras.size() + nvi], novel[nvi].weight});

        // --- optimize
        std::vector<LossBreakdown> trace;
        if (t == 0 && opt.densify && iters0 > 0) {
            int done = 0;
            while (done < iters0) {
                const bool densify_phase = done + cfg.densify_interval <= cfg.densify_until;
                const int segment = densify_phase ? std::min(cfg.densify_interval, iters0 - done)
                                                  : iters0 - done;
                GradStats stats;
                stats.resize(surfels.size());
                // The frame-0 position schedule decays over the whole run.
                const double begin_frac = static_cast<double>(done) / iters0;
                const double end_frac = static_cast<double>(done + segment) / iters0;
                ReconstructionConfig seg_cfg = cfg;
                seg_cfg.lr_position =
                    cfg.lr_position * std::pow(cfg.lr_position_final_scale, begin_frac);
                const double seg_final = std::pow(cfg.lr_position_final_scale, end_frac - begin_frac);
                auto seg_trace = optimize_frame(surfels, run.sequence.gamma, views, seg_cfg, adam,
                                                segment, seg_final, &stats);
                trace.insert(trace.end(), seg_trace.begin(), seg_trace.end());
                done += segment;
                if (densify_phase && done < iters0) {
                    DensifyResult d = densify_and_prune(surfels, stats, run.sequence.gamma, cfg);
                    surfels = std::move(d.surfels);
                    adam.remap(d.new_from_old);
                }
            }
        } else {
            const int n_iters = t == 0 ? iters0 : iters;
            ReconstructionConfig frame_cfg = cfg;
            if (t >= 1) frame_cfg.lr_position = cfg.lr_position * cfg.lr_position_frame_scale;
            trace = optimize_frame(surfels, run.sequence.gamma, views, frame_cfg, adam, n_iters,
                                   t == 0 && opt.densify ? cfg.lr_position_final_scale : 1.0);
        }
        run.traces.push_back(std::move(trace));

        // --- bubble binding against this frame's masks
        const std::vector<BubbleCluster> clusters =
            associate_masks(masks, cfg.assoc_tau_y, cfg.assoc_area_ratio, cfg.mask_min_area,
                            cfg.nucleation_band);
        const std::vector<int32_t> ids = tracker.update(clusters, cfg.track_max_jump);
        const auto labeled = label_masks(masks, clusters, ids);
        bind_surfels(surfels, labeled, input_cameras, cfg.mask_min_area);
        orient_normals_outward(surfels, run.sequence.gamma);

        // --- velocity state
        std::map<int32_t, Vec3> centroids_now;
        for (int32_t id : bubble_ids_present(surfels))
            centroids_now[id] = bubble_centroid(surfels, run.sequence.gamma, id);
        if (t >= 1) {
            surfel_vel_prev.assign(surfels.size(), Vec3{});
            const auto& prev_frame = run.sequence.frames.back();
            for (size_t i = 0; i < surfels.size(); ++i)
                surfel_vel_prev[i] = (surfels[i].position - prev_frame[i].position) / data.meta.dt;
        }
        centroids_prev2 = std::move(centroids_prev);
        centroids_prev = std::move(centroids_now);

        run.sequence.frames.push_back(surfels);
        run.surfel_counts.push_back(static_cast<int>(surfels.size()));
    }

    estimate_velocities(run.sequence);
    if (!run.sequence.bubble_velocity_series.empty())
        run.sequence.bubble_velocities = run.sequence.bubble_velocity_series.back();
    return run;
}

inline void write_loss_trace_csv(const fs::path& path, const std::vector<std::vector<LossBreakdown>>& traces) {
    std::vector<std::vector<std::string>> rows;
    for (size_t t = 0; t < traces.size(); ++t)
        for (size_t it = 0; it < traces[t].size(); ++it) {
            const LossBreakdown& lb = traces[t][it];
            rows.push_back({std::to_string(t + 1), std::to_string(it), format_double(lb.total),
                            format_double(lb.l1), format_double(lb.ssim), format_double(lb.normal),
                            format_double(lb.gamma_hinge), format_double(lb.projection)});
        }
    write_csv(path, {"t", "iteration", "total", "l1", "ssim", "normal", "gamma_hinge", "projection"}, rows);
}

// ---------------------------------------------------------------------------
// Novel-view export, manifest, refinement

struct OrbitManifestView {
    int index = 0; // 1-based
    bool near = true;
    double strength = 0.2;
    double weight = 0.5;
    CameraModel camera;
};

struct OrbitManifest {
    int count = 0;
    int frames = 0;
    double increment_deg = 30.0;
    double radius = 0.0;
    Vec3 center;
    std::vector<OrbitManifestView> views;
};

inline void write_manifest(const fs::path& path, const OrbitManifest& m) {
    ensure_parent_dir(path);
    std::ofstream os(path);
    os << "[orbit]\n";
    os << "count = " << m.count << "\n";
    os << "frames = " << m.frames << "\n";
    os << "increment_deg = " << format_double(m.increment_deg) << "\n";
    os << "radius = " << format_double(m.radius) << "\n";
    os << "center = " << format_double(m.center.x) << ' ' << format_double(m.center.y) << ' '
       << format_double(m.center.z) << "\n";
    for (const OrbitManifestView& v : m.views) {
        os << "\n[view]\n";
        os << "index = " << v.index << "\n";
        os << "near = " << (v.near ? 1 : 0) << "\n";
        os << "strength = " << format_double(v.strength) << "\n";
        os << "weight = " << format_double(v.weight) << "\n";
        os << "id = " << v.camera.id << "\n";
        os << "fx = " << format_double(v.camera.fx) << "\n";
        os << "fy = " << format_double(v.camera.fy) << "\n";
        os << "cx = " << format_double(v.camera.cx) << "\n";
        os << "cy = " << format_double(v.camera.cy) << "\n";
        os << "width = " << v.camera.width << "\n";
        os << "height = " << v.camera.height << "\n";
        os << "world_to_camera =";
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) {
                double val;
                if (r < 3 && c < 3)
                    val = v.camera.rotation(r, c);
                else if (r < 3)
                    val = v.camera.translation[r];
                else
                    val = c == 3 ? 1.0 : 0.0;
                os << ' ' << format_double(val);
            }
        os << "\n";
    }
}

inline OrbitManifest read_manifest(const fs::path& path) {
    const KvFile f = parse_kv_file(path);
    const KvSection* orbit = f.first("orbit");
    if (!orbit) throw Error("parse", "manifest lacks an [orbit] section");
    OrbitManifest m;
    m.count = static_cast<int>(orbit->number("count"));
    m.frames = static_cast<int>(orbit->number("frames"));
    m.increment_deg = orbit->number("increment_deg");
    m.radius = orbit->number("radius");
    const auto c = orbit->numbers("center");
    if (c.size() != 3) throw Error("parse", "manifest center needs 3 numbers");
    m.center = {c[0], c[1], c[2]};
    for (const KvSection* s : f.all("view")) {
        OrbitManifestView v;
        v.index = static_cast<int>(s->number("index"));
        v.near = s->number("near") != 0;
        v.strength = s->number("strength");
        v.weight = s->number("weight");
        v.camera.id = s->require("id");
        v.camera.fx = s->number("fx");
        v.camera.fy = s->number("fy");
        v.camera.cx = s->number("cx");
        v.camera.cy = s->number("cy");
        v.camera.width = static_cast<int>(s->number("width"));
        v.camera.height = static_cast<int>(s->number("height"));
        const auto w2c = s->numbers("world_to_camera");
        if (w2c.size() != 16) throw Error("parse", "manifest view matrix needs 16 numbers");
        for (int r = 0; r < 3; ++r) {
            for (int cc = 0; cc < 3; ++cc) v.camera.rotation(r, cc) = w2c[static_cast<size_t>(r) * 4 + cc];
            v.camera.translation[r] = w2c[static_cast<size_t>(r) * 4 + 3];
        }
        v.camera.validate();
        m.views.push_back(std::move(v));
    }
    if (static_cast<int>(m.views.size()) != m.count)
        throw Error("parse", "manifest view count disagrees with [orbit] count");
    return m;
}

// Renders rough novel-view videos from a reconstructed sequence and writes
// views/<s>/frame_%05d.png plus the manifest.
inline OrbitManifest render_rough_videos(const SceneSequence& seq, const CameraModel& reference,
                                         const std::vector<CameraModel>& input_cameras,
                                         const ReconstructionConfig& cfg, const fs::path& out) {
    if (seq.frames.empty()) throw Error("empty_scene", "no frames in the sequence");
    const Vec3 center = scene_center(seq.frames.front(), seq.gamma);
    double radius = cfg.orbit_radius;
    if (radius <= 0) {
        double sum = 0;
        for (const CameraModel& cam : input_cameras) {
            const Vec3 p = cam.position();
            const double dx = p.x - center.x, dz = p.z - center.z;
            sum += std::sqrt(dx * dx + dz * dz);
        }
        radius = sum / static_cast<double>(input_cameras.size());
    }
    const std::vector<CameraModel> cams =
        orbit_cameras(center, radius, reference, cfg.novel_view_count, cfg.novel_view_increment_deg);

    OrbitManifest m;
    m.count = cfg.novel_view_count;
    m.frames = static_cast<int>(seq.frames.size());
    m.increment_deg = cfg.novel_view_increment_deg;
    m.radius = radius;
    m.center = center;
    for (int s = 0; s < cfg.novel_view_count; ++s) {
        OrbitManifestView v;
        v.index = s + 1;
        v.near = orbit_view_is_near(s, cfg.novel_view_count);
        v.strength = v.near ? cfg.refine_strength_near : cfg.refine_strength_far;
        v.weight = v.near ? cfg.stage2_weight_near : cfg.stage2_weight_far;
        v.camera = cams[static_cast<size_t>(s)];
        m.views.push_back(v);
    }

    for (size_t t = 0; t < seq.frames.size(); ++t)
        for (const OrbitManifestView& v : m.views) {
            const RenderBuffers rb = render(seq.frames[t], seq.gamma, v.camera);
            write_png8(out / "views" / std::to_string(v.index) / frame_file_name(static_cast<int>(t) + 1),
                       rb.color);
        }
    write_manifest(out / "manifest.txt", m);
    return m;
}

// Applies a refiner hook to an exported rough-video directory, producing
// the identical layout. External ingestion validates frame counts and
// dimensions.
inline void refine_videos(const fs::path& rough_dir, const RefinerHook& hook, const fs::path& out) {
    const OrbitManifest m = read_manifest(rough_dir / "manifest.txt");
    for (const OrbitManifestView& v : m.views) {
        for (int t = 1; t <= m.frames; ++t) {
            const fs::path in_path = rough_dir / "views" / std::to_string(v.index) / frame_file_name(t);
            const Image3 rough = read_png8(in_path);
            Image3 external;
            const Image3* ext_ptr = nullptr;
            if (hook.kind == RefinerKind::External) {
                const fs::path ext_path =
                    fs::path(hook.external_dir) / "views" / std::to_string(v.index) / frame_file_name(t);
                if (!fs::exists(ext_path))
                    throw Error("frame_count_mismatch",
                                "external refiner is missing " + ext_path.string());
                external = read_png8(ext_path);
                ext_ptr = &external;
            }
            const double strength = hook.kind == RefinerKind::GaussianDenoise && hook.strength > 0
                                        ? hook.strength
                                        : v.strength;
            const Image3 refined = refine_frame(rough, hook, strength, ext_ptr);
            write_png8(out / "views" / std::to_string(v.index) / frame_file_name(t), refined);
        }
        // Extra frames in the external source are a mismatch as well.
        if (hook.kind == RefinerKind::External) {
            const fs::path extra = fs::path(hook.external_dir) / "views" / std::to_string(v.index) /
                                   frame_file_name(m.frames + 1);
            if (fs::exists(extra))
                throw Error("frame_count_mismatch", "external refiner has more frames than the rough video");
        }
    }
    write_manifest(out / "manifest.txt", m);
}

// Builds the stage-2 novel-view supervision list from a refined directory,
// dropping zero-weight views entirely.
inline std::vector<NovelSupervision> novel_supervision_from_refined(const fs::path& refined_dir,
                                                                    double weight_scale = 1.0) {
    const OrbitManifest m = read_manifest(refined_dir / "manifest.txt");
    std::vector<NovelSupervision> out;
    for (const OrbitManifestView& v : m.views) {
        const double w = v.weight * weight_scale;
        if (w <= 0.0) continue;
        NovelSupervision n;
        n.camera = v.camera;
        n.weight = w;
        const fs::path dir = refined_dir / "views" / std::to_string(v.index);
        n.image = [dir](int t0) { return read_png8(dir / frame_file_name(t0 + 1)); };
        out.push_back(std::move(n));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mesh / evaluation helpers

inline TriangleMesh extract_mesh_from_frame(const std::vector<Surfel>& surfels, int resolution) {
    Vec3 lo = surfels.front().position, hi = lo;
    for (const Surfel& s : surfels)
        for (int c = 0; c < 3; ++c) {
            lo[c] = std::min(lo[c], s.position[c]);
            hi[c] = std::max(hi[c], s.position[c]);
        }
    const Vec3 pad = (hi - lo) * 0.1 + Vec3{1e-3, 1e-3, 1e-3};
    const SdfGrid grid = sdf_field(surfels, lo - pad, hi + pad, resolution);
    return marching_cubes(grid, 0.0);
}

inline void write_obj(const fs::path& path, const TriangleMesh& mesh) {
    ensure_parent_dir(path);
    std::ofstream os(path);
    if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
    for (const Vec3& v : mesh.vertices)
        os << "v " << format_double(v.x) << ' ' << format_double(v.y) << ' ' << format_double(v.z) << "\n";
    for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << "\n";
}

inline void write_ply(const fs::path& path, const TriangleMesh& mesh) {
    ensure_parent_dir(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
    os << "ply\nformat binary_little_endian 1.0\n";
    os << "element vertex " << mesh.vertices.size() << "\n";
    os << "property double x\nproperty double y\nproperty double z\n";
    os << "element face " << mesh.faces.size() << "\n";
    os << "property list uchar int vertex_indices\nend_header\n";
    for (const Vec3& v : mesh.vertices) {
        detail::put<double>(os, v.x);
        detail::put<double>(os, v.y);
        detail::put<double>(os, v.z);
    }
    for (const auto& f : mesh.faces) {
        detail::put<uint8_t>(os, 3);
        for (int c = 0; c < 3; ++c) detail::put<int32_t>(os, f[static_cast<size_t>(c)]);
    }
}

struct FrameMetrics {
    int t = 0; // 1-based
    double l1 = 0, psnr_db = 0, ssim_val = 0;
};

// Renders each frame of a sequence from `cam` and compares against the
// images under `gt_view_dir`.
inline std::vector<FrameMetrics> evaluate_view(const SceneSequence& seq, const CameraModel& cam,
                                               const fs::path& gt_view_dir) {
    std::vector<FrameMetrics> out;
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        const Image3 gt = read_png8(gt_view_dir / frame_file_name(static_cast<int>(t) + 1));
        const RenderBuffers rb = render(seq.frames[t], seq.gamma, cam);
        FrameMetrics fm;
        fm.t = static_cast<int>(t) + 1;
        fm.l1 = image_l1(rb.color, gt);
        fm.psnr_db = psnr(rb.color, gt);
        fm.ssim_val = ssim(rb.color, gt);
        out.push_back(fm);
    }
    return out;
}

}  // namespace gsurf
