// gsurf: dynamic Gaussian-surfel reconstruction of two-phase flow
// interfaces from sparse multi-view video.
//
// Subcommands cover the whole pipeline: synthetic data generation, stage-1
// reconstruction, novel-view export, refinement, stage-2 reconstruction,
// mesh extraction, velocity estimation, evaluation, and plotting. All
// outputs are deterministic given --seed and independent of --threads.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "gsurf/config.hpp"
#include "gsurf/pipeline.hpp"
#include "gsurf/svg.hpp"
#include "gsurf/threading.hpp"

using namespace gsurf;

namespace {

fs::path resolve_out(const std::string& out, const char* fallback_name) {
    if (!out.empty()) return out;
    const char* root = std::getenv("GSURF_OUT_ROOT");
    return fs::path(root ? root : ".") / fallback_name;
}

SceneSpec load_scene_spec(const fs::path& path, int& width, int& height, double& span_deg,
                          double& distance, double& fx, std::vector<double>& azimuths) {
    const KvFile f = parse_kv_file(path);
    const KvSection& top = f.sections.front();
    SceneSpec spec;
    spec.frames = static_cast<int>(top.number_or("frames", spec.frames));
    spec.dt = top.number_or("dt", spec.dt);
    auto vec3 = [&](const char* key, Vec3 fallback) {
        const std::string* v = top.find(key);
        if (!v) return fallback;
        std::istringstream ss(*v);
        Vec3 out;
        if (!(ss >> out.x >> out.y >> out.z)) throw Error("parse", std::string("bad vector for ") + key);
        return out;
    };
    spec.bounds_lo = vec3("bounds_lo", spec.bounds_lo);
    spec.bounds_hi = vec3("bounds_hi", spec.bounds_hi);
    width = static_cast<int>(top.number_or("width", 128));
    height = static_cast<int>(top.number_or("height", 128));
    span_deg = top.number_or("camera_span_deg", 35.0);
    distance = top.number_or("camera_distance", 0.9);
    fx = top.number_or("camera_fx", 0.0);
    if (const std::string* az = top.find("camera_azimuths")) {
        std::istringstream ss(*az);
        double v;
        while (ss >> v) azimuths.push_back(v);
    }

    for (const KvSection* s : f.all("bubble")) {
        BubbleSpec b;
        b.spawn_frame = static_cast<int>(s->number_or("spawn_frame", 0));
        const auto p = s->numbers("position");
        if (p.size() != 3) throw Error("parse", "bubble position needs 3 numbers");
        b.spawn_position = {p[0], p[1], p[2]};
        b.radius = s->number("radius");
        b.velocity.clear();
        if (const std::string* script = s->find("velocity_script")) {
            // "t vx vy vz ; t vx vy vz ; ..."
            std::istringstream ss(*script);
            std::string seg;
            while (std::getline(ss, seg, ';')) {
                std::istringstream ps(seg);
                VelocitySegment vs;
                if (ps >> vs.t_start >> vs.velocity.x >> vs.velocity.y >> vs.velocity.z)
                    b.velocity.push_back(vs);
            }
        } else {
            const auto v = s->numbers("velocity");
            if (v.size() != 3) throw Error("parse", "bubble velocity needs 3 numbers");
            b.velocity.push_back({0.0, {v[0], v[1], v[2]}});
        }
        b.deform_amplitude = s->number_or("deform_amplitude", 0.0);
        b.deform_omega = s->number_or("deform_omega", 8.0);
        b.deform_phase = s->number_or("deform_phase", 0.0);
        spec.bubbles.push_back(std::move(b));
    }
    if (const KvSection* e = f.first("emission")) {
        spec.emission_rate = e->number("rate");
        spec.emission_radius_lo = e->number_or("radius_lo", spec.emission_radius_lo);
        spec.emission_radius_hi = e->number_or("radius_hi", spec.emission_radius_hi);
        const std::string* v = e->find("velocity");
        if (v) {
            std::istringstream ss(*v);
            ss >> spec.emission_velocity.x >> spec.emission_velocity.y >> spec.emission_velocity.z;
        }
    }
    return spec;
}

std::vector<CameraModel> select_views(const std::vector<CameraModel>& all, const std::string& csv) {
    if (csv.empty()) return all;
    std::vector<CameraModel> out;
    std::istringstream ss(csv);
    std::string id;
    while (std::getline(ss, id, ',')) {
        bool found = false;
        for (const CameraModel& cam : all)
            if (cam.id == id) {
                out.push_back(cam);
                found = true;
            }
        if (!found) throw Error("validation", "camera id '" + id + "' not in the rig");
    }
    return out;
}

int cmd_gen_synthetic(uint64_t seed, const std::string& spec_path, const std::string& out) {
    int width, height;
    double span, distance, fx;
    std::vector<double> azimuths;
    SceneSpec spec = load_scene_spec(spec_path, width, height, span, distance, fx, azimuths);
    const GroundTruthScene scene = generate_scene(seed, spec);

    const Vec3 center = (spec.bounds_lo + spec.bounds_hi) * 0.5;
    if (fx <= 0) {
        // Fit the largest bounds extent into ~80% of the image width.
        const Vec3 ext = spec.bounds_hi - spec.bounds_lo;
        const double diag = std::max({ext.x, ext.y, ext.z});
        fx = 0.8 * width * distance / diag;
    }
    std::vector<CameraModel> cams;
    if (azimuths.empty()) {
        cams = three_view_rig(center, distance, span, fx, width, height);
    } else {
        int idx = 0;
        for (double az_deg : azimuths) {
            const double az = az_deg * M_PI / 180.0;
            const Vec3 eye = center + Vec3{distance * std::sin(az), 0.0, -distance * std::cos(az)};
            cams.push_back(look_at_camera("cam" + std::to_string(idx++), eye, center, fx, width, height));
        }
    }
    const fs::path root = resolve_out(out, "synthetic");
    write_synthetic_dataset(root, scene, cams);
    std::cout << "wrote " << root.string() << " (" << spec.frames << " frames, " << cams.size()
              << " cameras)\n";
    return 0;
}

int cmd_reconstruct(const std::string& data, const std::string& cameras_csv,
                    const std::string& config_path, const std::string& out, uint64_t seed,
                    bool no_guidance) {
    Dataset ds = Dataset::open(data);
    std::vector<CameraModel> inputs = select_views(ds.cameras, cameras_csv);
    ReconstructionConfig cfg = config_path.empty() ? ReconstructionConfig{} : load_config(config_path);
    cfg.seed = seed;
    if (no_guidance) cfg.bubble_guidance = false;
    const fs::path root = resolve_out(out, "stage1");

    const ReconstructionRun run = run_reconstruction(ds, inputs, {}, cfg, StageOptions{});
    if (run.hull_empty)
        std::cerr << "warning: visual hull was empty; fell back to uniform seeding\n";
    write_checkpoint(root / "checkpoint.bin", run.sequence);
    write_loss_trace_csv(root / "loss.csv", run.traces);
    std::cout << "wrote " << (root / "checkpoint.bin").string() << " (" << run.sequence.frames.size()
              << " frames, " << run.sequence.frames.back().size() << " surfels, gamma "
              << format_double(run.sequence.gamma) << ")\n";
    return 0;
}

int cmd_render_orbit(const std::string& checkpoint, const std::string& data,
                     const std::string& cameras_csv, const std::string& config_path,
                     const std::string& out) {
    const SceneSequence seq = read_checkpoint(checkpoint);
    Dataset ds = Dataset::open(data);
    const std::vector<CameraModel> inputs = select_views(ds.cameras, cameras_csv);
    ReconstructionConfig cfg = config_path.empty() ? ReconstructionConfig{} : load_config(config_path);
    const fs::path root = resolve_out(out, "rough");
    render_rough_videos(seq, inputs.front(), inputs, cfg, root);
    std::cout << "wrote " << root.string() << " (" << cfg.novel_view_count << " views x "
              << seq.frames.size() << " frames)\n";
    return 0;
}

int cmd_refine(const std::string& rough, const std::string& hook_name, double strength,
               const std::string& external, const std::string& out) {
    RefinerHook hook;
    if (hook_name == "identity")
        hook.kind = RefinerKind::Identity;
    else if (hook_name == "denoise")
        hook.kind = RefinerKind::GaussianDenoise;
    else if (hook_name == "external")
        hook.kind = RefinerKind::External;
    else
        throw Error("validation", "unknown refiner hook '" + hook_name + "'");
    hook.strength = strength;
    hook.external_dir = external;
    if (hook.kind == RefinerKind::External && external.empty())
        throw Error("validation", "--external is required for the external hook");
    const fs::path root = resolve_out(out, "refined");
    refine_videos(rough, hook, root);
    std::cout << "wrote " << root.string() << "\n";
    return 0;
}

int cmd_reconstruct_stage2(const std::string& checkpoint, const std::string& refined,
                           const std::string& data, const std::string& cameras_csv,
                           const std::string& config_path, const std::string& out, uint64_t seed,
                           double novel_weight_scale) {
    const SceneSequence stage1 = read_checkpoint(checkpoint);
    Dataset ds = Dataset::open(data);
    const std::vector<CameraModel> inputs = select_views(ds.cameras, cameras_csv);
    ReconstructionConfig cfg = config_path.empty() ? ReconstructionConfig{} : load_config(config_path);
    cfg.seed = seed;

    StageOptions opt;
    opt.initial_surfels = stage1.frames.front();
    opt.initial_gamma = stage1.gamma; // stage 2 carries the stage-1 sharpness forward
    opt.densify = false;
    opt.iterations_frame0 = cfg.iterations_stage2;
    opt.iterations_frame = cfg.iterations_stage2;

    const std::vector<NovelSupervision> novel =
        novel_supervision_from_refined(refined, novel_weight_scale);
    const fs::path root = resolve_out(out, "stage2");
    const ReconstructionRun run = run_reconstruction(ds, inputs, novel, cfg, opt);
    write_checkpoint(root / "checkpoint.bin", run.sequence);
    write_loss_trace_csv(root / "loss.csv", run.traces);
    std::cout << "wrote " << (root / "checkpoint.bin").string() << " (" << novel.size()
              << " novel views supervising)\n";
    return 0;
}

int cmd_extract_mesh(const std::string& checkpoint, int frame, int resolution, const std::string& out) {
    const SceneSequence seq = read_checkpoint(checkpoint);
    if (frame < 1 || frame > static_cast<int>(seq.frames.size()))
        throw Error("validation", "frame out of range");
    const TriangleMesh mesh = extract_mesh_from_frame(seq.frames[static_cast<size_t>(frame - 1)], resolution);
    const fs::path path = out.empty() ? resolve_out("", "mesh.obj") : fs::path(out);
    if (path.extension() == ".ply")
        write_ply(path, mesh);
    else
        write_obj(path, mesh);
    std::cout << "wrote " << path.string() << " (" << mesh.vertices.size() << " vertices, "
              << mesh.faces.size() << " faces)\n";
    return 0;
}

int cmd_estimate_velocity(const std::string& checkpoint, const std::string& out) {
    SceneSequence seq = read_checkpoint(checkpoint);
    estimate_velocities(seq);
    const fs::path path = out.empty() ? resolve_out("", "velocity.csv") : fs::path(out);
    write_velocity_csv(path, seq.bubble_velocity_series);
    std::cout << "wrote " << path.string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& pred, const std::string& gt, const std::string& pred_points,
                 const std::string& gt_points, const std::string& pred_velocity,
                 const std::string& gt_velocity, const std::string& out) {
    std::vector<std::vector<std::string>> rows;
    if (!pred.empty() && !gt.empty()) {
        for (int t = 1;; ++t) {
            const fs::path pp = fs::path(pred) / frame_file_name(t);
            const fs::path gp = fs::path(gt) / frame_file_name(t);
            if (!fs::exists(pp) || !fs::exists(gp)) {
                if (t == 1) throw Error("validation", "no frame_00001.png under --pred/--gt");
                break;
            }
            const Image3 a = read_png8(pp), b = read_png8(gp);
            rows.push_back({std::to_string(t), "l1", format_double(image_l1(a, b))});
            rows.push_back({std::to_string(t), "psnr", format_double(psnr(a, b))});
            rows.push_back({std::to_string(t), "ssim", format_double(ssim(a, b))});
        }
    }
    if (!pred_points.empty() && !gt_points.empty()) {
        for (int t = 1;; ++t) {
            const fs::path pp = fs::path(pred_points) / frame_file_name(t, "bin");
            const fs::path gp = fs::path(gt_points) / frame_file_name(t, "bin");
            if (!fs::exists(pp) || !fs::exists(gp)) break;
            rows.push_back(
                {std::to_string(t), "chamfer", format_double(chamfer(read_points(pp), read_points(gp)))});
        }
    }
    if (!pred_velocity.empty() && !gt_velocity.empty()) {
        const auto est = read_velocity_csv(pred_velocity);
        const auto ref = read_velocity_csv(gt_velocity);
        const size_t T = std::min(est.size(), ref.size());
        for (size_t t = 0; t < T; ++t) {
            if (est[t].empty() && ref[t].empty()) continue;
            rows.push_back({std::to_string(t + 1), "velocity_l1",
                            format_double(velocity_l1(est[t], ref[t]))});
        }
    }
    if (rows.empty()) throw Error("validation", "nothing to evaluate; pass at least one input pair");
    const fs::path path = out.empty() ? resolve_out("", "metrics.csv") : fs::path(out);
    write_csv(path, {"t", "metric", "value"}, rows);
    std::cout << "wrote " << path.string() << " (" << rows.size() << " rows)\n";
    return 0;
}

int cmd_plot(const std::string& velocity_csv, const std::string& ref_csv, double dt,
             const std::string& out) {
    const auto est = read_velocity_csv(velocity_csv);
    std::optional<std::vector<std::map<int32_t, Vec3>>> ref;
    if (!ref_csv.empty()) ref = read_velocity_csv(ref_csv);
    const std::string svg = velocity_plot_svg(est, ref ? &*ref : nullptr, dt);
    const fs::path path = out.empty() ? resolve_out("", "velocity.svg") : fs::path(out);
    ensure_parent_dir(path);
    std::ofstream os(path);
    os << svg;
    std::cout << "wrote " << path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gsurf: SDF-augmented Gaussian-surfel reconstruction of two-phase interfaces"};
    app.require_subcommand(0, 1);

    int threads = 0;
    uint64_t seed = 0;
    bool verbose = false;
    app.add_option("--threads", threads, "worker threads (0 = hardware concurrency)");
    app.add_option("--seed", seed, "random seed shared by all sampling");
    app.add_flag("--verbose", verbose, "chatty progress output");

    bool print_default_config = false;
    app.add_flag("--print-default-config", print_default_config,
                 "write the default reconstruction config to stdout and exit");

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset with ground truth");
    std::string gen_spec, gen_out;
    gen->add_option("--spec", gen_spec, "scene spec file")->required();
    gen->add_option("--out", gen_out, "output dataset directory");

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "stage-1 reconstruction from input views");
    std::string rec_data, rec_views, rec_config, rec_out;
    bool rec_noguide = false;
    rec->add_option("--data", rec_data, "dataset directory")->required();
    rec->add_option("--views", rec_views, "comma-separated input camera ids (default: all)");
    rec->add_option("--config", rec_config, "reconstruction config file");
    rec->add_option("--out", rec_out, "output directory");
    rec->add_flag("--no-bubble-guidance", rec_noguide, "disable advection initialization (ablation)");

    // render-orbit
    auto* orb = app.add_subcommand("render-orbit", "render rough novel-view videos");
    std::string orb_ckpt, orb_data, orb_views, orb_config, orb_out;
    orb->add_option("--checkpoint", orb_ckpt)->required();
    orb->add_option("--data", orb_data, "dataset directory (for the camera rig)")->required();
    orb->add_option("--views", orb_views, "input camera ids (reference = first)");
    orb->add_option("--config", orb_config);
    orb->add_option("--out", orb_out);

    // refine
    auto* ref = app.add_subcommand("refine", "apply a refiner hook to rough videos");
    std::string ref_rough, ref_hook = "identity", ref_external, ref_out;
    double ref_strength = 0.0;
    ref->add_option("--rough", ref_rough, "rough video directory (with manifest)")->required();
    ref->add_option("--hook", ref_hook, "identity | denoise | external");
    ref->add_option("--strength", ref_strength, "denoise blend override (0 = per-view manifest value)");
    ref->add_option("--external", ref_external, "directory of externally refined frames");
    ref->add_option("--out", ref_out);

    // reconstruct-stage2
    auto* st2 = app.add_subcommand("reconstruct-stage2", "re-optimize with refined novel views");
    std::string st2_ckpt, st2_refined, st2_data, st2_views, st2_config, st2_out;
    double st2_wscale = 1.0;
    st2->add_option("--checkpoint", st2_ckpt, "stage-1 checkpoint")->required();
    st2->add_option("--refined", st2_refined, "refined video directory")->required();
    st2->add_option("--data", st2_data, "dataset directory")->required();
    st2->add_option("--views", st2_views);
    st2->add_option("--config", st2_config);
    st2->add_option("--out", st2_out);
    st2->add_option("--novel-weight-scale", st2_wscale,
                    "scales every novel-view weight (0 drops them all)");

    // extract-mesh
    auto* mesh = app.add_subcommand("extract-mesh", "marching-cubes interface extraction");
    std::string mesh_ckpt, mesh_out;
    int mesh_frame = 1, mesh_res = 128;
    mesh->add_option("--checkpoint", mesh_ckpt)->required();
    mesh->add_option("--frame", mesh_frame, "1-based frame index");
    mesh->add_option("--resolution", mesh_res, "grid samples per axis");
    mesh->add_option("--out", mesh_out, ".obj or .ply path");

    // estimate-velocity
    auto* vel = app.add_subcommand("estimate-velocity", "per-bubble velocity CSV from a checkpoint");
    std::string vel_ckpt, vel_out;
    vel->add_option("--checkpoint", vel_ckpt)->required();
    vel->add_option("--out", vel_out);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "image/geometry/velocity metric report");
    std::string ev_pred, ev_gt, ev_pp, ev_gp, ev_pv, ev_gv, ev_out;
    ev->add_option("--pred", ev_pred, "directory of predicted frames");
    ev->add_option("--gt", ev_gt, "directory of reference frames");
    ev->add_option("--pred-points", ev_pp, "directory of predicted point clouds");
    ev->add_option("--gt-points", ev_gp, "directory of reference point clouds");
    ev->add_option("--pred-velocity", ev_pv, "predicted velocity CSV");
    ev->add_option("--gt-velocity", ev_gv, "reference velocity CSV");
    ev->add_option("--out", ev_out);

    // plot
    auto* plot = app.add_subcommand("plot", "velocity-versus-time SVG curves");
    std::string plot_csv, plot_ref, plot_out;
    double plot_dt = 1.0;
    plot->add_option("--velocity-csv", plot_csv)->required();
    plot->add_option("--ref-csv", plot_ref, "overlay reference velocities (dashed)");
    plot->add_option("--dt", plot_dt, "seconds per frame for the time axis");
    plot->add_option("--out", plot_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "ERROR:usage: " << e.what() << "\n";
        return 2;
    }

    if (print_default_config) {
        std::cout << default_config_text();
        return 0;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << "ERROR:usage: a subcommand is required (see --help)\n";
        return 2;
    }

    if (threads > 0) set_thread_count(threads);

    try {
        if (gen->parsed()) return cmd_gen_synthetic(seed, gen_spec, gen_out);
        if (rec->parsed()) return cmd_reconstruct(rec_data, rec_views, rec_config, rec_out, seed, rec_noguide);
        if (orb->parsed()) return cmd_render_orbit(orb_ckpt, orb_data, orb_views, orb_config, orb_out);
        if (ref->parsed()) return cmd_refine(ref_rough, ref_hook, ref_strength, ref_external, ref_out);
        if (st2->parsed())
            return cmd_reconstruct_stage2(st2_ckpt, st2_refined, st2_data, st2_views, st2_config, st2_out,
                                          seed, st2_wscale);
        if (mesh->parsed()) return cmd_extract_mesh(mesh_ckpt, mesh_frame, mesh_res, mesh_out);
        if (vel->parsed()) return cmd_estimate_velocity(vel_ckpt, vel_out);
        if (ev->parsed()) return cmd_evaluate(ev_pred, ev_gt, ev_pp, ev_gp, ev_pv, ev_gv, ev_out);
        if (plot->parsed()) return cmd_plot(plot_csv, plot_ref, plot_dt, plot_out);
    } catch (const Error& e) {
        std::cerr << "ERROR:" << e.code() << ": " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "ERROR:internal: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
