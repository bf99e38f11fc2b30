#pragma once

// Reconstruction configuration file: structured key-value text with every
// optimizer constant pinned, plus a default emitter so runs are exactly
// reproducible from the file alone.

#include <sstream>

#include "gsurf/core.hpp"
#include "gsurf/io.hpp"

namespace gsurf {

inline ReconstructionConfig parse_config(const KvFile& f) {
    ReconstructionConfig c;
    const KvSection& s = f.sections.front();
    auto vec3 = [&](const char* key, Vec3 fallback) {
        const std::string* v = s.find(key);
        if (!v) return fallback;
        std::istringstream ss(*v);
        Vec3 out;
        if (!(ss >> out.x >> out.y >> out.z)) throw Error("parse", std::string("bad vector for ") + key);
        return out;
    };
    c.lambda_app = s.number_or("lambda_app", c.lambda_app);
    c.lambda_geo = s.number_or("lambda_geo", c.lambda_geo);
    c.iterations_frame0 = static_cast<int>(s.number_or("iterations_frame0", c.iterations_frame0));
    c.iterations_frame = static_cast<int>(s.number_or("iterations_frame", c.iterations_frame));
    c.iterations_stage2 = static_cast<int>(s.number_or("iterations_stage2", c.iterations_stage2));
    c.lr_position = s.number_or("lr_position", c.lr_position);
    c.lr_position_final_scale = s.number_or("lr_position_final_scale", c.lr_position_final_scale);
    c.lr_position_frame_scale = s.number_or("lr_position_frame_scale", c.lr_position_frame_scale);
    c.lr_scale = s.number_or("lr_scale", c.lr_scale);
    c.lr_rotation = s.number_or("lr_rotation", c.lr_rotation);
    c.lr_color = s.number_or("lr_color", c.lr_color);
    c.lr_sdf = s.number_or("lr_sdf", c.lr_sdf);
    c.lr_gamma = s.number_or("lr_gamma", c.lr_gamma);
    c.adam_beta1 = s.number_or("adam_beta1", c.adam_beta1);
    c.adam_beta2 = s.number_or("adam_beta2", c.adam_beta2);
    c.adam_eps = s.number_or("adam_eps", c.adam_eps);
    c.epsilon_proj = s.number_or("epsilon_proj", c.epsilon_proj);
    c.gamma_init = s.number_or("gamma_init", c.gamma_init);
    c.init_nucleation_velocity = vec3("init_nucleation_velocity", c.init_nucleation_velocity);
    c.init_bubble_velocity = vec3("init_bubble_velocity", c.init_bubble_velocity);
    c.bubble_guidance = s.number_or("bubble_guidance", c.bubble_guidance ? 1 : 0) != 0;
    c.mask_min_area = static_cast<int>(s.number_or("mask_min_area", c.mask_min_area));
    c.assoc_tau_y = s.number_or("assoc_tau_y", c.assoc_tau_y);
    c.assoc_area_ratio = s.number_or("assoc_area_ratio", c.assoc_area_ratio);
    c.nucleation_band = s.number_or("nucleation_band", c.nucleation_band);
    c.track_max_jump = s.number_or("track_max_jump", c.track_max_jump);
    c.novel_view_count = static_cast<int>(s.number_or("novel_view_count", c.novel_view_count));
    c.novel_view_increment_deg = s.number_or("novel_view_increment_deg", c.novel_view_increment_deg);
    c.orbit_radius = s.number_or("orbit_radius", c.orbit_radius);
    c.refine_strength_near = s.number_or("refine_strength_near", c.refine_strength_near);
    c.refine_strength_far = s.number_or("refine_strength_far", c.refine_strength_far);
    c.stage2_weight_input = s.number_or("stage2_weight_input", c.stage2_weight_input);
    c.stage2_weight_near = s.number_or("stage2_weight_near", c.stage2_weight_near);
    c.stage2_weight_far = s.number_or("stage2_weight_far", c.stage2_weight_far);
    c.init_candidates = static_cast<int>(s.number_or("init_candidates", c.init_candidates));
    c.init_surfels = static_cast<int>(s.number_or("init_surfels", c.init_surfels));
    c.min_surfels = static_cast<int>(s.number_or("min_surfels", c.min_surfels));
    c.densify_interval = static_cast<int>(s.number_or("densify_interval", c.densify_interval));
    c.densify_until = static_cast<int>(s.number_or("densify_until", c.densify_until));
    c.densify_grad_threshold = s.number_or("densify_grad_threshold", c.densify_grad_threshold);
    c.split_scale_cap = s.number_or("split_scale_cap", c.split_scale_cap);
    c.prune_opacity = s.number_or("prune_opacity", c.prune_opacity);
    c.scale_clamp_min = s.number_or("scale_clamp_min", c.scale_clamp_min);
    c.scale_clamp_max = s.number_or("scale_clamp_max", c.scale_clamp_max);
    c.max_surfels = static_cast<int>(s.number_or("max_surfels", c.max_surfels));
    c.seed = static_cast<uint64_t>(s.number_or("seed", static_cast<double>(c.seed)));
    c.validate();
    return c;
}

inline ReconstructionConfig load_config(const fs::path& path) { return parse_config(parse_kv_file(path)); }

inline std::string default_config_text() {
    const ReconstructionConfig c;
    std::ostringstream os;
    auto num = [&](const char* key, double v, const char* comment = nullptr) {
        os << key << " = " << format_double(v);
        if (comment) os << "  # " << comment;
        os << "\n";
    };
    os << "# Reconstruction configuration. Every constant a run depends on is pinned here.\n\n";
    os << "# Combined loss weights: appearance (L1 + SSIM) and geometry (normal\n";
    os << "# consistency + sharpness hinge + depth projection).\n";
    num("lambda_app", c.lambda_app);
    num("lambda_geo", c.lambda_geo);
    os << "\n# Per-frame optimization schedule.\n";
    num("iterations_frame0", c.iterations_frame0, "first frame (with densification)");
    num("iterations_frame", c.iterations_frame, "subsequent frames");
    num("iterations_stage2", c.iterations_stage2);
    os << "\n# Learning rates per attribute group.\n";
    num("lr_position", c.lr_position, "meters; decays exponentially over the first frame");
    num("lr_position_final_scale", c.lr_position_final_scale);
    num("lr_position_frame_scale", c.lr_position_frame_scale,
        "advection supplies motion for t >= 1; optimization only refines");
    num("lr_scale", c.lr_scale);
    num("lr_rotation", c.lr_rotation);
    num("lr_color", c.lr_color);
    num("lr_sdf", c.lr_sdf, "signed-distance samples move faster than appearance");
    num("lr_gamma", c.lr_gamma, "shared opacity sharpness");
    os << "\n# Adam moments.\n";
    num("adam_beta1", c.adam_beta1);
    num("adam_beta2", c.adam_beta2);
    num("adam_eps", c.adam_eps, "small epsilon keeps tiny-gradient steps responsive");
    os << "\n# Geometry constraints.\n";
    num("epsilon_proj", c.epsilon_proj, "meters; gate for the depth-projection loss");
    num("gamma_init", c.gamma_init);
    os << "\n# Bubble guidance.\n";
    os << "init_nucleation_velocity = 0.03 0.03 0  # m/s, bubble index 0\n";
    os << "init_bubble_velocity = 0.07 0.3 0  # m/s, rising bubbles before two centroids exist\n";
    num("bubble_guidance", 1, "0 disables advection initialization (ablation)");
    num("mask_min_area", c.mask_min_area, "pixels; smaller instances do not vote");
    num("assoc_tau_y", c.assoc_tau_y, "cross-view vertical gate, fraction of image height");
    num("assoc_area_ratio", c.assoc_area_ratio);
    num("nucleation_band", c.nucleation_band, "bottom image fraction mapped to bubble index 0");
    num("track_max_jump", c.track_max_jump, "frame-to-frame centroid gate, fraction of height");
    os << "\n# Novel-view orbit and refinement.\n";
    num("novel_view_count", c.novel_view_count);
    num("novel_view_increment_deg", c.novel_view_increment_deg);
    num("orbit_radius", c.orbit_radius, "0 = mean input-camera distance to the scene center");
    num("refine_strength_near", c.refine_strength_near, "views adjacent to the input cameras");
    num("refine_strength_far", c.refine_strength_far, "distant views");
    num("stage2_weight_input", c.stage2_weight_input);
    num("stage2_weight_near", c.stage2_weight_near);
    num("stage2_weight_far", c.stage2_weight_far);
    os << "\n# Frame-0 seeding and densification.\n";
    num("init_candidates", c.init_candidates);
    num("init_surfels", c.init_surfels);
    num("min_surfels", c.min_surfels);
    num("densify_interval", c.densify_interval);
    num("densify_until", c.densify_until);
    num("densify_grad_threshold", c.densify_grad_threshold);
    num("split_scale_cap", c.split_scale_cap, "meters");
    num("prune_opacity", c.prune_opacity);
    num("scale_clamp_min", c.scale_clamp_min, "meters");
    num("scale_clamp_max", c.scale_clamp_max, "meters");
    num("max_surfels", c.max_surfels);
    os << "\nseed = 0\n";
    return os.str();
}

}  // namespace gsurf
