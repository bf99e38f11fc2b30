#pragma once

// Domain types shared by every other module: surfels, cameras, frame data,
// reconstructed sequences, and the reconstruction configuration. All types
// are plain value types; once constructed they are safe to copy and share
// across threads.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gsurf/vec.hpp"

namespace gsurf {

// All throwing paths use this type; `code` is the stable machine-readable
// identifier the CLI prints as ERROR:<code>:.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const { return code_; }

private:
    std::string code_;
};

constexpr int32_t kUnassignedBubble = -1;

// Oriented elliptical disk with Gaussian falloff in its tangent plane.
// Opacity is never stored; it is always derived from `sdf` through the
// opacity transform in surface.hpp.
struct Surfel {
    Vec3 position;             // meters, world frame
    Vec2 scale{0.01, 0.01};    // meters, per tangent axis; strictly positive
    Quat rotation;             // unit quaternion; tangent axes = first two columns
    Vec3 color{0.5, 0.5, 0.5}; // RGB in [0,1]
    double sdf = 0.0;          // meters, signed distance sample
    int32_t bubble_id = kUnassignedBubble;
};

inline Vec3 surfel_tangent_u(const Surfel& s) { return rotation_matrix(s.rotation).col(0); }
inline Vec3 surfel_tangent_v(const Surfel& s) { return rotation_matrix(s.rotation).col(1); }

// Unit normal t_u x t_v; for a proper rotation this is the third column of
// the rotation matrix.
inline Vec3 surfel_normal(const Surfel& s) { return rotation_matrix(s.rotation).col(2); }

struct PixelDepth {
    Vec2 pixel;   // continuous pixel coordinates
    double depth; // camera-space z, meters
};

// Pinhole camera with metric extrinsics. `world_to_camera` maps world
// points into the camera frame: p_cam = R p + t, z forward, y down in the
// image. Pixel (ix, iy) covers [ix, ix+1) x [iy, iy+1) with its sample
// point at (ix + 0.5, iy + 0.5).
struct CameraModel {
    std::string id;
    double fx = 0, fy = 0, cx = 0, cy = 0; // pixels
    int width = 0, height = 0;             // pixels
    Mat3 rotation;                         // world-to-camera rotation block
    Vec3 translation;                      // world-to-camera translation, meters

    Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
    Vec3 to_world(const Vec3& p_cam) const { return rotation.transposed() * (p_cam - translation); }
    Vec3 position() const { return rotation.transposed() * (-translation); }

    void validate() const {
        if (!(fx > 0) || !(fy > 0)) throw Error("camera_invalid", "camera " + id + ": fx, fy must be positive");
        if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
            throw Error("camera_invalid", "camera " + id + ": principal point outside image");
        if (width <= 0 || height <= 0) throw Error("camera_invalid", "camera " + id + ": empty image plane");
        const Mat3 rtr = rotation.transposed() * rotation;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const double want = (r == c) ? 1.0 : 0.0;
                if (std::abs(rtr(r, c) - want) > 1e-6)
                    throw Error("camera_invalid", "camera " + id + ": rotation not orthonormal");
            }
        if (std::abs(determinant(rotation) - 1.0) > 1e-6)
            throw Error("camera_invalid", "camera " + id + ": rotation determinant is not +1");
    }
};

// Projects a world point; throws behind_camera when the camera-space depth
// is not strictly positive.
inline PixelDepth project(const CameraModel& cam, const Vec3& point) {
    const Vec3 p = cam.to_camera(point);
    if (p.z <= 1e-9) throw Error("behind_camera", "point behind camera " + cam.id);
    return {{cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy}, p.z};
}

// Inverse of project at a known depth.
inline Vec3 backproject(const CameraModel& cam, const Vec2& pixel, double depth) {
    const Vec3 p_cam{(pixel.x - cam.cx) / cam.fx * depth, (pixel.y - cam.cy) / cam.fy * depth, depth};
    return cam.to_world(p_cam);
}

// Binary instance mask for one bubble in one view.
struct InstanceMask {
    int32_t id = kUnassignedBubble; // bubble id; kUnassignedBubble if not yet associated
    int width = 0, height = 0;
    std::vector<uint8_t> bits; // row-major, 0/1

    bool at(int x, int y) const {
        if (x < 0 || y < 0 || x >= width || y >= height) return false;
        return bits[static_cast<size_t>(y) * width + x] != 0;
    }
    int area() const {
        int a = 0;
        for (uint8_t b : bits) a += b != 0;
        return a;
    }
    Vec2 centroid_px() const {
        double sx = 0, sy = 0;
        long n = 0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (bits[static_cast<size_t>(y) * width + x]) {
                    sx += x + 0.5;
                    sy += y + 0.5;
                    ++n;
                }
        if (n == 0) return {0, 0};
        return {sx / n, sy / n};
    }
};

// One timestep of multi-view observations. Entries are aligned with the
// camera list used by the pipeline.
struct FrameSet {
    int time_index = 1; // 1-based, matches on-disk frame numbering
    double dt = 1.0;    // seconds between consecutive frames
    std::vector<std::vector<double>> images;         // per view, HxWx3 row-major in [0,1]
    std::vector<std::vector<InstanceMask>> masks;    // per view, per instance
    std::vector<int> widths, heights;                // per view
};

// Reconstructed dynamic scene: per-frame surfel sets with identity
// correspondence for t >= 1, the shared sharpness gamma, and velocity
// estimates. Velocities are in m/s.
struct SceneSequence {
    std::vector<std::vector<Surfel>> frames;
    double gamma = 50.0;
    double dt = 1.0;
    std::map<int32_t, Vec3> bubble_velocities;                // latest advection estimate u_b
    std::vector<std::vector<Vec3>> surfel_velocities;         // v_{i,t}, empty at t = 0
    std::vector<std::map<int32_t, Vec3>> bubble_velocity_series; // v_{b,t}, empty at t = 0
};

struct ReconstructionConfig {
    // Loss weights.
    double lambda_app = 1.0;
    double lambda_geo = 0.05;

    // Per-frame optimization.
    int iterations_frame0 = 2000;
    int iterations_frame = 300;
    int iterations_stage2 = 300;

    // Learning rates per attribute group.
    double lr_position = 1.6e-4;
    double lr_position_final_scale = 0.01; // exponential decay target over the frame-0 schedule
    double lr_position_frame_scale = 0.1;  // tracking-phase multiplier for frames t >= 1
    double lr_scale = 5e-3;
    double lr_rotation = 1e-3;
    double lr_color = 2.5e-3;
    double lr_sdf = 0.05;
    double lr_gamma = 1e-2;

    // Adam.
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-15;

    // Geometry losses.
    double epsilon_proj = 0.1; // meters, projection-loss gate
    double gamma_init = 50.0;

    // Bubble guidance.
    Vec3 init_nucleation_velocity{0.03, 0.03, 0.0};
    Vec3 init_bubble_velocity{0.07, 0.3, 0.0};
    bool bubble_guidance = true;
    int mask_min_area = 25;        // pixels
    double assoc_tau_y = 0.05;     // vertical gate, fraction of image height
    double assoc_area_ratio = 3.0; // cross-view area gate
    double nucleation_band = 0.05; // bottom fraction of rows assigned id 0
    double track_max_jump = 0.2;   // frame-to-frame centroid gate, fraction of height

    // Novel views / refinement.
    int novel_view_count = 11;
    double novel_view_increment_deg = 30.0;
    double orbit_radius = 0.0; // 0 = mean input-camera distance to scene center
    double refine_strength_near = 0.2;
    double refine_strength_far = 0.35;
    double stage2_weight_input = 1.0;
    double stage2_weight_near = 0.5;
    double stage2_weight_far = 0.25;

    // Frame-0 initialization and densification.
    int init_candidates = 40000;
    int init_surfels = 1500;
    int min_surfels = 256;
    int densify_interval = 200;
    int densify_until = 1200;
    double densify_grad_threshold = 2e-6;
    double split_scale_cap = 0.05; // meters
    double prune_opacity = 0.005;
    double scale_clamp_min = 1e-6; // meters
    double scale_clamp_max = 0.2;  // meters
    int max_surfels = 20000;

    uint64_t seed = 0;

    void validate() const {
        auto finite = [](double v) { return std::isfinite(v); };
        const double scalars[] = {lambda_app, lambda_geo, lr_position, lr_scale, lr_rotation,
                                  lr_color, lr_sdf, lr_gamma, adam_beta1, adam_beta2, adam_eps,
                                  epsilon_proj, gamma_init, refine_strength_near, refine_strength_far,
                                  stage2_weight_input, stage2_weight_near, stage2_weight_far};
        for (double v : scalars)
            if (!finite(v)) throw Error("config_invalid", "non-finite scalar in configuration");
        const double weights[] = {refine_strength_near, refine_strength_far, stage2_weight_input,
                                  stage2_weight_near, stage2_weight_far};
        for (double w : weights)
            if (w < 0.0 || w > 1.0) throw Error("config_invalid", "weights must lie in [0,1]");
        if (lambda_app < 0 || lambda_geo < 0) throw Error("config_invalid", "loss weights must be non-negative");
        if (iterations_frame0 < 0 || iterations_frame < 0 || iterations_stage2 < 0)
            throw Error("config_invalid", "iteration counts must be non-negative");
        if (!(gamma_init > 0)) throw Error("config_invalid", "gamma_init must be positive");
    }
};

}  // namespace gsurf
