#pragma once

// Synthetic two-phase scene generator with full ground truth: scripted
// bubble trajectories (optionally with smooth radial deformation), analytic
// SDF, exact surface point clouds, centroid velocities, and a ray-traced
// renderer that shares no code with the surfel rasterizer, so it can serve
// as an unbiased reconstruction target.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "gsurf/core.hpp"
#include "gsurf/image.hpp"
#include "gsurf/threading.hpp"

namespace gsurf {

struct VelocitySegment {
    double t_start = 0.0; // seconds
    Vec3 velocity;        // m/s
};

struct BubbleSpec {
    int spawn_frame = 0;      // 0-based frame at which the bubble appears
    Vec3 spawn_position;      // meters
    double radius = 0.03;     // meters
    std::vector<VelocitySegment> velocity{{0.0, {0.0, 0.3, 0.0}}};
    double deform_amplitude = 0.0; // <= 0.15
    double deform_omega = 8.0;     // rad/s
    double deform_phase = 0.0;     // seeded when generated procedurally
};

struct SceneSpec {
    int frames = 20;
    double dt = 0.01;
    Vec3 bounds_lo{-0.15, -0.05, -0.15};
    Vec3 bounds_hi{0.15, 0.35, 0.15};
    std::vector<BubbleSpec> bubbles;
    // Optional procedural emission from the bottom plane.
    double emission_rate = 0.0; // bubbles per second
    double emission_radius_lo = 0.02, emission_radius_hi = 0.04;
    Vec3 emission_velocity{0.0, 0.3, 0.0};

    void validate() const {
        if (frames < 2) throw Error("spec_invalid", "scene needs at least 2 frames");
        if (!(dt > 0)) throw Error("spec_invalid", "dt must be positive");
        for (const auto& b : bubbles) {
            if (!(b.radius > 0)) throw Error("spec_invalid", "bubble radius must be positive");
            if (b.deform_amplitude < 0 || b.deform_amplitude > 0.15)
                throw Error("spec_invalid", "deformation amplitude must lie in [0, 0.15]");
            if (b.velocity.empty()) throw Error("spec_invalid", "bubble needs a velocity script");
        }
        if (bubbles.empty() && emission_rate <= 0)
            throw Error("spec_invalid", "scene needs bubbles or an emission rate");
    }
};

struct BubbleState {
    int32_t id = 0;
    Vec3 center;
    double radius0 = 0.03;
    double deform_amplitude = 0.0;
    double deform_omega = 8.0;
    double deform_phase = 0.0;
};

struct GroundTruthScene {
    SceneSpec spec;
    std::vector<std::vector<BubbleState>> frames; // per frame, bubbles present
    std::vector<std::map<int32_t, Vec3>> centroid_velocity; // v_{b,t}, defined for t >= 1

    // Deformed radius along direction `dir` (unit) at frame time t.
    double radius_at(const BubbleState& b, double t, const Vec3& dir) const {
        if (b.deform_amplitude == 0.0) return b.radius0;
        // Low-order zonal harmonic about the vertical axis.
        const double ct = dir.y;
        const double y20 = 0.5 * (3.0 * ct * ct - 1.0);
        return b.radius0 * (1.0 + b.deform_amplitude * std::sin(b.deform_omega * t + b.deform_phase) * y20);
    }

    // Radial implicit function (exact SDF for undeformed bubbles):
    // min over bubbles of |x - c| - r(t, dir).
    double field(const Vec3& x, int frame) const {
        const double t = frame * spec.dt;
        double best = 1e300;
        for (const BubbleState& b : frames[static_cast<size_t>(frame)]) {
            const Vec3 d = x - b.center;
            const double dist = norm(d);
            const Vec3 dir = dist > 1e-12 ? d / dist : Vec3{0, 1, 0};
            best = std::min(best, dist - radius_at(b, t, dir));
        }
        return best;
    }

    std::vector<Vec3> surface_points(int frame, int per_bubble = 1024) const {
        const double t = frame * spec.dt;
        std::vector<Vec3> pts;
        const double golden = M_PI * (3.0 - std::sqrt(5.0));
        for (const BubbleState& b : frames[static_cast<size_t>(frame)])
            for (int i = 0; i < per_bubble; ++i) {
                const double y = 1.0 - 2.0 * (i + 0.5) / per_bubble;
                const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
                const double th = golden * i;
                const Vec3 dir{r * std::cos(th), y, r * std::sin(th)};
                pts.push_back(b.center + dir * radius_at(b, t, dir));
            }
        return pts;
    }
};

// Deterministic expansion of the spec into per-frame bubble states.
inline GroundTruthScene generate_scene(uint64_t seed, const SceneSpec& spec) {
    spec.validate();
    GroundTruthScene scene;
    scene.spec = spec;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    std::vector<BubbleSpec> all = spec.bubbles;
    for (auto& b : all)
        if (b.deform_amplitude > 0 && b.deform_phase == 0.0) b.deform_phase = 2.0 * M_PI * u(rng);

    // Procedural emission: spawn times from the rate, positions on the
    // bottom plane of the bounds.
    if (spec.emission_rate > 0) {
        const double horizon = spec.frames * spec.dt;
        double t = 0.0;
        while (true) {
            t += -std::log(std::max(u(rng), 1e-12)) / spec.emission_rate;
            if (t >= horizon) break;
            BubbleSpec b;
            b.spawn_frame = static_cast<int>(t / spec.dt);
            b.spawn_position = {spec.bounds_lo.x + u(rng) * (spec.bounds_hi.x - spec.bounds_lo.x),
                                spec.bounds_lo.y,
                                spec.bounds_lo.z + u(rng) * (spec.bounds_hi.z - spec.bounds_lo.z)};
            b.radius = spec.emission_radius_lo + u(rng) * (spec.emission_radius_hi - spec.emission_radius_lo);
            b.velocity = {{0.0, spec.emission_velocity}};
            all.push_back(b);
        }
    }

    // Scripted position: piecewise-constant velocity integrated from spawn.
    auto position_at = [](const BubbleSpec& b, double t_since_spawn) {
        Vec3 p = b.spawn_position;
        double t0 = 0.0;
        for (size_t k = 0; k < b.velocity.size(); ++k) {
            const double t1 = k + 1 < b.velocity.size()
                                  ? std::min(b.velocity[k + 1].t_start, t_since_spawn)
                                  : t_since_spawn;
            if (t1 > t0) p += b.velocity[k].velocity * (t1 - t0);
            t0 = std::max(t0, t1);
            if (t0 >= t_since_spawn) break;
        }
        return p;
    };

    scene.frames.resize(static_cast<size_t>(spec.frames));
    for (int f = 0; f < spec.frames; ++f)
        for (size_t bi = 0; bi < all.size(); ++bi) {
            const BubbleSpec& b = all[bi];
            if (f < b.spawn_frame) continue;
            BubbleState st;
            st.id = static_cast<int32_t>(bi + 1); // id 0 is the nucleation region
            st.center = position_at(b, (f - b.spawn_frame) * spec.dt);
            st.radius0 = b.radius;
            st.deform_amplitude = b.deform_amplitude;
            st.deform_omega = b.deform_omega;
            st.deform_phase = b.deform_phase;
            scene.frames[static_cast<size_t>(f)].push_back(st);
        }

    scene.centroid_velocity.resize(static_cast<size_t>(spec.frames));
    for (int f = 1; f < spec.frames; ++f) {
        std::map<int32_t, Vec3> prev;
        for (const BubbleState& b : scene.frames[static_cast<size_t>(f - 1)]) prev[b.id] = b.center;
        for (const BubbleState& b : scene.frames[static_cast<size_t>(f)]) {
            auto it = prev.find(b.id);
            if (it != prev.end())
                scene.centroid_velocity[static_cast<size_t>(f)][b.id] = (b.center - it->second) / spec.dt;
        }
    }
    return scene;
}

struct GroundTruthRender {
    Image3 color;
    ImageU16 mask; // stored value = bubble id + 1
    Image1 depth;  // meters; 0 where no hit
};

// Ray-traced rendering of the analytic scene: rigid bubbles by closed-form
// ray-sphere intersection, deformed bubbles by marching plus bisection on
// the radial field. Flat base color with a simple diffuse term; nearest hit
// owns the pixel and the mask.
inline GroundTruthRender render_ground_truth(const GroundTruthScene& scene, int frame,
                                             const CameraModel& cam) {
    GroundTruthRender out;
    out.color = Image3(cam.width, cam.height);
    out.mask = ImageU16(cam.width, cam.height, 0);
    out.depth = Image1(cam.width, cam.height);
    const double t = frame * scene.spec.dt;
    const auto& bubbles = scene.frames[static_cast<size_t>(frame)];
    const Vec3 cam_pos = cam.position();
    const Mat3 rt = cam.rotation.transposed();
    const Vec3 light = normalized(Vec3{0.3, 0.8, -0.55});

    parallel_for(cam.height, [&](int py) {
        for (int px = 0; px < cam.width; ++px) {
            const Vec3 dir_cam{(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0};
            const Vec3 dir = normalized(rt * dir_cam);
            const double z_scale = norm(dir_cam); // ray depth -> camera z

            double best_s = 1e300;
            int best_id = -1;
            Vec3 best_normal{};
            for (const BubbleState& b : bubbles) {
                const Vec3 oc = cam_pos - b.center;
                double s_hit = -1.0;
                Vec3 n_hit{};
                if (b.deform_amplitude == 0.0) {
                    const double bq = dot(oc, dir);
                    const double cq = dot(oc, oc) - b.radius0 * b.radius0;
                    const double disc = bq * bq - cq;
                    if (disc < 0) continue;
                    const double root = std::sqrt(disc);
                    double s = -bq - root;
                    if (s <= 1e-9) s = -bq + root;
                    if (s <= 1e-9) continue;
                    s_hit = s;
                    n_hit = normalized(cam_pos + dir * s - b.center);
                } else {
                    // March the radial field along the ray inside the
                    // bubble's bounding sphere, then bisect the crossing.
                    const double r_max = b.radius0 * (1.0 + b.deform_amplitude);
                    const double bq = dot(oc, dir);
                    const double cq = dot(oc, oc) - r_max * r_max;
                    const double disc = bq * bq - cq;
                    if (disc < 0) continue;
                    const double root = std::sqrt(disc);
                    const double s0 = std::max(-bq - root, 1e-9), s1 = -bq + root;
                    if (s1 <= s0) continue;
                    auto fval = [&](double s) {
                        const Vec3 p = cam_pos + dir * s;
                        const Vec3 d = p - b.center;
                        const double dist = norm(d);
                        const Vec3 rd = dist > 1e-12 ? d / dist : Vec3{0, 1, 0};
                        return dist - scene.radius_at(b, t, rd);
                    };
                    const int steps = 128;
                    double prev_s = s0, prev_f = fval(s0);
                    for (int k = 1; k <= steps; ++k) {
                        const double s = s0 + (s1 - s0) * k / steps;
                        const double fk = fval(s);
                        if (prev_f > 0 && fk <= 0) {
                            double lo = prev_s, hi = s;
                            for (int it = 0; it < 60; ++it) {
                                const double mid = 0.5 * (lo + hi);
                                (fval(mid) > 0 ? lo : hi) = mid;
                            }
                            s_hit = 0.5 * (lo + hi);
                            const double h = 1e-6;
                            const Vec3 p = cam_pos + dir * s_hit;
                            auto fp = [&](const Vec3& q) {
                                const Vec3 d = q - b.center;
                                const double dist = norm(d);
                                const Vec3 rd = dist > 1e-12 ? d / dist : Vec3{0, 1, 0};
                                return dist - scene.radius_at(b, t, rd);
                            };
                            n_hit = normalized(Vec3{fp(p + Vec3{h, 0, 0}) - fp(p - Vec3{h, 0, 0}),
                                                    fp(p + Vec3{0, h, 0}) - fp(p - Vec3{0, h, 0}),
                                                    fp(p + Vec3{0, 0, h}) - fp(p - Vec3{0, 0, h})});
                            break;
                        }
                        prev_s = s;
                        prev_f = fk;
                    }
                    if (s_hit < 0) continue;
                }
                if (s_hit < best_s) {
                    best_s = s_hit;
                    best_id = b.id;
                    best_normal = n_hit;
                }
            }
            if (best_id < 0) continue;
            const double diffuse = std::max(0.0, dot(best_normal, light));
            const double shade = 0.25 + 0.65 * diffuse;
            // Stable per-bubble base tint.
            const double tint = 0.15 * ((best_id * 2654435761u % 7) / 6.0);
            out.color(px, py, 0) = shade * (0.55 + tint);
            out.color(px, py, 1) = shade * (0.68 - 0.5 * tint);
            out.color(px, py, 2) = shade * 0.85;
            out.mask(px, py) = static_cast<uint16_t>(best_id + 1);
            out.depth(px, py) = best_s / z_scale; // Euclidean ray distance -> camera z
        }
    });
    return out;
}

// The three-camera evaluation rig: two input views at +/- half the given
// angle and a held-out middle view, all looking at `center` from `distance`.
inline CameraModel look_at_camera(const std::string& id, const Vec3& eye, const Vec3& center, double fx,
                                  int width, int height) {
    CameraModel cam;
    cam.id = id;
    cam.fx = cam.fy = fx;
    cam.cx = width / 2.0 + 0.5;
    cam.cy = height / 2.0 + 0.5;
    cam.width = width;
    cam.height = height;
    const Vec3 fwd = normalized(center - eye);
    Vec3 up{0, 1, 0};
    if (std::abs(dot(fwd, up)) > 0.999) up = Vec3{1, 0, 0};
    const Vec3 right = normalized(cross(fwd, up));
    const Vec3 down = cross(fwd, right);
    for (int c = 0; c < 3; ++c) {
        cam.rotation(0, c) = right[c];
        cam.rotation(1, c) = down[c];
        cam.rotation(2, c) = fwd[c];
    }
    cam.translation = -(cam.rotation * eye);
    cam.validate();
    return cam;
}

inline std::vector<CameraModel> three_view_rig(const Vec3& center, double distance, double span_deg,
                                               double fx, int width, int height) {
    std::vector<CameraModel> cams;
    const double half = 0.5 * span_deg * M_PI / 180.0;
    int idx = 0;
    for (double az : {-half, 0.0, half}) {
        const Vec3 eye = center + Vec3{distance * std::sin(az), 0.0, -distance * std::cos(az)};
        cams.push_back(look_at_camera("cam" + std::to_string(idx++), eye, center, fx, width, height));
    }
    return cams;
}

}  // namespace gsurf
