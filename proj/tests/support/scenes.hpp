#pragma once

// Shared fixture helpers for the raster/optimizer suites: cameras and
// random scenes kept comfortably inside the view frustum.

#include <random>
#include <vector>

#include "gsurf/core.hpp"

namespace gsurf::testing {

inline CameraModel frontal_camera(int w = 64, int h = 64, double f = 80.0) {
    CameraModel cam;
    cam.id = "c0";
    cam.fx = cam.fy = f;
    cam.cx = w / 2.0 + 0.5;
    cam.cy = h / 2.0 + 0.5;
    cam.width = w;
    cam.height = h;
    return cam;
}

inline Quat random_unit_quat(std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Quat q{g(rng), g(rng), g(rng), g(rng)};
    if (norm(q) < 1e-6) q = Quat{1, 0, 0, 0};
    return normalized(q);
}

// `max_tilt_cos` > 0 keeps disk normals within acos(max_tilt_cos) of the
// optical axis. The gradient suites use it: near-grazing disks make the
// ray-plane chain too curved for a fixed finite-difference step, while the
// rendering suites exercise unrestricted orientations.
inline std::vector<Surfel> random_scene(std::mt19937_64& rng, int count, double spread = 0.15,
                                        double depth0 = 0.9, double depth1 = 1.3,
                                        double max_tilt_cos = 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Surfel> scene;
    for (int i = 0; i < count; ++i) {
        Surfel s;
        s.position = {(u(rng) * 2 - 1) * spread, (u(rng) * 2 - 1) * spread,
                      depth0 + u(rng) * (depth1 - depth0)};
        s.scale = {0.03 + 0.08 * u(rng), 0.03 + 0.08 * u(rng)};
        s.rotation = random_unit_quat(rng);
        while (max_tilt_cos > 0.0 &&
               std::abs(rotation_matrix(s.rotation).col(2).z) < max_tilt_cos)
            s.rotation = random_unit_quat(rng);
        s.color = {u(rng), u(rng), u(rng)};
        s.sdf = (u(rng) * 2 - 1) * 0.03;
        scene.push_back(s);
    }
    return scene;
}

}  // namespace gsurf::testing
