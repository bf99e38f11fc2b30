#pragma once

// Geometric surface constraints that couple surfels with render buffers:
// the depth-projection consistency loss and the normal consistency loss.
// Both return their value and push gradients into the per-surfel buffers
// and/or the per-pixel upstream images consumed by render_backward.

#include <cmath>
#include <vector>

#include "gsurf/raster.hpp"
#include "gsurf/surface.hpp"

namespace gsurf {

struct ProjectionLossStats {
    double loss = 0.0;
    int counted = 0; // surfels inside the image and in front of the camera
    int gated = 0;   // counted but excluded by the epsilon gate
    int skipped = 0; // outside the image or behind the camera
};

// Each surfel is moved onto its estimated zero level set (mu - f n); the
// camera depth of that point is compared against the rendered depth sampled
// at its pixel (nearest-pixel lookup). Discrepancies above `epsilon` are
// gated out; neither the gate nor the pixel choice carries gradient.
// Gradients w.r.t. the rendered depth map are scaled by `scale` and added
// to `up.d_depth`; direct gradients w.r.t. position/rotation/sdf go into
// `gb` when both are non-null.
inline ProjectionLossStats projection_loss(const std::vector<Surfel>& surfels, const CameraModel& cam,
                                           const Image1& depth_render, double epsilon,
                                           GradientBuffers* gb = nullptr, UpstreamGradients* up = nullptr,
                                           double scale = 1.0) {
    ProjectionLossStats stats;
    struct Term {
        size_t i;
        int px, py;
        double sign; // sign(D_render - D_proj)
        Vec3 n_world;
    };
    std::vector<Term> active;
    for (size_t i = 0; i < surfels.size(); ++i) {
        const Surfel& s = surfels[i];
        const Vec3 n = surfel_normal(s);
        const Vec3 proj_point = s.position - n * s.sdf;
        const Vec3 p_cam = cam.to_camera(proj_point);
        if (p_cam.z <= 1e-9) {
            ++stats.skipped;
            continue;
        }
        const double ux = cam.fx * p_cam.x / p_cam.z + cam.cx;
        const double uy = cam.fy * p_cam.y / p_cam.z + cam.cy;
        const int px = static_cast<int>(std::floor(ux));
        const int py = static_cast<int>(std::floor(uy));
        if (px < 0 || py < 0 || px >= cam.width || py >= cam.height) {
            ++stats.skipped;
            continue;
        }
        ++stats.counted;
        const double err = depth_render(px, py) - p_cam.z;
        const double eps_i = std::abs(err);
        if (eps_i > epsilon) {
            ++stats.gated;
            continue;
        }
        stats.loss += eps_i;
        active.push_back({i, px, py, err > 0 ? 1.0 : (err < 0 ? -1.0 : 0.0), n});
    }
    if (stats.counted == 0) return stats;
    const double inv_n = 1.0 / static_cast<double>(stats.counted);
    stats.loss *= inv_n;

    if (gb && up) {
        const Vec3 row_z = cam.rotation.row(2);
        for (const Term& t : active) {
            const double w = scale * inv_n * t.sign;
            // d eps_i / d D_render(px,py) = sign; d eps_i / d D_proj = -sign.
            up->d_depth(t.px, t.py) += w;
            const Surfel& s = surfels[t.i];
            // D_proj = row_z . (mu - f n) + tz.
            gb->d_position[t.i] += row_z * (-w);
            gb->d_sdf[t.i] += w * dot(row_z, t.n_world);
            const Quat qn = normalized(s.rotation);
            const std::array<Mat3, 4> jac = rotation_matrix_jacobian(qn);
            std::array<double, 4> dq{};
            for (int j = 0; j < 4; ++j)
                dq[static_cast<size_t>(j)] = (-w) * (-s.sdf) * dot(row_z, jac[static_cast<size_t>(j)].col(2));
            dq = project_to_quat_tangent(dq, qn);
            for (int j = 0; j < 4; ++j) gb->d_rotation[t.i][static_cast<size_t>(j)] += dq[static_cast<size_t>(j)];
        }
    }
    return stats;
}

struct NormalConsistencyResult {
    double loss = 0.0;
    bool any_valid = false;
};

// Alpha-weighted disagreement between the rendered normal map and normals
// derived from the rendered depth, over pixels where both are valid,
// normalized by the summed alpha of those pixels. Gradients flow into the
// normal, depth (through the depth-to-normal chain), and alpha upstream
// images.
inline NormalConsistencyResult normal_consistency_loss(const RenderBuffers& rb, const CameraModel& cam,
                                                       UpstreamGradients* up = nullptr, double scale = 1.0) {
    const NormalsFromDepth nd = depth_to_normal(rb.depth, rb.alpha, cam);
    NormalConsistencyResult out;
    double num = 0.0, den = 0.0;
    std::vector<uint8_t> used(static_cast<size_t>(cam.width) * cam.height, 0);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            if (!nd.valid[static_cast<size_t>(y) * cam.width + x]) continue;
            const Vec3 nr{rb.normal(x, y, 0), rb.normal(x, y, 1), rb.normal(x, y, 2)};
            if (dot(nr, nr) < 0.25) continue; // rendered normal invalid (zero)
            used[static_cast<size_t>(y) * cam.width + x] = 1;
            const Vec3 ndv{nd.normal(x, y, 0), nd.normal(x, y, 1), nd.normal(x, y, 2)};
            const double a = rb.alpha(x, y);
            num += a * (1.0 - dot(nr, ndv));
            den += a;
        }
    if (den <= 0.0) return out;
    out.any_valid = true;
    out.loss = num / den;

    if (up) {
        Image3 d_depth_normal(cam.width, cam.height);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                if (!used[static_cast<size_t>(y) * cam.width + x]) continue;
                const Vec3 nr{rb.normal(x, y, 0), rb.normal(x, y, 1), rb.normal(x, y, 2)};
                const Vec3 ndv{nd.normal(x, y, 0), nd.normal(x, y, 1), nd.normal(x, y, 2)};
                const double a = rb.alpha(x, y);
                const double w = scale * a / den;
                for (int c = 0; c < 3; ++c) {
                    up->d_normal(x, y, c) += -w * ndv[c];
                    d_depth_normal(x, y, c) = -w * nr[c];
                }
                // d/d alpha: the pixel's own term plus the normalization.
                up->d_alpha(x, y) += scale * ((1.0 - dot(nr, ndv)) - out.loss) / den;
            }
        depth_to_normal_backward(rb.depth, rb.alpha, cam, d_depth_normal, up->d_depth);
    }
    return out;
}

}  // namespace gsurf
