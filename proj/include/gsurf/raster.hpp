#pragma once

// Differentiable surfel rasterizer. Forward: every pixel ray is intersected
// with each surfel's tangent plane; the tangent-plane offset gives a
// Gaussian weight, the SDF value gives opacity, and contributions are
// composited front to back in (depth, surfel index) order. Backward:
// reverse-mode gradients of arbitrary per-pixel losses on the color, depth,
// normal, and alpha maps with respect to every surfel attribute and gamma.
//
// Compositing is C1 in all attributes: the Gaussian footprint is multiplied
// by a smooth window that reaches exactly zero at 3 sigma, and the small-
// alpha cutoff ramps smoothly from 1/255 to 2/255 instead of switching.
// This keeps analytic gradients in agreement with central finite
// differences, which the test suites check.
//
// The backward accumulators are per tile-row partial sums reduced in fixed
// order, so results are identical for any thread count.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "gsurf/core.hpp"
#include "gsurf/image.hpp"
#include "gsurf/surface.hpp"
#include "gsurf/threading.hpp"

namespace gsurf {

constexpr double kAlphaFloor = 1.0 / 255.0;   // contributions below this are dropped
constexpr double kTransmittanceStop = 1e-4;   // compositing stops once this opaque
constexpr double kFootprintRho2 = 9.0;        // 3 sigma footprint bound
constexpr double kBufferValidAlpha = 1e-4;    // depth/normal validity threshold
constexpr int kTileSize = 16;

struct RenderBuffers {
    Image3 color;
    Image1 depth;  // alpha-composited plane-intersection depth, meters
    Image3 normal; // camera-space, unit length where valid
    Image1 alpha;

    bool valid(int x, int y) const { return alpha(x, y) > kBufferValidAlpha; }
};

struct GradientBuffers {
    std::vector<Vec3> d_position;
    std::vector<Vec2> d_scale;
    std::vector<std::array<double, 4>> d_rotation; // tangent-space quaternion gradient
    std::vector<Vec3> d_color;
    std::vector<double> d_sdf;
    double d_gamma = 0.0;

    void resize(size_t n) {
        d_position.assign(n, Vec3{});
        d_scale.assign(n, Vec2{0, 0});
        d_rotation.assign(n, {0, 0, 0, 0});
        d_color.assign(n, Vec3{});
        d_sdf.assign(n, 0.0);
        d_gamma = 0.0;
    }

    bool finite() const {
        auto ok = [](double v) { return std::isfinite(v); };
        for (size_t i = 0; i < d_sdf.size(); ++i) {
            const Vec3& p = d_position[i];
            const Vec3& c = d_color[i];
            if (!ok(p.x) || !ok(p.y) || !ok(p.z) || !ok(d_scale[i].x) || !ok(d_scale[i].y) ||
                !ok(c.x) || !ok(c.y) || !ok(c.z) || !ok(d_sdf[i]))
                return false;
            for (double r : d_rotation[i])
                if (!ok(r)) return false;
        }
        return ok(d_gamma);
    }
};

// Per-pixel loss gradients fed into render_backward.
struct UpstreamGradients {
    Image3 d_color;
    Image1 d_depth;
    Image3 d_normal; // w.r.t. the normalized normal map
    Image1 d_alpha;

    explicit UpstreamGradients(const CameraModel& cam)
        : d_color(cam.width, cam.height),
          d_depth(cam.width, cam.height),
          d_normal(cam.width, cam.height),
          d_alpha(cam.width, cam.height) {}
};

// Camera-space per-surfel quantities shared by the forward and backward
// passes (and by the serial reference renderer in the test suite).
struct SurfelCam {
    Vec3 mu_c;
    Vec3 a0, a1, a2; // rotated tangent axes and normal
    double sx = 1, sy = 1;
    Vec3 color;
    double opacity = 0, d_op_f = 0, d_op_gamma = 0;
};

inline SurfelCam surfel_camera_data(const Surfel& s, double gamma, const CameraModel& cam) {
    SurfelCam sc;
    sc.mu_c = cam.to_camera(s.position);
    const Mat3 r = cam.rotation * rotation_matrix(s.rotation);
    sc.a0 = r.col(0);
    sc.a1 = r.col(1);
    sc.a2 = r.col(2);
    sc.sx = s.scale.x;
    sc.sy = s.scale.y;
    sc.color = s.color;
    const OpacityGrad og = opacity_transform_grad(s.sdf, gamma);
    sc.opacity = og.value;
    sc.d_op_f = og.d_f;
    sc.d_op_gamma = og.d_gamma;
    return sc;
}

inline Vec3 pixel_ray(const CameraModel& cam, int px, int py) {
    return {(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0};
}

// Smooth footprint window: 1 inside rho2 <= 8, 0 at rho2 >= 9 (3 sigma),
// cubic ramp between. Zero value and slope at both ends.
inline double footprint_window(double rho2) {
    if (rho2 <= 8.0) return 1.0;
    if (rho2 >= kFootprintRho2) return 0.0;
    const double s = kFootprintRho2 - rho2;
    return s * s * (3.0 - 2.0 * s);
}

inline double footprint_window_deriv(double rho2) {
    if (rho2 <= 8.0 || rho2 >= kFootprintRho2) return 0.0;
    const double s = kFootprintRho2 - rho2;
    return -6.0 * s * (1.0 - s);
}

// Smooth small-contribution cutoff: multiplier 0 at alpha <= 1/255, 1 at
// alpha >= 2/255.
inline double alpha_cutoff_ramp(double a_raw) {
    if (a_raw <= kAlphaFloor) return 0.0;
    if (a_raw >= 2.0 * kAlphaFloor) return 1.0;
    const double s = (a_raw - kAlphaFloor) / kAlphaFloor;
    return s * s * (3.0 - 2.0 * s);
}

inline double alpha_cutoff_ramp_deriv(double a_raw) {
    if (a_raw <= kAlphaFloor || a_raw >= 2.0 * kAlphaFloor) return 0.0;
    const double s = (a_raw - kAlphaFloor) / kAlphaFloor;
    return 6.0 * s * (1.0 - s) / kAlphaFloor;
}

struct SplatSample {
    bool hit = false;
    double tau = 0;  // camera depth of the ray-plane intersection
    double u = 0, v = 0;
    double rho2 = 0;
    double gauss = 0;  // exp(-rho2/2)
    double win = 0;    // footprint window
    double alpha = 0;  // effective alpha after the cutoff ramp
    double alpha_raw = 0;
    double flip = 1.0; // -1 when the normal is flipped toward the camera
};

// Ray-disk evaluation. Surfels whose plane is parallel to the ray (within
// 1e-12 of the normalized direction) are skipped, as are intersections
// behind the camera, outside the 3 sigma footprint, or below the alpha
// floor.
inline SplatSample intersect_surfel(const SurfelCam& sc, const Vec3& dir) {
    SplatSample out;
    const double q = dot(sc.a2, dir);
    if (std::abs(q) <= 1e-12 * norm(dir)) return out;
    const double tau = dot(sc.a2, sc.mu_c) / q;
    if (tau <= 1e-9) return out;
    const Vec3 x = dir * tau;
    const Vec3 r = x - sc.mu_c;
    const double u = dot(sc.a0, r);
    const double v = dot(sc.a1, r);
    const double ru = u / sc.sx;
    const double rv = v / sc.sy;
    const double rho2 = ru * ru + rv * rv;
    if (rho2 >= kFootprintRho2) return out;
    const double gauss = std::exp(-0.5 * rho2);
    const double win = footprint_window(rho2);
    const double a_raw = sc.opacity * gauss * win;
    if (a_raw <= kAlphaFloor) return out;
    out.hit = true;
    out.tau = tau;
    out.u = u;
    out.v = v;
    out.rho2 = rho2;
    out.gauss = gauss;
    out.win = win;
    out.alpha_raw = a_raw;
    out.alpha = a_raw * alpha_cutoff_ramp(a_raw);
    out.flip = q > 0.0 ? -1.0 : 1.0;
    return out;
}

namespace detail {

struct Hit {
    int index;
    SplatSample s;
};

inline void sort_hits(std::vector<Hit>& hits) {
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        return a.s.tau != b.s.tau ? a.s.tau < b.s.tau : a.index < b.index;
    });
}

// Conservative pixel-range estimate from the camera-space bounding sphere
// of the 3 sigma footprint. Never excludes a pixel whose ray can produce a
// contribution.
struct PixelRange {
    int x0, x1, y0, y1; // inclusive; empty when x0 > x1
};

inline PixelRange surfel_pixel_range(const SurfelCam& sc, const CameraModel& cam) {
    const double rb = 3.0 * std::max(sc.sx, sc.sy);
    if (sc.mu_c.z + rb <= 1e-9) return {1, 0, 1, 0}; // entirely behind the camera
    if (sc.mu_c.z - rb <= 1e-9) return {0, cam.width - 1, 0, cam.height - 1};
    const double zlo = sc.mu_c.z - rb, zhi = sc.mu_c.z + rb;
    auto ratio_range = [&](double lo, double hi, double f, double c, double& out_lo, double& out_hi) {
        const double r0 = lo / zlo, r1 = lo / zhi, r2 = hi / zlo, r3 = hi / zhi;
        out_lo = f * std::min(std::min(r0, r1), std::min(r2, r3)) + c;
        out_hi = f * std::max(std::max(r0, r1), std::max(r2, r3)) + c;
    };
    double ulo, uhi, vlo, vhi;
    ratio_range(sc.mu_c.x - rb, sc.mu_c.x + rb, cam.fx, cam.cx, ulo, uhi);
    ratio_range(sc.mu_c.y - rb, sc.mu_c.y + rb, cam.fy, cam.cy, vlo, vhi);
    PixelRange r;
    r.x0 = std::max(0, static_cast<int>(std::floor(ulo - 0.5)) - 1);
    r.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(uhi - 0.5)) + 1);
    r.y0 = std::max(0, static_cast<int>(std::floor(vlo - 0.5)) - 1);
    r.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(vhi - 0.5)) + 1);
    return r;
}

struct RasterContext {
    std::vector<SurfelCam> surfels;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> tile_candidates;
};

inline RasterContext prepare_context(const std::vector<Surfel>& surfels, double gamma,
                                     const CameraModel& cam) {
    RasterContext ctx;
    ctx.surfels.reserve(surfels.size());
    ctx.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
    ctx.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
    ctx.tile_candidates.assign(static_cast<size_t>(ctx.tiles_x) * ctx.tiles_y, {});
    for (size_t i = 0; i < surfels.size(); ++i) {
        ctx.surfels.push_back(surfel_camera_data(surfels[i], gamma, cam));
        const PixelRange pr = surfel_pixel_range(ctx.surfels.back(), cam);
        if (pr.x0 > pr.x1 || pr.y0 > pr.y1) continue;
        for (int ty = pr.y0 / kTileSize; ty <= pr.y1 / kTileSize; ++ty)
            for (int tx = pr.x0 / kTileSize; tx <= pr.x1 / kTileSize; ++tx)
                ctx.tile_candidates[static_cast<size_t>(ty) * ctx.tiles_x + tx].push_back(
                    static_cast<int>(i));
    }
    return ctx;
}

// Gathers the sorted, composited contribution list for one pixel. Returns
// the number of included hits (compositing may stop early once the
// remaining transmittance falls below the stop threshold) and fills
// trans[k] with the transmittance in front of hit k.
inline int gather_pixel(const RasterContext& ctx, const std::vector<int>& candidates, const Vec3& dir,
                        std::vector<Hit>& hits, std::vector<double>& trans) {
    hits.clear();
    for (int idx : candidates) {
        SplatSample s = intersect_surfel(ctx.surfels[static_cast<size_t>(idx)], dir);
        if (s.hit) hits.push_back({idx, s});
    }
    sort_hits(hits);
    trans.clear();
    double t = 1.0;
    int included = 0;
    for (const Hit& h : hits) {
        trans.push_back(t);
        ++included;
        t *= 1.0 - h.s.alpha;
        if (t < kTransmittanceStop) break;
    }
    return included;
}

}  // namespace detail

// Tiled forward render. Deterministic for any thread count: each pixel is
// computed independently and compositing order is fixed by (depth, index).
inline RenderBuffers render(const std::vector<Surfel>& surfels, double gamma, const CameraModel& cam) {
    if (!(gamma > 0)) throw Error("invalid_gamma", "render requires gamma > 0");
    if (surfels.empty()) throw Error("empty_scene", "render requires at least one surfel");
    const detail::RasterContext ctx = detail::prepare_context(surfels, gamma, cam);

    RenderBuffers rb;
    rb.color = Image3(cam.width, cam.height);
    rb.depth = Image1(cam.width, cam.height);
    rb.normal = Image3(cam.width, cam.height);
    rb.alpha = Image1(cam.width, cam.height);

    const int n_tiles = ctx.tiles_x * ctx.tiles_y;
    parallel_for(n_tiles, [&](int tile) {
        const int tx = tile % ctx.tiles_x, ty = tile / ctx.tiles_x;
        const int x0 = tx * kTileSize, y0 = ty * kTileSize;
        const int x1 = std::min(x0 + kTileSize, cam.width);
        const int y1 = std::min(y0 + kTileSize, cam.height);
        const std::vector<int>& cand = ctx.tile_candidates[static_cast<size_t>(tile)];
        std::vector<detail::Hit> hits;
        std::vector<double> trans;
        for (int py = y0; py < y1; ++py)
            for (int px = x0; px < x1; ++px) {
                const Vec3 dir = pixel_ray(cam, px, py);
                const int included = detail::gather_pixel(ctx, cand, dir, hits, trans);
                Vec3 acc_c{}, acc_n{};
                double acc_d = 0, acc_a = 0;
                for (int k = 0; k < included; ++k) {
                    const detail::Hit& h = hits[static_cast<size_t>(k)];
                    const SurfelCam& sc = ctx.surfels[static_cast<size_t>(h.index)];
                    const double w = h.s.alpha * trans[static_cast<size_t>(k)];
                    acc_c += sc.color * w;
                    acc_d += h.s.tau * w;
                    acc_n += sc.a2 * (h.s.flip * w);
                    acc_a += w;
                }
                for (int c = 0; c < 3; ++c) rb.color(px, py, c) = acc_c[c];
                rb.depth(px, py) = acc_d;
                rb.alpha(px, py) = acc_a;
                const double nn = norm(acc_n);
                if (acc_a > kBufferValidAlpha && nn > 1e-12) {
                    const Vec3 n = acc_n / nn;
                    for (int c = 0; c < 3; ++c) rb.normal(px, py, c) = n[c];
                }
            }
    });
    return rb;
}

// Reverse pass. Accumulates into `out` (resized to the scene if needed) so
// several views can share one gradient buffer. Gradients are exact for the
// compositing actually performed: contributions skipped by the footprint,
// alpha floor, or transmittance stop receive no gradient.
inline void render_backward(const std::vector<Surfel>& surfels, double gamma, const CameraModel& cam,
                            const UpstreamGradients& up, GradientBuffers& out) {
    if (surfels.empty()) throw Error("empty_scene", "render_backward requires at least one surfel");
    const detail::RasterContext ctx = detail::prepare_context(surfels, gamma, cam);
    const size_t n = surfels.size();
    if (out.d_sdf.size() != n) out.resize(n);

    // Per tile-row partial sums; reduced serially in band order below.
    const int bands = (cam.height + kTileSize - 1) / kTileSize;
    constexpr int kStride = 18; // d_mu_c(3) + d_rcols(9) + d_scale(2) + d_color(3) + d_sdf(1)
    std::vector<std::vector<double>> band_acc(static_cast<size_t>(bands));
    std::vector<double> band_gamma(static_cast<size_t>(bands), 0.0);

    parallel_for(bands, [&](int band) {
        std::vector<double>& acc = band_acc[static_cast<size_t>(band)];
        acc.assign(n * kStride, 0.0);
        double acc_gamma = 0.0;
        const int y0 = band * kTileSize;
        const int y1 = std::min(y0 + kTileSize, cam.height);
        std::vector<detail::Hit> hits;
        std::vector<double> trans;
        for (int py = y0; py < y1; ++py)
            for (int px = 0; px < cam.width; ++px) {
                // Skip pixels with no upstream signal.
                const double gss = std::abs(up.d_depth(px, py)) + std::abs(up.d_alpha(px, py)) +
                                   std::abs(up.d_color(px, py, 0)) + std::abs(up.d_color(px, py, 1)) +
                                   std::abs(up.d_color(px, py, 2)) + std::abs(up.d_normal(px, py, 0)) +
                                   std::abs(up.d_normal(px, py, 1)) + std::abs(up.d_normal(px, py, 2));
                if (gss == 0.0) continue;

                const int tile = (py / kTileSize) * ctx.tiles_x + px / kTileSize;
                const Vec3 dir = pixel_ray(cam, px, py);
                const int included =
                    detail::gather_pixel(ctx, ctx.tile_candidates[static_cast<size_t>(tile)], dir, hits, trans);
                if (included == 0) continue;

                // Recompute the raw blended normal for the normalization chain.
                Vec3 acc_n{};
                double acc_a = 0;
                for (int k = 0; k < included; ++k) {
                    const detail::Hit& h = hits[static_cast<size_t>(k)];
                    const double w = h.s.alpha * trans[static_cast<size_t>(k)];
                    acc_n += ctx.surfels[static_cast<size_t>(h.index)].a2 * (h.s.flip * w);
                    acc_a += w;
                }
                Vec3 g_nraw{};
                const double nn = norm(acc_n);
                if (acc_a > kBufferValidAlpha && nn > 1e-12) {
                    const Vec3 nh = acc_n / nn;
                    const Vec3 g{up.d_normal(px, py, 0), up.d_normal(px, py, 1), up.d_normal(px, py, 2)};
                    g_nraw = (g - nh * dot(g, nh)) / nn;
                }

                const double uc0 = up.d_color(px, py, 0), uc1 = up.d_color(px, py, 1),
                             uc2 = up.d_color(px, py, 2);
                const double ud = up.d_depth(px, py), ua = up.d_alpha(px, py);

                // Suffix accumulators B[ch] = sum_{i>k} val_i[ch] prod_{k<j<i}(1-alpha_j),
                // which avoids dividing by (1 - alpha) and stays exact at alpha = 1.
                std::array<double, 8> B{};
                for (int k = included - 1; k >= 0; --k) {
                    const detail::Hit& h = hits[static_cast<size_t>(k)];
                    const SurfelCam& sc = ctx.surfels[static_cast<size_t>(h.index)];
                    const SplatSample& s = h.s;
                    const double tk = trans[static_cast<size_t>(k)];
                    const double w = s.alpha * tk;
                    const Vec3 nf = sc.a2 * s.flip;
                    const std::array<double, 8> val{sc.color.x, sc.color.y, sc.color.z, s.tau,
                                                    nf.x,       nf.y,       nf.z,       1.0};
                    const std::array<double, 8> u{uc0, uc1, uc2, ud, g_nraw.x, g_nraw.y, g_nraw.z, ua};

                    double d_alpha = 0.0;
                    for (int ch = 0; ch < 8; ++ch)
                        d_alpha += u[static_cast<size_t>(ch)] * tk * (val[static_cast<size_t>(ch)] - B[static_cast<size_t>(ch)]);
                    for (int ch = 0; ch < 8; ++ch)
                        B[static_cast<size_t>(ch)] =
                            val[static_cast<size_t>(ch)] * s.alpha + (1.0 - s.alpha) * B[static_cast<size_t>(ch)];

                    double* a = acc.data() + static_cast<size_t>(h.index) * kStride;
                    // Channel-value gradients.
                    a[12] += uc0 * w; // d_color
                    a[13] += uc1 * w;
                    a[14] += uc2 * w;
                    double d_tau = ud * w;
                    Vec3 d_a2 = Vec3{g_nraw.x, g_nraw.y, g_nraw.z} * (s.flip * w);

                    // Alpha chain.
                    const double d_araw = d_alpha * (alpha_cutoff_ramp(s.alpha_raw) +
                                                     s.alpha_raw * alpha_cutoff_ramp_deriv(s.alpha_raw));
                    const double gw = s.gauss * s.win;
                    const double d_o = d_araw * gw;
                    a[15] += d_o * sc.d_op_f; // d_sdf
                    acc_gamma += d_o * sc.d_op_gamma;
                    const double d_gw = d_araw * sc.opacity;
                    const double d_rho2 = d_gw * (s.gauss * (-0.5 * s.win + footprint_window_deriv(s.rho2)));
                    const double d_u = d_rho2 * 2.0 * s.u / (sc.sx * sc.sx);
                    const double d_v = d_rho2 * 2.0 * s.v / (sc.sy * sc.sy);
                    a[16] += d_rho2 * (-2.0 * s.u * s.u / (sc.sx * sc.sx * sc.sx)); // d_sx
                    a[17] += d_rho2 * (-2.0 * s.v * s.v / (sc.sy * sc.sy * sc.sy)); // d_sy

                    // Geometry chain.
                    const double q = dot(sc.a2, dir);
                    const Vec3 x = dir * s.tau;
                    const Vec3 r = x - sc.mu_c;
                    const double d_tau_total = d_tau + d_u * dot(sc.a0, dir) + d_v * dot(sc.a1, dir);
                    const Vec3 d_mu_c = sc.a0 * (-d_u) + sc.a1 * (-d_v) + sc.a2 * (d_tau_total / q);
                    const Vec3 d_a0 = r * d_u;
                    const Vec3 d_a1 = r * d_v;
                    d_a2 += (sc.mu_c - x) * (d_tau_total / q);

                    a[0] += d_mu_c.x;
                    a[1] += d_mu_c.y;
                    a[2] += d_mu_c.z;
                    a[3] += d_a0.x;
                    a[4] += d_a0.y;
                    a[5] += d_a0.z;
                    a[6] += d_a1.x;
                    a[7] += d_a1.y;
                    a[8] += d_a1.z;
                    a[9] += d_a2.x;
                    a[10] += d_a2.y;
                    a[11] += d_a2.z;
                }
            }
        band_gamma[static_cast<size_t>(band)] = acc_gamma;
    });

    // Fixed-order reduction and mapping back to world-frame parameters.
    const Mat3 rt = cam.rotation.transposed();
    std::vector<double> total(n * kStride, 0.0);
    double total_gamma = 0.0;
    for (int b = 0; b < bands; ++b) {
        const std::vector<double>& acc = band_acc[static_cast<size_t>(b)];
        for (size_t i = 0; i < total.size(); ++i) total[i] += acc[i];
        total_gamma += band_gamma[static_cast<size_t>(b)];
    }
    for (size_t i = 0; i < n; ++i) {
        const double* a = total.data() + i * kStride;
        const Vec3 d_mu_c{a[0], a[1], a[2]};
        out.d_position[i] += rt * d_mu_c;
        const Vec3 d_r0 = rt * Vec3{a[3], a[4], a[5]};
        const Vec3 d_r1 = rt * Vec3{a[6], a[7], a[8]};
        const Vec3 d_r2 = rt * Vec3{a[9], a[10], a[11]};
        const Quat qn = normalized(surfels[i].rotation);
        const std::array<Mat3, 4> jac = rotation_matrix_jacobian(qn);
        std::array<double, 4> dq{};
        for (int j = 0; j < 4; ++j)
            dq[static_cast<size_t>(j)] = dot(d_r0, jac[static_cast<size_t>(j)].col(0)) +
                                         dot(d_r1, jac[static_cast<size_t>(j)].col(1)) +
                                         dot(d_r2, jac[static_cast<size_t>(j)].col(2));
        dq = project_to_quat_tangent(dq, qn);
        for (int j = 0; j < 4; ++j) out.d_rotation[i][static_cast<size_t>(j)] += dq[static_cast<size_t>(j)];
        out.d_color[i] += Vec3{a[12], a[13], a[14]};
        out.d_sdf[i] += a[15];
        out.d_scale[i].x += a[16];
        out.d_scale[i].y += a[17];
    }
    out.d_gamma += total_gamma;

    if (!out.finite())
        throw Error("non_finite_gradient", "NaN or Inf in gradient accumulators for camera " + cam.id);
}

// Normals from central finite differences of back-projected depths.
// Invalid (zero) wherever the pixel or any 4-neighbor has no valid depth.
struct NormalsFromDepth {
    Image3 normal;
    std::vector<uint8_t> valid;
};

inline NormalsFromDepth depth_to_normal(const Image1& depth, const Image1& alpha, const CameraModel& cam) {
    NormalsFromDepth out;
    out.normal = Image3(cam.width, cam.height);
    out.valid.assign(static_cast<size_t>(cam.width) * cam.height, 0);
    auto ok = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < cam.width && y < cam.height && alpha(x, y) > kBufferValidAlpha;
    };
    auto point = [&](int x, int y) { return pixel_ray(cam, x, y) * depth(x, y); };
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            if (!ok(x, y) || !ok(x - 1, y) || !ok(x + 1, y) || !ok(x, y - 1) || !ok(x, y + 1)) continue;
            const Vec3 dx = point(x + 1, y) - point(x - 1, y);
            const Vec3 dy = point(x, y + 1) - point(x, y - 1);
            const Vec3 nr = cross(dy, dx); // camera-facing for front surfaces
            const double nn = norm(nr);
            if (nn < 1e-18) continue;
            const Vec3 nh = nr / nn;
            out.normal(x, y, 0) = nh.x;
            out.normal(x, y, 1) = nh.y;
            out.normal(x, y, 2) = nh.z;
            out.valid[static_cast<size_t>(y) * cam.width + x] = 1;
        }
    return out;
}

// Scatters gradients w.r.t. the depth-derived normals back onto the depth
// map (added into d_depth).
inline void depth_to_normal_backward(const Image1& depth, const Image1& alpha, const CameraModel& cam,
                                     const Image3& d_normal, Image1& d_depth) {
    auto ok = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < cam.width && y < cam.height && alpha(x, y) > kBufferValidAlpha;
    };
    auto point = [&](int x, int y) { return pixel_ray(cam, x, y) * depth(x, y); };
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 g{d_normal(x, y, 0), d_normal(x, y, 1), d_normal(x, y, 2)};
            if (g.x == 0 && g.y == 0 && g.z == 0) continue;
            if (!ok(x, y) || !ok(x - 1, y) || !ok(x + 1, y) || !ok(x, y - 1) || !ok(x, y + 1)) continue;
            const Vec3 dx = point(x + 1, y) - point(x - 1, y);
            const Vec3 dy = point(x, y + 1) - point(x, y - 1);
            const Vec3 nr = cross(dy, dx);
            const double nn = norm(nr);
            if (nn < 1e-18) continue;
            const Vec3 nh = nr / nn;
            const Vec3 g_nr = (g - nh * dot(g, nh)) / nn;
            // (dy x dx) . g: d/d(dy) = dx x g, d/d(dx) = g x dy.
            const Vec3 d_dy = cross(dx, g_nr);
            const Vec3 d_dx = cross(g_nr, dy);
            d_depth(x + 1, y) += dot(pixel_ray(cam, x + 1, y), d_dx);
            d_depth(x - 1, y) -= dot(pixel_ray(cam, x - 1, y), d_dx);
            d_depth(x, y + 1) += dot(pixel_ray(cam, x, y + 1), d_dy);
            d_depth(x, y - 1) -= dot(pixel_ray(cam, x, y - 1), d_dy);
        }
}

}  // namespace gsurf
