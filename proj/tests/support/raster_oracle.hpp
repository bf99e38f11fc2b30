#pragma once

// Serial per-pixel reference renderer for the oracle-equivalence suites.
// Re-implements front-to-back blending in straight-line code over the same
// ray-disk intersections as the production rasterizer: every surfel is
// tested at every pixel (no tiling, no candidate culling). In `Semantic`
// mode the kernel rules are identical, so results must match the tiled
// renderer bit for bit. In `Pure` mode the footprint window, alpha floor,
// and transmittance stop are all disabled; the per-pixel `discarded` map
// bounds the compositing mass the semantic kernel drops, which tells the
// equivalence test where the two renders must agree.

#include <algorithm>
#include <vector>

#include "gsurf/raster.hpp"

namespace gsurf::testing {

enum class OracleKernel { Semantic, Pure };

struct OracleResult {
    RenderBuffers rb;
    Image1 discarded;  // per-pixel bound on mass dropped by the semantic kernel
    Image1 normal_mag; // norm of the raw (pre-normalization) blended normal
};

inline OracleResult render_oracle(const std::vector<Surfel>& surfels, double gamma,
                                  const CameraModel& cam, OracleKernel kernel) {
    OracleResult out;
    out.rb.color = Image3(cam.width, cam.height);
    out.rb.depth = Image1(cam.width, cam.height);
    out.rb.normal = Image3(cam.width, cam.height);
    out.rb.alpha = Image1(cam.width, cam.height);
    out.discarded = Image1(cam.width, cam.height);
    out.normal_mag = Image1(cam.width, cam.height);

    std::vector<SurfelCam> sc;
    sc.reserve(surfels.size());
    for (const Surfel& s : surfels) sc.push_back(surfel_camera_data(s, gamma, cam));

    struct PixelHit {
        int index;
        double tau, alpha, alpha_sem, flip;
        Vec3 color, normal;
    };

    for (int py = 0; py < cam.height; ++py)
        for (int px = 0; px < cam.width; ++px) {
            const Vec3 dir = pixel_ray(cam, px, py);
            std::vector<PixelHit> hits;
            double dropped = 0.0;
            for (size_t i = 0; i < surfels.size(); ++i) {
                const double q = dot(sc[i].a2, dir);
                if (std::abs(q) <= 1e-12 * norm(dir)) continue;
                const double tau = dot(sc[i].a2, sc[i].mu_c) / q;
                if (tau <= 1e-9) continue;
                const Vec3 x = dir * tau;
                const Vec3 r = x - sc[i].mu_c;
                const double u = dot(sc[i].a0, r);
                const double v = dot(sc[i].a1, r);
                const double ru = u / sc[i].sx;
                const double rv = v / sc[i].sy;
                const double rho2 = ru * ru + rv * rv;

                // Semantic-kernel alpha (exactly the production rules).
                double alpha_sem = 0.0;
                if (rho2 < kFootprintRho2) {
                    const double a_raw = sc[i].opacity * std::exp(-0.5 * rho2) * footprint_window(rho2);
                    if (a_raw > kAlphaFloor) alpha_sem = a_raw * alpha_cutoff_ramp(a_raw);
                }
                // Pure Gaussian alpha: no window, no floor.
                const double alpha_pure = sc[i].opacity * std::exp(-0.5 * rho2);

                const double alpha = kernel == OracleKernel::Pure ? alpha_pure : alpha_sem;
                dropped += std::abs(alpha_pure - alpha_sem) * (2.0 + std::abs(tau));
                if (alpha <= 0.0) continue;
                PixelHit h;
                h.index = static_cast<int>(i);
                h.tau = tau;
                h.alpha = alpha;
                h.alpha_sem = alpha_sem;
                h.flip = q > 0.0 ? -1.0 : 1.0;
                h.color = sc[i].color;
                h.normal = sc[i].a2;
                hits.push_back(h);
            }
            std::sort(hits.begin(), hits.end(), [](const PixelHit& a, const PixelHit& b) {
                return a.tau != b.tau ? a.tau < b.tau : a.index < b.index;
            });

            double transmittance = 1.0;
            Vec3 acc_c{}, acc_n{};
            double acc_d = 0.0, acc_a = 0.0;
            for (const PixelHit& h : hits) {
                const double w = h.alpha * transmittance;
                acc_c += h.color * w;
                acc_d += h.tau * w;
                acc_n += h.normal * (h.flip * w);
                acc_a += w;
                transmittance *= 1.0 - h.alpha;
                if (kernel == OracleKernel::Semantic && transmittance < kTransmittanceStop) break;
            }
            for (int c = 0; c < 3; ++c) out.rb.color(px, py, c) = acc_c[c];
            out.rb.depth(px, py) = acc_d;
            out.rb.alpha(px, py) = acc_a;
            const double nn = norm(acc_n);
            if (acc_a > kBufferValidAlpha && nn > 1e-12) {
                const Vec3 n = acc_n / nn;
                for (int c = 0; c < 3; ++c) out.rb.normal(px, py, c) = n[c];
            }
            out.discarded(px, py) = dropped;
            out.normal_mag(px, py) = nn;
        }
    return out;
}

}  // namespace gsurf::testing
