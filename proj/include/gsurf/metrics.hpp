#pragma once

// Image- and geometry-space evaluation: L1, PSNR, SSIM (with gradients for
// use as a loss), Chamfer distance, and per-bubble velocity error.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "gsurf/image.hpp"
#include "gsurf/threading.hpp"
#include "gsurf/vec.hpp"

namespace gsurf {

inline double image_l1(const Image3& a, const Image3& b) {
    require_same_shape(a.width, a.height, b.width, b.height);
    double sum = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    return sum / static_cast<double>(a.data.size());
}

// L1 loss with subgradient (0 at equality) w.r.t. `pred`, scaled by `scale`
// and added into `grad`.
inline double image_l1_grad(const Image3& target, const Image3& pred, Image3& grad, double scale) {
    require_same_shape(target.width, target.height, pred.width, pred.height);
    const double inv = 1.0 / static_cast<double>(pred.data.size());
    double sum = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        sum += std::abs(d);
        if (d > 0)
            grad.data[i] += scale * inv;
        else if (d < 0)
            grad.data[i] -= scale * inv;
    }
    return sum * inv;
}

inline double mse(const Image3& a, const Image3& b) {
    require_same_shape(a.width, a.height, b.width, b.height);
    double sum = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.data.size());
}

// 10 log10(1 / MSE) for unit-range images, capped at 100 dB.
inline double psnr(const Image3& a, const Image3& b) {
    const double m = mse(a, b);
    if (m < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / m);
}

namespace detail {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, kSsimWindow>& ssim_kernel_1d() {
    static const std::array<double, kSsimWindow> k = [] {
        std::array<double, kSsimWindow> v{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - (kSsimWindow - 1) / 2.0;
            v[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += v[static_cast<size_t>(i)];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k;
}

inline Image1 to_gray(const Image3& img) {
    Image1 g(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g(x, y) = (img(x, y, 0) + img(x, y, 1) + img(x, y, 2)) / 3.0;
    return g;
}

// Separable 11x11 Gaussian filter; only interior pixels (full window inside
// the image) are meaningful.
inline Image1 gauss_filter(const Image1& in) {
    const auto& k = ssim_kernel_1d();
    const int r = kSsimWindow / 2;
    Image1 tmp(in.width, in.height), out(in.width, in.height);
    for (int y = 0; y < in.height; ++y)
        for (int x = r; x < in.width - r; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[static_cast<size_t>(i)] * in(x - r + i, y);
            tmp(x, y) = s;
        }
    for (int y = r; y < in.height - r; ++y)
        for (int x = r; x < in.width - r; ++x) {
            double s = 0.0;
            for (int i = 0; i < kSsimWindow; ++i) s += k[static_cast<size_t>(i)] * tmp(x, y - r + i);
            out(x, y) = s;
        }
    return out;
}

struct SsimStats {
    Image1 gx, gy, mx, my, mxx, myy, mxy;
    int r;
};

inline SsimStats ssim_stats(const Image3& a, const Image3& b) {
    require_same_shape(a.width, a.height, b.width, b.height);
    if (a.width < kSsimWindow || a.height < kSsimWindow)
        throw Error("image_too_small", "SSIM needs at least an 11x11 image");
    SsimStats st;
    st.r = kSsimWindow / 2;
    st.gx = to_gray(a);
    st.gy = to_gray(b);
    Image1 xx(a.width, a.height), yy(a.width, a.height), xy(a.width, a.height);
    for (size_t i = 0; i < st.gx.data.size(); ++i) {
        xx.data[i] = st.gx.data[i] * st.gx.data[i];
        yy.data[i] = st.gy.data[i] * st.gy.data[i];
        xy.data[i] = st.gx.data[i] * st.gy.data[i];
    }
    st.mx = gauss_filter(st.gx);
    st.my = gauss_filter(st.gy);
    st.mxx = gauss_filter(xx);
    st.myy = gauss_filter(yy);
    st.mxy = gauss_filter(xy);
    return st;
}

inline double ssim_at(const SsimStats& st, int x, int y) {
    const double mx = st.mx(x, y), my = st.my(x, y);
    const double sxx = st.mxx(x, y) - mx * mx;
    const double syy = st.myy(x, y) - my * my;
    const double sxy = st.mxy(x, y) - mx * my;
    const double a1 = 2 * mx * my + kSsimC1;
    const double a2 = 2 * sxy + kSsimC2;
    const double b1 = mx * mx + my * my + kSsimC1;
    const double b2 = sxx + syy + kSsimC2;
    return (a1 * a2) / (b1 * b2);
}

}  // namespace detail

// Mean SSIM over all fully-interior 11x11 Gaussian windows, computed on the
// channel-mean grayscale image.
inline double ssim(const Image3& a, const Image3& b) {
    const detail::SsimStats st = detail::ssim_stats(a, b);
    double sum = 0.0;
    long count = 0;
    for (int y = st.r; y < a.height - st.r; ++y)
        for (int x = st.r; x < a.width - st.r; ++x) {
            sum += detail::ssim_at(st, x, y);
            ++count;
        }
    return sum / static_cast<double>(count);
}

// 1 - mean SSIM, with the analytic gradient w.r.t. `pred` scaled by `scale`
// and added into `grad`. The grayscale conversion splits the gradient
// equally across channels.
inline double ssim_loss_grad(const Image3& target, const Image3& pred, Image3& grad, double scale) {
    const detail::SsimStats st = detail::ssim_stats(target, pred); // x = target, y = pred
    const auto& k1 = detail::ssim_kernel_1d();
    const int r = st.r;
    const int W = target.width, H = target.height;
    const long count = static_cast<long>(W - 2 * r) * (H - 2 * r);
    const double wgt = scale / static_cast<double>(count); // d(1 - mean)/d ssim_p = -1/count

    Image1 g_gray(W, H);
    double sum = 0.0;
    for (int y = r; y < H - r; ++y)
        for (int x = r; x < W - r; ++x) {
            const double mx = st.mx(x, y), my = st.my(x, y);
            const double sxx = st.mxx(x, y) - mx * mx;
            const double syy = st.myy(x, y) - my * my;
            const double sxy = st.mxy(x, y) - mx * my;
            const double a1 = 2 * mx * my + detail::kSsimC1;
            const double a2 = 2 * sxy + detail::kSsimC2;
            const double b1 = mx * mx + my * my + detail::kSsimC1;
            const double b2 = sxx + syy + detail::kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            sum += s;
            // d ssim / d pred(q) for window center p: the window weight times
            // a linear expression in (pred(q) - my, target(q) - mx).
            for (int j = 0; j < detail::kSsimWindow; ++j)
                for (int i = 0; i < detail::kSsimWindow; ++i) {
                    const double g = k1[static_cast<size_t>(i)] * k1[static_cast<size_t>(j)];
                    const int qx = x - r + i, qy = y - r + j;
                    const double xv = st.gx(qx, qy); // target gray
                    const double yv = st.gy(qx, qy); // pred gray
                    const double d_a1 = 2.0 * g * mx;        // d a1 / d pred(q)
                    const double d_a2 = 2.0 * g * (xv - mx); // d (2 sxy) / d pred(q)
                    const double d_b1 = 2.0 * g * my;        // d b1 / d pred(q)
                    const double d_b2 = 2.0 * g * (yv - my); // d (syy) / d pred(q)
                    // Single-quotient form: the numerator cancels exactly on
                    // identical images, so a converged fit has true zero
                    // gradient instead of rounding dust.
                    const double ds =
                        (d_a1 * a2 + a1 * d_a2 - s * (d_b1 * b2 + b1 * d_b2)) / (b1 * b2);
                    g_gray(qx, qy) += -wgt * ds;
                }
        }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double g3 = g_gray(x, y) / 3.0;
            grad(x, y, 0) += g3;
            grad(x, y, 1) += g3;
            grad(x, y, 2) += g3;
        }
    return 1.0 - sum / static_cast<double>(count);
}

// Symmetric Chamfer distance: half the sum of both directed mean
// nearest-neighbor distances. A uniform grid accelerates the search for
// large sets; below the threshold a direct scan is used.
inline double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
    if (a.empty() || b.empty()) throw Error("empty_input", "chamfer distance of empty point set");

    auto directed_brute = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        double sum = 0.0;
        for (const Vec3& p : from) {
            double best = std::numeric_limits<double>::max();
            for (const Vec3& q : to) {
                const Vec3 d = p - q;
                best = std::min(best, dot(d, d));
            }
            sum += std::sqrt(best);
        }
        return sum / static_cast<double>(from.size());
    };

    struct Grid {
        Vec3 lo;
        double cell;
        int nx, ny, nz;
        std::vector<std::vector<int>> bins;
        const std::vector<Vec3>* pts;

        explicit Grid(const std::vector<Vec3>& points) : pts(&points) {
            Vec3 hi = points[0];
            lo = points[0];
            for (const Vec3& p : points)
                for (int c = 0; c < 3; ++c) {
                    lo[c] = std::min(lo[c], p[c]);
                    hi[c] = std::max(hi[c], p[c]);
                }
            const double ext = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z, 1e-12});
            const int target = std::max(1, static_cast<int>(std::cbrt(static_cast<double>(points.size()))));
            cell = ext / target;
            nx = static_cast<int>((hi.x - lo.x) / cell) + 1;
            ny = static_cast<int>((hi.y - lo.y) / cell) + 1;
            nz = static_cast<int>((hi.z - lo.z) / cell) + 1;
            bins.assign(static_cast<size_t>(nx) * ny * nz, {});
            for (size_t i = 0; i < points.size(); ++i) bins[index_of(points[i])].push_back(static_cast<int>(i));
        }
        size_t index_of(const Vec3& p) const {
            const int ix = std::clamp(static_cast<int>((p.x - lo.x) / cell), 0, nx - 1);
            const int iy = std::clamp(static_cast<int>((p.y - lo.y) / cell), 0, ny - 1);
            const int iz = std::clamp(static_cast<int>((p.z - lo.z) / cell), 0, nz - 1);
            return (static_cast<size_t>(iz) * ny + iy) * nx + ix;
        }
        double nearest(const Vec3& p) const {
            const int ix = std::clamp(static_cast<int>((p.x - lo.x) / cell), 0, nx - 1);
            const int iy = std::clamp(static_cast<int>((p.y - lo.y) / cell), 0, ny - 1);
            const int iz = std::clamp(static_cast<int>((p.z - lo.z) / cell), 0, nz - 1);
            double best = std::numeric_limits<double>::max();
            const int max_ring = std::max({nx, ny, nz});
            for (int ring = 0; ring <= max_ring; ++ring) {
                // Once a candidate is found, one extra ring guarantees the
                // true nearest neighbor is covered.
                if (best < std::numeric_limits<double>::max()) {
                    const double safe = (ring - 1) * cell;
                    if (safe > 0 && safe * safe >= best) break;
                }
                for (int dz = -ring; dz <= ring; ++dz)
                    for (int dy = -ring; dy <= ring; ++dy)
                        for (int dx = -ring; dx <= ring; ++dx) {
                            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                            const int jx = ix + dx, jy = iy + dy, jz = iz + dz;
                            if (jx < 0 || jy < 0 || jz < 0 || jx >= nx || jy >= ny || jz >= nz) continue;
                            for (int id : bins[(static_cast<size_t>(jz) * ny + jy) * nx + jx]) {
                                const Vec3 d = p - (*pts)[static_cast<size_t>(id)];
                                best = std::min(best, dot(d, d));
                            }
                        }
            }
            return std::sqrt(best);
        }
    };

    auto directed = [&](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        if (from.size() * to.size() <= 256 * 256) return directed_brute(from, to);
        Grid grid(to);
        double sum = 0.0;
        for (const Vec3& p : from) sum += grid.nearest(p);
        return sum / static_cast<double>(from.size());
    };

    return 0.5 * (directed(a, b) + directed(b, a));
}

// Mean absolute per-component error over matched bubble ids.
inline double velocity_l1(const std::map<int32_t, Vec3>& est, const std::map<int32_t, Vec3>& gt) {
    if (est.size() != gt.size()) throw Error("id_mismatch", "bubble id sets differ");
    double sum = 0.0;
    long n = 0;
    for (const auto& [id, v] : est) {
        auto it = gt.find(id);
        if (it == gt.end()) throw Error("id_mismatch", "bubble id " + std::to_string(id) + " missing");
        const Vec3 d = v - it->second;
        sum += std::abs(d.x) + std::abs(d.y) + std::abs(d.z);
        n += 3;
    }
    return sum / static_cast<double>(n);
}

}  // namespace gsurf
