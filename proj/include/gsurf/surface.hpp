#pragma once

// SDF-opacity coupling and the scalar pieces of the geometric surface
// constraints: the bell-shaped opacity transform, the median-driven target
// sharpness, and the sharpness hinge loss. The image-space geometry losses
// (projection consistency, normal consistency) live in losses.hpp because
// they need render buffers.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gsurf/core.hpp"

namespace gsurf {

// -ln(3 - 2*sqrt(2)) = 2 ln(1 + sqrt(2)); the sharpness at which the
// opacity transform drops to 1/2 at |f| = 1.
inline double half_opacity_sharpness() { return 2.0 * std::log(1.0 + std::sqrt(2.0)); }

// Bell-shaped opacity 4 e^{-g f} / (1 + e^{-g f})^2, evaluated as
// sech^2(g f / 2) so large |g f| underflows to 0 instead of overflowing.
inline double opacity_transform(double f, double gamma) {
    const double r = 1.0 / std::cosh(0.5 * gamma * f);
    return r * r;
}

struct OpacityGrad {
    double value;
    double d_f;
    double d_gamma;
};

inline OpacityGrad opacity_transform_grad(double f, double gamma) {
    const double r = 1.0 / std::cosh(0.5 * gamma * f);
    const double value = r * r;
    const double th = std::tanh(0.5 * gamma * f);
    return {value, -gamma * value * th, -f * value * th};
}

// Median of |f| with a 1e-9 m floor; degenerate all-on-surface sets would
// otherwise drive the target sharpness to infinity.
inline double median_abs(const std::vector<double>& sdf_values) {
    if (sdf_values.empty()) throw Error("empty_input", "median of empty SDF set");
    std::vector<double> a(sdf_values.size());
    for (size_t i = 0; i < a.size(); ++i) a[i] = std::abs(sdf_values[i]);
    std::sort(a.begin(), a.end());
    const size_t n = a.size();
    return (n % 2 == 1) ? a[n / 2] : 0.5 * (a[n / 2 - 1] + a[n / 2]);
}

inline double target_gamma(const std::vector<double>& sdf_values) {
    const double m = std::max(median_abs(sdf_values), 1e-9);
    return half_opacity_sharpness() / m;
}

// Target sharpness together with its derivative w.r.t. the SDF samples that
// realize the median. Keeping this path differentiable makes the full loss
// agree with finite differences; the clamp zeroes the derivative.
struct TargetGammaGrad {
    double value = 0.0;
    // (surfel index, d gamma_m / d f_i) pairs; one entry for odd counts,
    // two half-weight entries for even counts.
    std::vector<std::pair<size_t, double>> d_sdf;
};

inline TargetGammaGrad target_gamma_grad(const std::vector<double>& sdf_values) {
    if (sdf_values.empty()) throw Error("empty_input", "median of empty SDF set");
    const size_t n = sdf_values.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const double fa = std::abs(sdf_values[a]), fb = std::abs(sdf_values[b]);
        return fa != fb ? fa < fb : a < b;
    });

    TargetGammaGrad out;
    const double c = half_opacity_sharpness();
    std::vector<std::pair<size_t, double>> members; // (index, weight in the median)
    double median;
    if (n % 2 == 1) {
        median = std::abs(sdf_values[order[n / 2]]);
        members = {{order[n / 2], 1.0}};
    } else {
        const size_t lo = order[n / 2 - 1], hi = order[n / 2];
        median = 0.5 * (std::abs(sdf_values[lo]) + std::abs(sdf_values[hi]));
        members = {{lo, 0.5}, {hi, 0.5}};
    }
    if (median < 1e-9) {
        out.value = c / 1e-9;
        return out; // clamped: no gradient
    }
    out.value = c / median;
    const double dgamma_dm = -c / (median * median);
    for (auto [idx, wgt] : members) {
        const double s = sdf_values[idx] > 0 ? 1.0 : (sdf_values[idx] < 0 ? -1.0 : 0.0);
        if (s != 0.0) out.d_sdf.emplace_back(idx, dgamma_dm * wgt * s);
    }
    return out;
}

// Hinge max(gamma_m - gamma, 0). Subgradient at the kink is 0.
inline double gamma_hinge_loss(double gamma, double gamma_m) { return std::max(gamma_m - gamma, 0.0); }

struct HingeGrad {
    double value;
    double d_gamma;   // -1 on the active side, 0 otherwise
    double d_gamma_m; // +1 on the active side, 0 otherwise
};

inline HingeGrad gamma_hinge_loss_grad(double gamma, double gamma_m) {
    if (gamma < gamma_m) return {gamma_m - gamma, -1.0, 1.0};
    return {0.0, 0.0, 0.0};
}

}  // namespace gsurf
