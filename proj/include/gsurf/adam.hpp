#pragma once

// Adam optimizer state for the surfel attribute groups plus gamma. Moments
// are stored per scalar parameter; densification rebuilds them through an
// old-index mapping so surviving surfels keep their history.

#include <cmath>
#include <cstdint>
#include <vector>

#include "gsurf/core.hpp"

namespace gsurf {

struct AdamGroup {
    std::vector<double> m, v;
    int64_t step = 0;

    void resize(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
    }
};

struct AdamState {
    AdamGroup position, scale, rotation, color, sdf, gamma;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-15;

    void init(size_t n_surfels, const ReconstructionConfig& cfg) {
        beta1 = cfg.adam_beta1;
        beta2 = cfg.adam_beta2;
        eps = cfg.adam_eps;
        position.resize(n_surfels * 3);
        scale.resize(n_surfels * 2);
        rotation.resize(n_surfels * 4);
        color.resize(n_surfels * 3);
        sdf.resize(n_surfels);
        gamma.resize(1);
        position.step = scale.step = rotation.step = color.step = sdf.step = gamma.step = 0;
    }

    // Remaps per-surfel moments after densification. new_from_old[i] is the
    // source surfel for new slot i, or -1 for freshly created surfels
    // (zero-initialized moments).
    void remap(const std::vector<int>& new_from_old) {
        auto remap_group = [&](AdamGroup& g, int dim) {
            std::vector<double> m(new_from_old.size() * static_cast<size_t>(dim), 0.0);
            std::vector<double> v(new_from_old.size() * static_cast<size_t>(dim), 0.0);
            for (size_t i = 0; i < new_from_old.size(); ++i) {
                const int src = new_from_old[i];
                if (src < 0) continue;
                for (int d = 0; d < dim; ++d) {
                    m[i * static_cast<size_t>(dim) + static_cast<size_t>(d)] =
                        g.m[static_cast<size_t>(src) * static_cast<size_t>(dim) + static_cast<size_t>(d)];
                    v[i * static_cast<size_t>(dim) + static_cast<size_t>(d)] =
                        g.v[static_cast<size_t>(src) * static_cast<size_t>(dim) + static_cast<size_t>(d)];
                }
            }
            g.m = std::move(m);
            g.v = std::move(v);
        };
        remap_group(position, 3);
        remap_group(scale, 2);
        remap_group(rotation, 4);
        remap_group(color, 3);
        remap_group(sdf, 1);
    }
};

// One Adam update of a scalar slot. Bias-corrected; `t` is the post-
// increment step count of the owning group.
inline double adam_delta(AdamGroup& g, size_t slot, double grad, double lr, double beta1, double beta2,
                         double eps, int64_t t) {
    double& m = g.m[slot];
    double& v = g.v[slot];
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad * grad;
    const double m_hat = m / (1.0 - std::pow(beta1, static_cast<double>(t)));
    const double v_hat = v / (1.0 - std::pow(beta2, static_cast<double>(t)));
    return -lr * m_hat / (std::sqrt(v_hat) + eps);
}

}  // namespace gsurf
