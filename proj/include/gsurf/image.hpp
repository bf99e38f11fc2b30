#pragma once

// Dense row-major image buffers. Channel count is a compile-time constant;
// Image<1> and Image<3> cover everything the pipeline needs.

#include <cstdint>
#include <vector>

#include "gsurf/core.hpp"

namespace gsurf {

template <int C>
struct Image {
    int width = 0, height = 0;
    std::vector<double> data; // (y * width + x) * C + c

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<size_t>(w) * h * C, fill) {}

    double& operator()(int x, int y, int c = 0) { return data[(static_cast<size_t>(y) * width + x) * C + c]; }
    double operator()(int x, int y, int c = 0) const { return data[(static_cast<size_t>(y) * width + x) * C + c]; }

    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const { return width == o.width && height == o.height; }
    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

using Image1 = Image<1>;
using Image3 = Image<3>;

inline void require_same_shape(int wa, int ha, int wb, int hb) {
    if (wa != wb || ha != hb) throw Error("shape_mismatch", "image dimensions differ");
}

// 16-bit single-channel raster used for instance-id masks on disk.
struct ImageU16 {
    int width = 0, height = 0;
    std::vector<uint16_t> data;

    ImageU16() = default;
    ImageU16(int w, int h, uint16_t fill = 0) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

    uint16_t& operator()(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    uint16_t operator()(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Splits a stored id raster into per-instance binary masks. Stored value 0
// is background; stored value v > 0 is bubble id v - 1.
inline std::vector<InstanceMask> decode_instances(const ImageU16& raster) {
    std::map<uint16_t, InstanceMask> by_value;
    for (int y = 0; y < raster.height; ++y)
        for (int x = 0; x < raster.width; ++x) {
            const uint16_t v = raster(x, y);
            if (v == 0) continue;
            auto [it, fresh] = by_value.try_emplace(v);
            if (fresh) {
                it->second.id = static_cast<int32_t>(v) - 1;
                it->second.width = raster.width;
                it->second.height = raster.height;
                it->second.bits.assign(static_cast<size_t>(raster.width) * raster.height, 0);
            }
            it->second.bits[static_cast<size_t>(y) * raster.width + x] = 1;
        }
    std::vector<InstanceMask> out;
    out.reserve(by_value.size());
    for (auto& [v, m] : by_value) out.push_back(std::move(m));
    return out;
}

inline ImageU16 encode_instances(const std::vector<InstanceMask>& masks, int width, int height) {
    ImageU16 raster(width, height, 0);
    for (const auto& m : masks)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                if (m.at(x, y)) raster(x, y) = static_cast<uint16_t>(m.id + 1);
    return raster;
}

}  // namespace gsurf
