#pragma once

// On-disk formats: PNG images (8-bit color, 16-bit instance masks),
// float32 grid dumps, structured key-value text (configs, camera rigs,
// manifests, metadata), binary checkpoints, point clouds, and CSV tables.
// All binary formats are little-endian; all text formats are locale-free.
// Writers are byte-stable for identical input. See docs/FORMATS.md.

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gsurf/core.hpp"
#include "gsurf/image.hpp"

namespace gsurf {

namespace fs = std::filesystem;

inline void ensure_parent_dir(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Locale-independent shortest round-trip double formatting.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {
struct PngWriteCloser {
    std::FILE* f = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (f) std::fclose(f);
    }
};
struct PngReadCloser {
    std::FILE* f = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (f) std::fclose(f);
    }
};
}  // namespace detail

inline void write_png8(const fs::path& path, const Image3& img) {
    ensure_parent_dir(path);
    detail::PngWriteCloser c;
    c.f = std::fopen(path.string().c_str(), "wb");
    if (!c.f) throw Error("io", "cannot open " + path.string() + " for writing");
    c.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (setjmp(png_jmpbuf(c.png))) throw Error("io", "libpng write failure: " + path.string());
    png_init_io(c.png, c.f);
    png_set_compression_level(c.png, 6);
    png_set_IHDR(c.png, c.info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(c.png, c.info);
    std::vector<unsigned char> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(img(x, y, ch), 0.0, 1.0);
                row[static_cast<size_t>(x) * 3 + static_cast<size_t>(ch)] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        png_write_row(c.png, row.data());
    }
    png_write_end(c.png, nullptr);
}

inline Image3 read_png8(const fs::path& path) {
    detail::PngReadCloser c;
    c.f = std::fopen(path.string().c_str(), "rb");
    if (!c.f) throw Error("io", "cannot open " + path.string());
    c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (setjmp(png_jmpbuf(c.png))) throw Error("io", "libpng read failure: " + path.string());
    png_init_io(c.png, c.f);
    png_read_info(c.png, c.info);
    png_set_expand(c.png);
    png_set_strip_16(c.png);
    png_set_strip_alpha(c.png);
    png_set_gray_to_rgb(c.png);
    png_read_update_info(c.png, c.info);
    const int w = static_cast<int>(png_get_image_width(c.png, c.info));
    const int h = static_cast<int>(png_get_image_height(c.png, c.info));
    Image3 img(w, h);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        png_read_row(c.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img(x, y, ch) = row[static_cast<size_t>(x) * 3 + static_cast<size_t>(ch)] / 255.0;
    }
    return img;
}

// 16-bit grayscale; pixel value = bubble id + 1, 0 = background.
inline void write_png16(const fs::path& path, const ImageU16& img) {
    ensure_parent_dir(path);
    detail::PngWriteCloser c;
    c.f = std::fopen(path.string().c_str(), "wb");
    if (!c.f) throw Error("io", "cannot open " + path.string() + " for writing");
    c.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (setjmp(png_jmpbuf(c.png))) throw Error("io", "libpng write failure: " + path.string());
    png_init_io(c.png, c.f);
    png_set_compression_level(c.png, 6);
    png_set_IHDR(c.png, c.info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
                 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(c.png, c.info);
    std::vector<unsigned char> row(static_cast<size_t>(img.width) * 2);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const uint16_t v = img(x, y); // PNG is big-endian on the wire
            row[static_cast<size_t>(x) * 2] = static_cast<unsigned char>(v >> 8);
            row[static_cast<size_t>(x) * 2 + 1] = static_cast<unsigned char>(v & 0xff);
        }
        png_write_row(c.png, row.data());
    }
    png_write_end(c.png, nullptr);
}

inline ImageU16 read_png16(const fs::path& path) {
    detail::PngReadCloser c;
    c.f = std::fopen(path.string().c_str(), "rb");
    if (!c.f) throw Error("io", "cannot open " + path.string());
    c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    c.info = png_create_info_struct(c.png);
    if (setjmp(png_jmpbuf(c.png))) throw Error("io", "libpng read failure: " + path.string());
    png_init_io(c.png, c.f);
    png_read_info(c.png, c.info);
    const int depth = png_get_bit_depth(c.png, c.info);
    const int color = png_get_color_type(c.png, c.info);
    if (color != PNG_COLOR_TYPE_GRAY)
        throw Error("io", "mask PNG must be single-channel grayscale: " + path.string());
    if (depth < 16) png_set_expand_16(c.png);
    png_read_update_info(c.png, c.info);
    const int w = static_cast<int>(png_get_image_width(c.png, c.info));
    const int h = static_cast<int>(png_get_image_height(c.png, c.info));
    ImageU16 img(w, h);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        png_read_row(c.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            img(x, y) = static_cast<uint16_t>((row[static_cast<size_t>(x) * 2] << 8) |
                                              row[static_cast<size_t>(x) * 2 + 1]);
    }
    return img;
}

// ---------------------------------------------------------------------------
// Binary helpers

namespace detail {
template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw Error("io", "unexpected end of binary stream");
    return v;
}
}  // namespace detail

// Float32 grid dump: 16-byte header (magic "FGRD", u32 width, u32 height,
// u32 channels), then row-major float32 samples, channels interleaved.
inline void write_float_grid(const fs::path& path, const std::vector<float>& data, int width, int height,
                             int channels) {
    ensure_parent_dir(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
    os.write("FGRD", 4);
    detail::put<uint32_t>(os, static_cast<uint32_t>(width));
    detail::put<uint32_t>(os, static_cast<uint32_t>(height));
    detail::put<uint32_t>(os, static_cast<uint32_t>(channels));
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline std::vector<float> read_float_grid(const fs::path& path, int& width, int& height, int& channels) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io", "cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FGRD", 4) != 0) throw Error("io", "bad grid magic in " + path.string());
    width = static_cast<int>(detail::get<uint32_t>(is));
    height = static_cast<int>(detail::get<uint32_t>(is));
    channels = static_cast<int>(detail::get<uint32_t>(is));
    std::vector<float> data(static_cast<size_t>(width) * height * channels);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw Error("io", "truncated grid file " + path.string());
    return data;
}

// Point cloud: magic "GPTS", u32 count, then count * 3 float64 (x, y, z).
inline void write_points(const fs::path& path, const std::vector<Vec3>& pts) {
    ensure_parent_dir(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
    os.write("GPTS", 4);
    detail::put<uint32_t>(os, static_cast<uint32_t>(pts.size()));
    for (const Vec3& p : pts) {
        detail::put<double>(os, p.x);
        detail::put<double>(os, p.y);
        detail::put<double>(os, p.z);
    }
}

inline std::vector<Vec3> read_points(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io", "cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GPTS", 4) != 0) throw Error("io", "bad point cloud magic in " + path.string());
    const uint32_t n = detail::get<uint32_t>(is);
    std::vector<Vec3> pts(n);
    for (uint32_t i = 0; i < n; ++i) {
        pts[i].x = detail::get<double>(is);
        pts[i].y = detail::get<double>(is);
        pts[i].z = detail::get<double>(is);
    }
    return pts;
}

// ---------------------------------------------------------------------------
// Structured key-value text
//
//   # comment
//   key = value
//   [section]
//   key = value
//
// Sections repeat; order is preserved. Values are raw strings; vector and
// matrix values are whitespace-separated numbers.

struct KvSection {
    std::string name; // empty for the leading unsectioned block
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }
    std::string require(const std::string& key) const {
        const std::string* v = find(key);
        if (!v) throw Error("parse", "missing key '" + key + "' in section [" + name + "]");
        return *v;
    }
    double number(const std::string& key) const {
        const std::string s = require(key);
        try {
            return std::stod(s);
        } catch (...) {
            throw Error("parse", "key '" + key + "': not a number: " + s);
        }
    }
    double number_or(const std::string& key, double fallback) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        try {
            return std::stod(*v);
        } catch (...) {
            throw Error("parse", "key '" + key + "': not a number: " + *v);
        }
    }
    std::string text_or(const std::string& key, const std::string& fallback) const {
        const std::string* v = find(key);
        return v ? *v : fallback;
    }
    std::vector<double> numbers(const std::string& key) const {
        std::istringstream ss(require(key));
        std::vector<double> out;
        double v;
        while (ss >> v) out.push_back(v);
        return out;
    }
};

struct KvFile {
    std::vector<KvSection> sections;

    const KvSection* first(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
    std::vector<const KvSection*> all(const std::string& name) const {
        std::vector<const KvSection*> out;
        for (const auto& s : sections)
            if (s.name == name) out.push_back(&s);
        return out;
    }
};

inline KvFile parse_kv(std::istream& is) {
    KvFile f;
    f.sections.push_back({});
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw Error("parse", "unterminated section at line " + std::to_string(lineno));
            f.sections.push_back({trim(line.substr(1, line.size() - 2)), {}});
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw Error("parse", "expected key = value at line " + std::to_string(lineno));
        f.sections.back().entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return f;
}

inline KvFile parse_kv_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("io", "cannot open " + path.string());
    return parse_kv(is);
}

// ---------------------------------------------------------------------------
// Camera rigs

inline std::vector<CameraModel> read_cameras(const fs::path& path) {
    const KvFile f = parse_kv_file(path);
    std::vector<CameraModel> cams;
    for (const KvSection* s : f.all("camera")) {
        CameraModel cam;
        cam.id = s->require("id");
        cam.fx = s->number("fx");
        cam.fy = s->number("fy");
        cam.cx = s->number("cx");
        cam.cy = s->number("cy");
        cam.width = static_cast<int>(s->number("width"));
        cam.height = static_cast<int>(s->number("height"));
        const std::vector<double> m = s->numbers("world_to_camera");
        if (m.size() != 16) throw Error("parse", "world_to_camera must hold 16 numbers (camera " + cam.id + ")");
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) cam.rotation(r, c) = m[static_cast<size_t>(r) * 4 + c];
            cam.translation[r] = m[static_cast<size_t>(r) * 4 + 3];
        }
        cam.validate();
        cams.push_back(std::move(cam));
    }
    if (cams.empty()) throw Error("parse", "no [camera] sections in " + path.string());
    return cams;
}

inline void write_cameras(const fs::path& path, const std::vector<CameraModel>& cams) {
    ensure_parent_dir(path);
    std::ofstream os(path);
    if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
    os << "# camera rig: pinhole intrinsics (pixels) and 4x4 world_to_camera (row-major, meters)\n";
    for (const CameraModel& cam : cams) {
        os << "\n[camera]\n";
        os << "id = " << cam.id << "\n";
        os << "fx = " << format_double(cam.fx) << "\n";
        os << "fy = " << format_double(cam.fy) << "\n";
        os << "cx = " << format_double(cam.cx) << "\n";
        os << "cy = " << format_double(cam.cy) << "\n";
        os << "width = " << cam.width << "\n";
        os << "height = " << cam.height << "\n";
        os << "world_to_camera =";
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) {
                double v;
                if (r < 3 && c < 3)
                    v = cam.rotation(r, c);
                else if (r < 3)
                    v = cam.translation[r];
                else
                    v = c == 3 ? 1.0 : 0.0;
                os << ' ' << format_double(v);
            }
        os << "\n";
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary record stream, little-endian:
//   magic "SFPH", u32 version (1), u32 T, f64 dt, u32 frame_count[T],
//   per frame per surfel: position 3xf64, scale 2xf64, rotation 4xf64,
//   color 3xf64, sdf f64, bubble_id i32,
//   f64 gamma,
//   per frame: u32 n_entries, then per entry i32 bubble_id, 3xf64 velocity.

inline void write_checkpoint(const fs::path& path, const SceneSequence& seq) {
    ensure_parent_dir(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
    os.write("SFPH", 4);
    detail::put<uint32_t>(os, 1u);
    detail::put<uint32_t>(os, static_cast<uint32_t>(seq.frames.size()));
    detail::put<double>(os, seq.dt);
    for (const auto& frame : seq.frames) detail::put<uint32_t>(os, static_cast<uint32_t>(frame.size()));
    for (const auto& frame : seq.frames)
        for (const Surfel& s : frame) {
            for (int d = 0; d < 3; ++d) detail::put<double>(os, s.position[d]);
            for (int d = 0; d < 2; ++d) detail::put<double>(os, s.scale[d]);
            for (int d = 0; d < 4; ++d) detail::put<double>(os, s.rotation[d]);
            for (int d = 0; d < 3; ++d) detail::put<double>(os, s.color[d]);
            detail::put<double>(os, s.sdf);
            detail::put<int32_t>(os, s.bubble_id);
        }
    detail::put<double>(os, seq.gamma);
    for (size_t t = 0; t < seq.frames.size(); ++t) {
        const auto& table = t < seq.bubble_velocity_series.size() ? seq.bubble_velocity_series[t]
                                                                  : std::map<int32_t, Vec3>{};
        detail::put<uint32_t>(os, static_cast<uint32_t>(table.size()));
        for (const auto& [id, v] : table) {
            detail::put<int32_t>(os, id);
            for (int d = 0; d < 3; ++d) detail::put<double>(os, v[d]);
        }
    }
}

inline SceneSequence read_checkpoint(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io", "cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SFPH", 4) != 0) throw Error("io", "bad checkpoint magic in " + path.string());
    const uint32_t version = detail::get<uint32_t>(is);
    if (version != 1) throw Error("io", "unsupported checkpoint version " + std::to_string(version));
    const uint32_t T = detail::get<uint32_t>(is);
    SceneSequence seq;
    seq.dt = detail::get<double>(is);
    std::vector<uint32_t> counts(T);
    for (auto& c : counts) c = detail::get<uint32_t>(is);
    seq.frames.resize(T);
    for (uint32_t t = 0; t < T; ++t) {
        seq.frames[t].resize(counts[t]);
        for (Surfel& s : seq.frames[t]) {
            for (int d = 0; d < 3; ++d) s.position[d] = detail::get<double>(is);
            for (int d = 0; d < 2; ++d) s.scale[d] = detail::get<double>(is);
            for (int d = 0; d < 4; ++d) s.rotation[d] = detail::get<double>(is);
            for (int d = 0; d < 3; ++d) s.color[d] = detail::get<double>(is);
            s.sdf = detail::get<double>(is);
            s.bubble_id = detail::get<int32_t>(is);
        }
    }
    seq.gamma = detail::get<double>(is);
    seq.bubble_velocity_series.resize(T);
    for (uint32_t t = 0; t < T; ++t) {
        const uint32_t n = detail::get<uint32_t>(is);
        for (uint32_t i = 0; i < n; ++i) {
            const int32_t id = detail::get<int32_t>(is);
            Vec3 v;
            for (int d = 0; d < 3; ++d) v[d] = detail::get<double>(is);
            seq.bubble_velocity_series[t][id] = v;
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// CSV

inline void write_csv(const fs::path& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
    ensure_parent_dir(path);
    std::ofstream os(path);
    if (!os) throw Error("io", "cannot open " + path.string() + " for writing");
    for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
        os << "\n";
    }
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path& path, bool skip_header = true) {
    std::ifstream is(path);
    if (!is) throw Error("io", "cannot open " + path.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first && skip_header) {
            first = false;
            continue;
        }
        first = false;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

// Frame file naming shared by every exporter: frame_00001.png for t = 1.
inline std::string frame_file_name(int t_one_based, const char* ext = "png") {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%05d.%s", t_one_based, ext);
    return buf;
}

// Velocity CSV rows (t, bubble_id, vx, vy, vz); `t` is the 1-based index of
// the later frame of each finite difference.
inline void write_velocity_csv(const fs::path& path, const std::vector<std::map<int32_t, Vec3>>& series) {
    std::vector<std::vector<std::string>> rows;
    for (size_t t = 0; t < series.size(); ++t)
        for (const auto& [id, v] : series[t])
            rows.push_back({std::to_string(t + 1), std::to_string(id), format_double(v.x),
                            format_double(v.y), format_double(v.z)});
    write_csv(path, {"t", "bubble_id", "vx", "vy", "vz"}, rows);
}

inline std::vector<std::map<int32_t, Vec3>> read_velocity_csv(const fs::path& path) {
    std::vector<std::map<int32_t, Vec3>> series;
    for (const auto& row : read_csv(path)) {
        if (row.size() != 5) throw Error("parse", "velocity CSV rows need 5 columns: " + path.string());
        const size_t t = static_cast<size_t>(std::stol(row[0]));
        if (series.size() < t) series.resize(t);
        series[t - 1][static_cast<int32_t>(std::stol(row[1]))] =
            Vec3{std::stod(row[2]), std::stod(row[3]), std::stod(row[4])};
    }
    return series;
}

}  // namespace gsurf
