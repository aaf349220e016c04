#pragma once

// File formats: FGRID (little-endian f32 tensor dump), PGM/PPM renders.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "snredit/grid.hpp"

namespace snredit {

constexpr uint16_t kFgridVersion = 1;

inline void write_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<char*>(b), 2);
}

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<char*>(b), 4);
}

inline void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline uint16_t read_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

inline float read_f32(std::istream& is) {
    uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void save_fgrid(std::ostream& os, const LatentTensor& t) {
    os.write("FGRD", 4);
    write_u16(os, kFgridVersion);
    write_u32(os, static_cast<uint32_t>(t.channels));
    write_u32(os, static_cast<uint32_t>(t.height));
    write_u32(os, static_cast<uint32_t>(t.width));
    for (double v : t.values) write_f32(os, static_cast<float>(v));
}

inline void save_fgrid(const std::string& path, const LatentTensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_fgrid: cannot open " + path);
    save_fgrid(f, t);
}

inline void save_fgrid(const std::string& path, const Grid2D& g) {
    save_fgrid(path, broadcast_channels(g, 1));
}

inline LatentTensor load_fgrid(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FGRD", 4) != 0)
        throw std::runtime_error("load_fgrid: bad magic");
    const uint16_t version = read_u16(is);
    if (version != kFgridVersion) throw std::runtime_error("load_fgrid: bad version");
    const uint32_t c = read_u32(is), h = read_u32(is), w = read_u32(is);
    if (!is || c == 0 || h == 0 || w == 0)
        throw std::runtime_error("load_fgrid: bad dims");
    LatentTensor t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    for (double& v : t.values) v = read_f32(is);
    if (!is) throw std::runtime_error("load_fgrid: truncated payload");
    return t;
}

inline LatentTensor load_fgrid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_fgrid: cannot open " + path);
    return load_fgrid(f);
}

// Renders with an affine remap of [lo, hi] to [0, 255].
inline void save_pgm(const std::string& path, const Grid2D& g, double lo, double hi) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_pgm: cannot open " + path);
    f << "P5\n" << g.width << " " << g.height << "\n255\n";
    const double range = (hi > lo) ? hi - lo : 1.0;
    for (double v : g.values) {
        int px = static_cast<int>(std::lround((v - lo) / range * 255.0));
        px = std::clamp(px, 0, 255);
        f.put(static_cast<char>(px));
    }
}

inline void save_pgm_auto(const std::string& path, const Grid2D& g) {
    auto [mn, mx] = std::minmax_element(g.values.begin(), g.values.end());
    save_pgm(path, g, *mn, *mx);
}

inline void save_ppm(const std::string& path, const LatentTensor& t, double lo,
                     double hi) {
    if (t.channels != 3) throw std::invalid_argument("save_ppm: needs 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_ppm: cannot open " + path);
    f << "P6\n" << t.width << " " << t.height << "\n255\n";
    const double range = (hi > lo) ? hi - lo : 1.0;
    for (int r = 0; r < t.height; ++r)
        for (int c = 0; c < t.width; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                int px = static_cast<int>(
                    std::lround((t.at(ch, r, c) - lo) / range * 255.0));
                f.put(static_cast<char>(std::clamp(px, 0, 255)));
            }
}

inline Grid2D load_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_pgm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5") throw std::runtime_error("load_pgm: not a P5 file");
    int w, h, maxval;
    f >> w >> h >> maxval;
    if (!f || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("load_pgm: bad header");
    f.get();  // single whitespace after maxval
    Grid2D g(h, w);
    for (double& v : g.values) {
        const int c = f.get();
        if (c < 0) throw std::runtime_error("load_pgm: truncated");
        v = c / 255.0;
    }
    return g;
}

}  // namespace snredit
