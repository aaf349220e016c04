#pragma once

// Dense 2-D grids and channel-major latent tensors, plus the resampling and
// normalization steps used when preparing structural priors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace snredit {

struct Grid2D {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major

    Grid2D() = default;
    Grid2D(int h, int w, double fill = 0.0)
        : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {
        if (h <= 0 || w <= 0) throw std::invalid_argument("Grid2D: non-positive dims");
    }

    double& at(int r, int c) { return values[static_cast<size_t>(r) * width + c]; }
    double at(int r, int c) const { return values[static_cast<size_t>(r) * width + c]; }
    size_t size() const { return values.size(); }

    bool finite() const {
        return std::all_of(values.begin(), values.end(),
                           [](double v) { return std::isfinite(v); });
    }
};

struct LatentTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;  // channel-major

    LatentTensor() = default;
    LatentTensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          values(static_cast<size_t>(c) * h * w, fill) {
        if (c <= 0 || h <= 0 || w <= 0)
            throw std::invalid_argument("LatentTensor: non-positive dims");
    }

    double& at(int c, int r, int col) {
        return values[(static_cast<size_t>(c) * height + r) * width + col];
    }
    double at(int c, int r, int col) const {
        return values[(static_cast<size_t>(c) * height + r) * width + col];
    }
    size_t size() const { return values.size(); }

    bool same_shape(const LatentTensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    bool finite() const {
        return std::all_of(values.begin(), values.end(),
                           [](double v) { return std::isfinite(v); });
    }

    Grid2D channel(int c) const {
        Grid2D g(height, width);
        for (int r = 0; r < height; ++r)
            for (int col = 0; col < width; ++col) g.at(r, col) = at(c, r, col);
        return g;
    }
};

inline void check_same_shape(const LatentTensor& a, const LatentTensor& b,
                             const char* where) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

// Elementwise helpers used all over the editing dynamics.
inline LatentTensor axpby(double a, const LatentTensor& x, double b,
                          const LatentTensor& y) {
    check_same_shape(x, y, "axpby");
    LatentTensor out = x;
    for (size_t i = 0; i < out.size(); ++i)
        out.values[i] = a * x.values[i] + b * y.values[i];
    return out;
}

inline LatentTensor sub(const LatentTensor& a, const LatentTensor& b) {
    return axpby(1.0, a, -1.0, b);
}

inline LatentTensor add(const LatentTensor& a, const LatentTensor& b) {
    return axpby(1.0, a, 1.0, b);
}

inline LatentTensor scale(const LatentTensor& a, double s) {
    LatentTensor out = a;
    for (double& v : out.values) v *= s;
    return out;
}

inline double max_abs_diff(const LatentTensor& a, const LatentTensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.values[i] - b.values[i]));
    return m;
}

inline double l2_norm(const LatentTensor& a) {
    double s = 0.0;
    for (double v : a.values) s += v * v;
    return std::sqrt(s);
}

// Min-max normalization onto [-1, 1] with a zero-map fallback when the
// value range does not exceed epsilon.
inline Grid2D minmax_normalize(const Grid2D& grid, double epsilon = 1e-8) {
    if (!grid.finite()) throw std::invalid_argument("minmax_normalize: non-finite input");
    if (epsilon <= 0.0) throw std::invalid_argument("minmax_normalize: epsilon <= 0");
    auto [mn_it, mx_it] = std::minmax_element(grid.values.begin(), grid.values.end());
    double mn = *mn_it, mx = *mx_it;
    Grid2D out(grid.height, grid.width);
    if (mx - mn <= epsilon) return out;  // all zeros
    double inv = 2.0 / (mx - mn);
    for (size_t i = 0; i < grid.size(); ++i)
        out.values[i] = (grid.values[i] - mn) * inv - 1.0;
    return out;
}

// Area-weighted resampling. Each output cell averages the input cells its
// footprint overlaps, so constant grids stay constant and the global mean is
// preserved for integer ratios.
inline Grid2D resize_area(const Grid2D& grid, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_area: zero-sized target");
    Grid2D out(out_h, out_w);
    const double sy = static_cast<double>(grid.height) / out_h;
    const double sx = static_cast<double>(grid.width) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const double y0 = oy * sy, y1 = (oy + 1) * sy;
        const int iy0 = static_cast<int>(std::floor(y0));
        const int iy1 = std::min(grid.height, static_cast<int>(std::ceil(y1)));
        for (int ox = 0; ox < out_w; ++ox) {
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            const int ix0 = static_cast<int>(std::floor(x0));
            const int ix1 = std::min(grid.width, static_cast<int>(std::ceil(x1)));
            double acc = 0.0, area = 0.0;
            for (int iy = iy0; iy < iy1; ++iy) {
                const double hy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
                for (int ix = ix0; ix < ix1; ++ix) {
                    const double hx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
                    acc += grid.at(iy, ix) * hy * hx;
                    area += hy * hx;
                }
            }
            out.at(oy, ox) = acc / area;
        }
    }
    return out;
}

inline LatentTensor broadcast_channels(const Grid2D& grid, int channels) {
    if (channels < 1) throw std::invalid_argument("broadcast_channels: channels < 1");
    LatentTensor out(channels, grid.height, grid.width);
    for (int c = 0; c < channels; ++c)
        std::copy(grid.values.begin(), grid.values.end(),
                  out.values.begin() + static_cast<size_t>(c) * grid.size());
    return out;
}

}  // namespace snredit
