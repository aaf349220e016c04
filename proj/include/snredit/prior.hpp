#pragma once

// Phase 1: region decomposition, rotary geometric descriptors, the frozen
// random projection, and assembly of the latent structural prior.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "snredit/grid.hpp"
#include "snredit/rng.hpp"

namespace snredit {

struct Mask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> on;  // row-major, 0/1

    Mask() = default;
    Mask(int h, int w) : height(h), width(w), on(static_cast<size_t>(h) * w, 0) {}

    bool at(int r, int c) const { return on[static_cast<size_t>(r) * width + c] != 0; }
    void set(int r, int c, bool v) { on[static_cast<size_t>(r) * width + c] = v ? 1 : 0; }
    int count() const {
        int n = 0;
        for (uint8_t v : on) n += v;
        return n;
    }
};

struct Region {
    Mask mask;
    double stability = 0.0;   // in [0,1]
    double area_fraction = 0.0;
    int id = 0;
};

struct RegionDescriptor {
    std::vector<double> vector;
};

struct ProjectionWeights {
    std::vector<double> weights;
    uint64_t seed = 0;
};

struct StructuralPrior {
    Grid2D map;           // raw intensities at pixel resolution
    LatentTensor latent;  // normalized to [-1,1], channel-broadcast
};

namespace detail {

// 4-connected components over an integer label image. Returns component id
// per pixel (-1 never occurs) and the component count.
inline int connected_components(const std::vector<int>& labels, int h, int w,
                                std::vector<int>& comp) {
    comp.assign(static_cast<size_t>(h) * w, -1);
    int n = 0;
    std::vector<int> stack;
    for (int start = 0; start < h * w; ++start) {
        if (comp[start] >= 0) continue;
        const int lab = labels[start];
        comp[start] = n;
        stack.assign(1, start);
        while (!stack.empty()) {
            const int p = stack.back();
            stack.pop_back();
            const int r = p / w, c = p % w;
            const int nbr[4] = {p - w, p + w, p - 1, p + 1};
            const bool ok[4] = {r > 0, r < h - 1, c > 0, c < w - 1};
            for (int k = 0; k < 4; ++k) {
                if (ok[k] && comp[nbr[k]] < 0 && labels[nbr[k]] == lab) {
                    comp[nbr[k]] = n;
                    stack.push_back(nbr[k]);
                }
            }
        }
        ++n;
    }
    return n;
}

inline std::vector<int> quantize_labels(const LatentTensor& img, int levels,
                                        double offset) {
    auto [mn_it, mx_it] = std::minmax_element(img.values.begin(), img.values.end());
    const double mn = *mn_it, range = *mx_it - mn;
    const int hw = img.height * img.width;
    std::vector<int> labels(hw, 0);
    if (range <= 0.0) return labels;
    for (int p = 0; p < hw; ++p) {
        int combined = 0;
        for (int c = 0; c < img.channels; ++c) {
            const double v = img.values[static_cast<size_t>(c) * hw + p];
            int q = static_cast<int>(std::floor((v - mn) / range * levels + offset));
            q = std::clamp(q, 0, levels - 1);
            combined = combined * levels + q;
        }
        labels[p] = combined;
    }
    return labels;
}

inline double iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] & b[i]);
        uni += (a[i] | b[i]);
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace detail

// Connected components of the quantized color label. The stability of a
// component is the IoU between its re-extractions at quantization offsets of
// plus and minus half a level; fragile boundaries fragment under the offset
// and score low. Surviving regions are sorted by descending stability.
inline std::vector<Region> segment_synthetic(const LatentTensor& image,
                                             int quantize_levels, double min_area,
                                             double stability_threshold) {
    if (!image.finite()) throw std::invalid_argument("segment_synthetic: non-finite image");
    if (quantize_levels < 1) throw std::invalid_argument("segment_synthetic: levels < 1");
    if (min_area <= 0.0 || min_area >= 1.0)
        throw std::invalid_argument("segment_synthetic: min_area out of (0,1)");
    if (stability_threshold < 0.0 || stability_threshold > 1.0)
        throw std::invalid_argument("segment_synthetic: threshold out of [0,1]");

    const int h = image.height, w = image.width, hw = h * w;
    std::vector<int> comp_base, comp_plus, comp_minus;
    detail::connected_components(detail::quantize_labels(image, quantize_levels, 0.0),
                                 h, w, comp_base);
    detail::connected_components(detail::quantize_labels(image, quantize_levels, 0.5),
                                 h, w, comp_plus);
    detail::connected_components(detail::quantize_labels(image, quantize_levels, -0.5),
                                 h, w, comp_minus);

    const int n = *std::max_element(comp_base.begin(), comp_base.end()) + 1;
    std::vector<Region> regions;
    for (int k = 0; k < n; ++k) {
        Mask mask(h, w);
        int first = -1;
        for (int p = 0; p < hw; ++p)
            if (comp_base[p] == k) {
                mask.on[p] = 1;
                if (first < 0) first = p;
            }
        const int area = mask.count();
        // Re-extract the component containing this region's anchor pixel at
        // each offset and compare footprints.
        std::vector<uint8_t> plus(hw, 0), minus(hw, 0);
        for (int p = 0; p < hw; ++p) {
            plus[p] = comp_plus[p] == comp_plus[first] ? 1 : 0;
            minus[p] = comp_minus[p] == comp_minus[first] ? 1 : 0;
        }
        Region reg;
        reg.mask = std::move(mask);
        reg.stability = detail::iou(plus, minus);
        reg.area_fraction = static_cast<double>(area) / hw;
        reg.id = static_cast<int>(regions.size());
        if (reg.stability >= stability_threshold && reg.area_fraction >= min_area)
            regions.push_back(std::move(reg));
    }
    std::stable_sort(regions.begin(), regions.end(), [](const Region& a, const Region& b) {
        return a.stability > b.stability;
    });
    return regions;
}

// Mask-set JSON: {height, width, masks: [{id, stability, rle: [...]}]} where
// rle is a row-major run-length encoding alternating false/true runs,
// starting with a false run.
inline std::vector<Region> load_masks(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_masks: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("load_masks: parse failure: ") + e.what());
    }
    const int h = j.at("height").get<int>();
    const int w = j.at("width").get<int>();
    if (h < 1 || w < 1) throw std::runtime_error("load_masks: bad dims");
    std::vector<Region> regions;
    for (const auto& jm : j.at("masks")) {
        Region reg;
        reg.id = jm.at("id").get<int>();
        reg.stability = jm.at("stability").get<double>();
        if (reg.stability < 0.0 || reg.stability > 1.0)
            throw std::runtime_error("load_masks: stability out of [0,1]");
        reg.mask = Mask(h, w);
        size_t pos = 0;
        bool value = false;
        for (const auto& run : jm.at("rle")) {
            const long len = run.get<long>();
            if (len < 0 || pos + len > reg.mask.on.size())
                throw std::runtime_error("load_masks: rle exceeds mask dims");
            if (value) std::fill_n(reg.mask.on.begin() + pos, len, uint8_t{1});
            pos += len;
            value = !value;
        }
        if (pos != reg.mask.on.size())
            throw std::runtime_error("load_masks: rle does not cover mask");
        const int area = reg.mask.count();
        if (area == 0) throw std::runtime_error("load_masks: empty mask");
        reg.area_fraction = static_cast<double>(area) / (h * w);
        regions.push_back(std::move(reg));
    }
    return regions;
}

inline nlohmann::json masks_to_json(const std::vector<Region>& regions) {
    if (regions.empty()) throw std::invalid_argument("masks_to_json: no regions");
    nlohmann::json j;
    j["height"] = regions[0].mask.height;
    j["width"] = regions[0].mask.width;
    j["masks"] = nlohmann::json::array();
    for (const Region& r : regions) {
        nlohmann::json jm;
        jm["id"] = r.id;
        jm["stability"] = r.stability;
        std::vector<long> rle;
        bool value = false;
        long run = 0;
        for (uint8_t v : r.mask.on) {
            if ((v != 0) == value) {
                ++run;
            } else {
                rle.push_back(run);
                value = !value;
                run = 1;
            }
        }
        rle.push_back(run);
        jm["rle"] = rle;
        j["masks"].push_back(std::move(jm));
    }
    return j;
}

// Rotary encoding of a normalized 2-D coordinate. The first half of the
// output encodes x, the second half y; frequency i contributes a unit
// (cos, sin) pair at angle 2*pi*base^(-2i/(C/2))*coord, so the output norm
// is sqrt(C/2) for every input.
inline std::vector<double> rope_encode(double x, double y, int c_desc,
                                       double base = 10000.0) {
    if (c_desc < 4 || c_desc % 4 != 0)
        throw std::invalid_argument("rope_encode: C_desc must be a positive multiple of 4");
    if (base <= 1.0) throw std::invalid_argument("rope_encode: base must exceed 1");
    const int half = c_desc / 2;
    const int pairs = c_desc / 4;  // per axis
    std::vector<double> out(c_desc);
    for (int axis = 0; axis < 2; ++axis) {
        const double coord = axis == 0 ? x : y;
        for (int i = 0; i < pairs; ++i) {
            const double theta =
                2.0 * std::numbers::pi * std::pow(base, -2.0 * i / half);
            out[axis * half + 2 * i] = std::cos(theta * coord);
            out[axis * half + 2 * i + 1] = std::sin(theta * coord);
        }
    }
    return out;
}

// Mean rotary encoding over the mask's cells, coordinates normalized to
// [0,1] by (col/(W-1), row/(H-1)).
inline RegionDescriptor region_descriptor(const Region& region, int c_desc,
                                          double base = 10000.0) {
    const int area = region.mask.count();
    if (area == 0) throw std::invalid_argument("region_descriptor: empty mask");
    const int h = region.mask.height, w = region.mask.width;
    RegionDescriptor d;
    d.vector.assign(c_desc, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (!region.mask.at(r, c)) continue;
            const double x = w > 1 ? static_cast<double>(c) / (w - 1) : 0.0;
            const double y = h > 1 ? static_cast<double>(r) / (h - 1) : 0.0;
            const std::vector<double> enc = rope_encode(x, y, c_desc, base);
            for (int i = 0; i < c_desc; ++i) d.vector[i] += enc[i];
        }
    for (double& v : d.vector) v /= area;
    return d;
}

// Frozen projection weights, uniform on the open interval
// (-1/sqrt(C), +1/sqrt(C)).
inline ProjectionWeights init_projection(uint64_t seed, int c_desc) {
    if (c_desc < 1) throw std::invalid_argument("init_projection: C_desc < 1");
    ProjectionWeights pw;
    pw.seed = seed;
    pw.weights.resize(c_desc);
    RngStream rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_desc));
    for (double& w : pw.weights) {
        double u;
        do {
            u = 2.0 * rng.next_uniform() - 1.0;
        } while (std::abs(u) >= 1.0);
        w = u * bound;
    }
    return pw;
}

inline double project(const ProjectionWeights& w, const RegionDescriptor& s) {
    if (w.weights.size() != s.vector.size())
        throw std::invalid_argument("project: dimension mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < w.weights.size(); ++i) acc += w.weights[i] * s.vector[i];
    return acc;
}

// Raw structural map: each pixel carries the projected intensity of its
// covering region of highest stability (ties broken by lower id); pixels
// covered by no region carry 0.
inline Grid2D build_structural_map(const std::vector<Region>& regions,
                                   const std::vector<RegionDescriptor>& descriptors,
                                   const ProjectionWeights& w) {
    if (regions.empty()) throw std::invalid_argument("build_structural_map: no regions");
    if (regions.size() != descriptors.size())
        throw std::invalid_argument("build_structural_map: regions/descriptors mismatch");
    const int h = regions[0].mask.height, width = regions[0].mask.width;
    for (const Region& r : regions)
        if (r.mask.height != h || r.mask.width != width)
            throw std::invalid_argument("build_structural_map: mask dims mismatch");

    std::vector<double> intensity(regions.size());
    for (size_t k = 0; k < regions.size(); ++k)
        intensity[k] = project(w, descriptors[k]);

    Grid2D map(h, width);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < width; ++c) {
            int best = -1;
            for (size_t k = 0; k < regions.size(); ++k) {
                if (!regions[k].mask.at(r, c)) continue;
                if (best < 0 ||
                    regions[k].stability > regions[best].stability ||
                    (regions[k].stability == regions[best].stability &&
                     regions[k].id < regions[best].id))
                    best = static_cast<int>(k);
            }
            map.at(r, c) = best >= 0 ? intensity[best] : 0.0;
        }
    return map;
}

// resize -> normalize -> broadcast, in that order.
inline StructuralPrior build_latent_prior(const Grid2D& map, int channels,
                                          int latent_h, int latent_w,
                                          double epsilon = 1e-8) {
    StructuralPrior prior;
    prior.map = map;
    prior.latent = broadcast_channels(
        minmax_normalize(resize_area(map, latent_h, latent_w), epsilon), channels);
    return prior;
}

}  // namespace snredit
