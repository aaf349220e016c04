#pragma once

// Desk-scale metrics: MSE, PSNR (capped), windowed SSIM, masked background
// error, and a softmax class-alignment proxy.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "snredit/grid.hpp"
#include "snredit/prior.hpp"

namespace snredit {

constexpr double kPsnrCap = 100.0;

inline double mse(const LatentTensor& a, const LatentTensor& b) {
    check_same_shape(a, b, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

inline double psnr(const LatentTensor& a, const LatentTensor& b, double peak = 1.0) {
    if (peak <= 0.0) throw std::invalid_argument("psnr: peak <= 0");
    const double e = mse(a, b);
    if (e <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / e));
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 1.0;
};

namespace detail {
inline std::vector<double> gaussian_kernel(int window, double sigma) {
    std::vector<double> k(window);
    const double c = (window - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < window; ++i) {
        k[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable Gaussian blur with reflect padding.
inline Grid2D gaussian_blur(const Grid2D& g, const std::vector<double>& k) {
    const int h = g.height, w = g.width, half = static_cast<int>(k.size()) / 2;
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    Grid2D tmp(h, w), out(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (size_t j = 0; j < k.size(); ++j)
                acc += k[j] * g.at(r, reflect(c + static_cast<int>(j) - half, w));
            tmp.at(r, c) = acc;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (size_t j = 0; j < k.size(); ++j)
                acc += k[j] * tmp.at(reflect(r + static_cast<int>(j) - half, h), c);
            out.at(r, c) = acc;
        }
    return out;
}
}  // namespace detail

inline double ssim(const Grid2D& a, const Grid2D& b, const SsimParams& p = {}) {
    if (a.height != b.height || a.width != b.width)
        throw std::invalid_argument("ssim: shape mismatch");
    const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
    const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
    const std::vector<double> kern = detail::gaussian_kernel(p.window, p.sigma);

    const Grid2D mu_a = detail::gaussian_blur(a, kern);
    const Grid2D mu_b = detail::gaussian_blur(b, kern);
    Grid2D aa(a.height, a.width), bb(a.height, a.width), ab(a.height, a.width);
    for (size_t i = 0; i < a.size(); ++i) {
        aa.values[i] = a.values[i] * a.values[i];
        bb.values[i] = b.values[i] * b.values[i];
        ab.values[i] = a.values[i] * b.values[i];
    }
    const Grid2D s_aa = detail::gaussian_blur(aa, kern);
    const Grid2D s_bb = detail::gaussian_blur(bb, kern);
    const Grid2D s_ab = detail::gaussian_blur(ab, kern);

    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double ma = mu_a.values[i], mb = mu_b.values[i];
        const double va = s_aa.values[i] - ma * ma;
        const double vb = s_bb.values[i] - mb * mb;
        const double cov = s_ab.values[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(a.size());
}

// Channel-mean SSIM for tensors.
inline double ssim(const LatentTensor& a, const LatentTensor& b,
                   const SsimParams& p = {}) {
    check_same_shape(a, b, "ssim");
    double acc = 0.0;
    for (int c = 0; c < a.channels; ++c) acc += ssim(a.channel(c), b.channel(c), p);
    return acc / a.channels;
}

// MSE restricted to pixels outside the edit mask.
inline double background_consistency(const LatentTensor& source,
                                     const LatentTensor& edited, const Mask& edit_mask) {
    check_same_shape(source, edited, "background_consistency");
    if (edit_mask.height != source.height || edit_mask.width != source.width)
        throw std::invalid_argument("background_consistency: mask shape mismatch");
    double acc = 0.0;
    long n = 0;
    for (int c = 0; c < source.channels; ++c)
        for (int r = 0; r < source.height; ++r)
            for (int col = 0; col < source.width; ++col) {
                if (edit_mask.at(r, col)) continue;
                const double d = source.at(c, r, col) - edited.at(c, r, col);
                acc += d * d;
                ++n;
            }
    if (n == 0)
        throw std::invalid_argument("background_consistency: mask covers everything");
    return acc / static_cast<double>(n);
}

// Softmax over negative Euclidean distances to per-class reference means;
// returns the target-class probability.
inline double alignment_proxy(const LatentTensor& edited, int target_class,
                              const std::vector<LatentTensor>& reference_means) {
    if (target_class < 0 || target_class >= static_cast<int>(reference_means.size()))
        throw std::invalid_argument("alignment_proxy: unknown class");
    std::vector<double> neg_dist(reference_means.size());
    for (size_t k = 0; k < reference_means.size(); ++k)
        neg_dist[k] = -l2_norm(sub(edited, reference_means[k]));
    const double m = *std::max_element(neg_dist.begin(), neg_dist.end());
    double denom = 0.0;
    for (double v : neg_dist) denom += std::exp(v - m);
    return std::exp(neg_dist[target_class] - m) / denom;
}

struct MetricsReport {
    double psnr_db = 0.0;
    double ssim_score = 0.0;
    double mse_value = 0.0;
    double background_mse = 0.0;
    double alignment = 0.0;
};

}  // namespace snredit
