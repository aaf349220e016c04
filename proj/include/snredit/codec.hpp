#pragma once

// Latent codec standing in for an autoencoder pair. Identity mode maps
// pixels straight through; linear mode projects onto a fixed random
// orthonormal-row basis and decodes with the recorded pseudo-inverse.

#include <stdexcept>
#include <vector>

#include "snredit/grid.hpp"
#include "snredit/rng.hpp"

namespace snredit {

class Codec {
  public:
    enum class Mode { identity, linear };

    Codec() : mode_(Mode::identity) {}

    // Orthonormal-row projection built by Gram-Schmidt on Gaussian rows,
    // so the pseudo-inverse is simply the transpose.
    static Codec make_linear(int latent_dim, int pixel_channels, int pixel_h,
                             int pixel_w, uint64_t seed) {
        const int pixel_dim = pixel_channels * pixel_h * pixel_w;
        if (latent_dim < 1 || latent_dim > pixel_dim)
            throw std::invalid_argument("Codec: latent_dim out of range");
        Codec c;
        c.mode_ = Mode::linear;
        c.latent_dim_ = latent_dim;
        c.pixel_channels_ = pixel_channels;
        c.pixel_h_ = pixel_h;
        c.pixel_w_ = pixel_w;
        c.proj_.assign(static_cast<size_t>(latent_dim) * pixel_dim, 0.0);
        RngStream rng(seed);
        for (int r = 0; r < latent_dim; ++r) {
            double* row = &c.proj_[static_cast<size_t>(r) * pixel_dim];
            for (int j = 0; j < pixel_dim; ++j) row[j] = rng.next_normal();
            for (int p = 0; p < r; ++p) {
                const double* prev = &c.proj_[static_cast<size_t>(p) * pixel_dim];
                double dot = 0.0;
                for (int j = 0; j < pixel_dim; ++j) dot += row[j] * prev[j];
                for (int j = 0; j < pixel_dim; ++j) row[j] -= dot * prev[j];
            }
            double nrm = 0.0;
            for (int j = 0; j < pixel_dim; ++j) nrm += row[j] * row[j];
            nrm = std::sqrt(nrm);
            if (nrm < 1e-12) throw std::runtime_error("Codec: degenerate basis row");
            for (int j = 0; j < pixel_dim; ++j) row[j] /= nrm;
        }
        return c;
    }

    Mode mode() const { return mode_; }

    LatentTensor encode(const LatentTensor& image) const {
        if (mode_ == Mode::identity) return image;
        check_pixel_shape(image);
        const int pixel_dim = pixel_channels_ * pixel_h_ * pixel_w_;
        LatentTensor out(1, 1, latent_dim_);
        for (int r = 0; r < latent_dim_; ++r) {
            const double* row = &proj_[static_cast<size_t>(r) * pixel_dim];
            double acc = 0.0;
            for (int j = 0; j < pixel_dim; ++j) acc += row[j] * image.values[j];
            out.values[r] = acc;
        }
        return out;
    }

    LatentTensor decode(const LatentTensor& latent) const {
        if (mode_ == Mode::identity) return latent;
        if (latent.channels != 1 || latent.height != 1 || latent.width != latent_dim_)
            throw std::invalid_argument("Codec::decode: latent shape mismatch");
        const int pixel_dim = pixel_channels_ * pixel_h_ * pixel_w_;
        LatentTensor out(pixel_channels_, pixel_h_, pixel_w_);
        for (int r = 0; r < latent_dim_; ++r) {
            const double* row = &proj_[static_cast<size_t>(r) * pixel_dim];
            const double v = latent.values[r];
            for (int j = 0; j < pixel_dim; ++j) out.values[j] += row[j] * v;
        }
        return out;
    }

  private:
    void check_pixel_shape(const LatentTensor& image) const {
        if (image.channels != pixel_channels_ || image.height != pixel_h_ ||
            image.width != pixel_w_)
            throw std::invalid_argument("Codec::encode: image shape mismatch");
    }

    Mode mode_;
    int latent_dim_ = 0;
    int pixel_channels_ = 0, pixel_h_ = 0, pixel_w_ = 0;
    std::vector<double> proj_;  // latent_dim x pixel_dim, row-major
};

}  // namespace snredit
