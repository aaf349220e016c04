#pragma once

// Bundled synthetic scenarios, per-variant prior construction, the ablation
// table, and the stochastic-scale sensitivity sweep.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "snredit/analysis.hpp"
#include "snredit/edit.hpp"
#include "snredit/flow.hpp"
#include "snredit/grid.hpp"
#include "snredit/metrics.hpp"
#include "snredit/prior.hpp"
#include "snredit/rng.hpp"

namespace snredit {

// ---------------------------------------------------------------------------
// Scenarios.
// ---------------------------------------------------------------------------

// Two Gaussian blob classes in a small latent grid.
inline LatentTensor blobs2_sample(int cls, RngStream& rng) {
    const double mean = cls == 0 ? 1.0 : -1.0;
    LatentTensor z(1, 4, 4, mean);
    for (double& v : z.values) v += 0.3 * rng.next_normal();
    return z;
}

// 16x16 grayscale images, one bright square per class at a class-specific
// location and intensity, over a flat background.
inline LatentTensor shapes16_sample(int cls, RngStream& rng) {
    LatentTensor img(1, 16, 16, 0.1);
    const int r0 = cls == 0 ? 2 : 8, c0 = cls == 0 ? 2 : 8;
    const double intensity = cls == 0 ? 0.9 : 0.6;
    for (int r = r0; r < r0 + 6; ++r)
        for (int c = c0; c < c0 + 6; ++c) img.at(0, r, c) = intensity;
    const double jitter = 0.02 * (2.0 * rng.next_uniform() - 1.0);
    for (double& v : img.values) v += jitter + 0.005 * rng.next_normal();
    return img;
}

// Pixels whose class means differ: the union of both squares.
inline Mask shapes16_edit_mask() {
    Mask m(16, 16);
    for (int r = 2; r < 8; ++r)
        for (int c = 2; c < 8; ++c) m.set(r, c, true);
    for (int r = 8; r < 14; ++r)
        for (int c = 8; c < 14; ++c) m.set(r, c, true);
    return m;
}

inline Dataset make_scenario_dataset(const std::string& name, uint64_t seed,
                                     int n_per_class = 64) {
    Dataset ds;
    RngStream rng(seed);
    for (int cls = 0; cls < 2; ++cls)
        for (int i = 0; i < n_per_class; ++i) {
            ds.samples.push_back(name == "blobs2" ? blobs2_sample(cls, rng)
                                                  : shapes16_sample(cls, rng));
            ds.labels.push_back(cls);
        }
    ds.validate();
    return ds;
}

inline bool known_scenario(const std::string& name) {
    return name == "blobs2" || name == "shapes16";
}

// ---------------------------------------------------------------------------
// Ablation variants.
// ---------------------------------------------------------------------------

enum class AblationVariant { full, no_semantic_decomp, no_rope, no_rand_proj, baseline };

inline const char* variant_name(AblationVariant v) {
    switch (v) {
        case AblationVariant::full: return "full";
        case AblationVariant::no_semantic_decomp: return "no_semantic_decomp";
        case AblationVariant::no_rope: return "no_rope";
        case AblationVariant::no_rand_proj: return "no_rand_proj";
        case AblationVariant::baseline: return "baseline";
    }
    return "?";
}

inline AblationVariant parse_variant(const std::string& s) {
    for (AblationVariant v :
         {AblationVariant::full, AblationVariant::no_semantic_decomp,
          AblationVariant::no_rope, AblationVariant::no_rand_proj,
          AblationVariant::baseline})
        if (s == variant_name(v)) return v;
    throw std::invalid_argument("unknown ablation variant: " + s);
}

struct PriorParams {
    int quantize_levels = 4;
    double min_area = 0.001;
    double stability_threshold = 0.85;
    int c_desc = 32;
    double rope_base = 10000.0;
    uint64_t projection_seed = 1234;
};

// Builds the raw structural map for a variant. The baseline variant has no
// prior at all; callers pass a zero tensor there.
inline Grid2D build_variant_map(AblationVariant variant, const LatentTensor& image,
                                const PriorParams& pp) {
    std::vector<Region> regions;
    if (variant == AblationVariant::no_semantic_decomp) {
        Region full_frame;
        full_frame.mask = Mask(image.height, image.width);
        std::fill(full_frame.mask.on.begin(), full_frame.mask.on.end(), uint8_t{1});
        full_frame.stability = 1.0;
        full_frame.area_fraction = 1.0;
        full_frame.id = 0;
        regions.push_back(std::move(full_frame));
    } else {
        regions = segment_synthetic(image, pp.quantize_levels, pp.min_area,
                                    pp.stability_threshold);
        if (regions.empty()) return Grid2D(image.height, image.width);
    }

    std::vector<RegionDescriptor> descriptors;
    for (const Region& r : regions) {
        if (variant == AblationVariant::no_rope) {
            RegionDescriptor d;
            d.vector.assign(pp.c_desc, 1.0);
            descriptors.push_back(std::move(d));
        } else {
            descriptors.push_back(region_descriptor(r, pp.c_desc, pp.rope_base));
        }
    }

    if (variant == AblationVariant::no_rand_proj) {
        // psi replaced by average pooling of descriptor components.
        ProjectionWeights avg;
        avg.seed = 0;
        avg.weights.assign(pp.c_desc, 1.0 / pp.c_desc);
        return build_structural_map(regions, descriptors, avg);
    }
    return build_structural_map(regions, descriptors,
                                init_projection(pp.projection_seed, pp.c_desc));
}

inline LatentTensor build_variant_prior(AblationVariant variant,
                                        const LatentTensor& image,
                                        const PriorParams& pp) {
    if (variant == AblationVariant::baseline)
        return LatentTensor(image.channels, image.height, image.width);
    const Grid2D map = build_variant_map(variant, image, pp);
    return build_latent_prior(map, image.channels, image.height, image.width).latent;
}

// FNV-1a over the raw map plus latent payload; distinguishes variants whose
// normalized priors coincide (a constant map and no map both normalize to
// zero).
inline uint64_t prior_fingerprint(const Grid2D& map, const LatentTensor& latent) {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const double* data, size_t n) {
        const unsigned char* p = reinterpret_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n * sizeof(double); ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    mix(map.values.data(), map.values.size());
    mix(latent.values.data(), latent.values.size());
    return h;
}

// ---------------------------------------------------------------------------
// Metric rows, CSV, SVG.
// ---------------------------------------------------------------------------

struct MetricRow {
    uint64_t seed = 0;
    std::string tag;  // variant name or lambda value
    MetricsReport metrics;
};

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows,
                              const std::string& tag_header) {
    os << "seed," << tag_header << ",mse,psnr,ssim,background_mse,alignment\n";
    os.precision(12);
    for (const MetricRow& r : rows)
        os << r.seed << "," << r.tag << "," << r.metrics.mse_value << ","
           << r.metrics.psnr_db << "," << r.metrics.ssim_score << ","
           << r.metrics.background_mse << "," << r.metrics.alignment << "\n";
}

inline void write_bound_csv(std::ostream& os, const std::vector<BoundRecord>& records,
                            uint64_t seed) {
    os << "seed,t,eps_src,measured,bound,slack\n";
    os.precision(12);
    for (const BoundRecord& r : records)
        os << seed << "," << r.t << "," << r.eps_src << "," << r.measured << ","
           << r.bound << "," << r.slack << "\n";
}

// Minimal SVG line plot: one polyline per named series over a shared x grid.
inline void write_svg_lines(const std::string& path,
                            const std::vector<double>& xs,
                            const std::map<std::string, std::vector<double>>& series,
                            const std::string& title) {
    const int width = 640, height = 420, margin = 50;
    double ymin = 1e300, ymax = -1e300;
    for (const auto& [name, ys] : series)
        for (double y : ys) {
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (ymax <= ymin) ymax = ymin + 1.0;
    const double xmin = xs.front(), xmax = xs.back() > xs.front() ? xs.back() : xs.front() + 1.0;
    auto px = [&](double x) {
        return margin + (x - xmin) / (xmax - xmin) * (width - 2 * margin);
    };
    auto py = [&](double y) {
        return height - margin - (y - ymin) / (ymax - ymin) * (height - 2 * margin);
    };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_svg_lines: cannot open " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\">" << title
      << "</text>\n";
    f << "<line x1=\"" << margin << "\" y1=\"" << height - margin << "\" x2=\""
      << width - margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\"" << margin
      << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
    int ci = 0;
    for (const auto& [name, ys] : series) {
        f << "<polyline fill=\"none\" stroke=\"" << colors[ci % 4]
          << "\" stroke-width=\"2\" points=\"";
        for (size_t i = 0; i < xs.size() && i < ys.size(); ++i)
            f << px(xs[i]) << "," << py(ys[i]) << " ";
        f << "\"/>\n";
        f << "<text x=\"" << width - margin + 4 << "\" y=\"" << margin + 16 * ci
          << "\" fill=\"" << colors[ci % 4] << "\" font-size=\"12\">" << name
          << "</text>\n";
        ++ci;
    }
    f << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Experiment drivers.
// ---------------------------------------------------------------------------

struct ExperimentContext {
    const VelocityField* field = nullptr;
    std::vector<LatentTensor> reference_means;  // per class, for alignment
    Mask edit_mask;
    PriorParams prior_params;
    EditConfig edit_defaults;
};

inline MetricsReport evaluate_edit(const ExperimentContext& ctx,
                                   const LatentTensor& source,
                                   const LatentTensor& edited, int target_class) {
    MetricsReport m;
    m.mse_value = mse(source, edited);
    m.psnr_db = psnr(source, edited, 1.0);
    m.ssim_score = ssim(source, edited);
    m.background_mse = background_consistency(source, edited, ctx.edit_mask);
    m.alignment = alignment_proxy(edited, target_class, ctx.reference_means);
    return m;
}

// One edit of a class-0 source toward class 1 for the given variant.
inline MetricRow run_variant_case(const ExperimentContext& ctx, AblationVariant variant,
                                  uint64_t seed) {
    RngStream src_rng(detail::splitmix64(seed));
    const LatentTensor source = shapes16_sample(0, src_rng);
    const LatentTensor prior = build_variant_prior(variant, source, ctx.prior_params);
    EditConfig cfg = ctx.edit_defaults;
    cfg.seed = seed;
    if (variant == AblationVariant::baseline) {
        cfg.lambda_struct = 0.0;
        cfg.lambda_stoch = 1.0;
    }
    const EditRun run = edit(*ctx.field, source, Condition{0}, Condition{1}, prior, cfg);
    MetricRow row;
    row.seed = seed;
    row.tag = variant_name(variant);
    row.metrics = evaluate_edit(ctx, source, run.result, 1);
    return row;
}

inline std::vector<MetricRow> run_ablation(const ExperimentContext& ctx,
                                           const std::vector<uint64_t>& seeds) {
    std::vector<MetricRow> rows;
    for (uint64_t seed : seeds)
        for (AblationVariant v :
             {AblationVariant::full, AblationVariant::no_semantic_decomp,
              AblationVariant::no_rope, AblationVariant::no_rand_proj,
              AblationVariant::baseline})
            rows.push_back(run_variant_case(ctx, v, seed));
    return rows;
}

// Sweeps lambda_stoch with lambda_struct = 1 - lambda_stoch on the full prior.
inline std::vector<MetricRow> sensitivity_sweep(const ExperimentContext& ctx,
                                                const std::vector<double>& lambda_values,
                                                const std::vector<uint64_t>& seeds) {
    std::vector<MetricRow> rows;
    for (double ls : lambda_values) {
        if (ls < 0.0 || ls > 1.0)
            throw std::invalid_argument("sensitivity_sweep: lambda outside [0,1]");
        for (uint64_t seed : seeds) {
            RngStream src_rng(detail::splitmix64(seed));
            const LatentTensor source = shapes16_sample(0, src_rng);
            const LatentTensor prior =
                build_variant_prior(AblationVariant::full, source, ctx.prior_params);
            EditConfig cfg = ctx.edit_defaults;
            cfg.seed = seed;
            cfg.lambda_stoch = ls;
            cfg.lambda_struct = 1.0 - ls;
            const EditRun run =
                edit(*ctx.field, source, Condition{0}, Condition{1}, prior, cfg);
            MetricRow row;
            row.seed = seed;
            std::ostringstream tag;
            tag << ls;
            row.tag = tag.str();
            row.metrics = evaluate_edit(ctx, source, run.result, 1);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline double mean_over(const std::vector<MetricRow>& rows, const std::string& tag,
                        double MetricsReport::*field) {
    double acc = 0.0;
    int n = 0;
    for (const MetricRow& r : rows)
        if (r.tag == tag) {
            acc += r.metrics.*field;
            ++n;
        }
    if (n == 0) throw std::invalid_argument("mean_over: no rows for tag " + tag);
    return acc / n;
}

}  // namespace snredit
