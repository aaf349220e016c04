#pragma once

// Conditioned velocity fields: a small trainable MLP fit by conditional flow
// matching, and an analytic Gaussian field with closed-form velocity and
// Lipschitz constant. Time convention: t=0 is data, t=1 is noise.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "snredit/grid.hpp"
#include "snredit/io.hpp"
#include "snredit/rng.hpp"

namespace snredit {

struct Condition {
    int class_id = 0;
};

struct VelocityField {
    virtual ~VelocityField() = default;
    virtual LatentTensor velocity(const LatentTensor& z, double t,
                                  const Condition& c) const = 0;
    virtual int num_classes() const = 0;
};

// Convex interpolation z_t = (1-t) z0 + t eps.
inline LatentTensor flow_interpolate(const LatentTensor& z0, const LatentTensor& eps,
                                     double t) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("flow_interpolate: t outside [0,1]");
    return axpby(1.0 - t, z0, t, eps);
}

// ---------------------------------------------------------------------------
// Analytic Gaussian field.
//
// For z0 ~ N(mu, sigma^2 I), eps ~ N(0, I), z_t = (1-t) z0 + t eps, the
// marginal is N((1-t) mu, s_t^2 I) with s_t^2 = (1-t)^2 sigma^2 + t^2, and
// joint-Gaussian conditioning gives
//   E[eps | z]  = t / s_t^2 * (z - (1-t) mu)
//   E[z0  | z]  = mu + (1-t) sigma^2 / s_t^2 * (z - (1-t) mu)
// so the marginal velocity E[eps - z0 | z] is linear in z:
//   v(z, t) = a(t) (z - (1-t) mu) - mu,   a(t) = (t - (1-t) sigma^2) / s_t^2.
// ---------------------------------------------------------------------------

inline double gaussian_oracle_slope(double sigma, double t) {
    const double s2 = (1.0 - t) * (1.0 - t) * sigma * sigma + t * t;
    return (t - (1.0 - t) * sigma * sigma) / s2;
}

inline LatentTensor gaussian_oracle_velocity(const LatentTensor& mu, double sigma,
                                             const LatentTensor& z, double t) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("gaussian_oracle_velocity: bad t");
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_oracle_velocity: sigma <= 0");
    check_same_shape(mu, z, "gaussian_oracle_velocity");
    const double a = gaussian_oracle_slope(sigma, t);
    LatentTensor out = z;
    for (size_t i = 0; i < out.size(); ++i)
        out.values[i] = a * (z.values[i] - (1.0 - t) * mu.values[i]) - mu.values[i];
    return out;
}

class GaussianOracleField final : public VelocityField {
  public:
    GaussianOracleField(std::vector<LatentTensor> class_means, double sigma)
        : GaussianOracleField(std::move(class_means), std::vector<double>{}) {
        if (sigma <= 0.0) throw std::invalid_argument("GaussianOracleField: sigma <= 0");
        sigmas_.assign(means_.size(), sigma);
    }

    // Per-class spreads; with a shared sigma the field's slope is class
    // independent and the difference-of-flows dynamics cancel exactly.
    GaussianOracleField(std::vector<LatentTensor> class_means, std::vector<double> sigmas)
        : means_(std::move(class_means)), sigmas_(std::move(sigmas)) {
        if (means_.empty()) throw std::invalid_argument("GaussianOracleField: no classes");
        if (!sigmas_.empty() && sigmas_.size() != means_.size())
            throw std::invalid_argument("GaussianOracleField: sigmas/means mismatch");
        for (double s : sigmas_)
            if (s <= 0.0) throw std::invalid_argument("GaussianOracleField: sigma <= 0");
    }

    LatentTensor velocity(const LatentTensor& z, double t,
                          const Condition& c) const override {
        return gaussian_oracle_velocity(mean(c), sigma(c), z, t);
    }

    int num_classes() const override { return static_cast<int>(means_.size()); }
    double sigma(const Condition& c = {}) const {
        check(c);
        return sigmas_[c.class_id];
    }
    const LatentTensor& mean(const Condition& c) const {
        check(c);
        return means_[c.class_id];
    }

    // Operator norm of the (scalar multiple of identity) per-class Jacobian.
    double lipschitz_constant(double t, const Condition& c) const {
        return std::abs(gaussian_oracle_slope(sigma(c), t));
    }

    // Field-wide constant: the worst class at this t.
    double lipschitz_constant(double t) const {
        double l = 0.0;
        for (size_t k = 0; k < sigmas_.size(); ++k)
            l = std::max(l, std::abs(gaussian_oracle_slope(sigmas_[k], t)));
        return l;
    }

  private:
    void check(const Condition& c) const {
        if (c.class_id < 0 || c.class_id >= num_classes())
            throw std::invalid_argument("GaussianOracleField: unknown class");
    }

    std::vector<LatentTensor> means_;
    std::vector<double> sigmas_;
};

// ---------------------------------------------------------------------------
// Trainable MLP field.
// ---------------------------------------------------------------------------

struct MlpConfig {
    int latent_channels = 1;
    int latent_h = 4;
    int latent_w = 4;
    std::vector<int> hidden = {256, 256, 256};
    int time_embed_dim = 32;  // even; 0 feeds raw t as a single input
    int cond_embed_dim = 16;
    int num_classes = 2;
};

class MlpFlowModel final : public VelocityField {
  public:
    explicit MlpFlowModel(const MlpConfig& cfg, uint64_t init_seed = 0)
        : cfg_(cfg) {
        if (cfg_.time_embed_dim % 2 != 0)
            throw std::invalid_argument("MlpFlowModel: time_embed_dim must be even");
        if (cfg_.num_classes < 1) throw std::invalid_argument("MlpFlowModel: no classes");
        latent_dim_ = cfg_.latent_channels * cfg_.latent_h * cfg_.latent_w;
        const int in0 = input_dim();
        std::vector<int> dims;
        dims.push_back(in0);
        for (int hsz : cfg_.hidden) dims.push_back(hsz);
        dims.push_back(latent_dim_);
        size_t total = 0;
        for (size_t l = 0; l + 1 < dims.size(); ++l) {
            layer_off_.push_back(total);
            total += static_cast<size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
        }
        cond_off_ = total;
        total += static_cast<size_t>(cfg_.num_classes) * cfg_.cond_embed_dim;
        params_.assign(total, 0.0);
        dims_ = dims;
        init_weights(init_seed);
    }

    const MlpConfig& config() const { return cfg_; }
    int latent_dim() const { return latent_dim_; }
    int input_dim() const {
        return latent_dim_ + (cfg_.time_embed_dim > 0 ? cfg_.time_embed_dim : 1) +
               cfg_.cond_embed_dim;
    }
    int num_classes() const override { return cfg_.num_classes; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    LatentTensor velocity(const LatentTensor& z, double t,
                          const Condition& c) const override {
        check_latent_shape(z);
        check_class(c);
        std::vector<std::vector<double>> acts;
        const std::vector<double> out = forward(z, t, c, acts);
        LatentTensor v(cfg_.latent_channels, cfg_.latent_h, cfg_.latent_w);
        v.values = out;
        return v;
    }

    // Squared-error flow-matching objective against the interpolation
    // velocity eps - z0, averaged over the batch. When grad is non-null the
    // parameter gradient is accumulated into it (same layout as params()).
    double cfm_loss(const std::vector<LatentTensor>& batch_z0,
                    const std::vector<int>& batch_labels, RngStream& rng,
                    std::vector<double>* grad = nullptr) const {
        if (batch_z0.empty() || batch_z0.size() != batch_labels.size())
            throw std::invalid_argument("cfm_loss: bad batch");
        if (grad) grad->assign(params_.size(), 0.0);
        double loss = 0.0;
        const double inv_b = 1.0 / static_cast<double>(batch_z0.size());
        for (size_t i = 0; i < batch_z0.size(); ++i) {
            check_latent_shape(batch_z0[i]);
            const Condition c{batch_labels[i]};
            check_class(c);
            const double t = rng.next_uniform();
            const LatentTensor eps =
                rng.sample_gaussian(cfg_.latent_channels, cfg_.latent_h, cfg_.latent_w);
            const LatentTensor zt = flow_interpolate(batch_z0[i], eps, t);
            std::vector<std::vector<double>> acts;
            const std::vector<double> pred = forward(zt, t, c, acts);
            std::vector<double> dout(latent_dim_);
            for (int d = 0; d < latent_dim_; ++d) {
                const double target = eps.values[d] - batch_z0[i].values[d];
                const double r = pred[d] - target;
                loss += r * r * inv_b;
                dout[d] = 2.0 * r * inv_b;
            }
            if (grad) backward(acts, c, dout, *grad);
        }
        return loss;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("MlpFlowModel::save: cannot open " + path);
        f.write("SNRM", 4);
        write_u16(f, 1);
        write_u32(f, static_cast<uint32_t>(cfg_.latent_channels));
        write_u32(f, static_cast<uint32_t>(cfg_.latent_h));
        write_u32(f, static_cast<uint32_t>(cfg_.latent_w));
        write_u32(f, static_cast<uint32_t>(cfg_.hidden.size()));
        for (int hsz : cfg_.hidden) write_u32(f, static_cast<uint32_t>(hsz));
        write_u32(f, static_cast<uint32_t>(cfg_.time_embed_dim));
        write_u32(f, static_cast<uint32_t>(cfg_.cond_embed_dim));
        write_u32(f, static_cast<uint32_t>(cfg_.num_classes));
        for (double p : params_) write_f32(f, static_cast<float>(p));
    }

    static MlpFlowModel load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("MlpFlowModel::load: cannot open " + path);
        char magic[4];
        f.read(magic, 4);
        if (!f || std::string(magic, 4) != "SNRM")
            throw std::runtime_error("MlpFlowModel::load: bad magic");
        if (read_u16(f) != 1) throw std::runtime_error("MlpFlowModel::load: bad version");
        MlpConfig cfg;
        cfg.latent_channels = static_cast<int>(read_u32(f));
        cfg.latent_h = static_cast<int>(read_u32(f));
        cfg.latent_w = static_cast<int>(read_u32(f));
        const uint32_t nh = read_u32(f);
        cfg.hidden.clear();
        for (uint32_t i = 0; i < nh; ++i) cfg.hidden.push_back(static_cast<int>(read_u32(f)));
        cfg.time_embed_dim = static_cast<int>(read_u32(f));
        cfg.cond_embed_dim = static_cast<int>(read_u32(f));
        cfg.num_classes = static_cast<int>(read_u32(f));
        MlpFlowModel m(cfg);
        for (double& p : m.params_) p = read_f32(f);
        if (!f) throw std::runtime_error("MlpFlowModel::load: truncated");
        return m;
    }

  private:
    void check_latent_shape(const LatentTensor& z) const {
        if (z.channels != cfg_.latent_channels || z.height != cfg_.latent_h ||
            z.width != cfg_.latent_w)
            throw std::invalid_argument("MlpFlowModel: latent shape mismatch");
    }
    void check_class(const Condition& c) const {
        if (c.class_id < 0 || c.class_id >= cfg_.num_classes)
            throw std::invalid_argument("MlpFlowModel: unknown class");
    }

    void init_weights(uint64_t seed) {
        RngStream rng(seed);
        for (size_t l = 0; l + 1 < dims_.size(); ++l) {
            const int in = dims_[l], out = dims_[l + 1];
            const double scl = std::sqrt(2.0 / (in + out));
            double* w = &params_[layer_off_[l]];
            for (int i = 0; i < out * in; ++i) w[i] = scl * rng.next_normal();
            // biases stay zero
        }
        double* ce = &params_[cond_off_];
        for (int i = 0; i < cfg_.num_classes * cfg_.cond_embed_dim; ++i)
            ce[i] = 0.1 * rng.next_normal();
    }

    static double gelu(double x) {
        const double u = 0.7978845608028654 * (x + 0.044715 * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
    }
    static double gelu_grad(double x) {
        const double k = 0.7978845608028654, a = 0.044715;
        const double u = k * (x + a * x * x * x);
        const double th = std::tanh(u);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * a * x * x);
    }

    std::vector<double> time_embedding(double t) const {
        if (cfg_.time_embed_dim == 0) return {t};
        const int half = cfg_.time_embed_dim / 2;
        std::vector<double> e(cfg_.time_embed_dim);
        for (int i = 0; i < half; ++i) {
            const double omega = std::pow(1000.0, half > 1 ? static_cast<double>(i) / (half - 1) : 0.0);
            e[2 * i] = std::sin(omega * t);
            e[2 * i + 1] = std::cos(omega * t);
        }
        return e;
    }

    // acts[0] is the assembled input; for each layer, acts stores the
    // pre-activation then the post-activation vector.
    std::vector<double> forward(const LatentTensor& z, double t, const Condition& c,
                                std::vector<std::vector<double>>& acts) const {
        std::vector<double> x;
        x.reserve(input_dim());
        x.insert(x.end(), z.values.begin(), z.values.end());
        const std::vector<double> te = time_embedding(t);
        x.insert(x.end(), te.begin(), te.end());
        const double* ce = &params_[cond_off_ + static_cast<size_t>(c.class_id) *
                                                    cfg_.cond_embed_dim];
        x.insert(x.end(), ce, ce + cfg_.cond_embed_dim);
        acts.clear();
        acts.push_back(x);
        const size_t n_layers = dims_.size() - 1;
        for (size_t l = 0; l < n_layers; ++l) {
            const int in = dims_[l], out = dims_[l + 1];
            const double* w = &params_[layer_off_[l]];
            const double* b = w + static_cast<size_t>(out) * in;
            std::vector<double> pre(out);
            for (int o = 0; o < out; ++o) {
                double acc = b[o];
                const double* row = w + static_cast<size_t>(o) * in;
                for (int i = 0; i < in; ++i) acc += row[i] * x[i];
                pre[o] = acc;
            }
            acts.push_back(pre);
            if (l + 1 < n_layers) {
                std::vector<double> post(out);
                for (int o = 0; o < out; ++o) post[o] = gelu(pre[o]);
                acts.push_back(post);
                x = post;
            } else {
                x = pre;  // linear output layer
            }
        }
        return x;
    }

    void backward(const std::vector<std::vector<double>>& acts, const Condition& c,
                  const std::vector<double>& dout, std::vector<double>& grad) const {
        const size_t n_layers = dims_.size() - 1;
        std::vector<double> delta = dout;  // d loss / d pre-activation of last layer
        for (size_t l = n_layers; l-- > 0;) {
            const int in = dims_[l], out = dims_[l + 1];
            const double* w = &params_[layer_off_[l]];
            double* gw = &grad[layer_off_[l]];
            double* gb = gw + static_cast<size_t>(out) * in;
            const std::vector<double>& input =
                l == 0 ? acts[0] : acts[2 * l];  // post-activation of layer l-1
            for (int o = 0; o < out; ++o) {
                const double d = delta[o];
                gb[o] += d;
                double* grow = gw + static_cast<size_t>(o) * in;
                for (int i = 0; i < in; ++i) grow[i] += d * input[i];
            }
            if (l == 0) {
                // propagate into the condition embedding slice of the input
                std::vector<double> dx(in, 0.0);
                for (int o = 0; o < out; ++o) {
                    const double d = delta[o];
                    const double* row = w + static_cast<size_t>(o) * in;
                    for (int i = 0; i < in; ++i) dx[i] += d * row[i];
                }
                double* gce = &grad[cond_off_ + static_cast<size_t>(c.class_id) *
                                                    cfg_.cond_embed_dim];
                const int ce_start = in - cfg_.cond_embed_dim;
                for (int i = 0; i < cfg_.cond_embed_dim; ++i) gce[i] += dx[ce_start + i];
                break;
            }
            std::vector<double> dprev(in, 0.0);
            for (int o = 0; o < out; ++o) {
                const double d = delta[o];
                const double* row = w + static_cast<size_t>(o) * in;
                for (int i = 0; i < in; ++i) dprev[i] += d * row[i];
            }
            const std::vector<double>& prev_pre = acts[2 * l - 1];
            delta.assign(in, 0.0);
            for (int i = 0; i < in; ++i) delta[i] = dprev[i] * gelu_grad(prev_pre[i]);
        }
    }

    MlpConfig cfg_;
    int latent_dim_ = 0;
    std::vector<int> dims_;
    std::vector<size_t> layer_off_;
    size_t cond_off_ = 0;
    std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Datasets and training.
// ---------------------------------------------------------------------------

struct Dataset {
    std::vector<LatentTensor> samples;
    std::vector<int> labels;

    void validate() const {
        if (samples.size() != labels.size())
            throw std::invalid_argument("Dataset: samples/labels length mismatch");
        for (size_t i = 1; i < samples.size(); ++i)
            check_same_shape(samples[0], samples[i], "Dataset");
    }

    int num_classes() const {
        int n = 0;
        for (int l : labels) n = std::max(n, l + 1);
        return n;
    }

    LatentTensor class_mean(int cls) const {
        LatentTensor acc(samples[0].channels, samples[0].height, samples[0].width);
        int n = 0;
        for (size_t i = 0; i < samples.size(); ++i) {
            if (labels[i] != cls) continue;
            for (size_t j = 0; j < acc.size(); ++j) acc.values[j] += samples[i].values[j];
            ++n;
        }
        if (n == 0) throw std::invalid_argument("Dataset: empty class");
        for (double& v : acc.values) v /= n;
        return acc;
    }
};

// Dataset file pair: concatenated FGRID records plus a JSON label sidecar.
inline void save_dataset(const std::string& fgrid_path, const std::string& json_path,
                         const Dataset& ds) {
    ds.validate();
    std::ofstream f(fgrid_path, std::ios::binary);
    if (!f) throw std::runtime_error("save_dataset: cannot open " + fgrid_path);
    for (const LatentTensor& s : ds.samples) save_fgrid(f, s);
    nlohmann::json j;
    j["labels"] = ds.labels;
    std::ofstream jf(json_path);
    if (!jf) throw std::runtime_error("save_dataset: cannot open " + json_path);
    jf << j.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& fgrid_path, const std::string& json_path) {
    std::ifstream jf(json_path);
    if (!jf) throw std::runtime_error("load_dataset: cannot open " + json_path);
    nlohmann::json j;
    jf >> j;
    Dataset ds;
    ds.labels = j.at("labels").get<std::vector<int>>();
    std::ifstream f(fgrid_path, std::ios::binary);
    if (!f) throw std::runtime_error("load_dataset: cannot open " + fgrid_path);
    for (size_t i = 0; i < ds.labels.size(); ++i) ds.samples.push_back(load_fgrid(f));
    ds.validate();
    return ds;
}

struct TrainConfig {
    double lr = 1e-3;
    double momentum = 0.9;
    int steps = 5000;
    int batch = 32;
    uint64_t seed = 0;
};

struct TrainingFailed : std::runtime_error {
    int step;
    explicit TrainingFailed(int s)
        : std::runtime_error("training diverged at step " + std::to_string(s)), step(s) {}
};

// SGD with momentum on the flow-matching loss. Returns the per-step loss curve.
inline std::vector<double> train(MlpFlowModel& model, const Dataset& ds,
                                 const TrainConfig& cfg) {
    ds.validate();
    if (cfg.steps < 0 || cfg.batch < 1) throw std::invalid_argument("train: bad config");
    RngStream rng(cfg.seed);
    std::vector<double> curve;
    std::vector<double> vel(model.params().size(), 0.0), grad;
    std::vector<LatentTensor> bz;
    std::vector<int> bl;
    for (int step = 0; step < cfg.steps; ++step) {
        bz.clear();
        bl.clear();
        for (int b = 0; b < cfg.batch; ++b) {
            const size_t idx = rng.next_u64() % ds.samples.size();
            bz.push_back(ds.samples[idx]);
            bl.push_back(ds.labels[idx]);
        }
        const double loss = model.cfm_loss(bz, bl, rng, &grad);
        if (!std::isfinite(loss)) throw TrainingFailed(step);
        curve.push_back(loss);
        for (size_t i = 0; i < vel.size(); ++i) {
            vel[i] = cfg.momentum * vel[i] - cfg.lr * grad[i];
            model.params()[i] += vel[i];
        }
    }
    return curve;
}

// Sampled-pair slope estimate, inflated by a safety factor. A lower bound on
// the true constant; exact values exist only for the analytic field.
inline double estimate_lipschitz(const VelocityField& field, const LatentTensor& center,
                                 double t, const Condition& c, RngStream& rng,
                                 int pairs = 64, double radius = 2.0,
                                 double inflation = 1.2) {
    double best = 0.0;
    for (int i = 0; i < pairs; ++i) {
        LatentTensor z1 = center, z2 = center;
        for (size_t j = 0; j < z1.size(); ++j) {
            z1.values[j] += radius * rng.next_normal();
            z2.values[j] += radius * rng.next_normal();
        }
        const double dz = l2_norm(sub(z1, z2));
        if (dz < 1e-9) continue;
        const double dv = l2_norm(sub(field.velocity(z1, t, c), field.velocity(z2, t, c)));
        best = std::max(best, dv / dz);
    }
    return best * inflation;
}

}  // namespace snredit
