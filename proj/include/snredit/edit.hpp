#pragma once

// Phase 2: rectified noise, the corrected source state and its structural
// offset, single Euler steps of the re-anchored editing dynamics, and the
// full editing loop with the plain difference-of-flows baseline.

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "snredit/flow.hpp"
#include "snredit/grid.hpp"
#include "snredit/rng.hpp"

namespace snredit {

enum class NoiseMode { resample_per_step, frozen };

struct EditConfig {
    double lambda_struct = 0.1;
    double lambda_stoch = 0.9;
    int num_steps = 50;
    double t_max = 1.0;
    uint64_t seed = 0;
    NoiseMode noise_mode = NoiseMode::resample_per_step;
    bool record_trajectory = false;

    void validate() const {
        if (lambda_struct < 0.0 || lambda_stoch < 0.0 ||
            lambda_struct + lambda_stoch <= 0.0)
            throw std::invalid_argument("EditConfig: invalid lambdas");
        if (num_steps < 1) throw std::invalid_argument("EditConfig: T < 1");
        if (t_max <= 0.0 || t_max > 1.0)
            throw std::invalid_argument("EditConfig: t_max outside (0,1]");
    }
};

struct Schedule {
    std::vector<double> times;  // times[i] = t_i, ascending in i; t_0 = 0, t_T = t_max
};

inline Schedule make_schedule(int num_steps, double t_max) {
    if (num_steps < 1) throw std::invalid_argument("make_schedule: T < 1");
    if (t_max <= 0.0 || t_max > 1.0)
        throw std::invalid_argument("make_schedule: t_max outside (0,1]");
    Schedule s;
    s.times.resize(num_steps + 1);
    for (int i = 0; i <= num_steps; ++i)
        s.times[i] = t_max * static_cast<double>(i) / num_steps;
    s.times[0] = 0.0;
    s.times[num_steps] = t_max;
    return s;
}

// eps_tilde = lambda_struct * prior + lambda_stoch * xi, one fresh xi drawn
// from the stream.
inline LatentTensor rectified_noise(const LatentTensor& prior, RngStream& rng,
                                    double lambda_struct, double lambda_stoch) {
    for (double v : prior.values)
        if (v < -1.0 - 1e-9 || v > 1.0 + 1e-9)
            throw std::invalid_argument("rectified_noise: prior not normalized to [-1,1]");
    const LatentTensor xi = rng.sample_gaussian(prior.channels, prior.height, prior.width);
    return axpby(lambda_struct, prior, lambda_stoch, xi);
}

inline LatentTensor corrected_source_state(const LatentTensor& z_src,
                                           const LatentTensor& eps_tilde, double t) {
    if (t < 0.0 || t > 1.0)
        throw std::invalid_argument("corrected_source_state: t outside [0,1]");
    return axpby(1.0 - t, z_src, t, eps_tilde);
}

inline LatentTensor structural_offset(const LatentTensor& z_src_tilde,
                                      const LatentTensor& z_src) {
    return sub(z_src_tilde, z_src);
}

struct StepRecord {
    double t = 0.0;
    LatentTensor eps_tilde;
    LatentTensor z_src_tilde;
    LatentTensor offset;
    LatentTensor velocity;
    LatentTensor state;  // after the update
};

// One Euler update of the re-anchored dynamics with a caller-supplied
// rectified noise. Both velocity evaluations share the same eps_tilde.
inline LatentTensor snr_step_with_noise(const VelocityField& field,
                                        const LatentTensor& z_fe,
                                        const LatentTensor& z_src,
                                        const LatentTensor& eps_tilde, double t_i,
                                        double t_prev, const Condition& c_src,
                                        const Condition& c_tar,
                                        StepRecord* record = nullptr) {
    if (!(t_prev < t_i))
        throw std::invalid_argument("snr_step: requires t_prev < t_i");
    const LatentTensor z_src_tilde = corrected_source_state(z_src, eps_tilde, t_i);
    const LatentTensor offset = structural_offset(z_src_tilde, z_src);
    const LatentTensor v_tar = field.velocity(add(z_fe, offset), t_i, c_tar);
    const LatentTensor v_src = field.velocity(z_src_tilde, t_i, c_src);
    const LatentTensor v_tilde = sub(v_tar, v_src);
    LatentTensor next = axpby(1.0, z_fe, t_prev - t_i, v_tilde);
    if (record) {
        record->t = t_i;
        record->eps_tilde = eps_tilde;
        record->z_src_tilde = z_src_tilde;
        record->offset = offset;
        record->velocity = v_tilde;
        record->state = next;
    }
    return next;
}

// Convenience step: draws one xi, forms the rectified noise, updates.
inline LatentTensor snr_step(const VelocityField& field, const LatentTensor& z_fe,
                             const LatentTensor& z_src, const LatentTensor& prior,
                             double t_i, double t_prev, const Condition& c_src,
                             const Condition& c_tar, RngStream& rng,
                             double lambda_struct, double lambda_stoch) {
    const LatentTensor eps_tilde = rectified_noise(prior, rng, lambda_struct, lambda_stoch);
    return snr_step_with_noise(field, z_fe, z_src, eps_tilde, t_i, t_prev, c_src, c_tar);
}

// Baseline difference-of-flows step: pure Gaussian proxy, identical to
// snr_step with (lambda_struct, lambda_stoch) = (0, 1).
inline LatentTensor flowedit_step(const VelocityField& field, const LatentTensor& z_fe,
                                  const LatentTensor& z_src, double t_i, double t_prev,
                                  const Condition& c_src, const Condition& c_tar,
                                  RngStream& rng) {
    const LatentTensor zero_prior(z_src.channels, z_src.height, z_src.width);
    return snr_step(field, z_fe, z_src, zero_prior, t_i, t_prev, c_src, c_tar, rng,
                    0.0, 1.0);
}

struct IntegrationDiverged : std::runtime_error {
    int step;
    explicit IntegrationDiverged(int s)
        : std::runtime_error("integration diverged at step " + std::to_string(s)),
          step(s) {}
};

struct EditRun {
    EditConfig config;
    LatentTensor z_src;
    Condition c_src, c_tar;
    LatentTensor prior;
    LatentTensor result;  // Z_0
    std::vector<StepRecord> steps;
};

// Full editing loop: initialize at z_src, walk the schedule from t_max down
// to 0. In frozen mode one rectified noise is drawn up front and reused; in
// resample mode a fresh xi is drawn each step.
inline EditRun edit(const VelocityField& field, const LatentTensor& z_src,
                    const Condition& c_src, const Condition& c_tar,
                    const LatentTensor& prior, const EditConfig& config) {
    config.validate();
    check_same_shape(z_src, prior, "edit: prior vs latent");
    EditRun run;
    run.config = config;
    run.z_src = z_src;
    run.c_src = c_src;
    run.c_tar = c_tar;
    run.prior = prior;

    const Schedule sched = make_schedule(config.num_steps, config.t_max);
    RngStream rng(config.seed);
    std::optional<LatentTensor> frozen;
    if (config.noise_mode == NoiseMode::frozen)
        frozen = rectified_noise(prior, rng, config.lambda_struct, config.lambda_stoch);

    LatentTensor z_fe = z_src;
    for (int i = config.num_steps; i >= 1; --i) {
        const LatentTensor eps_tilde =
            frozen ? *frozen
                   : rectified_noise(prior, rng, config.lambda_struct, config.lambda_stoch);
        StepRecord rec;
        z_fe = snr_step_with_noise(field, z_fe, z_src, eps_tilde, sched.times[i],
                                   sched.times[i - 1], c_src, c_tar,
                                   config.record_trajectory ? &rec : nullptr);
        if (!z_fe.finite()) throw IntegrationDiverged(i);
        if (config.record_trajectory) run.steps.push_back(std::move(rec));
    }
    run.result = z_fe;
    return run;
}

}  // namespace snredit
