// Command-line surface tying the library into reproducible experiments.
// Subcommands: gen-data, train, edit, verify-bounds, ablate, sweep, metrics.
// Exit codes: 0 success, 1 assertion/bound violation, 2 usage error, 3 IO error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "snredit/analysis.hpp"
#include "snredit/codec.hpp"
#include "snredit/edit.hpp"
#include "snredit/experiments.hpp"
#include "snredit/flow.hpp"
#include "snredit/grid.hpp"
#include "snredit/io.hpp"
#include "snredit/metrics.hpp"
#include "snredit/prior.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace snredit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitViolation = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

void write_manifest(const fs::path& dir, const json& j) {
    std::ofstream f(dir / "manifest.json");
    if (!f) throw std::runtime_error("cannot write manifest in " + dir.string());
    f << j.dump(2) << "\n";
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string());
}

// CLI11 only reads config files attached to the app parse() ran on, so a
// set_config on a subcommand is silently inert. Apply the INI by hand instead:
// any option the command line or environment already filled keeps its value.
void apply_config_file(CLI::App* sub, const std::string& path) {
    if (path.empty()) return;
    CLI::ConfigINI ini;
    for (const CLI::ConfigItem& item : ini.from_file(path)) {
        if (!item.parents.empty() &&
            (item.parents.size() != 1 || item.parents.front() != sub->get_name()))
            continue;
        CLI::Option* op = sub->get_option_no_throw("--" + item.name);
        if (op == nullptr || !op->get_configurable())
            throw std::invalid_argument("unknown config key: " + item.fullname());
        if (op->count() > 0) continue;
        op->add_result(item.inputs);
        op->run_callback();
    }
}

std::vector<uint64_t> seed_list(uint64_t base, int count) {
    std::vector<uint64_t> seeds;
    for (int i = 0; i < count; ++i) seeds.push_back(base + static_cast<uint64_t>(i));
    return seeds;
}

MlpConfig scenario_mlp_config(const std::string& scenario,
                              const std::vector<int>& hidden) {
    MlpConfig mc;
    mc.hidden = hidden;
    mc.num_classes = 2;
    if (scenario == "blobs2") {
        mc.latent_channels = 1;
        mc.latent_h = 4;
        mc.latent_w = 4;
    } else {
        mc.latent_channels = 1;
        mc.latent_h = 16;
        mc.latent_w = 16;
    }
    return mc;
}

ExperimentContext make_context(const VelocityField& field, const Dataset& ds,
                               const EditConfig& defaults) {
    ExperimentContext ctx;
    ctx.field = &field;
    for (int cls = 0; cls < ds.num_classes(); ++cls)
        ctx.reference_means.push_back(ds.class_mean(cls));
    ctx.edit_mask = shapes16_edit_mask();
    ctx.edit_defaults = defaults;
    return ctx;
}

// --- gen-data --------------------------------------------------------------

int cmd_gen_data(const std::string& scenario, uint64_t seed, int n_per_class,
                 const std::string& out) {
    if (!known_scenario(scenario)) {
        std::cerr << "unknown scenario '" << scenario
                  << "'; known scenarios: blobs2, shapes16\n";
        return kExitUsage;
    }
    const fs::path dir(out);
    ensure_dir(dir);
    const Dataset ds = make_scenario_dataset(scenario, seed, n_per_class);
    save_dataset((dir / "samples.fgrid").string(), (dir / "labels.json").string(), ds);
    write_manifest(dir, {{"command", "gen-data"},
                         {"scenario", scenario},
                         {"seed", seed},
                         {"n_per_class", n_per_class}});
    std::cout << "wrote " << ds.samples.size() << " samples to " << out << "\n";
    return kExitOk;
}

// --- train -----------------------------------------------------------------

int cmd_train(const std::string& scenario, const std::string& resume, uint64_t seed,
              int steps, double lr, double momentum, int batch,
              const std::vector<int>& hidden, const std::string& out) {
    if (!known_scenario(scenario)) {
        std::cerr << "unknown scenario '" << scenario
                  << "'; known scenarios: blobs2, shapes16\n";
        return kExitUsage;
    }
    const fs::path dir(out);
    ensure_dir(dir);
    const Dataset ds = make_scenario_dataset(scenario, seed);
    MlpFlowModel model = resume.empty()
                             ? MlpFlowModel(scenario_mlp_config(scenario, hidden), seed)
                             : MlpFlowModel::load(resume);
    TrainConfig tc;
    tc.lr = lr;
    tc.momentum = momentum;
    tc.steps = steps;
    tc.batch = batch;
    tc.seed = seed;
    std::vector<double> curve;
    try {
        curve = train(model, ds, tc);
    } catch (const TrainingFailed& e) {
        std::cerr << e.what() << "\n";
        return kExitViolation;
    }
    model.save((dir / "model.snrm").string());
    {
        std::ofstream f(dir / "loss.csv");
        f << "step,loss\n";
        f.precision(12);
        for (size_t i = 0; i < curve.size(); ++i) f << i << "," << curve[i] << "\n";
    }
    write_manifest(dir, {{"command", "train"},
                         {"scenario", scenario},
                         {"seed", seed},
                         {"steps", steps},
                         {"lr", lr},
                         {"momentum", momentum},
                         {"batch", batch},
                         {"hidden", hidden},
                         {"resume", resume}});
    if (!curve.empty())
        std::cout << "loss " << curve.front() << " -> " << curve.back() << "\n";
    return kExitOk;
}

// --- edit ------------------------------------------------------------------

int cmd_edit(const std::string& model_path, const std::string& source_path,
             const std::string& masks_path, uint64_t seed, double lambda_struct,
             double lambda_stoch, int steps, double t_max, const std::string& noise_mode,
             bool baseline, bool record, int source_class, int target_class,
             const std::string& out) {
    const fs::path dir(out);
    ensure_dir(dir);
    const MlpFlowModel model = MlpFlowModel::load(model_path);
    const MlpConfig& mc = model.config();

    LatentTensor source;
    if (!source_path.empty()) {
        source = load_fgrid(source_path);
    } else {
        RngStream rng(detail::splitmix64(seed));
        source = shapes16_sample(source_class, rng);
    }

    PriorParams pp;
    LatentTensor prior(source.channels, source.height, source.width);
    Grid2D map(source.height, source.width);
    if (!baseline) {
        if (!masks_path.empty()) {
            const std::vector<Region> regions = load_masks(masks_path);
            std::vector<RegionDescriptor> descriptors;
            for (const Region& r : regions)
                descriptors.push_back(region_descriptor(r, pp.c_desc, pp.rope_base));
            map = build_structural_map(regions, descriptors,
                                       init_projection(pp.projection_seed, pp.c_desc));
        } else {
            map = build_variant_map(AblationVariant::full, source, pp);
        }
        prior = build_latent_prior(map, source.channels, source.height, source.width)
                    .latent;
    }

    EditConfig cfg;
    cfg.lambda_struct = baseline ? 0.0 : lambda_struct;
    cfg.lambda_stoch = baseline ? 1.0 : lambda_stoch;
    cfg.num_steps = steps;
    cfg.t_max = t_max;
    cfg.seed = seed;
    cfg.noise_mode =
        noise_mode == "frozen" ? NoiseMode::frozen : NoiseMode::resample_per_step;
    cfg.record_trajectory = record;

    // identity codec: pixel grid equals latent grid
    const Codec codec;
    const LatentTensor z_src = codec.encode(source);
    EditRun run;
    try {
        run = edit(model, z_src, Condition{source_class}, Condition{target_class}, prior,
                   cfg);
    } catch (const IntegrationDiverged& e) {
        std::cerr << e.what() << "\n";
        return kExitViolation;
    }
    const LatentTensor result = codec.decode(run.result);

    save_fgrid((dir / "z_src.fgrid").string(), z_src);
    save_fgrid((dir / "prior.fgrid").string(), prior);
    save_fgrid((dir / "result.fgrid").string(), result);
    if (result.channels == 3)
        save_ppm((dir / "result.ppm").string(), result, 0.0, 1.0);
    else
        save_pgm((dir / "result.pgm").string(), result.channel(0), 0.0, 1.0);
    if (record) {
        const fs::path steps_dir = dir / "steps";
        ensure_dir(steps_dir);
        for (size_t i = 0; i < run.steps.size(); ++i)
            save_fgrid((steps_dir / ("state_" + std::to_string(i) + ".fgrid")).string(),
                       run.steps[i].state);
    }
    write_manifest(dir, {{"command", "edit"},
                         {"model", model_path},
                         {"source", source_path},
                         {"masks", masks_path},
                         {"seed", seed},
                         {"lambda_struct", cfg.lambda_struct},
                         {"lambda_stoch", cfg.lambda_stoch},
                         {"steps", steps},
                         {"t_max", t_max},
                         {"noise_mode", noise_mode},
                         {"baseline", baseline},
                         {"record_trajectory", record},
                         {"source_class", source_class},
                         {"target_class", target_class},
                         {"latent_shape", {mc.latent_channels, mc.latent_h, mc.latent_w}}});
    std::cout << "edit complete, result in " << out << "\n";
    return kExitOk;
}

// --- verify-bounds ---------------------------------------------------------

int cmd_verify_bounds(uint64_t seed, int n_seeds, int euler_steps, int field_configs,
                      double lipschitz_scale, const std::string& out) {
    const fs::path dir(out);
    ensure_dir(dir);

    RngStream rng(seed);
    const int C = 1, H = 4, W = 4;
    std::vector<LatentTensor> means;
    means.push_back(rng.sample_gaussian(C, H, W));
    means.push_back(rng.sample_gaussian(C, H, W));
    // Distinct class spreads keep the source and target slopes from
    // cancelling, so the bounds are exercised away from zero.
    const GaussianOracleField oracle(means, std::vector<double>{4.0, 0.6});

    int violations = 0;

    // Pointwise vector-field error grid.
    std::vector<BoundRecord> field_records;
    const double times[5] = {0.1, 0.3, 0.5, 0.7, 0.9};
    double l_src_t[5], l_tar_t[5];
    for (int j = 0; j < 5; ++j) {
        l_src_t[j] = oracle.lipschitz_constant(times[j], Condition{0}) * lipschitz_scale;
        l_tar_t[j] = oracle.lipschitz_constant(times[j], Condition{1}) * lipschitz_scale;
    }
    for (int i = 0; i < field_configs; ++i) {
        const LatentTensor z_src = rng.sample_gaussian(C, H, W);
        const LatentTensor z = rng.sample_gaussian(C, H, W);
        const LatentTensor noise_a = rng.sample_gaussian(C, H, W);
        const LatentTensor noise_b = rng.sample_gaussian(C, H, W);
        for (int j = 0; j < 5; ++j) {
            const double t = times[j];
            const LatentTensor z_src_t = axpby(1.0 - t, z_src, t, noise_a);
            const LatentTensor z_src_tilde = axpby(1.0 - t, z_src, t, noise_b);
            field_records.push_back(field_error_check(oracle, z, t, z_src_t,
                                                      z_src_tilde, z_src, Condition{0},
                                                      Condition{1}, l_tar_t[j],
                                                      l_src_t[j]));
            // the bound is analytically tight when the class slopes have
            // opposite signs; tolerate fp rounding at equality
            if (field_records.back().slack <
                -1e-9 * std::max(1.0, field_records.back().bound))
                ++violations;
        }
    }
    {
        std::ofstream f(dir / "field_error.csv");
        write_bound_csv(f, field_records, seed);
    }

    // Trajectory bound per seed.
    TrajectoryBoundConfig tb;
    tb.euler_steps = euler_steps;
    tb.lipschitz_scale = lipschitz_scale;
    json traj = json::array();
    std::ofstream tf(dir / "trajectory_bound.csv");
    tf << "seed,min_slack,violations,final_measured,final_bound\n";
    tf.precision(12);
    for (int s = 0; s < n_seeds; ++s) {
        RngStream srng(seed + 1000 + static_cast<uint64_t>(s));
        const LatentTensor z_src = srng.sample_gaussian(C, H, W);
        const LatentTensor xi_ref = srng.sample_gaussian(C, H, W);
        const LatentTensor eps_tilde = srng.sample_gaussian(C, H, W);
        const BoundReport rep = verify_trajectory_bound(oracle, z_src, Condition{0},
                                                        Condition{1}, xi_ref, eps_tilde,
                                                        tb);
        violations += rep.violations;
        tf << seed + 1000 + s << "," << rep.min_slack << "," << rep.violations << ","
           << rep.records.back().measured << "," << rep.records.back().bound << "\n";
        traj.push_back(rep.to_json());
    }
    {
        std::ofstream jf(dir / "bound_report.json");
        jf << json{{"violations", violations}, {"trajectories", traj}}.dump(2) << "\n";
    }
    write_manifest(dir, {{"command", "verify-bounds"},
                         {"seed", seed},
                         {"seeds", n_seeds},
                         {"euler_steps", euler_steps},
                         {"field_configs", field_configs},
                         {"lipschitz_scale", lipschitz_scale}});
    std::cout << (violations == 0 ? "all bounds hold" : "bound violations detected")
              << " (violations=" << violations << ")\n";
    return violations == 0 ? kExitOk : kExitViolation;
}

// --- ablate / sweep --------------------------------------------------------

int cmd_ablate(const std::string& model_path, uint64_t seed, int n_seeds,
               const std::string& out) {
    const fs::path dir(out);
    ensure_dir(dir);
    const MlpFlowModel model = MlpFlowModel::load(model_path);
    const Dataset ds = make_scenario_dataset("shapes16", 0);
    EditConfig defaults;
    const ExperimentContext ctx = make_context(model, ds, defaults);
    const std::vector<MetricRow> rows = run_ablation(ctx, seed_list(seed, n_seeds));
    {
        std::ofstream f(dir / "ablation.csv");
        write_metrics_csv(f, rows, "variant");
    }
    write_manifest(dir, {{"command", "ablate"},
                         {"model", model_path},
                         {"seed", seed},
                         {"seeds", n_seeds}});
    std::cout << "wrote " << rows.size() << " rows to ablation.csv\n";
    return kExitOk;
}

int cmd_sweep(const std::string& model_path, const std::vector<double>& values,
              uint64_t seed, int n_seeds, const std::string& out) {
    const fs::path dir(out);
    ensure_dir(dir);
    const MlpFlowModel model = MlpFlowModel::load(model_path);
    const Dataset ds = make_scenario_dataset("shapes16", 0);
    EditConfig defaults;
    const ExperimentContext ctx = make_context(model, ds, defaults);
    const std::vector<MetricRow> rows =
        sensitivity_sweep(ctx, values, seed_list(seed, n_seeds));
    {
        std::ofstream f(dir / "sweep.csv");
        f << "# seeds_per_point=" << n_seeds << "\n";
        write_metrics_csv(f, rows, "lambda_stoch");
    }
    std::map<std::string, std::vector<double>> series;
    std::vector<double> xs;
    for (double v : values) {
        std::ostringstream tag;
        tag << v;
        xs.push_back(v);
        series["ssim"].push_back(mean_over(rows, tag.str(), &MetricsReport::ssim_score));
        series["alignment"].push_back(
            mean_over(rows, tag.str(), &MetricsReport::alignment));
    }
    write_svg_lines((dir / "sweep.svg").string(), xs, series,
                    "stochastic scale sensitivity");
    write_manifest(dir, {{"command", "sweep"},
                         {"model", model_path},
                         {"values", values},
                         {"seed", seed},
                         {"seeds", n_seeds}});
    std::cout << "wrote sweep.csv and sweep.svg\n";
    return kExitOk;
}

// --- metrics ---------------------------------------------------------------

int cmd_metrics(const std::string& a_path, const std::string& b_path,
                const std::string& masks_path) {
    const LatentTensor a = load_fgrid(a_path);
    const LatentTensor b = load_fgrid(b_path);
    std::cout << "mse,psnr,ssim";
    if (!masks_path.empty()) std::cout << ",background_mse";
    std::cout << "\n";
    std::cout.precision(12);
    std::cout << mse(a, b) << "," << psnr(a, b) << "," << ssim(a, b);
    if (!masks_path.empty()) {
        const std::vector<Region> regions = load_masks(masks_path);
        Mask combined(a.height, a.width);
        for (const Region& r : regions)
            for (size_t i = 0; i < combined.on.size(); ++i)
                combined.on[i] |= r.mask.on[i];
        std::cout << "," << background_consistency(a, b, combined);
    }
    std::cout << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structure-aware noise rectification for inversion-free flow editing"};
    app.require_subcommand(1);

    // gen-data
    std::string gd_scenario, gd_out = "out/gen";
    uint64_t gd_seed = 0;
    int gd_n = 64;
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("scenario", gd_scenario, "scenario name (blobs2, shapes16)")
        ->required();
    gen->add_option("--seed", gd_seed)->envname("SNR_SEED");
    gen->add_option("--n-per-class", gd_n);
    gen->add_option("--out", gd_out);
    std::string gd_config;
    gen->add_option("--config", gd_config, "INI file with option defaults")
        ->configurable(false);

    // train
    std::string tr_scenario = "blobs2", tr_resume, tr_out = "out/train";
    uint64_t tr_seed = 0;
    int tr_steps = 5000, tr_batch = 32;
    double tr_lr = 1e-3, tr_momentum = 0.9;
    std::vector<int> tr_hidden = {256, 256, 256};
    auto* tr = app.add_subcommand("train", "train a toy velocity field");
    tr->add_option("--scenario", tr_scenario);
    tr->add_option("--resume", tr_resume, "checkpoint to continue from");
    tr->add_option("--seed", tr_seed)->envname("SNR_SEED");
    tr->add_option("--steps", tr_steps);
    tr->add_option("--lr", tr_lr);
    tr->add_option("--momentum", tr_momentum);
    tr->add_option("--batch", tr_batch);
    tr->add_option("--hidden", tr_hidden);
    tr->add_option("--out", tr_out);
    std::string tr_config;
    tr->add_option("--config", tr_config, "INI file with option defaults")
        ->configurable(false);

    // edit
    std::string ed_model, ed_source, ed_masks, ed_noise_mode = "resample", ed_out = "out/edit";
    uint64_t ed_seed = 0;
    double ed_ls = 0.1, ed_lstoch = 0.9, ed_tmax = 1.0;
    int ed_steps = 50, ed_src_class = 0, ed_tar_class = 1;
    bool ed_baseline = false, ed_record = false;
    auto* ed = app.add_subcommand("edit", "run an edit");
    ed->add_option("--model", ed_model)->required();
    ed->add_option("--source", ed_source, "source FGRID (default: generated sample)");
    ed->add_option("--masks", ed_masks, "mask-set JSON instead of synthetic segmentation");
    ed->add_option("--seed", ed_seed)->envname("SNR_SEED");
    ed->add_option("--lambda-struct", ed_ls);
    ed->add_option("--lambda-stoch", ed_lstoch);
    ed->add_option("--steps", ed_steps);
    ed->add_option("--t-max", ed_tmax);
    ed->add_option("--noise-mode", ed_noise_mode)
        ->check(CLI::IsMember({"resample", "frozen"}));
    ed->add_flag("--baseline", ed_baseline, "plain difference-of-flows baseline");
    ed->add_flag("--record-trajectory", ed_record);
    ed->add_option("--source-class", ed_src_class);
    ed->add_option("--target-class", ed_tar_class);
    ed->add_option("--out", ed_out);
    std::string ed_config;
    ed->add_option("--config", ed_config, "INI file with option defaults")
        ->configurable(false);

    // verify-bounds
    uint64_t vb_seed = 0;
    int vb_seeds = 20, vb_euler = 1000, vb_configs = 100;
    double vb_lscale = 1.0;
    std::string vb_out = "out/bounds";
    auto* vb = app.add_subcommand("verify-bounds", "check the stability bounds numerically");
    vb->add_option("--seed", vb_seed)->envname("SNR_SEED");
    vb->add_option("--seeds", vb_seeds, "trajectory verification seeds");
    vb->add_option("--euler-steps", vb_euler);
    vb->add_option("--field-configs", vb_configs);
    vb->add_option("--lipschitz-scale", vb_lscale,
                   "debug: scale the Lipschitz constants (negative control)");
    vb->add_option("--out", vb_out);
    std::string vb_config;
    vb->add_option("--config", vb_config, "INI file with option defaults")
        ->configurable(false);

    // ablate
    std::string ab_model, ab_out = "out/ablate";
    uint64_t ab_seed = 0;
    int ab_seeds = 20;
    auto* ab = app.add_subcommand("ablate", "run the component ablation table");
    ab->add_option("--model", ab_model)->required();
    ab->add_option("--seed", ab_seed)->envname("SNR_SEED");
    ab->add_option("--seeds", ab_seeds);
    ab->add_option("--out", ab_out);
    std::string ab_config;
    ab->add_option("--config", ab_config, "INI file with option defaults")
        ->configurable(false);

    // sweep
    std::string sw_model, sw_out = "out/sweep";
    uint64_t sw_seed = 0;
    int sw_seeds = 20;
    std::vector<double> sw_values = {0.0, 0.25, 0.5, 0.75, 0.9, 1.0};
    auto* sw = app.add_subcommand("sweep", "stochastic-scale sensitivity sweep");
    sw->add_option("--model", sw_model)->required();
    sw->add_option("--values", sw_values);
    sw->add_option("--seed", sw_seed)->envname("SNR_SEED");
    sw->add_option("--seeds", sw_seeds);
    sw->add_option("--out", sw_out);
    std::string sw_config;
    sw->add_option("--config", sw_config, "INI file with option defaults")
        ->configurable(false);

    // metrics
    std::string mt_a, mt_b, mt_masks;
    auto* mt = app.add_subcommand("metrics", "compare two FGRID files");
    mt->add_option("--a", mt_a)->required();
    mt->add_option("--b", mt_b)->required();
    mt->add_option("--masks", mt_masks, "edit mask-set for background consistency");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::pair<CLI::App*, const std::string*> configured[] = {
            {gen, &gd_config}, {tr, &tr_config}, {ed, &ed_config},
            {vb, &vb_config},  {ab, &ab_config}, {sw, &sw_config}};
        for (const auto& [sub, cfg] : configured)
            if (sub->parsed()) apply_config_file(sub, *cfg);

        if (gen->parsed()) return cmd_gen_data(gd_scenario, gd_seed, gd_n, gd_out);
        if (tr->parsed())
            return cmd_train(tr_scenario, tr_resume, tr_seed, tr_steps, tr_lr,
                             tr_momentum, tr_batch, tr_hidden, tr_out);
        if (ed->parsed())
            return cmd_edit(ed_model, ed_source, ed_masks, ed_seed, ed_ls, ed_lstoch,
                            ed_steps, ed_tmax, ed_noise_mode, ed_baseline, ed_record,
                            ed_src_class, ed_tar_class, ed_out);
        if (vb->parsed())
            return cmd_verify_bounds(vb_seed, vb_seeds, vb_euler, vb_configs, vb_lscale,
                                     vb_out);
        if (ab->parsed()) return cmd_ablate(ab_model, ab_seed, ab_seeds, ab_out);
        if (sw->parsed()) return cmd_sweep(sw_model, sw_values, sw_seed, sw_seeds, sw_out);
        if (mt->parsed()) return cmd_metrics(mt_a, mt_b, mt_masks);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitUsage;
}
