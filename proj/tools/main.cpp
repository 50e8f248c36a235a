#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mskrig/io.hpp"
#include "mskrig/pipeline.hpp"

namespace {

using namespace mskrig;

struct CommonFlags {
    std::string config;
    std::optional<unsigned long long> seed;
    std::optional<std::string> out;
    std::optional<long> threads;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "key = value configuration file");
    cmd->add_option("--seed", f.seed, "override the configured seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--threads", f.threads, "worker threads (only 1 is implemented)");
}

RunConfig resolve_config(const CommonFlags& f, const std::string& preset) {
    RunConfig cfg;
    if (!preset.empty()) {
        if (preset == "nested") cfg = default_nested_config();
        else if (preset == "nonstat-matern") cfg = default_nonstat_config();
        else throw ConfigError("unknown experiment '" + preset + "'");
    }
    if (!f.config.empty()) {
        RunConfig from_file = load_run_config(f.config);
        if (!preset.empty() && from_file.experiment.empty()) from_file.experiment = cfg.experiment;
        cfg = from_file;
    }
    if (f.seed) cfg.seed = *f.seed;
    if (f.out) cfg.out_dir = *f.out;
    if (f.threads) cfg.threads = *f.threads;
    if (cfg.threads < 1) throw ConfigError("threads: must be at least 1");
    return cfg;
}

int cmd_simulate(const CommonFlags& f, const std::string& preset) {
    RunConfig cfg = resolve_config(f, preset);
    SimulatedTruth sim = simulate_experiment_truth(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    write_grid_bin(cfg.out_dir + "/truth.bin", sim.truth);
    write_grid_pgm(cfg.out_dir + "/truth.pgm", sim.truth);
    write_points_csv(cfg.out_dir + "/data.csv", sim.data);
    std::printf("simulated %s: %ld x %ld grid, %ld samples, %ld rejected waves\n",
                cfg.experiment.c_str(), cfg.sim_nx, cfg.sim_ny, sim.data.n(),
                sim.rejected_waves);
    std::printf("wrote truth.bin truth.pgm data.csv under %s\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_fit(const CommonFlags& f) {
    RunConfig cfg = resolve_config(f, "");
    if (cfg.data_path.empty())
        throw ConfigError("fit needs data_path in the config (CSV with header x,y,value)");
    const PointSet data = read_points_csv(cfg.data_path);
    PipelineResult r = run_pipeline(cfg, data);

    std::filesystem::create_directories(cfg.out_dir);
    write_variogram_csv(cfg.out_dir + "/variogram.csv", r.variogram);
    write_lasso_path_csv(cfg.out_dir + "/path.csv", r.path);
    write_dictionary_csv(cfg.out_dir + "/dictionary.csv", r.dict);
    write_em_history_csv(cfg.out_dir + "/em1.csv", r.em1.history);
    write_em_history_csv(cfg.out_dir + "/em2.csv", r.em2.history);
    save_model(cfg.out_dir + "/model", r.model);

    std::printf("small scale: sill %.6g, scale %.6g, nugget %.6g (ratio %.6g)\n",
                r.small.sill, r.small.scale, r.small.nugget, r.small.ratio());
    std::printf("selection: %zu atoms, then %zu after re-selection\n", r.sel1.active.size(),
                r.sel2.active.size());
    std::printf("EM: sigma2 %.6g -> %.6g, %s\n", r.em1.sigma2, r.em2.sigma2,
                r.em2.converged ? "converged" : "NOT converged");
    std::printf("model saved under %s/model\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_predict(const CommonFlags& f) {
    RunConfig cfg = resolve_config(f, "");
    if (cfg.model_dir.empty())
        throw ConfigError("predict needs model_dir in the config (a directory written by fit)");
    const FittedModel m = load_model(cfg.model_dir);
    std::vector<double> variances;
    const Grid g = predict_on_grid(m, cfg.grid_nx, cfg.grid_ny, cfg.predict_variance,
                                   &variances);
    std::filesystem::create_directories(cfg.out_dir);
    write_grid_bin(cfg.out_dir + "/pred.bin", g,
                   cfg.predict_variance ? &variances : nullptr);
    write_grid_pgm(cfg.out_dir + "/pred.pgm", g);
    std::printf("predicted %ld x %ld grid%s under %s\n", cfg.grid_nx, cfg.grid_ny,
                cfg.predict_variance ? " with variances" : "", cfg.out_dir.c_str());
    return 0;
}

int cmd_experiment(const CommonFlags& f, const std::string& preset) {
    RunConfig cfg = resolve_config(f, preset);
    ExperimentOutput out = run_experiment(cfg);
    std::printf("experiment %s, seed %llu\n", cfg.experiment.c_str(),
                static_cast<unsigned long long>(cfg.seed));
    for (const char* name : {"tapering", "lowrank", "combination", "ce"})
        std::printf("  mspe %-12s %.8g\n", name, out.mspe.at(name));
    std::printf("  atoms: %ld then %ld (combination), %ld (low rank)\n", out.selected_pass1,
                out.selected_pass2, out.lowrank_active);
    std::printf("artifacts under %s (manifest.txt reproduces the run)\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_score(const std::string& pred_path, const std::string& truth_path) {
    const GridBin pred = read_grid_bin(pred_path);
    const GridBin truth = read_grid_bin(truth_path);
    const double mspe = compute_mspe(pred.grid, truth.grid);
    std::printf("mspe = %.17g\n", mspe);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"kriging with tapered covariances plus a selected low-rank part"};
    app.require_subcommand(1);

    CommonFlags f_sim, f_fit, f_pred, f_exp;
    std::string sim_preset, exp_preset;
    std::string score_pred, score_truth;

    CLI::App* sim = app.add_subcommand("simulate", "draw a synthetic truth and sample it");
    sim->add_option("experiment", sim_preset, "nested or nonstat-matern");
    add_common(sim, f_sim);

    CLI::App* fit = app.add_subcommand("fit", "fit the combined model to a CSV data set");
    add_common(fit, f_fit);

    CLI::App* pred = app.add_subcommand("predict", "predict on a grid from a saved model");
    add_common(pred, f_pred);

    CLI::App* exp = app.add_subcommand("experiment", "run all four methods on a synthetic truth");
    exp->add_option("experiment", exp_preset, "nested or nonstat-matern");
    add_common(exp, f_exp);

    CLI::App* score = app.add_subcommand("score", "mean squared error between two grid files");
    score->add_option("prediction", score_pred, "prediction .bin grid")->required();
    score->add_option("truth", score_truth, "truth .bin grid")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (sim->parsed()) return cmd_simulate(f_sim, sim_preset);
        if (fit->parsed()) return cmd_fit(f_fit);
        if (pred->parsed()) return cmd_predict(f_pred);
        if (exp->parsed()) return cmd_experiment(f_exp, exp_preset);
        if (score->parsed()) return cmd_score(score_pred, score_truth);
    } catch (const mskrig::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const mskrig::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const mskrig::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
