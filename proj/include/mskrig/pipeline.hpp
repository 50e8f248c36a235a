#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mskrig/dictionary.hpp"
#include "mskrig/em.hpp"
#include "mskrig/kriging.hpp"
#include "mskrig/lasso.hpp"
#include "mskrig/simulate.hpp"
#include "mskrig/variogram.hpp"

namespace mskrig {

// Flat run configuration; every field has a `key = value` spelling and the
// parser rejects unknown keys. config_to_kv writes the fully resolved form
// back out, which is what run manifests embed.
struct RunConfig {
    std::string experiment;    // "nested" | "nonstat-matern" | "" (plain fit)
    std::string data_path;     // fit input (CSV x,y,value)
    std::string model_dir;     // predict input
    std::string out_dir = ".";
    unsigned long long seed = 0;
    long threads = 1;

    long trend_degree = 0;
    std::string base_family = "exponential";
    std::string taper_family = "spherical";
    double taper_range = 0.025;
    long variogram_bins = 15;
    double variogram_max_lag = 0.0; // 0 = twice the taper range

    BasisSpec basis;
    long n_lambda = 100;
    double lambda_min_ratio = 1e-3;
    long cv_folds = 5;
    bool select_subtract_nugget = true; // variance target subtracts sill + nugget

    EMConfig em;
    bool em_scaled_init = false; // B starts at var(y)/p * I instead of I
    bool filter_nugget = false;

    long grid_nx = 200, grid_ny = 200; // prediction grid
    bool predict_variance = false;

    long sim_nx = 200, sim_ny = 200; // simulation grid
    long n_samples = 5000;
    long waves = 10000;
    long ce_max_n = 5000;             // conditional-expectation subsample cap
    double nested_sph_range = 0.05;   // nested truth: spherical part
    double nested_exp_scale = 0.1;    // nested truth: exponential part
    long param_field_nodes = 50;      // nonstationary parameter fields
    double param_field_scale = 0.5;   // smoothness of the parameter fields
};

RunConfig default_nested_config();
RunConfig default_nonstat_config();

RunConfig parse_run_config(const std::vector<std::pair<std::string, std::string>>& kv);
RunConfig load_run_config(const std::string& path);
std::vector<std::pair<std::string, std::string>> config_to_kv(const RunConfig& cfg);

struct PipelineResult {
    TrendModel trend;
    Eigen::VectorXd resid;
    EmpiricalVariogram variogram;
    SmallScaleModel small;
    Dictionary dict;
    LassoPath path;
    Selection sel1, sel2;
    EMState em1, em2;
    FittedModel model;
};

// Steps: (1) detrend + variogram fit, (2) dictionary + lasso + variance-target
// selection, (3) EM over sigma2 and B, (4) re-selection on the same path with
// the post-EM remaining-variance target, (5) EM with sigma2 fixed. Errors are
// rethrown with the failing step named.
PipelineResult run_pipeline(const RunConfig& cfg, const PointSet& data);

double compute_mspe(const Grid& pred, const Grid& truth);

// Truth/data generators for the built-in experiments.
struct SimulatedTruth {
    Grid truth;
    PointSet data;
    long rejected_waves = 0;
    std::shared_ptr<const LocalParamField> param_field; // nonstationary runs only
};
SimulatedTruth simulate_experiment_truth(const RunConfig& cfg);

// Smooth random parameter fields: scales and angle are uniform transforms of
// Gaussian-covariance fields, smoothness increases linearly with y.
LocalParamField make_smooth_param_field(long nodes, double field_scale,
                                        unsigned long long seed);

struct ExperimentOutput {
    std::map<std::string, double> mspe; // per method
    long selected_pass1 = 0, selected_pass2 = 0, lowrank_active = 0;
    double sigma2_em1 = 0.0, sigma2_em2 = 0.0;
    long rejected_waves = 0;
    std::map<std::string, double> timings; // seconds per step
};

// Runs all four methods (tapering, low-rank, combination, conditional
// expectation) on the configured experiment and writes every artifact under
// cfg.out_dir. Prediction surfaces are means only.
ExperimentOutput run_experiment(const RunConfig& cfg);

void save_model(const std::string& dir, const FittedModel& m);
FittedModel load_model(const std::string& dir);

// Mean (and optionally variance) surface of a fitted model on a grid.
Grid predict_on_grid(const FittedModel& m, long nx, long ny, bool with_variance,
                     std::vector<double>* variances);

} // namespace mskrig
