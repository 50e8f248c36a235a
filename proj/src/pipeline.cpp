#include "mskrig/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "mskrig/io.hpp"
#include "mskrig/rng.hpp"

namespace mskrig {

namespace {

// ---------------------------------------------------------------- config ---

double parse_double_value(const std::string& key, const std::string& s) {
    const char* c = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(c, &end);
    if (end == c || *end != '\0' || !std::isfinite(v))
        throw ConfigError(key + ": not a number: '" + s + "'");
    return v;
}

long parse_long_value(const std::string& key, const std::string& s) {
    const double v = parse_double_value(key, s);
    const long l = static_cast<long>(v);
    if (static_cast<double>(l) != v)
        throw ConfigError(key + ": not an integer: '" + s + "'");
    return l;
}

unsigned long long parse_u64_value(const std::string& key, const std::string& s) {
    if (s.empty() || s[0] == '-') throw ConfigError(key + ": not a nonnegative integer: '" + s + "'");
    const char* c = s.c_str();
    char* end = nullptr;
    const unsigned long long v = std::strtoull(c, &end, 10);
    if (end == c || *end != '\0')
        throw ConfigError(key + ": not a nonnegative integer: '" + s + "'");
    return v;
}

bool parse_bool_value(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true/false: '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split_list(s)) out.push_back(parse_double_value(key, tok));
    return out;
}

std::vector<KernelFamily> parse_family_list(const std::string& key, const std::string& s) {
    std::vector<KernelFamily> out;
    for (const auto& tok : split_list(s)) {
        try {
            out.push_back(kernel_family_from_string(tok));
        } catch (const ConfigError& e) {
            throw ConfigError(key + ": " + e.what());
        }
    }
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

std::string join_families(const std::vector<KernelFamily>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::string(to_string(v[i]));
    }
    return out;
}

void validate_config(const RunConfig& c) {
    if (!c.experiment.empty() && c.experiment != "nested" && c.experiment != "nonstat-matern")
        throw ConfigError("experiment: unknown experiment '" + c.experiment + "'");
    if (c.threads < 1) throw ConfigError("threads: must be at least 1");
    if (c.trend_degree < 0 || c.trend_degree > 2)
        throw ConfigError("trend_degree: supported degrees are 0, 1, 2");
    kernel_family_from_string(c.base_family);
    if (!compactly_supported(kernel_family_from_string(c.taper_family)))
        throw ConfigError("taper_family: taper must have compact support");
    if (!(c.taper_range > 0.0)) throw ConfigError("taper_range: must be positive");
    if (c.variogram_bins < 3) throw ConfigError("variogram_bins: need at least 3 bins");
    if (c.variogram_max_lag < 0.0) throw ConfigError("variogram_max_lag: must be nonnegative");
    if (c.n_lambda < 2) throw ConfigError("n_lambda: need at least 2 penalties");
    if (!(c.lambda_min_ratio > 0.0) || c.lambda_min_ratio >= 1.0)
        throw ConfigError("lambda_min_ratio: must be in (0, 1)");
    if (c.cv_folds < 2) throw ConfigError("cv_folds: need at least 2 folds");
    if (!(c.em.tolerance > 0.0)) throw ConfigError("em_tolerance: must be positive");
    if (c.em.patience < 1) throw ConfigError("em_patience: must be at least 1");
    if (c.em.max_iter < 1) throw ConfigError("em_max_iter: must be at least 1");
    if (c.grid_nx < 1 || c.grid_ny < 1) throw ConfigError("grid_nx/grid_ny: must be positive");
    if (c.sim_nx < 1 || c.sim_ny < 1) throw ConfigError("sim_nx/sim_ny: must be positive");
    if (c.n_samples < 1) throw ConfigError("n_samples: must be positive");
    if (c.waves < 1) throw ConfigError("waves: must be positive");
    if (c.ce_max_n < 1) throw ConfigError("ce_max_n: must be positive");
    if (!(c.nested_sph_range > 0.0)) throw ConfigError("nested_sph_range: must be positive");
    if (!(c.nested_exp_scale > 0.0)) throw ConfigError("nested_exp_scale: must be positive");
    if (c.param_field_nodes < 2) throw ConfigError("param_field_nodes: need at least 2 nodes");
    if (!(c.param_field_scale > 0.0)) throw ConfigError("param_field_scale: must be positive");
}

} // namespace

RunConfig default_nested_config() {
    RunConfig c;
    c.experiment = "nested";
    c.ce_max_n = 5000;
    return c;
}

RunConfig default_nonstat_config() {
    RunConfig c;
    c.experiment = "nonstat-matern";
    c.ce_max_n = 2500;
    return c;
}

RunConfig parse_run_config(const std::vector<std::pair<std::string, std::string>>& kv) {
    RunConfig c;
    for (const auto& [key, val] : kv) {
        if (key == "experiment") c.experiment = val;
        else if (key == "data_path") c.data_path = val;
        else if (key == "model_dir") c.model_dir = val;
        else if (key == "out_dir") c.out_dir = val;
        else if (key == "seed") c.seed = parse_u64_value(key, val);
        else if (key == "threads") c.threads = parse_long_value(key, val);
        else if (key == "trend_degree") c.trend_degree = parse_long_value(key, val);
        else if (key == "base_family") c.base_family = val;
        else if (key == "taper_family") c.taper_family = val;
        else if (key == "taper_range") c.taper_range = parse_double_value(key, val);
        else if (key == "variogram_bins") c.variogram_bins = parse_long_value(key, val);
        else if (key == "variogram_max_lag") c.variogram_max_lag = parse_double_value(key, val);
        else if (key == "dict_families") c.basis.families = parse_family_list(key, val);
        else if (key == "dict_ranges") c.basis.ranges = parse_double_list(key, val);
        else if (key == "dict_spacing_factors") c.basis.spacing_factors = parse_double_list(key, val);
        else if (key == "dict_angles") c.basis.angles = parse_double_list(key, val);
        else if (key == "dict_ratio") c.basis.ratio = parse_double_value(key, val);
        else if (key == "dict_margin") c.basis.margin = parse_double_value(key, val);
        else if (key == "domain_x0") c.basis.x0 = parse_double_value(key, val);
        else if (key == "domain_y0") c.basis.y0 = parse_double_value(key, val);
        else if (key == "domain_x1") c.basis.x1 = parse_double_value(key, val);
        else if (key == "domain_y1") c.basis.y1 = parse_double_value(key, val);
        else if (key == "n_lambda") c.n_lambda = parse_long_value(key, val);
        else if (key == "lambda_min_ratio") c.lambda_min_ratio = parse_double_value(key, val);
        else if (key == "cv_folds") c.cv_folds = parse_long_value(key, val);
        else if (key == "select_subtract_nugget") c.select_subtract_nugget = parse_bool_value(key, val);
        else if (key == "em_tolerance") c.em.tolerance = parse_double_value(key, val);
        else if (key == "em_patience") c.em.patience = parse_long_value(key, val);
        else if (key == "em_max_iter") c.em.max_iter = parse_long_value(key, val);
        else if (key == "em_scaled_init") c.em_scaled_init = parse_bool_value(key, val);
        else if (key == "filter_nugget") c.filter_nugget = parse_bool_value(key, val);
        else if (key == "grid_nx") c.grid_nx = parse_long_value(key, val);
        else if (key == "grid_ny") c.grid_ny = parse_long_value(key, val);
        else if (key == "predict_variance") c.predict_variance = parse_bool_value(key, val);
        else if (key == "sim_nx") c.sim_nx = parse_long_value(key, val);
        else if (key == "sim_ny") c.sim_ny = parse_long_value(key, val);
        else if (key == "n_samples") c.n_samples = parse_long_value(key, val);
        else if (key == "waves") c.waves = parse_long_value(key, val);
        else if (key == "ce_max_n") c.ce_max_n = parse_long_value(key, val);
        else if (key == "nested_sph_range") c.nested_sph_range = parse_double_value(key, val);
        else if (key == "nested_exp_scale") c.nested_exp_scale = parse_double_value(key, val);
        else if (key == "param_field_nodes") c.param_field_nodes = parse_long_value(key, val);
        else if (key == "param_field_scale") c.param_field_scale = parse_double_value(key, val);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    validate_config(c);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(parse_kv_file(path));
}

std::vector<std::pair<std::string, std::string>> config_to_kv(const RunConfig& c) {
    // out_dir and threads are where/how, not what; leaving them out keeps run
    // manifests identical across output directories.
    std::vector<std::pair<std::string, std::string>> kv;
    auto add = [&](const char* k, const std::string& v) { kv.emplace_back(k, v); };
    add("experiment", c.experiment);
    add("data_path", c.data_path);
    add("model_dir", c.model_dir);
    add("seed", std::to_string(c.seed));
    add("trend_degree", std::to_string(c.trend_degree));
    add("base_family", c.base_family);
    add("taper_family", c.taper_family);
    add("taper_range", format_double(c.taper_range));
    add("variogram_bins", std::to_string(c.variogram_bins));
    add("variogram_max_lag", format_double(c.variogram_max_lag));
    add("dict_families", join_families(c.basis.families));
    add("dict_ranges", join_doubles(c.basis.ranges));
    add("dict_spacing_factors", join_doubles(c.basis.spacing_factors));
    add("dict_angles", join_doubles(c.basis.angles));
    add("dict_ratio", format_double(c.basis.ratio));
    add("dict_margin", format_double(c.basis.margin));
    add("domain_x0", format_double(c.basis.x0));
    add("domain_y0", format_double(c.basis.y0));
    add("domain_x1", format_double(c.basis.x1));
    add("domain_y1", format_double(c.basis.y1));
    add("n_lambda", std::to_string(c.n_lambda));
    add("lambda_min_ratio", format_double(c.lambda_min_ratio));
    add("cv_folds", std::to_string(c.cv_folds));
    add("select_subtract_nugget", c.select_subtract_nugget ? "true" : "false");
    add("em_tolerance", format_double(c.em.tolerance));
    add("em_patience", std::to_string(c.em.patience));
    add("em_max_iter", std::to_string(c.em.max_iter));
    add("em_scaled_init", c.em_scaled_init ? "true" : "false");
    add("filter_nugget", c.filter_nugget ? "true" : "false");
    add("grid_nx", std::to_string(c.grid_nx));
    add("grid_ny", std::to_string(c.grid_ny));
    add("predict_variance", c.predict_variance ? "true" : "false");
    add("sim_nx", std::to_string(c.sim_nx));
    add("sim_ny", std::to_string(c.sim_ny));
    add("n_samples", std::to_string(c.n_samples));
    add("waves", std::to_string(c.waves));
    add("ce_max_n", std::to_string(c.ce_max_n));
    add("nested_sph_range", format_double(c.nested_sph_range));
    add("nested_exp_scale", format_double(c.nested_exp_scale));
    add("param_field_nodes", std::to_string(c.param_field_nodes));
    add("param_field_scale", format_double(c.param_field_scale));
    return kv;
}

// -------------------------------------------------------------- pipeline ---

namespace {

// Rethrows with the failing step named, keeping the error type (and payload
// for the subtypes callers dispatch on).
template <typename F>
void named_step(const char* name, F&& body) {
    auto prefix = [&](const char* what) { return std::string(name) + ": " + what; };
    try {
        body();
    } catch (const VariogramFitError& e) {
        throw VariogramFitError(prefix(e.what()), e.best);
    } catch (const NotPositiveDefinite& e) {
        throw NotPositiveDefinite(e.index, prefix(e.what()));
    } catch (const ConfigError& e) {
        throw ConfigError(prefix(e.what()));
    } catch (const NumericError& e) {
        throw NumericError(prefix(e.what()));
    } catch (const IoError& e) {
        throw IoError(prefix(e.what()));
    }
}

Eigen::MatrixXd initial_B(long p, bool scaled, double var_y) {
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(p, p);
    if (scaled && p > 0) B *= var_y / static_cast<double>(p);
    return B;
}

std::vector<BasisAtom> atoms_at(const Dictionary& d, const std::vector<long>& idx) {
    std::vector<BasisAtom> out;
    out.reserve(idx.size());
    for (long k : idx) out.push_back(d.atoms[static_cast<size_t>(k)]);
    return out;
}

// Shared intermediates of the fitting methods: detrended data, small-scale
// fit, factor of A = R + ratio I, dictionary and regularization path.
struct FitCore {
    TrendModel trend;
    Eigen::VectorXd resid;
    EmpiricalVariogram vario;
    SmallScaleModel small;
    double var_y = 0.0;
    double ratio = 0.0;
    std::shared_ptr<CholeskyFactor> fA;
    Dictionary dict;
    SparseDesign X;
    LassoPath path;
};

TaperedKernel correlation_kernel(const SmallScaleModel& small) {
    TaperedKernel k = small.kernel();
    k.params.sill = 1.0;
    return k;
}

void build_core_structure(const RunConfig& cfg, const PointSet& data, FitCore& core) {
    named_step("step 1 (trend and small-scale fit)", [&] {
        auto fit = ols_detrend(data, cfg.trend_degree);
        core.trend = std::move(fit.first);
        core.resid = std::move(fit.second);
        const double max_lag =
            cfg.variogram_max_lag > 0.0 ? cfg.variogram_max_lag : 2.0 * cfg.taper_range;
        PointSet residuals{data.points, core.resid};
        core.vario = empirical_variogram(residuals, max_lag, cfg.variogram_bins);
        SmallScaleModel tmpl;
        tmpl.base = kernel_family_from_string(cfg.base_family);
        tmpl.taper = kernel_family_from_string(cfg.taper_family);
        tmpl.taper_range = cfg.taper_range;
        core.small = fit_small_scale(core.vario, tmpl);
        if (!(core.small.sill > 0.0))
            throw NumericError("small-scale fit found a zero sill; the data look like pure noise");
        core.var_y = variance(core.resid);
        core.ratio = core.small.ratio();
    });
}

void build_core_path(const RunConfig& cfg, const PointSet& data, FitCore& core) {
    named_step("step 2 (dictionary and lasso path)", [&] {
        core.dict = build_dictionary(cfg.basis);
        core.X = evaluate_design(core.dict, data.points);
        const auto lambdas = lambda_grid(core.X, core.resid, cfg.n_lambda, cfg.lambda_min_ratio);
        core.path = lasso_path(core.X, core.resid, lambdas);
    });
}

std::shared_ptr<CholeskyFactor> factor_A(const SmallScaleModel& small,
                                         const std::vector<Point>& pts) {
    const TaperedKernel corr = correlation_kernel(small);
    const SparseSymMatrix A = assemble_sparse_cov(pts, corr, small.ratio());
    return std::make_shared<CholeskyFactor>(A);
}

FitCore build_core(const RunConfig& cfg, const PointSet& data) {
    FitCore core;
    build_core_structure(cfg, data, core);
    build_core_path(cfg, data, core);
    named_step("step 3 (small-scale factorization)",
               [&] { core.fA = factor_A(core.small, data.points); });
    return core;
}

// Steps 3..5 plus model assembly, given the shared core.
void finish_combination(const RunConfig& cfg, const PointSet& data, const FitCore& core,
                        PipelineResult& r) {
    named_step("step 3 (first selection and EM)", [&] {
        const double target1 =
            core.var_y -
            (core.small.sill + (cfg.select_subtract_nugget ? core.small.nugget : 0.0));
        r.sel1 = select_by_variance_target(core.path, std::max(0.0, target1));
        const SparseDesign P1 = evaluate_design(core.dict, data.points, r.sel1.active);
        EMConfig c1 = cfg.em;
        c1.fix_sigma = false;
        r.em1 = run_em(core.resid, *core.fA, P1,
                       core.small.sill,
                       initial_B(P1.p(), cfg.em_scaled_init, core.var_y), c1);
    });
    named_step("step 4 (re-selection)", [&] {
        const double target2 = core.var_y - r.em1.sigma2 * (1.0 + core.ratio);
        r.sel2 = select_by_variance_target(core.path, std::max(0.0, target2));
    });
    named_step("step 5 (EM with fixed small-scale weight)", [&] {
        const SparseDesign P2 = evaluate_design(core.dict, data.points, r.sel2.active);
        EMConfig c2 = cfg.em;
        c2.fix_sigma = true;
        r.em2 = run_em(core.resid, *core.fA, P2, r.em1.sigma2,
                       initial_B(P2.p(), cfg.em_scaled_init, core.var_y), c2);

        FittedModel m;
        m.trend = core.trend;
        m.small = core.small;
        m.basis = atoms_at(core.dict, r.sel2.active);
        m.data = data;
        m.z_resid = core.resid;
        m.P = P2;
        m.sigma2 = r.em2.sigma2;
        m.B = r.em2.B;
        m.mu = r.em2.mu;
        m.C = r.em2.C;
        m.filter_nugget = cfg.filter_nugget;
        if (!cfg.filter_nugget) {
            m.fA = core.fA;
            m.fA_scale = m.sigma2;
            m.diag_A = false;
            m.a_sill = 1.0;
            m.a_nugget = core.ratio;
            m.struct_weight = m.sigma2;
            m.nugget_weight = m.sigma2 * core.ratio;
        } else {
            const ReweightResult rw =
                nugget_ratio_reweight(core.small.sill, m.sigma2, core.small.nugget);
            TaperedKernel kw = correlation_kernel(core.small);
            kw.params.sill = rw.structured_weight;
            const SparseSymMatrix Af =
                assemble_sparse_cov(data.points, kw, rw.nugget);
            m.fA = std::make_shared<CholeskyFactor>(Af);
            m.fA_scale = 1.0;
            m.diag_A = false;
            m.a_sill = rw.structured_weight;
            m.a_nugget = rw.nugget;
            m.struct_weight = rw.structured_weight;
            m.nugget_weight = 0.0;
        }
        finalize_model(m);
        r.model = std::move(m);
    });
}

} // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const PointSet& data) {
    PipelineResult r;
    FitCore core = build_core(cfg, data);
    r.trend = core.trend;
    r.resid = core.resid;
    r.variogram = core.vario;
    r.small = core.small;
    r.dict = core.dict;
    r.path = core.path;
    finish_combination(cfg, data, core, r);
    return r;
}

double compute_mspe(const Grid& pred, const Grid& truth) {
    if (pred.nx != truth.nx || pred.ny != truth.ny)
        throw ConfigError("prediction and truth grids have different shapes");
    double acc = 0.0;
    for (long c = 0; c < pred.cells(); ++c) {
        const double d = pred.values[static_cast<size_t>(c)] - truth.values[static_cast<size_t>(c)];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.cells());
}

// ------------------------------------------------------------ simulators ---

LocalParamField make_smooth_param_field(long nodes, double field_scale,
                                        unsigned long long seed) {
    Grid base = make_grid(nodes, nodes);
    // The tiny nugget keeps the dense Cholesky of the very smooth Gaussian
    // covariance positive definite; it is invisible in the transformed fields.
    auto gauss = [field_scale](const Point& a, const Point& b) {
        const double u = dist(a, b) / field_scale;
        const double v = std::exp(-u * u);
        return dist(a, b) == 0.0 ? v + 1e-8 : v;
    };
    Grid g1 = base, g2 = base, g3 = base;
    simulate_dense(g1, gauss, derive_stream_seed(seed, "param_a1"));
    simulate_dense(g2, gauss, derive_stream_seed(seed, "param_a2"));
    simulate_dense(g3, gauss, derive_stream_seed(seed, "param_angle"));

    auto ncdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    const long nc = base.cells();
    std::vector<double> a1(nc), a2(nc), angle(nc), nu(nc);
    for (long j = 0; j < nodes; ++j) {
        for (long i = 0; i < nodes; ++i) {
            const size_t c = static_cast<size_t>(j * nodes + i);
            a1[c] = 0.1 + ncdf(g1.values[c]);
            a2[c] = 0.1 + ncdf(g2.values[c]);
            angle[c] = 3.14159265358979323846 * ncdf(g3.values[c]);
            nu[c] = 0.5 + 1.5 * base.center(i, j).y;
        }
    }
    const Point lo = base.center(0, 0);
    const Point hi = base.center(nodes - 1, nodes - 1);
    return LocalParamField(lo.x, hi.x, lo.y, hi.y, static_cast<int>(nodes),
                           static_cast<int>(nodes), std::move(a1), std::move(a2),
                           std::move(angle), std::move(nu));
}

SimulatedTruth simulate_experiment_truth(const RunConfig& cfg) {
    if (cfg.experiment.empty())
        throw ConfigError("experiment: no experiment named; set experiment = nested or nonstat-matern");
    SimulatedTruth out;
    out.truth = make_grid(cfg.sim_nx, cfg.sim_ny);
    if (cfg.experiment == "nested") {
        // Half the variance from a compactly supported spherical component,
        // half from an exponential component drawn spectrally.
        TaperedKernel sph;
        sph.base = KernelFamily::spherical;
        sph.params = KernelParams{1.0, cfg.nested_sph_range, 0.0};
        const SparseSymMatrix A = assemble_sparse_cov(out.truth.centers(), sph, 0.0);
        const Eigen::VectorXd zs = simulate_compact(A, cfg.seed);

        Grid ge = make_grid(cfg.sim_nx, cfg.sim_ny);
        LocalParams lp;
        lp.aniso = AnisoParams{cfg.nested_exp_scale, cfg.nested_exp_scale, 0.0};
        lp.nu = 0.5;
        const LocalParamField field = LocalParamField::constant(lp);
        SpectralConfig sc;
        sc.waves = cfg.waves;
        sc.seed = cfg.seed;
        out.rejected_waves = simulate_nonstationary(ge, field, sc);

        const double s = std::sqrt(0.5);
        out.truth.values.resize(static_cast<size_t>(out.truth.cells()));
        for (long c = 0; c < out.truth.cells(); ++c)
            out.truth.values[static_cast<size_t>(c)] =
                s * zs[c] + s * ge.values[static_cast<size_t>(c)];
    } else {
        auto field = std::make_shared<LocalParamField>(make_smooth_param_field(
            cfg.param_field_nodes, cfg.param_field_scale, cfg.seed));
        SpectralConfig sc;
        sc.waves = cfg.waves;
        sc.seed = cfg.seed;
        out.rejected_waves = simulate_nonstationary(out.truth, *field, sc);
        out.param_field = std::move(field);
    }
    out.data = sample_locations(out.truth, cfg.n_samples, cfg.seed);
    return out;
}

// ------------------------------------------------------------ experiment ---

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FittedModel tapering_model(const PointSet& data, const FitCore& core) {
    FittedModel m;
    m.trend = core.trend;
    m.small = core.small;
    m.data = data;
    m.z_resid = core.resid;
    m.P.mat.resize(data.n(), 0);
    m.sigma2 = core.small.sill;
    m.B.resize(0, 0);
    m.mu.resize(0);
    m.C.resize(0, 0);
    m.fA = core.fA;
    m.fA_scale = core.small.sill;
    m.diag_A = false;
    m.a_sill = 1.0;
    m.a_nugget = core.ratio;
    m.struct_weight = core.small.sill;
    m.nugget_weight = core.small.nugget;
    finalize_model(m);
    return m;
}

struct LowRankFit {
    long k = 0; // path index picked by the one-standard-error rule
    std::vector<long> active;
    EMState em;
    FittedModel model;
};

LowRankFit lowrank_model(const RunConfig& cfg, const PointSet& data, FitCore& core) {
    LowRankFit lr;
    cross_validate(core.path, core.X, core.resid, cfg.cv_folds, cfg.seed);
    lr.k = one_se_rule(core.path);
    const Eigen::VectorXd& beta = core.path.betas[static_cast<size_t>(lr.k)];
    for (long j = 0; j < beta.size(); ++j)
        if (beta[j] != 0.0) lr.active.push_back(j);

    const SparseDesign P = evaluate_design(core.dict, data.points, lr.active);
    const SparseSymMatrix I = diagonal_matrix(data.n(), 1.0);
    auto fI = std::make_shared<CholeskyFactor>(I);
    EMConfig c = cfg.em;
    c.fix_sigma = false;
    lr.em = run_em(core.resid, *fI, P, 0.5 * core.var_y,
                   initial_B(P.p(), cfg.em_scaled_init, core.var_y), c);

    FittedModel m;
    m.trend = core.trend;
    m.small = core.small;
    m.basis = atoms_at(core.dict, lr.active);
    m.data = data;
    m.z_resid = core.resid;
    m.P = P;
    m.sigma2 = lr.em.sigma2;
    m.B = lr.em.B;
    m.mu = lr.em.mu;
    m.C = lr.em.C;
    m.fA = fI;
    m.fA_scale = lr.em.sigma2;
    m.diag_A = true;
    m.a_sill = 0.0;
    m.a_nugget = 1.0;
    m.struct_weight = 0.0;
    m.nugget_weight = lr.em.sigma2;
    finalize_model(m);
    lr.model = std::move(m);
    return lr;
}

// Simple kriging under the generating covariance, the reference the other
// methods chase. Dense: one factorization of the (possibly subsampled) data
// covariance, then one dot product per grid cell.
Grid conditional_expectation(const RunConfig& cfg, const SimulatedTruth& sim,
                             const std::function<double(const Point&, const Point&)>& cov) {
    const PointSet& data = sim.data;
    std::vector<long> idx(static_cast<size_t>(data.n()));
    std::iota(idx.begin(), idx.end(), 0L);
    if (data.n() > cfg.ce_max_n) {
        RngStream rng(cfg.seed, "ce_subsample");
        for (long i = data.n() - 1; i > 0; --i) {
            const long j = static_cast<long>(rng.integer(static_cast<std::uint64_t>(i) + 1));
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        idx.resize(static_cast<size_t>(cfg.ce_max_n));
        std::sort(idx.begin(), idx.end());
    }
    const long m = static_cast<long>(idx.size());
    std::vector<Point> pts(static_cast<size_t>(m));
    Eigen::VectorXd z(m);
    for (long i = 0; i < m; ++i) {
        pts[static_cast<size_t>(i)] = data.points[static_cast<size_t>(idx[static_cast<size_t>(i)])];
        z[i] = data.values[idx[static_cast<size_t>(i)]];
    }

    Eigen::MatrixXd K(m, m);
    for (long j = 0; j < m; ++j) {
        for (long i = j; i < m; ++i) {
            const double v = cov(pts[static_cast<size_t>(i)], pts[static_cast<size_t>(j)]);
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) {
        // Sampled locations can land arbitrarily close together; a hair of
        // ridge keeps the reference solvable without moving it measurably.
        K.diagonal().array() += 1e-10 * K.diagonal().maxCoeff();
        llt.compute(K);
        if (llt.info() != Eigen::Success)
            throw NumericError("conditional expectation: data covariance is not positive definite");
    }
    const Eigen::VectorXd alpha = llt.solve(z);

    Grid out = make_grid(cfg.sim_nx, cfg.sim_ny);
    out.values.resize(static_cast<size_t>(out.cells()));
    for (long j = 0; j < out.ny; ++j) {
        for (long i = 0; i < out.nx; ++i) {
            const Point x0 = out.center(i, j);
            double acc = 0.0;
            for (long t = 0; t < m; ++t) acc += cov(x0, pts[static_cast<size_t>(t)]) * alpha[t];
            out.values[static_cast<size_t>(j * out.nx + i)] = acc;
        }
    }
    return out;
}

void write_prediction(const std::string& dir, const std::string& method, const Grid& g) {
    write_grid_bin(dir + "/pred_" + method + ".bin", g);
    write_grid_pgm(dir + "/pred_" + method + ".pgm", g);
}

} // namespace

ExperimentOutput run_experiment(const RunConfig& cfg) {
    if (cfg.experiment.empty())
        throw ConfigError("experiment: no experiment named; set experiment = nested or nonstat-matern");
    std::filesystem::create_directories(cfg.out_dir);
    const std::string dir = cfg.out_dir;
    ExperimentOutput out;
    auto t_all = std::chrono::steady_clock::now();
    auto t = t_all;
    auto lap = [&](const char* name) {
        out.timings[name] = seconds_since(t);
        t = std::chrono::steady_clock::now();
    };

    SimulatedTruth sim = simulate_experiment_truth(cfg);
    out.rejected_waves = sim.rejected_waves;
    lap("simulate_truth");
    write_grid_bin(dir + "/truth.bin", sim.truth);
    write_grid_pgm(dir + "/truth.pgm", sim.truth);
    write_points_csv(dir + "/data.csv", sim.data);

    FitCore core;
    named_step("experiment", [&] { build_core_structure(cfg, sim.data, core); });
    write_variogram_csv(dir + "/variogram.csv", core.vario);
    lap("small_scale_fit");

    named_step("experiment", [&] { core.fA = factor_A(core.small, sim.data.points); });
    lap("assemble_factor");

    const FittedModel tap = tapering_model(sim.data, core);
    const Grid pred_tap = predict_on_grid(tap, cfg.sim_nx, cfg.sim_ny, false, nullptr);
    write_prediction(dir, "tapering", pred_tap);
    out.mspe["tapering"] = compute_mspe(pred_tap, sim.truth);
    lap("tapering");

    named_step("experiment", [&] { build_core_path(cfg, sim.data, core); });
    write_dictionary_csv(dir + "/dictionary.csv", core.dict);
    lap("lasso_path");

    PipelineResult comb;
    finish_combination(cfg, sim.data, core, comb);
    out.selected_pass1 = static_cast<long>(comb.sel1.active.size());
    out.selected_pass2 = static_cast<long>(comb.sel2.active.size());
    out.sigma2_em1 = comb.em1.sigma2;
    out.sigma2_em2 = comb.em2.sigma2;
    write_em_history_csv(dir + "/em1.csv", comb.em1.history);
    write_em_history_csv(dir + "/em2.csv", comb.em2.history);
    const Grid pred_comb = predict_on_grid(comb.model, cfg.sim_nx, cfg.sim_ny, false, nullptr);
    write_prediction(dir, "combination", pred_comb);
    out.mspe["combination"] = compute_mspe(pred_comb, sim.truth);
    lap("combination");

    LowRankFit lr;
    named_step("experiment (low-rank baseline)", [&] { lr = lowrank_model(cfg, sim.data, core); });
    out.lowrank_active = static_cast<long>(lr.active.size());
    write_lasso_path_csv(dir + "/path.csv", core.path);
    write_em_history_csv(dir + "/em_lowrank.csv", lr.em.history);
    const Grid pred_lr = predict_on_grid(lr.model, cfg.sim_nx, cfg.sim_ny, false, nullptr);
    write_prediction(dir, "lowrank", pred_lr);
    out.mspe["lowrank"] = compute_mspe(pred_lr, sim.truth);
    lap("lowrank");

    std::function<double(const Point&, const Point&)> cov_true;
    if (cfg.experiment == "nested") {
        const double rs = cfg.nested_sph_range, re = cfg.nested_exp_scale;
        cov_true = [rs, re](const Point& a, const Point& b) {
            const double h = dist(a, b);
            return 0.5 * base_correlation(KernelFamily::spherical, h / rs) +
                   0.5 * std::exp(-h / re);
        };
    } else {
        auto field = sim.param_field;
        cov_true = [field](const Point& a, const Point& b) {
            return eval_nonstationary_matern(*field, a, b);
        };
    }
    Grid pred_ce;
    named_step("experiment (conditional expectation)",
               [&] { pred_ce = conditional_expectation(cfg, sim, cov_true); });
    write_prediction(dir, "ce", pred_ce);
    out.mspe["ce"] = compute_mspe(pred_ce, sim.truth);
    lap("conditional_expectation");

    {
        std::ostringstream table;
        table << "method,mspe,n_basis\n";
        table << "tapering," << format_double(out.mspe["tapering"]) << ",0\n";
        table << "lowrank," << format_double(out.mspe["lowrank"]) << "," << out.lowrank_active
              << "\n";
        table << "combination," << format_double(out.mspe["combination"]) << ","
              << out.selected_pass2 << "\n";
        table << "ce," << format_double(out.mspe["ce"]) << ",0\n";
        std::ofstream f(dir + "/table.csv", std::ios::binary);
        if (!f) throw IoError("cannot open " + dir + "/table.csv for writing");
        f << table.str();
        if (!f.good()) throw IoError("write failed on " + dir + "/table.csv");
    }

    out.timings["total"] = seconds_since(t_all);
    {
        std::ofstream f(dir + "/timings.txt", std::ios::binary);
        if (!f) throw IoError("cannot open " + dir + "/timings.txt for writing");
        f << "# wall-clock seconds per stage; regenerated every run and\n"
             "# excluded from reproducibility comparisons\n";
        for (const auto& [k, v] : out.timings) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.3f", v);
            f << k << " = " << buf << "\n";
        }
        if (!f.good()) throw IoError("write failed on " + dir + "/timings.txt");
    }
    {
        std::ostringstream m;
        m << "# run manifest: parse this file as the config to reproduce the run\n";
        m << "# byte for byte (timings.txt is wall clock and not reproducible)\n";
        for (const auto& [k, v] : config_to_kv(cfg)) m << k << " = " << v << "\n";
        m << "# --- results ---\n";
        m << "# n_data = " << sim.data.n() << "\n";
        m << "# dictionary_size = " << core.dict.p() << "\n";
        m << "# selected_pass1 = " << out.selected_pass1 << "\n";
        m << "# selected_pass2 = " << out.selected_pass2 << "\n";
        m << "# lowrank_active = " << out.lowrank_active << "\n";
        m << "# sigma2_em1 = " << format_double(out.sigma2_em1) << "\n";
        m << "# sigma2_em2 = " << format_double(out.sigma2_em2) << "\n";
        m << "# em1_converged = " << (comb.em1.converged ? "true" : "false") << "\n";
        m << "# em2_converged = " << (comb.em2.converged ? "true" : "false") << "\n";
        m << "# rejected_waves = " << out.rejected_waves << "\n";
        m << "# mspe_tapering = " << format_double(out.mspe["tapering"]) << "\n";
        m << "# mspe_lowrank = " << format_double(out.mspe["lowrank"]) << "\n";
        m << "# mspe_combination = " << format_double(out.mspe["combination"]) << "\n";
        m << "# mspe_ce = " << format_double(out.mspe["ce"]) << "\n";
        m << "# artifacts: truth.bin truth.pgm data.csv variogram.csv dictionary.csv "
             "path.csv em1.csv em2.csv em_lowrank.csv pred_tapering.bin pred_tapering.pgm "
             "pred_lowrank.bin pred_lowrank.pgm pred_combination.bin pred_combination.pgm "
             "pred_ce.bin pred_ce.pgm table.csv manifest.txt timings.txt\n";
        std::ofstream f(dir + "/manifest.txt", std::ios::binary);
        if (!f) throw IoError("cannot open " + dir + "/manifest.txt for writing");
        f << m.str();
        if (!f.good()) throw IoError("write failed on " + dir + "/manifest.txt");
    }
    return out;
}

// ----------------------------------------------------------- persistence ---

void save_model(const std::string& dir, const FittedModel& m) {
    std::filesystem::create_directories(dir);
    {
        std::ostringstream s;
        s << "model_format = 1\n";
        s << "trend_degree = " << m.trend.degree << "\n";
        std::string beta;
        for (long i = 0; i < m.trend.beta.size(); ++i) {
            if (i) beta += ",";
            beta += format_double(m.trend.beta[i]);
        }
        s << "trend_beta = " << beta << "\n";
        s << "base_family = " << to_string(m.small.base) << "\n";
        s << "base_scale = " << format_double(m.small.scale) << "\n";
        s << "sill = " << format_double(m.small.sill) << "\n";
        s << "taper_family = " << to_string(m.small.taper) << "\n";
        s << "taper_range = " << format_double(m.small.taper_range) << "\n";
        s << "nugget = " << format_double(m.small.nugget) << "\n";
        s << "sigma2 = " << format_double(m.sigma2) << "\n";
        s << "filter_nugget = " << (m.filter_nugget ? "true" : "false") << "\n";
        s << "struct_weight = " << format_double(m.struct_weight) << "\n";
        s << "nugget_weight = " << format_double(m.nugget_weight) << "\n";
        s << "fA_scale = " << format_double(m.fA_scale) << "\n";
        s << "diag_A = " << (m.diag_A ? "true" : "false") << "\n";
        s << "a_sill = " << format_double(m.a_sill) << "\n";
        s << "a_nugget = " << format_double(m.a_nugget) << "\n";
        std::ofstream f(dir + "/model.txt", std::ios::binary);
        if (!f) throw IoError("cannot open " + dir + "/model.txt for writing");
        f << s.str();
        if (!f.good()) throw IoError("write failed on " + dir + "/model.txt");
    }
    write_points_csv(dir + "/data.csv", m.data);
    {
        std::ostringstream s;
        s << "index,family,range,angle,ratio,knot_x,knot_y\n";
        for (size_t k = 0; k < m.basis.size(); ++k) {
            const BasisAtom& a = m.basis[k];
            s << k << "," << to_string(a.family) << "," << format_double(a.range) << ","
              << format_double(a.angle) << "," << format_double(a.ratio) << ","
              << format_double(a.knot.x) << "," << format_double(a.knot.y) << "\n";
        }
        std::ofstream f(dir + "/basis.csv", std::ios::binary);
        if (!f) throw IoError("cannot open " + dir + "/basis.csv for writing");
        f << s.str();
        if (!f.good()) throw IoError("write failed on " + dir + "/basis.csv");
    }
    {
        const long p = m.p();
        std::vector<double> blob;
        blob.reserve(static_cast<size_t>(p + 2 * p * p));
        for (long i = 0; i < p; ++i) blob.push_back(m.mu[i]);
        for (long j = 0; j < p; ++j)
            for (long i = 0; i < p; ++i) blob.push_back(m.B(i, j));
        for (long j = 0; j < p; ++j)
            for (long i = 0; i < p; ++i) blob.push_back(m.C(i, j));
        write_vector_bin(dir + "/posterior.bin", blob);
    }
}

FittedModel load_model(const std::string& dir) {
    FittedModel m;
    const auto kv = parse_kv_file(dir + "/model.txt");
    bool found_format = false;
    for (const auto& [key, val] : kv) {
        if (key == "model_format") {
            if (val != "1") throw ConfigError(dir + "/model.txt: unknown model_format " + val);
            found_format = true;
        } else if (key == "trend_degree") m.trend.degree = parse_long_value(key, val);
        else if (key == "trend_beta") {
            const auto parts = parse_double_list(key, val);
            m.trend.beta.resize(static_cast<long>(parts.size()));
            for (size_t i = 0; i < parts.size(); ++i) m.trend.beta[static_cast<long>(i)] = parts[i];
        } else if (key == "base_family") m.small.base = kernel_family_from_string(val);
        else if (key == "base_scale") m.small.scale = parse_double_value(key, val);
        else if (key == "sill") m.small.sill = parse_double_value(key, val);
        else if (key == "taper_family") m.small.taper = kernel_family_from_string(val);
        else if (key == "taper_range") m.small.taper_range = parse_double_value(key, val);
        else if (key == "nugget") m.small.nugget = parse_double_value(key, val);
        else if (key == "sigma2") m.sigma2 = parse_double_value(key, val);
        else if (key == "filter_nugget") m.filter_nugget = parse_bool_value(key, val);
        else if (key == "struct_weight") m.struct_weight = parse_double_value(key, val);
        else if (key == "nugget_weight") m.nugget_weight = parse_double_value(key, val);
        else if (key == "fA_scale") m.fA_scale = parse_double_value(key, val);
        else if (key == "diag_A") m.diag_A = parse_bool_value(key, val);
        else if (key == "a_sill") m.a_sill = parse_double_value(key, val);
        else if (key == "a_nugget") m.a_nugget = parse_double_value(key, val);
        else throw ConfigError(dir + "/model.txt: unknown key '" + key + "'");
    }
    if (!found_format) throw ConfigError(dir + "/model.txt: missing model_format");

    m.data = read_points_csv(dir + "/data.csv");

    {
        std::ifstream f(dir + "/basis.csv");
        if (!f) throw IoError("cannot open " + dir + "/basis.csv");
        std::string line;
        if (!std::getline(f, line)) throw IoError(dir + "/basis.csv: empty file");
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            std::vector<std::string> fields;
            std::string cur;
            for (char ch : line) {
                if (ch == ',') {
                    fields.push_back(cur);
                    cur.clear();
                } else if (ch != '\r') {
                    cur += ch;
                }
            }
            fields.push_back(cur);
            if (fields.size() != 7) throw IoError(dir + "/basis.csv: expected 7 fields per row");
            BasisAtom a;
            a.family = kernel_family_from_string(fields[1]);
            a.range = parse_double_value("range", fields[2]);
            a.angle = parse_double_value("angle", fields[3]);
            a.ratio = parse_double_value("ratio", fields[4]);
            a.knot = Point{parse_double_value("knot_x", fields[5]),
                           parse_double_value("knot_y", fields[6])};
            m.basis.push_back(a);
        }
    }

    const long p = m.p();
    const std::vector<double> blob = read_vector_bin(dir + "/posterior.bin");
    if (static_cast<long>(blob.size()) != p + 2 * p * p)
        throw IoError(dir + "/posterior.bin: size does not match the basis count");
    m.mu.resize(p);
    m.B.resize(p, p);
    m.C.resize(p, p);
    size_t at = 0;
    for (long i = 0; i < p; ++i) m.mu[i] = blob[at++];
    for (long j = 0; j < p; ++j)
        for (long i = 0; i < p; ++i) m.B(i, j) = blob[at++];
    for (long j = 0; j < p; ++j)
        for (long i = 0; i < p; ++i) m.C(i, j) = blob[at++];

    const Eigen::MatrixXd F = trend_design(m.data.points, m.trend.degree);
    if (F.cols() != m.trend.beta.size())
        throw ConfigError(dir + "/model.txt: trend_beta length does not match trend_degree");
    m.z_resid = m.data.values - F * m.trend.beta;

    Dictionary d;
    d.atoms = m.basis;
    std::vector<long> all(static_cast<size_t>(p));
    std::iota(all.begin(), all.end(), 0L);
    m.P = evaluate_design(d, m.data.points, all);

    SparseSymMatrix A;
    if (m.diag_A) {
        A = diagonal_matrix(m.data.n(), m.a_nugget);
    } else {
        TaperedKernel k = correlation_kernel(m.small);
        k.params.sill = m.a_sill;
        A = assemble_sparse_cov(m.data.points, k, m.a_nugget);
    }
    m.fA = std::make_shared<CholeskyFactor>(A);
    finalize_model(m);
    return m;
}

Grid predict_on_grid(const FittedModel& m, long nx, long ny, bool with_variance,
                     std::vector<double>* variances) {
    Grid g = make_grid(nx, ny);
    const std::vector<Point> targets = g.centers();
    const PredictionResult pr =
        with_variance ? predict_variance(m, targets) : predict(m, targets);
    g.values.assign(pr.mean.data(), pr.mean.data() + pr.mean.size());
    if (variances) {
        if (with_variance)
            variances->assign(pr.variance.data(), pr.variance.data() + pr.variance.size());
        else
            variances->clear();
    }
    return g;
}

} // namespace mskrig
