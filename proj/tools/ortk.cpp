// Batch front end: kernel building, invariant densities, the optimal
// perturbation pipeline, audit verification, figure reproduction, and the
// closed-form OU cross-check.  Config is flat key=value text; every
// subcommand takes --config/--set/--output/--threads/--cache-dir.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ortk/experiment.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
    std::string output;
    int threads = -1;          // -1: keep config value
    std::string cache_dir;     // empty: env, then <output>/cache
};

void add_common(CLI::App* cmd, CommonOpts& opt) {
    cmd->add_option("-c,--config", opt.config_path, "config file (flat key = value text)")
        ->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", opt.sets, "override, key=value (repeatable)");
    cmd->add_option("-o,--output", opt.output, "output directory (default: config output_dir)");
    cmd->add_option("-t,--threads", opt.threads, "worker threads (0 = all cores)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--cache-dir", opt.cache_dir,
                    "kernel cache directory (default: $ORTK_CACHE_DIR, else <output>/cache)");
}

ortk::ExperimentConfig load_config(const CommonOpts& opt) {
    ortk::ExperimentConfig cfg = opt.config_path.empty()
                                     ? ortk::parse_config_text("", opt.sets)
                                     : ortk::parse_config(opt.config_path, opt.sets);
    if (opt.threads >= 0) cfg.threads = static_cast<unsigned>(opt.threads);
    if (!opt.output.empty()) cfg.output_dir = opt.output;
    cfg.validate();
    return cfg;
}

std::filesystem::path cache_dir_for(const CommonOpts& opt, const ortk::ExperimentConfig& cfg) {
    if (!opt.cache_dir.empty()) return opt.cache_dir;
    if (const char* env = std::getenv("ORTK_CACHE_DIR"); env && *env) return env;
    return std::filesystem::path(cfg.output_dir) / "cache";
}

void print_audits(const std::vector<ortk::Audit>& audits, std::ostream& os) {
    for (const ortk::Audit& a : audits)
        os << "[" << a.status << "] " << a.name << ": value " << a.value << " (threshold "
           << a.threshold << ") — " << a.note << "\n";
}

int cmd_build_kernel(const CommonOpts& opt) {
    const ortk::ExperimentConfig cfg = load_config(opt);
    ortk::KernelBuildStats stats;
    bool from_cache = false;
    const ortk::KernelMatrix K =
        ortk::obtain_kernel(cfg, cache_dir_for(opt, cfg), &std::cout, &from_cache, &stats);
    std::cout << "kernel: " << K.n() << " x " << K.n() << " nodes"
              << (from_cache ? " (from cache)" : "") << "\n"
              << "  min entry          " << stats.min_entry << "\n"
              << "  max row-mass dev   " << stats.max_row_mass_dev << "\n";
    if (!from_cache)
        std::cout << "  min pivot          " << stats.min_pivot << "\n"
                  << "  build wall ms      " << stats.wall_ms << "\n";
    return 0;
}

int cmd_invariant(const CommonOpts& opt) {
    const ortk::ExperimentConfig cfg = load_config(opt);
    const ortk::KernelMatrix K =
        ortk::obtain_kernel(cfg, cache_dir_for(opt, cfg), &std::cout, nullptr, nullptr);
    const ortk::InvariantResult inv = ortk::invariant_density(
        K, ortk::PowerIterOptions{cfg.eigen_tol, cfg.eigen_max_iters});
    const std::filesystem::path dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    ortk::write_csv(dir / "f0.csv", {"x", "f0"}, {K.grid.nodes(), inv.density});
    std::cout << "invariant density written to " << (dir / "f0.csv").string() << "\n"
              << "  iterations   " << inv.iterations << "\n"
              << "  residual     " << inv.residual << "\n"
              << "  eigenvalue   " << ortk::format_double(inv.eigenvalue) << "\n"
              << "  peaks at    ";
    for (const double p : ortk::peak_locations(inv.density, K.grid)) std::cout << " " << p;
    std::cout << "\n";
    return 0;
}

ortk::RunOutputs run_pipeline(const CommonOpts& opt, const ortk::ExperimentConfig& cfg) {
    ortk::KernelMatrix K =
        ortk::obtain_kernel(cfg, cache_dir_for(opt, cfg), &std::cout, nullptr, nullptr);
    ortk::RunOptions ro;
    ro.prebuilt = &K;
    return ortk::run_experiment(cfg, ro);
}

int cmd_optimize(const CommonOpts& opt) {
    const ortk::ExperimentConfig cfg = load_config(opt);
    const ortk::RunOutputs run = run_pipeline(opt, cfg);
    std::cout << "basis size        " << run.basis.size() << "\n"
              << "coefficient norm  " << ortk::format_double(run.coeffs.norm2()) << "\n"
              << "objective(g)      " << ortk::format_double(run.objective) << "\n"
              << "<phi, f0>         " << ortk::format_double(run.phi_f0) << "\n";
    for (const ortk::DeltaRow& r : run.delta_rows) {
        std::cout << "delta " << r.delta << ": ";
        if (r.quotient_skipped)
            std::cout << r.note << "\n";
        else
            std::cout << "L1 response error " << r.l1_error << ", rate error " << r.rate_error
                      << "\n";
    }
    std::cout << "artifacts in " << cfg.output_dir << "\n";
    return 0;
}

int cmd_verify(const CommonOpts& opt) {
    const ortk::ExperimentConfig cfg = load_config(opt);
    const ortk::RunOutputs run = run_pipeline(opt, cfg);
    print_audits(run.audits, std::cout);
    std::size_t failed = 0;
    for (const ortk::Audit& a : run.audits)
        if (a.status == "fail") ++failed;
    if (failed) {
        std::cout << failed << " audit(s) failed\n";
        return 1;
    }
    std::cout << "all audits passed (" << run.audits.size() << ")\n";
    return 0;
}

int cmd_reproduce_figures(const CommonOpts& opt) {
    const ortk::ExperimentConfig cfg = load_config(opt);
    const ortk::RunOutputs run = run_pipeline(opt, cfg);
    for (const auto& name : run.report["artifacts"])
        std::cout << (std::filesystem::path(cfg.output_dir) / name.get<std::string>()).string()
                  << "\n";
    return 0;
}

int cmd_ou_check(double dx, double dt, unsigned levels, double tol, double ratio_min) {
    std::vector<std::pair<double, double>> steps;
    for (unsigned k = 0; k < levels; ++k)
        steps.emplace_back(dx / static_cast<double>(1u << k), dt / static_cast<double>(1u << k));
    const ortk::OUStudy study = ortk::ou_oracle_suite(steps);
    for (std::size_t k = 0; k < study.levels.size(); ++k) {
        const ortk::OULevel& lv = study.levels[k];
        std::cout << "dx " << lv.dx << "  dt " << lv.dt << "  L1 error " << lv.l1_error;
        if (k > 0) std::cout << "  reduction x" << study.ratios[k - 1];
        std::cout << "\n";
    }
    if (study.levels.front().l1_error > tol)
        throw ortk::AuditError("base-level L1 error " +
                               std::to_string(study.levels.front().l1_error) + " exceeds " +
                               std::to_string(tol));
    if (!study.ratios.empty() && study.min_ratio < ratio_min)
        throw ortk::AuditError("error reduction factor " + std::to_string(study.min_ratio) +
                               " below " + std::to_string(ratio_min));
    std::cout << "ou-check passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"operator-based response toolkit for 1-D gradient diffusions"};
    app.set_version_flag("--version", std::string("ortk ") + ortk::tool_version +
                                          " (kernel cache format v" +
                                          std::to_string(ortk::kernel_cache_version) + ")");
    app.require_subcommand(1);

    CommonOpts bk, inv, optz, ver, fig;
    add_common(app.add_subcommand("build-kernel",
                                  "build the transfer kernel (or load it from cache)"),
               bk);
    add_common(app.add_subcommand("invariant", "compute the invariant density and write f0.csv"),
               inv);
    add_common(app.add_subcommand("optimize",
                                  "full pipeline: optimal perturbation, response, delta study"),
               optz);
    add_common(app.add_subcommand("verify", "run the pipeline and report every audit"), ver);
    add_common(app.add_subcommand("reproduce-figures", "write the figure CSV set and report"),
               fig);

    double ou_dx = 1e-2, ou_dt = 1e-2, ou_tol = 5e-2, ou_ratio = 1.5;
    unsigned ou_levels = 2;
    CLI::App* ou = app.add_subcommand("ou-check",
                                      "compare the solver against the closed-form OU density");
    ou->add_option("--dx", ou_dx, "base spatial step")->check(CLI::PositiveNumber);
    ou->add_option("--dt", ou_dt, "base time step")->check(CLI::PositiveNumber);
    ou->add_option("--levels", ou_levels, "number of halvings to test")
        ->check(CLI::Range(1u, 6u));
    ou->add_option("--tol", ou_tol, "L1 tolerance at the base level");
    ou->add_option("--ratio", ou_ratio, "required error reduction per halving");

    try {
        app.parse(argc, argv);
        const std::string sub = app.get_subcommands().front()->get_name();
        if (sub == "build-kernel") return cmd_build_kernel(bk);
        if (sub == "invariant") return cmd_invariant(inv);
        if (sub == "optimize") return cmd_optimize(optz);
        if (sub == "verify") return cmd_verify(ver);
        if (sub == "reproduce-figures") return cmd_reproduce_figures(fig);
        if (sub == "ou-check") return cmd_ou_check(ou_dx, ou_dt, ou_levels, ou_tol, ou_ratio);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;              // bad flags are configuration errors
    } catch (const ortk::AuditError& e) {
        std::cerr << "[ortk][audit] " << e.what() << "\n";
        return 1;
    } catch (const ortk::ConfigError& e) {
        std::cerr << "[ortk][config] " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "[ortk][error] " << e.what() << "\n";
        return 3;
    }
}
