#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ortk/experiment.hpp"

using namespace ortk;

namespace {

const std::filesystem::path kOutDir =
    std::filesystem::temp_directory_path() / "ortk_experiment_test";

/* Full coarse-profile pipeline, run once and shared. */
const RunOutputs& coarse_run() {
    static const RunOutputs run = [] {
        std::filesystem::remove_all(kOutDir);
        const ExperimentConfig cfg = parse_config_text("", {"threads=1"});
        RunOptions opts;
        opts.output_dir = kOutDir;
        return run_experiment(cfg, opts);
    }();
    return run;
}

bool audit_passed(const RunOutputs& run, const std::string& name) {
    for (const Audit& a : run.audits)
        if (a.name == name) return a.status == "pass";
    return false;
}

}  // namespace

TEST_CASE("pipeline: perturbed density grows the predicted central peak") {
    const RunOutputs& run = coarse_run();
    REQUIRE(run.delta_rows.size() == 1);
    const DeltaRow& featured = run.delta_rows.front();
    REQUIRE(featured.delta == 0.5);
    const double tol = 2.0 * run.grid.spacing();

    // f0 keeps two maxima at +-1 ...
    const std::vector<double> base = peak_locations(run.f0, run.grid);
    REQUIRE(base.size() == 2);
    REQUIRE(std::abs(base[0] + 1.0) <= tol);
    REQUIRE(std::abs(base[1] - 1.0) <= tol);

    // ... while f_1/2 gains a third one at the observable's center
    REQUIRE(featured.peaks.size() == 3);
    REQUIRE(std::abs(featured.peaks[0] + 1.0) <= tol);
    REQUIRE(std::abs(featured.peaks[1]) <= tol);
    REQUIRE(std::abs(featured.peaks[2] - 1.0) <= tol);

    REQUIRE(symmetry_l1(featured.density, run.grid.spacing()) < 1e-4);
    REQUIRE(symmetry_l1(run.f0, run.grid.spacing()) < 1e-6);
}

TEST_CASE("pipeline: all audits pass on the symmetric experiment") {
    const RunOutputs& run = coarse_run();
    for (const Audit& a : run.audits) {
        INFO(a.name << " -> " << a.status << " (" << a.note << ")");
        REQUIRE(a.status != "fail");
    }
    for (const char* name :
         {"kernel_row_mass_band", "kernel_positivity", "f0_residual", "f0_symmetry",
          "f0_bimodal", "sub_markov_radius", "resolvent_rcond", "constraint_zero_mean",
          "representer_identity", "fdelta_central_peak", "fdelta_symmetry"})
        REQUIRE(audit_passed(run, name));
}

TEST_CASE("pipeline: symmetry empties half the coefficient table") {
    // even kernel, even f0, even phi: only elements even in x and even in y
    // can couple, so cs / sc / ss coefficients collapse to rounding noise
    const RunOutputs& run = coarse_run();
    double max_odd = 0.0, max_even = 0.0;
    for (std::size_t r = 0; r < run.basis.size(); ++r) {
        const double v = std::abs(run.coeffs.values[r]);
        if (run.basis[r].kind == WaveKind::cos_cos)
            max_even = std::max(max_even, v);
        else
            max_odd = std::max(max_odd, v);
    }
    REQUIRE(max_even > 0.1);
    REQUIRE(max_odd < 1e-10 * max_even);
}

TEST_CASE("pipeline: figure artifacts exist with the symmetric prefix") {
    const RunOutputs& run = coarse_run();
    REQUIRE(figure_prefix(run.cfg) == "fig3");
    for (const char* name : {"fig1a_kernel.csv", "fig1b_f0.csv", "fig3b_optimal_pert.csv",
                             "fig3c_perturbed_kernel.csv", "fig3d_densities.csv",
                             "report.json"})
        REQUIRE(std::filesystem::exists(kOutDir / name));
    const std::string head = read_text_file(kOutDir / "fig3d_densities.csv")
                                 .substr(0, 60);
    REQUIRE(head.find("x,f0,f_delta_0.5") == 0);
}

TEST_CASE("pipeline: report regenerates bit-identically apart from timings") {
    const RunOutputs& first = coarse_run();
    const ExperimentConfig cfg = parse_config_text("", {"threads=1"});
    RunOptions opts;
    opts.write_artifacts = false;
    const RunOutputs second = run_experiment(cfg, opts);
    auto a = report_without_timings(first.report);
    auto b = report_without_timings(second.report);
    a.erase("artifacts");            // the no-artifact rerun legitimately differs here
    b.erase("artifacts");
    REQUIRE(a.dump(2) == b.dump(2));
}

TEST_CASE("pipeline: delta zero is skipped with a note") {
    const RunOutputs& run = coarse_run();
    const ResponseStudy study = linear_response_convergence(run, {0.4, 0.0, 0.2});
    REQUIRE(study.rows.size() == 3);
    REQUIRE(study.rows[1].skipped);
    REQUIRE(study.rows[1].note.find("delta = 0") != std::string::npos);
    REQUIRE_FALSE(study.rows[0].skipped);
    // quotient errors shrink with delta (towards the scheme's saturation floor)
    REQUIRE(study.rows[2].l1_error < study.rows[0].l1_error);
    REQUIRE(study.rows[2].rate_error < study.rows[0].rate_error);
    REQUIRE(study.l1_monotone);
    REQUIRE(study.rate_monotone);
}

TEST_CASE("pipeline: sampled span elements never beat the assembled optimum") {
    const RunOutputs& run = coarse_run();
    const SamplingResult s = optimality_sampling(run, 100);
    REQUIRE(s.count == 100);
    REQUIRE(s.g_objective == Catch::Approx(run.coeffs.norm2()).epsilon(1e-10));
    REQUIRE(s.max_sampled <= s.g_objective + 1e-9);
    // a random unit direction overlaps g by ~1/sqrt(dim); the best of 100
    // draws comfortably clears that scale unless the sampler is broken
    REQUIRE(s.max_sampled > s.g_objective / std::sqrt(double(run.basis.size())));
}

TEST_CASE("pipeline: asymmetric observable variant") {
    const auto dir = std::filesystem::temp_directory_path() / "ortk_experiment_asym";
    std::filesystem::remove_all(dir);
    const ExperimentConfig cfg =
        parse_config_text("", {"threads=1", "observable_mean=-0.5", "I=12", "J=12"});
    REQUIRE(figure_prefix(cfg) == "fig4");
    RunOptions opts;
    opts.output_dir = dir;
    const RunOutputs run = run_experiment(cfg, opts);
    REQUIRE(std::filesystem::exists(dir / "fig4b_optimal_pert.csv"));
    REQUIRE(std::filesystem::exists(dir / "fig4d_densities.csv"));
    REQUIRE(run.objective > 0.0);
    // the perturbed density should no longer be symmetric: mass moves toward
    // the observable's center at y = -0.5
    const DeltaRow& featured = run.delta_rows.front();
    REQUIRE(symmetry_l1(featured.density, run.grid.spacing()) > 1e-3);
    double left = 0.0, right = 0.0;
    const QuadratureWeights w = simpson_weights(run.grid);
    for (std::size_t i = 0; i < featured.density.size(); ++i) {
        const double diff = featured.density[i] - run.f0[i];
        if (run.grid.node(i) < 0.0) left += w[i] * diff;
        else right += w[i] * diff;
    }
    REQUIRE(left > right);
    std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline: failing stage is named and still reported") {
    const auto dir = std::filesystem::temp_directory_path() / "ortk_experiment_fail";
    std::filesystem::remove_all(dir);
    // n = 100 is too coarse: the kernel dips below the positivity floor
    const ExperimentConfig cfg = parse_config_text("", {"threads=1", "n=100", "m=50"});
    RunOptions opts;
    opts.output_dir = dir;
    REQUIRE_THROWS_WITH(run_experiment(cfg, opts),
                        Catch::Matchers::ContainsSubstring("stage 'build_kernel'"));
    REQUIRE(std::filesystem::exists(dir / "report.json"));
    const auto rep = nlohmann::json::parse(read_text_file(dir / "report.json"));
    REQUIRE(rep.at("failed_stage") == "build_kernel");
    std::filesystem::remove_all(dir);
}

TEST_CASE("ou study meets the accuracy and order targets") {
    const OUStudy study = ou_oracle_suite({{1e-2, 1e-2}, {5e-3, 5e-3}});
    REQUIRE(study.levels.size() == 2);
    REQUIRE(study.levels[0].l1_error < 5e-2);
    REQUIRE(study.min_ratio > 1.5);
    REQUIRE_THROWS_AS(ou_oracle_suite({}), ConfigError);
    REQUIRE_THROWS_AS(ou_oracle_suite({{-1.0, 0.1}}), ConfigError);
}

TEST_CASE("cache-aware acquisition round-trips through obtain_kernel") {
    const auto dir = std::filesystem::temp_directory_path() / "ortk_obtain_test";
    std::filesystem::remove_all(dir);
    const ExperimentConfig cfg = parse_config_text("", {"threads=1"});
    bool from_cache = true;
    KernelBuildStats stats;
    const KernelMatrix fresh = obtain_kernel(cfg, dir, nullptr, &from_cache, &stats);
    REQUIRE_FALSE(from_cache);
    const KernelMatrix cached = obtain_kernel(cfg, dir, nullptr, &from_cache, &stats);
    REQUIRE(from_cache);
    REQUIRE(cached.data == fresh.data);      // cache round-trip is bit-exact
    // different config hashes to a different cache entry
    const ExperimentConfig other = parse_config_text("", {"threads=1", "eps=0.3"});
    REQUIRE(kernel_cache_name(cfg) != kernel_cache_name(other));
    std::filesystem::remove_all(dir);
}
