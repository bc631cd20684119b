// Smallest complete use of the pipeline: run the stock double-well experiment
// at the coarse profile and print the headline numbers.  Artifacts (figure
// CSVs and report.json) land in ./quickstart_out.

#include <cstdio>

#include "ortk/experiment.hpp"

int main() {
    ortk::ExperimentConfig cfg = ortk::parse_config_text("", {});
    ortk::RunOptions opts;
    opts.output_dir = "quickstart_out";

    const ortk::RunOutputs run = ortk::run_experiment(cfg, opts);

    std::printf("grid: %zu nodes on [-%g, %g], dx = %g\n", run.grid.node_count(),
                run.grid.half_width, run.grid.half_width, run.grid.spacing());
    std::printf("invariant density: %zu power iterations, eigenvalue %.12f\n",
                run.f0_diag.iterations, run.f0_diag.eigenvalue);
    std::printf("spectral gap estimate: %.6f\n", run.gap.value);
    std::printf("basis size: %zu, optimal response rate ||G|| = %.12f\n", run.basis.size(),
                run.objective);
    std::printf("E[phi] under f0: %.12f\n", run.phi_f0);
    for (const ortk::DeltaRow& row : run.delta_rows) {
        std::printf("f_%g maxima:", row.delta);
        for (const double p : row.peaks) std::printf(" %+.3f", p);
        std::printf("\n");
    }
    std::printf("artifacts written to quickstart_out/\n");
    return 0;
}
