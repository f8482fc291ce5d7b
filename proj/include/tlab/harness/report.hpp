#pragma once

#include <string>

namespace tlab::harness {

struct ReportSpec {
    bool per_panel_normalization = false;  // reuse-share colors per model panel
};

/// Builds tables and plots from a results directory produced by run_matrix:
/// runs.csv (column contract: run_id,family,capacity,init_kind,n,dataset,seed,
/// metric,score,best_iter,wall_time), summary.csv with "mean +/- std"
/// (population convention), gain/share table and dot plot, WT-ST sweep and
/// convergence tables/plots, per-layer probe plots, CKA heatmaps. Every
/// plotted number also lands in a CSV. Missing cells yield a partial report
/// with an explicit gap list (gaps.csv).
void report(const std::string& results_dir, const std::string& out_dir,
            const ReportSpec& spec = {});

} // namespace tlab::harness
