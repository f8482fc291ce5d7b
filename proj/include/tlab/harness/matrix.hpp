#pragma once

#include <string>
#include <vector>

#include "tlab/harness/config.hpp"

namespace tlab::harness {

struct CellStatus {
    std::string run_id;
    std::string model_key;
    std::string init_label;
    std::string dataset_id;
    std::uint64_t seed = 0;
    std::string status;  // complete | skipped | failed
    std::string error;
};

struct MatrixSummary {
    int executed = 0, skipped = 0, failed = 0;
    std::vector<CellStatus> cells;

    bool all_ok() const { return failed == 0; }
};

/// Executes every (model, init, dataset, seed) cell: initialize, fine-tune,
/// evaluate, run requested probes, persist. Completed cells are skipped by
/// content hash; failures are recorded and the matrix continues. More than one
/// worker runs independent cells concurrently (per-cell results stay
/// deterministic; the run records then say execution=parallel).
MatrixSummary run_matrix(const ExperimentConfig& cfg, int workers = 1);

/// Probe computation for a persisted run directory; appends rows to
/// probes.csv (and writes the CKA matrix file). Needs the dataset, which is
/// rebuilt from the run manifest.
void run_probe(const std::string& run_dir, const std::string& probe_kind);

/// Stable identity of one cell (content hash over arch, init scheme + source
/// checkpoint manifest, dataset manifest, train config and seed).
std::string cell_run_id(const ExperimentConfig& cfg, const ModelEntry& model,
                        const initkit::InitScheme& scheme, const DatasetManifest& manifest,
                        std::uint64_t seed);

} // namespace tlab::harness
