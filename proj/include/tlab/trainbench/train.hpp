#pragma once

#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "tlab/data.hpp"
#include "tlab/initkit/init.hpp"
#include "tlab/metrics/metrics.hpp"
#include "tlab/netlab/network.hpp"
#include "tlab/netlab/snapshot.hpp"
#include "tlab/rng.hpp"

namespace tlab::trainbench {

struct Augmentation {
    bool hflip = true;
    bool vflip = true;
    float color_jitter = 0.2f;  // per-channel multiplicative range
    int crop_pad = 4;           // random crop after zero padding
};

enum class OptimizerKind { adaptive_cnn, adaptive_decoupled_wd };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
    double base_lr = 1e-4;
    double ri_lr = 3e-4;          // used when the init scheme is RI
    int warmup_iters = 1000;
    double plateau_factor = 0.1;
    int plateau_patience = 500;   // iterations without improvement before a decay
    double min_lr = 1e-6;
    int batch_size = 64;
    long max_iters = 20000;
    std::optional<OptimizerKind> optimizer_kind;  // default follows the family
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    Augmentation aug;
    bool augment = true;
    int val_every = 100;
    double improve_threshold = 1e-4;

    void validate() const;
    int patience_evals() const;  // plateau_patience translated to eval counts
};

struct TracePoint {
    long iteration = 0;
    double metric = 0.0;
    double lr = 0.0;
};

struct RunRecord {
    std::string run_id;
    netlab::ArchSpec arch;
    initkit::InitScheme scheme;
    std::string dataset_id;
    std::string metric_id;
    std::string dataset_source_desc;  // generator spec / path; lets probes rebuild the data
    std::uint64_t dataset_split_seed = 0;
    TrainConfig config;
    std::vector<TracePoint> validation_trace;
    long best_iteration = 0;
    double best_val_metric = 0.0;
    netlab::WeightSnapshot initial_ckpt;
    netlab::WeightSnapshot best_ckpt;
    double final_test_score = 0.0;
    double wall_time_sec = 0.0;  // informational; persisted outside the manifest
    std::string execution = "deterministic";
    std::string status = "complete";
};

/// Normalized (and optionally augmented) batch ready for the network.
Tensor assemble_batch(const Dataset& data, const std::vector<int>& indices, bool augment,
                      const Augmentation& aug, Rng* rng);

/// Deterministic score of the network on a dataset split under the dataset's
/// metric (or an explicit metric id).
double evaluate(netlab::ProbeableNetwork& net, const Dataset& data,
                const std::vector<int>& split_indices, const std::string& metric_id,
                int batch_size = 128);

/// Collected hard predictions and scores over a split, for metric dispatch.
metrics::PredictionSet collect_predictions(netlab::ProbeableNetwork& net, const Dataset& data,
                                           const std::vector<int>& split_indices,
                                           int batch_size = 128);

/// Fine-tunes the (already initialized) network: warmup then plateau-decay
/// schedule, best-checkpoint tracking, full validation trace.
RunRecord fine_tune(netlab::ProbeableNetwork& net, const Dataset& data, const TrainConfig& cfg,
                    const initkit::InitScheme& scheme);

/// RI-initializes, trains on the source task and returns the best checkpoint
/// with the source head stripped, tagged pretrained.
netlab::WeightSnapshot pretrain_source(const netlab::ArchSpec& arch_spec, const Dataset& source,
                                       const TrainConfig& cfg);

/// Iterations to the best recorded validation metric (first occurrence on ties).
long convergence_iters(const RunRecord& record);

/// Convergence speedup of `record` relative to the depth-0 baseline record.
double convergence_speedup(const RunRecord& record, const RunRecord& baseline);

/// Persists manifest + trace CSV + both checkpoints (+ timing sidecar).
void save_run_record(const RunRecord& rec, const std::string& dir);
RunRecord load_run_record(const std::string& dir);

} // namespace tlab::trainbench
