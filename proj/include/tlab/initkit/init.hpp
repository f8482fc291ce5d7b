#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tlab/netlab/network.hpp"
#include "tlab/netlab/snapshot.hpp"

namespace tlab::initkit {

using netlab::ProbeableNetwork;
using netlab::WeightSnapshot;

/// Per-tensor first and second moments of a source snapshot (population
/// convention), one entry per learnable tensor.
struct TensorStats {
    std::string name;
    double mu = 0.0;
    double sigma = 0.0;  // >= 0
    long count = 0;
};

struct LayerStats {
    std::string arch_id;
    std::vector<TensorStats> entries;

    const TensorStats* find(const std::string& name) const;
};

enum class InitKind { RI, ST, WT, WT_ST };

std::string to_string(InitKind k);
InitKind init_kind_from_string(const std::string& s);

/// Declarative initialization recipe. WT_ST carries the transfer depth n;
/// n = 0 collapses to ST and n = groups-count to WT.
struct InitScheme {
    InitKind kind = InitKind::RI;
    int transfer_depth_n = 0;
    std::string source_checkpoint;  // empty for RI
    std::uint64_t seed = 0;

    InitScheme canonical(int groups_count) const;
    /// "RI", "ST", "WT" or "WT-ST-<n>"
    std::string label() const;
};

LayerStats weight_stats(const WeightSnapshot& snapshot);

/// Kaiming fan-in normal for weights, zeros for biases, identity for norm
/// layers. Deterministic in seed; draws are keyed per tensor name.
void init_random(ProbeableNetwork& net, std::uint64_t seed);

/// Every non-head learnable tensor sampled i.i.d. Normal(mu_i, sigma_i^2);
/// sigma = 0 becomes a constant fill. Head re-initialized per RI. Norm running
/// statistics reset to defaults.
void init_stats_transfer(ProbeableNetwork& net, const LayerStats& stats, std::uint64_t seed);

/// All non-head tensors (and buffers) copied bitwise from the snapshot; head
/// re-initialized per RI. The snapshot may be deeper than the network, so a
/// full-depth checkpoint loads into a truncated ViT.
void init_weight_transfer(ProbeableNetwork& net, const WeightSnapshot& snapshot,
                          std::uint64_t seed);

/// Prefix weight transfer: groups 1..n copied bitwise, the remaining groups
/// stats-sampled, head per RI.
void build_wt_st(ProbeableNetwork& net, const WeightSnapshot& snapshot, int n,
                 std::uint64_t seed);

/// Dispatch on scheme.kind; `source` may be null only for RI.
void apply_scheme(ProbeableNetwork& net, const InitScheme& scheme, const WeightSnapshot* source);

} // namespace tlab::initkit
