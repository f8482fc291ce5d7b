#pragma once

#include <functional>

#include "tlab/netlab/snapshot.hpp"
#include "tlab/probes/series.hpp"

namespace tlab::probes {

/// For each partition group: revert that group to its initial weights, score
/// the network with evaluate, then put the trained weights back. The network
/// ends in its trained state; series.baseline holds the no-restore score.
LayerSeries reinit_robustness(netlab::ProbeableNetwork& net,
                              const netlab::WeightSnapshot& initial,
                              const std::function<double(netlab::ProbeableNetwork&)>& evaluate);

/// Per group: l2 norm of the weight delta divided by the group's learnable
/// element count. Norm running statistics are excluded.
LayerSeries l2_drift(const netlab::WeightSnapshot& initial, const netlab::WeightSnapshot& final_snap,
                     const netlab::ModulePartition& partition);

} // namespace tlab::probes
