#include "tlab/probes/resilience.hpp"

#include <cmath>

#include "tlab/error.hpp"

namespace tlab::probes {

using netlab::ModulePartition;
using netlab::ProbeableNetwork;
using netlab::WeightSnapshot;

LayerSeries reinit_robustness(ProbeableNetwork& net, const WeightSnapshot& initial,
                              const std::function<double(ProbeableNetwork&)>& evaluate) {
    if (initial.arch_id != net.arch_id())
        throw CompatError("reinit_robustness: snapshot arch mismatch");
    const ModulePartition& part = netlab::partition_of(net);
    const WeightSnapshot trained = netlab::snapshot_weights(net, netlab::SnapshotTag::best);

    LayerSeries series;
    series.kind = SeriesKind::robustness;
    series.baseline = evaluate(net);
    for (const auto& group : part.groups) {
        netlab::restore_module(net, initial, group.group_id);
        const double score = evaluate(net);
        netlab::restore_module(net, trained, group.group_id);
        series.points.push_back({group.group_id, score, 0.0});
    }
    return series;
}

namespace {

std::string module_of_name(const std::string& param_name) {
    const auto dot = param_name.find('.');
    return dot == std::string::npos ? param_name : param_name.substr(0, dot);
}

} // namespace

LayerSeries l2_drift(const WeightSnapshot& initial, const WeightSnapshot& final_snap,
                     const ModulePartition& partition) {
    if (initial.arch_id != final_snap.arch_id)
        throw CompatError("l2_drift: snapshots from different architectures");

    LayerSeries series;
    series.kind = SeriesKind::l2_drift;
    for (const auto& group : partition.groups) {
        double sq = 0.0;
        std::size_t count = 0;
        for (const auto& nt : initial.params) {
            const std::string mod = module_of_name(nt.name);
            bool in_group = false;
            for (const auto& m : group.module_ids)
                if (m == mod) in_group = true;
            if (!in_group) continue;
            const Tensor* fin = final_snap.find_param(nt.name);
            if (!fin || fin->shape != nt.tensor.shape)
                throw CompatError("l2_drift: tensor mismatch for " + nt.name);
            for (std::size_t i = 0; i < nt.tensor.numel(); ++i) {
                const double d = (double)fin->data[i] - nt.tensor.data[i];
                sq += d * d;
            }
            count += nt.tensor.numel();
        }
        if (count == 0) throw DataError("l2_drift: group without learnable weights: " +
                                        group.group_id);
        series.points.push_back({group.group_id, std::sqrt(sq) / (double)count, 0.0});
    }
    return series;
}

} // namespace tlab::probes
