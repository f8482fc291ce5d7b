#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tlab/netlab/network.hpp"

namespace tlab::netlab {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

enum class SnapshotTag { initial, best, pretrained };

std::string to_string(SnapshotTag t);
SnapshotTag tag_from_string(const std::string& s);

/// Immutable deep copy of every learnable parameter (and norm running buffer)
/// of a network at one instant.
struct WeightSnapshot {
    std::string arch_id;
    ArchSpec spec;
    SnapshotTag tag = SnapshotTag::initial;
    std::vector<NamedTensor> params;   // forward order
    std::vector<NamedTensor> buffers;  // restored on load, never probed
    std::int64_t created_at = 0;       // informational; not part of the file format

    const Tensor* find_param(const std::string& name) const;
    const Tensor* find_buffer(const std::string& name) const;
};

WeightSnapshot snapshot_weights(ProbeableNetwork& net, SnapshotTag tag);

void restore_all(ProbeableNetwork& net, const WeightSnapshot& snap);

/// Restores exactly the parameters (and buffers) owned by one partition group;
/// everything else is untouched. "head" addresses the head group.
void restore_module(ProbeableNetwork& net, const WeightSnapshot& snap,
                    const std::string& group_id);

bool network_equals_snapshot(ProbeableNetwork& net, const WeightSnapshot& snap);

/// Checkpoint = <base>.json manifest + <base>.bin blob of little-endian float32
/// tensors in manifest order. Round trips are bit-exact.
void save_checkpoint(const WeightSnapshot& snap, const std::string& base_path);
WeightSnapshot load_checkpoint(const std::string& base_path);

std::unique_ptr<ProbeableNetwork> network_from_snapshot(const WeightSnapshot& snap);

} // namespace tlab::netlab
