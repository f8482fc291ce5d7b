#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tlab/tensor.hpp"

namespace tlab {

struct SplitIndices {
    std::vector<int> train, val, test;
};

/// In-memory dataset: images in [0,1], dense integer labels, fixed 80/10/10
/// split membership. Built by the harness (synthetic generator or directory
/// ingestion) and consumed read-only by training and probes.
struct Dataset {
    std::string id;
    int class_count = 0;
    std::string metric_id;   // qkappa | recall_macro | auc
    Tensor images;           // (N, C, H, W)
    std::vector<int> labels; // length N
    SplitIndices splits;
    std::uint64_t split_seed = 0;
    std::string source_desc; // generator spec or directory path, for manifests

    int count() const { return images.shape.empty() ? 0 : images.dim(0); }

    /// (len(indices), C, H, W) copy of the selected samples.
    Tensor gather(const std::vector<int>& indices) const;
    std::vector<int> gather_labels(const std::vector<int>& indices) const;
};

} // namespace tlab
