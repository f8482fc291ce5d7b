#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tlab/harness/dataset.hpp"
#include "tlab/initkit/init.hpp"
#include "tlab/netlab/network.hpp"
#include "tlab/trainbench/train.hpp"

namespace tlab::harness {

struct DatasetEntry {
    std::string id;
    nlohmann::json source;  // {"generator": {...}} or {"path": "..."}
    std::string metric_id;
    std::uint64_t split_seed = 0;
};

struct ModelEntry {
    netlab::Family family;
    netlab::Capacity capacity;
    int trunc_blocks = 0;  // ViT-only variant produced through truncation

    std::string key() const;
};

struct SchemeEntry {
    initkit::InitKind kind = initkit::InitKind::RI;
    std::vector<int> depths;  // WT_ST only; empty means "all depths 0..groups"
};

/// Parsed, validated experiment configuration. Unknown keys are rejected.
struct ExperimentConfig {
    int version = 1;
    std::string output_dir;
    std::vector<DatasetEntry> datasets;
    std::vector<ModelEntry> models;
    std::vector<SchemeEntry> schemes;
    std::vector<std::uint64_t> seeds;  // defaults to {0..4}
    trainbench::TrainConfig train;
    std::vector<std::string> probes;  // subset of cka/knn/reinit/l2/attdist
    std::map<std::string, std::string> source_checkpoints;  // model key -> ckpt base path
    int input_hw = 32;

    static ExperimentConfig parse(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
};

} // namespace tlab::harness
