#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "tlab/data.hpp"

namespace tlab::harness {

/// Parameters of the procedural shape corpus. Ten shape classes drawn on a
/// textured background; `shift` in [0,1] remixes colors and blends in a
/// foreign texture, moving the corpus away from the shift-0 source domain
/// without touching the shape semantics.
struct GeneratorSpec {
    std::string name = "shapes10";  // registered generator
    int size = 1000;
    int image = 32;
    double shift = 0.0;
    std::uint64_t gen_seed = 0;

    nlohmann::json to_json() const;
    static GeneratorSpec from_json(const nlohmann::json& j);
};

struct DatasetManifest {
    std::string id;
    std::string source;  // "synthetic" | "directory"
    int class_count = 0;
    int sample_count = 0;
    SplitIndices splits;
    std::string metric_id;
    std::optional<double> fid_to_source;
    std::uint64_t split_seed = 0;
    nlohmann::json source_spec;  // generator parameters or directory path

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

DatasetManifest manifest_of(const Dataset& data, const std::string& source_kind);

/// Renders one sample of the shape corpus; exposed for tests.
void render_shapes10_sample(float* img, int image, int cls, double shift, std::uint64_t gen_seed,
                            int index);

/// Deterministic synthetic corpus with 80/10/10 train/test/val splits.
Dataset make_synthetic(const GeneratorSpec& spec, std::uint64_t split_seed,
                       const std::string& metric_id, const std::string& id);

/// Ingests a directory: one subdirectory per class of .ppm images, or a
/// labels.csv (filename,label) beside the files. Writes dataset_manifest.json
/// beside the data.
Dataset ingest_directory(const std::string& path, std::uint64_t split_seed,
                         const std::string& metric_id, const std::string& id);

/// Dispatch on {"generator": {...}} or {"path": "..."} source specs.
Dataset ingest_dataset(const nlohmann::json& source_spec, std::uint64_t split_seed,
                       const std::string& metric_id, const std::string& id);

/// 80/10/10 deterministic split of n samples (train/test/val per the training
/// protocol), shuffled by split_seed.
SplitIndices make_splits(int n, std::uint64_t split_seed);

// minimal binary PPM (P6, maxval 255) image io
void write_ppm(const std::string& path, const float* chw, int c, int h, int w);
Tensor read_ppm(const std::string& path);  // (3,H,W) in [0,1]

} // namespace tlab::harness
