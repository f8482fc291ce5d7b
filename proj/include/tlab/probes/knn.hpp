#pragma once

#include <string>
#include <vector>

#include "tlab/metrics/metrics.hpp"
#include "tlab/netlab/network.hpp"
#include "tlab/probes/series.hpp"

namespace tlab::probes {

struct KnnPrediction {
    std::vector<int> preds;
    std::vector<std::vector<double>> class_scores;  // summed cosine similarity per class
};

/// Cosine-similarity k-NN vote over the training embeddings. Majority vote;
/// ties go to the class with larger summed similarity, then the lower index.
/// Effective k = min(k, train size).
KnnPrediction knn_predict(const Tensor& train_emb, const std::vector<int>& train_labels,
                          const Tensor& test_emb, int class_count, int k = 200);

/// Runs knn_predict and scores it with the dataset's metric.
double knn_probe(const Tensor& train_emb, const std::vector<int>& train_labels,
                 const Tensor& test_emb, const std::vector<int>& test_labels, int class_count,
                 const std::string& metric_id, int k = 200);

enum class EmbedMode { gap, cls, spatial, cls_plus_spatial };

std::string to_string(EmbedMode m);
EmbedMode embed_mode_from_string(const std::string& s);

/// Embedding of one captured activation batch: global average pool for spatial
/// maps; cls token, spatial-token mean, or their concatenation for token
/// sequences. Mode/layout mismatches are configuration errors.
Tensor embed_activation(const netlab::ActivationBatch& ab, EmbedMode mode);

/// k-NN score per tap in forward order. Activations are captured in inference
/// mode over both splits; fully deterministic.
LayerSeries layerwise_knn(netlab::ProbeableNetwork& net, const Tensor& train_images,
                          const std::vector<int>& train_labels, const Tensor& test_images,
                          const std::vector<int>& test_labels, int class_count,
                          const std::string& metric_id, EmbedMode mode,
                          const std::vector<std::string>& taps, int k = 200,
                          int capture_batch = 128);

} // namespace tlab::probes
