#pragma once

#include <memory>

#include "tlab/data.hpp"
#include "tlab/netlab/network.hpp"

namespace tlab::harness {

/// Penultimate-feature embeddings for domain-distance measurement: pooled
/// final-stage features for CNNs, the cls embedding after the final norm for
/// ViTs. (n, d) rows over all samples.
Tensor fid_embeddings(netlab::ProbeableNetwork& net, const Tensor& images, int batch_size = 128);

/// Builds a network around a (typically pretrained, head-stripped) checkpoint
/// for use as the distance embedder.
std::unique_ptr<netlab::ProbeableNetwork> load_embedder(const std::string& ckpt_base);

/// Frechet distance between two datasets under the given embedder.
double dataset_distance(const Dataset& a, const Dataset& b, netlab::ProbeableNetwork& embedder);

} // namespace tlab::harness
