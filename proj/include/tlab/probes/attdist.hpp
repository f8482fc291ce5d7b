#pragma once

#include <vector>

#include "tlab/tensor.hpp"
#include "tlab/probes/series.hpp"

namespace tlab::probes {

/// Mean attended distance per layer, in patch widths: for each query token the
/// attention-weighted Euclidean distance to the other tokens on the patch
/// grid, averaged over batch, heads and queries. The cls token (index 0 when
/// has_cls) sits off the grid and is excluded from both query and key sets;
/// its attention mass is dropped, not renormalized.
/// Maps are (B, H, T, T) per layer; full rows must sum to 1 within 1e-5.
LayerSeries mean_attended_distance(const std::vector<Tensor>& per_layer_maps, int grid_h,
                                   int grid_w, bool has_cls);

} // namespace tlab::probes
