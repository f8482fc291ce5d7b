#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tlab::probes {

enum class SeriesKind { knn_score, robustness, l2_drift, att_distance };

std::string to_string(SeriesKind k);

struct SeriesPoint {
    std::string id;      // tap or group id
    double value = 0.0;
    double stderr_ = 0.0;  // over repeats; 0 for a single run
};

/// One per-layer numeric series in forward order, plus provenance metadata.
struct LayerSeries {
    SeriesKind kind = SeriesKind::knn_score;
    std::vector<SeriesPoint> points;
    std::string context;                      // init label + dataset id
    std::map<std::string, std::string> meta;  // method flags, disclosed choices
    double baseline = std::nan("");           // robustness only: no-restore score
};

/// Point-wise mean and standard error across runs of the same probe.
LayerSeries aggregate_series(std::span<const LayerSeries> runs);

} // namespace tlab::probes
