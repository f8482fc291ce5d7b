#include "tlab/probes/series.hpp"

#include "tlab/error.hpp"

namespace tlab::probes {

std::string to_string(SeriesKind k) {
    switch (k) {
        case SeriesKind::knn_score: return "knn_score";
        case SeriesKind::robustness: return "robustness";
        case SeriesKind::l2_drift: return "l2_drift";
        default: return "att_distance";
    }
}

LayerSeries aggregate_series(std::span<const LayerSeries> runs) {
    if (runs.empty()) throw DataError("aggregate_series: no runs");
    LayerSeries out = runs[0];
    const std::size_t n_points = out.points.size();
    const double n = (double)runs.size();
    for (const auto& r : runs)
        if (r.points.size() != n_points || r.kind != out.kind)
            throw ShapeError("aggregate_series: incompatible series");

    for (std::size_t i = 0; i < n_points; ++i) {
        double mean = 0.0;
        for (const auto& r : runs) mean += r.points[i].value;
        mean /= n;
        double var = 0.0;
        for (const auto& r : runs) {
            const double d = r.points[i].value - mean;
            var += d * d;
        }
        // sample sd / sqrt(n); zero for a single run
        const double stderr_v = runs.size() > 1 ? std::sqrt(var / (n - 1.0)) / std::sqrt(n) : 0.0;
        out.points[i].value = mean;
        out.points[i].stderr_ = stderr_v;
    }
    out.meta["runs"] = std::to_string(runs.size());
    return out;
}

} // namespace tlab::probes
