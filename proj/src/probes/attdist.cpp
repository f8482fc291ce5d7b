#include "tlab/probes/attdist.hpp"

#include <cmath>

#include "tlab/error.hpp"

namespace tlab::probes {

LayerSeries mean_attended_distance(const std::vector<Tensor>& per_layer_maps, int grid_h,
                                   int grid_w, bool has_cls) {
    if (per_layer_maps.empty()) throw DataError("mean_attended_distance: no attention maps");
    const int spatial = grid_h * grid_w;
    const int expected_tokens = spatial + (has_cls ? 1 : 0);
    const int cls = has_cls ? 0 : -1;

    // pairwise grid distances between spatial tokens, in patch units
    std::vector<double> dist((std::size_t)spatial * spatial);
    for (int i = 0; i < spatial; ++i)
        for (int j = 0; j < spatial; ++j) {
            const double dr = (double)(i / grid_w) - (j / grid_w);
            const double dc = (double)(i % grid_w) - (j % grid_w);
            dist[(std::size_t)i * spatial + j] = std::sqrt(dr * dr + dc * dc);
        }

    LayerSeries series;
    series.kind = SeriesKind::att_distance;
    series.meta["query_weighting"] = "uniform";
    series.meta["cls_handling"] = "excluded, attention mass dropped";

    for (std::size_t layer = 0; layer < per_layer_maps.size(); ++layer) {
        const Tensor& maps = per_layer_maps[layer];
        if (maps.rank() != 4 || maps.dim(2) != maps.dim(3))
            throw ShapeError("mean_attended_distance: maps must be (B,H,T,T)");
        const int b = maps.dim(0), heads = maps.dim(1), t = maps.dim(2);
        if (t != expected_tokens)
            throw ShapeError("mean_attended_distance: token count " + std::to_string(t) +
                             " does not match grid " + std::to_string(grid_h) + "x" +
                             std::to_string(grid_w));

        double total = 0.0;
        long queries = 0;
        for (int s = 0; s < b; ++s)
            for (int hd = 0; hd < heads; ++hd) {
                const float* head_map = maps.ptr() + ((std::size_t)s * heads + hd) * t * t;
                for (int q = 0; q < t; ++q) {
                    const float* row = head_map + (std::size_t)q * t;
                    double row_sum = 0.0;
                    for (int j = 0; j < t; ++j) row_sum += row[j];
                    if (std::fabs(row_sum - 1.0) > 1e-5)
                        throw NumericError("mean_attended_distance: attention row not stochastic");
                    if (q == cls) continue;
                    const int qs = has_cls ? q - 1 : q;
                    double acc = 0.0;
                    for (int j = 0; j < t; ++j) {
                        if (j == cls) continue;
                        const int js = has_cls ? j - 1 : j;
                        acc += (double)row[j] * dist[(std::size_t)qs * spatial + js];
                    }
                    total += acc;
                    ++queries;
                }
            }
        series.points.push_back({"block" + std::to_string(layer + 1), total / (double)queries,
                                 0.0});
    }
    return series;
}

} // namespace tlab::probes
