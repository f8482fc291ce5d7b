#include "tlab/probes/knn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "tlab/error.hpp"

namespace tlab::probes {

using netlab::ActivationBatch;
using netlab::CaptureResult;
using netlab::ForwardOptions;
using netlab::Layout;
using netlab::ProbeableNetwork;

namespace {

// rows L2-normalized in double precision; zero rows are a normalization error
std::vector<double> normalize_rows(const Tensor& emb) {
    const int n = emb.dim(0), p = emb.dim(1);
    std::vector<double> out((std::size_t)n * p);
    for (int i = 0; i < n; ++i) {
        double norm = 0.0;
        const float* row = emb.ptr() + (std::size_t)i * p;
        for (int j = 0; j < p; ++j) {
            if (!std::isfinite(row[j])) throw NumericError("knn: non-finite embedding");
            norm += (double)row[j] * row[j];
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) throw NumericError("knn: zero-norm embedding");
        for (int j = 0; j < p; ++j) out[(std::size_t)i * p + j] = row[j] / norm;
    }
    return out;
}

} // namespace

KnnPrediction knn_predict(const Tensor& train_emb, const std::vector<int>& train_labels,
                          const Tensor& test_emb, int class_count, int k) {
    if (train_emb.rank() != 2 || test_emb.rank() != 2 || train_emb.dim(1) != test_emb.dim(1))
        throw ShapeError("knn: embedding shapes incompatible");
    const int n_train = train_emb.dim(0), n_test = test_emb.dim(0), p = train_emb.dim(1);
    if ((int)train_labels.size() != n_train) throw ShapeError("knn: train label count mismatch");
    if (k < 1) throw ConfigError("knn: k must be >= 1");
    const int eff_k = std::min(k, n_train);

    const std::vector<double> tr = normalize_rows(train_emb);
    const std::vector<double> te = normalize_rows(test_emb);

    KnnPrediction out;
    out.preds.resize(n_test);
    out.class_scores.assign(n_test, std::vector<double>(class_count, 0.0));

    std::vector<double> sims(n_train);
    std::vector<int> order(n_train);
    for (int q = 0; q < n_test; ++q) {
        const double* qa = te.data() + (std::size_t)q * p;
        for (int t = 0; t < n_train; ++t) {
            const double* ta = tr.data() + (std::size_t)t * p;
            double acc = 0.0;
            for (int j = 0; j < p; ++j) acc += qa[j] * ta[j];
            sims[t] = acc;
        }
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + eff_k, order.end(),
                          [&](int a, int b) {
                              if (sims[a] != sims[b]) return sims[a] > sims[b];
                              return a < b;
                          });
        std::vector<int> votes(class_count, 0);
        auto& score_row = out.class_scores[q];
        for (int i = 0; i < eff_k; ++i) {
            const int cls = train_labels[order[i]];
            if (cls < 0 || cls >= class_count) throw DataError("knn: label out of range");
            votes[cls] += 1;
            score_row[cls] += sims[order[i]];
        }
        int best = 0;
        for (int c = 1; c < class_count; ++c) {
            if (votes[c] > votes[best] ||
                (votes[c] == votes[best] && score_row[c] > score_row[best]))
                best = c;  // lower index wins remaining ties by iteration order
        }
        out.preds[q] = best;
    }
    return out;
}

double knn_probe(const Tensor& train_emb, const std::vector<int>& train_labels,
                 const Tensor& test_emb, const std::vector<int>& test_labels, int class_count,
                 const std::string& metric_id, int k) {
    KnnPrediction pred = knn_predict(train_emb, train_labels, test_emb, class_count, k);
    metrics::PredictionSet ps;
    ps.labels = test_labels;
    ps.hard_preds = pred.preds;
    ps.scores = pred.class_scores;
    ps.class_count = class_count;
    return metrics::metric_by_id(metric_id, ps);
}

std::string to_string(EmbedMode m) {
    switch (m) {
        case EmbedMode::gap: return "gap";
        case EmbedMode::cls: return "cls";
        case EmbedMode::spatial: return "spatial";
        default: return "cls_plus_spatial";
    }
}

EmbedMode embed_mode_from_string(const std::string& s) {
    if (s == "gap") return EmbedMode::gap;
    if (s == "cls") return EmbedMode::cls;
    if (s == "spatial") return EmbedMode::spatial;
    if (s == "cls_plus_spatial") return EmbedMode::cls_plus_spatial;
    throw ConfigError("unknown embed mode: " + s);
}

Tensor embed_activation(const ActivationBatch& ab, EmbedMode mode) {
    const int b = ab.batch();
    if (mode == EmbedMode::gap) {
        if (ab.layout != Layout::spatial_map)
            throw ConfigError("embed mode gap requires a spatial tap");
        const int c = ab.sample_shape[0];
        const std::size_t per = (std::size_t)ab.sample_shape[1] * ab.sample_shape[2];
        Tensor out({b, c});
        for (int s = 0; s < b; ++s)
            for (int ch = 0; ch < c; ++ch) {
                const float* src = ab.values.ptr() + ((std::size_t)s * c + ch) * per;
                double acc = 0.0;
                for (std::size_t i = 0; i < per; ++i) acc += src[i];
                out[(std::size_t)s * c + ch] = (float)(acc / (double)per);
            }
        return out;
    }
    if (ab.layout != Layout::token_seq || ab.cls_index < 0)
        throw ConfigError("embed mode " + to_string(mode) + " requires a token tap with cls");
    const int t = ab.sample_shape[0], d = ab.sample_shape[1];
    auto cls_of = [&](int s, float* dst) {
        const float* src = ab.values.ptr() + ((std::size_t)s * t + ab.cls_index) * d;
        std::copy(src, src + d, dst);
    };
    auto spatial_of = [&](int s, float* dst) {
        std::vector<double> acc(d, 0.0);
        int count = 0;
        for (int tok = 0; tok < t; ++tok) {
            if (tok == ab.cls_index) continue;
            const float* src = ab.values.ptr() + ((std::size_t)s * t + tok) * d;
            for (int j = 0; j < d; ++j) acc[j] += src[j];
            ++count;
        }
        for (int j = 0; j < d; ++j) dst[j] = (float)(acc[j] / count);
    };
    if (mode == EmbedMode::cls) {
        Tensor out({b, d});
        for (int s = 0; s < b; ++s) cls_of(s, out.ptr() + (std::size_t)s * d);
        return out;
    }
    if (mode == EmbedMode::spatial) {
        Tensor out({b, d});
        for (int s = 0; s < b; ++s) spatial_of(s, out.ptr() + (std::size_t)s * d);
        return out;
    }
    Tensor out({b, 2 * d});
    for (int s = 0; s < b; ++s) {
        cls_of(s, out.ptr() + (std::size_t)s * 2 * d);
        spatial_of(s, out.ptr() + (std::size_t)s * 2 * d + d);
    }
    return out;
}

namespace {

// capture embeddings for every requested tap over a whole split, batched
std::vector<Tensor> embed_split(ProbeableNetwork& net, const Tensor& images,
                                const std::vector<std::string>& taps, EmbedMode mode,
                                int capture_batch) {
    const int total = images.dim(0);
    const int ch = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::vector<Tensor> embeds(taps.size());
    for (int start = 0; start < total; start += capture_batch) {
        const int n = std::min(capture_batch, total - start);
        Tensor batch({n, ch, h, w});
        std::copy(images.ptr() + (std::size_t)start * ch * h * w,
                  images.ptr() + (std::size_t)(start + n) * ch * h * w, batch.ptr());
        ForwardOptions opt;
        opt.taps = &taps;
        CaptureResult cap;
        (void)net.forward(batch, opt, &cap);
        for (std::size_t ti = 0; ti < taps.size(); ++ti) {
            const ActivationBatch* found = nullptr;
            for (const auto& ab : cap.taps)
                if (ab.tap_id == taps[ti]) found = &ab;
            if (!found) throw LookupError("layerwise_knn: tap not captured: " + taps[ti]);
            Tensor emb = embed_activation(*found, mode);
            if (embeds[ti].numel() == 0) {
                embeds[ti] = Tensor({total, emb.dim(1)});
            }
            std::copy(emb.ptr(), emb.ptr() + emb.numel(),
                      embeds[ti].ptr() + (std::size_t)start * emb.dim(1));
        }
    }
    return embeds;
}

} // namespace

LayerSeries layerwise_knn(ProbeableNetwork& net, const Tensor& train_images,
                          const std::vector<int>& train_labels, const Tensor& test_images,
                          const std::vector<int>& test_labels, int class_count,
                          const std::string& metric_id, EmbedMode mode,
                          const std::vector<std::string>& taps, int k, int capture_batch) {
    if (train_images.dim(0) == 0 || test_images.dim(0) == 0)
        throw DataError("layerwise_knn: empty split");
    const std::vector<Tensor> train_emb = embed_split(net, train_images, taps, mode, capture_batch);
    const std::vector<Tensor> test_emb = embed_split(net, test_images, taps, mode, capture_batch);

    LayerSeries series;
    series.kind = SeriesKind::knn_score;
    series.meta["vote"] = "majority, ties by summed similarity then lower class index";
    series.meta["embed_mode"] = to_string(mode);
    series.meta["k"] = std::to_string(k);
    for (std::size_t ti = 0; ti < taps.size(); ++ti) {
        const double score = knn_probe(train_emb[ti], train_labels, test_emb[ti], test_labels,
                                       class_count, metric_id, k);
        series.points.push_back({taps[ti], score, 0.0});
    }
    return series;
}

} // namespace tlab::probes
