#include "tlab/probes/cka.hpp"

#include <cmath>

#include "tlab/error.hpp"

namespace tlab::probes {

using netlab::ActivationBatch;
using netlab::CaptureResult;
using netlab::ForwardOptions;
using netlab::Layout;
using netlab::ProbeableNetwork;

double linear_cka(const Tensor& x, const Tensor& y) {
    if (x.rank() != 2 || y.rank() != 2) throw ShapeError("linear_cka: expects 2-D activations");
    const int n = x.dim(0);
    if (n != y.dim(0)) throw ShapeError("linear_cka: row counts differ");
    if (n < 2) throw DataError("linear_cka: need at least 2 samples");
    for (float v : x.data)
        if (!std::isfinite(v)) throw NumericError("linear_cka: non-finite entry in X");
    for (float v : y.data)
        if (!std::isfinite(v)) throw NumericError("linear_cka: non-finite entry in Y");

    // column-center, then work with the n x n centered Gram matrices; this is
    // the same quantity as the cross-covariance form without materializing p x p
    auto centered_gram = [n](const Tensor& t) {
        const int p = t.dim(1);
        std::vector<double> mean(p, 0.0);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < p; ++c) mean[c] += t[(std::size_t)r * p + c];
        for (auto& m : mean) m /= n;
        std::vector<double> xc((std::size_t)n * p);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < p; ++c)
                xc[(std::size_t)r * p + c] = t[(std::size_t)r * p + c] - mean[c];
        std::vector<double> gram((std::size_t)n * n);
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                double acc = 0.0;
                const double* a = xc.data() + (std::size_t)i * p;
                const double* b = xc.data() + (std::size_t)j * p;
                for (int c = 0; c < p; ++c) acc += a[c] * b[c];
                gram[(std::size_t)i * n + j] = acc;
                gram[(std::size_t)j * n + i] = acc;
            }
        return gram;
    };

    const std::vector<double> kc = centered_gram(x);
    const std::vector<double> lc = centered_gram(y);
    double cross = 0.0, kk = 0.0, ll = 0.0;
    for (std::size_t i = 0; i < kc.size(); ++i) {
        cross += kc[i] * lc[i];
        kk += kc[i] * kc[i];
        ll += lc[i] * lc[i];
    }
    if (kk <= 0.0 || ll <= 0.0)
        throw NumericError("linear_cka: degenerate input (zero variance)");
    return cross / (std::sqrt(kk) * std::sqrt(ll));
}

double hsic1(const std::vector<double>& gram_k, const std::vector<double>& gram_l, int n) {
    if (n < 4) throw EstimatorError("hsic1: unbiased estimator needs n >= 4");
    if (gram_k.size() != (std::size_t)n * n || gram_l.size() != (std::size_t)n * n)
        throw ShapeError("hsic1: gram size mismatch");
    double trace_kl = 0.0, sum_k = 0.0, sum_l = 0.0, one_kl_one = 0.0;
    std::vector<double> krow(n, 0.0), lrow(n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double kij = gram_k[(std::size_t)i * n + j];
            const double lij = gram_l[(std::size_t)i * n + j];
            trace_kl += kij * lij;
            sum_k += kij;
            sum_l += lij;
            krow[i] += kij;
            lrow[i] += lij;
        }
    }
    for (int i = 0; i < n; ++i) one_kl_one += krow[i] * lrow[i];
    const double nn = n;
    return (trace_kl + sum_k * sum_l / ((nn - 1.0) * (nn - 2.0)) -
            2.0 * one_kl_one / (nn - 2.0)) /
           (nn * (nn - 3.0));
}

std::vector<double> linear_gram(const Tensor& feats2d) {
    const int n = feats2d.dim(0), p = feats2d.dim(1);
    std::vector<double> gram((std::size_t)n * n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double acc = 0.0;
            const float* a = feats2d.ptr() + (std::size_t)i * p;
            const float* b = feats2d.ptr() + (std::size_t)j * p;
            for (int c = 0; c < p; ++c) acc += (double)a[c] * b[c];
            gram[(std::size_t)i * n + j] = acc;
            gram[(std::size_t)j * n + i] = acc;
        }
    return gram;
}

void MinibatchCka::add_batch(const Tensor& x, const Tensor& y,
                             const std::vector<std::int64_t>* ids_x,
                             const std::vector<std::int64_t>* ids_y) {
    if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0))
        throw ShapeError("minibatch_cka: paired batches must share rows");
    const int n = x.dim(0);
    if (n < 4) throw EstimatorError("minibatch_cka: batch below the estimator minimum of 4");
    if (ids_x && ids_y && *ids_x != *ids_y)
        throw PairingError("minibatch_cka: sample ids differ across the pair");
    add_grams(linear_gram(x), linear_gram(y), n);
}

void MinibatchCka::add_grams(const std::vector<double>& k, const std::vector<double>& l, int n) {
    cross_ += hsic1(k, l, n);
    self_a_ += hsic1(k, k, n);
    self_b_ += hsic1(l, l, n);
    ++batches_;
}

double MinibatchCka::result() const {
    if (batches_ == 0) throw DataError("minibatch_cka: no batches accumulated");
    const double denom = std::sqrt(self_a_ * self_b_);
    if (denom <= 0.0) throw NumericError("minibatch_cka: degenerate accumulation");
    return cross_ / denom;
}

Tensor flatten_activation(const ActivationBatch& ab) {
    Tensor flat = ab.values;
    flat.shape = {ab.batch(), (int)ab.sample_numel()};
    return flat;
}

CKAMatrix cka_map(std::span<ProbeableNetwork* const> nets_a,
                  std::span<ProbeableNetwork* const> nets_b, const Tensor& eval_images,
                  const std::vector<std::string>& taps_a, const std::vector<std::string>& taps_b,
                  int batch_size) {
    if (nets_a.empty() || nets_a.size() != nets_b.size())
        throw ConfigError("cka_map: need equally many repeat networks on both sides");
    if (eval_images.rank() != 4 || eval_images.dim(0) == 0)
        throw DataError("cka_map: empty evaluation set");
    const int total = eval_images.dim(0);
    if (total < 4) throw DataError("cka_map: evaluation set below estimator minimum");

    CKAMatrix out;
    out.rows = taps_a;
    out.cols = taps_b;
    out.n_samples = total;
    out.batch_size = batch_size;
    out.runs_averaged = (int)nets_a.size();
    out.values.assign(taps_a.size() * taps_b.size(), 0.0);

    const int ch = eval_images.dim(1), h = eval_images.dim(2), w = eval_images.dim(3);
    for (std::size_t rep = 0; rep < nets_a.size(); ++rep) {
        std::vector<MinibatchCka> acc(taps_a.size() * taps_b.size());
        for (int start = 0; start < total; start += batch_size) {
            const int n = std::min(batch_size, total - start);
            if (n < 4) continue;  // trailing fragment below the estimator minimum
            Tensor batch({n, ch, h, w});
            std::copy(eval_images.ptr() + (std::size_t)start * ch * h * w,
                      eval_images.ptr() + (std::size_t)(start + n) * ch * h * w, batch.ptr());

            auto grams_for = [&](ProbeableNetwork& net, const std::vector<std::string>& taps) {
                ForwardOptions opt;
                opt.taps = &taps;
                CaptureResult cap;
                (void)net.forward(batch, opt, &cap);
                std::vector<std::vector<double>> grams;
                for (const auto& tap : taps) {
                    const ActivationBatch* found = nullptr;
                    for (const auto& ab : cap.taps)
                        if (ab.tap_id == tap) found = &ab;
                    if (!found) throw LookupError("cka_map: tap not captured: " + tap);
                    grams.push_back(linear_gram(flatten_activation(*found)));
                }
                return grams;
            };
            const auto ga = grams_for(*nets_a[rep], taps_a);
            const auto gb = grams_for(*nets_b[rep], taps_b);
            for (std::size_t i = 0; i < taps_a.size(); ++i)
                for (std::size_t j = 0; j < taps_b.size(); ++j)
                    acc[i * taps_b.size() + j].add_grams(ga[i], gb[j], n);
        }
        for (std::size_t idx = 0; idx < acc.size(); ++idx) out.values[idx] += acc[idx].result();
    }
    for (auto& v : out.values) v /= (double)nets_a.size();
    return out;
}

CKAMatrix cka_map(ProbeableNetwork& a, ProbeableNetwork& b, const Tensor& eval_images,
                  const std::vector<std::string>& taps_a, const std::vector<std::string>& taps_b,
                  int batch_size) {
    ProbeableNetwork* pa[1] = {&a};
    ProbeableNetwork* pb[1] = {&b};
    return cka_map(std::span<ProbeableNetwork* const>(pa, 1),
                   std::span<ProbeableNetwork* const>(pb, 1), eval_images, taps_a, taps_b,
                   batch_size);
}

} // namespace tlab::probes
