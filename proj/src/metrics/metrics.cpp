#include "tlab/metrics/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tlab/error.hpp"

namespace tlab::metrics {

namespace {

void check_lengths(const PredictionSet& p, bool need_hard, bool need_scores) {
    if (p.class_count < 2) throw MetricError("metric needs at least 2 classes");
    if (p.labels.empty()) throw DataError("empty prediction set");
    if (need_hard && p.hard_preds.size() != p.labels.size())
        throw ShapeError("hard_preds / labels length mismatch");
    if (need_scores && p.scores.size() != p.labels.size())
        throw ShapeError("scores / labels length mismatch");
    for (int l : p.labels)
        if (l < 0 || l >= p.class_count) throw DataError("label out of range");
}

} // namespace

double quadratic_kappa(const PredictionSet& preds) {
    check_lengths(preds, true, false);
    const int c = preds.class_count;
    std::set<int> observed(preds.labels.begin(), preds.labels.end());
    observed.insert(preds.hard_preds.begin(), preds.hard_preds.end());
    if (observed.size() < 2)
        throw MetricError("quadratic_kappa undefined: single observed class");

    std::vector<double> confusion((std::size_t)c * c, 0.0);
    for (std::size_t i = 0; i < preds.labels.size(); ++i) {
        const int pr = preds.hard_preds[i];
        if (pr < 0 || pr >= c) throw DataError("prediction out of range");
        confusion[(std::size_t)preds.labels[i] * c + pr] += 1.0;
    }
    std::vector<double> row(c, 0.0), col(c, 0.0);
    const double n = (double)preds.labels.size();
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            row[i] += confusion[(std::size_t)i * c + j];
            col[j] += confusion[(std::size_t)i * c + j];
        }
    const double denom_w = (double)(c - 1) * (c - 1);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            const double w = (double)(i - j) * (i - j) / denom_w;
            num += w * confusion[(std::size_t)i * c + j];
            den += w * row[i] * col[j] / n;
        }
    if (den == 0.0) throw MetricError("quadratic_kappa undefined: degenerate marginals");
    return 1.0 - num / den;
}

double macro_recall(const PredictionSet& preds, bool* warned_empty_class) {
    check_lengths(preds, true, false);
    if (warned_empty_class) *warned_empty_class = false;
    double total = 0.0;
    int classes_used = 0;
    for (int cls = 0; cls < preds.class_count; ++cls) {
        long support = 0, hits = 0;
        for (std::size_t i = 0; i < preds.labels.size(); ++i) {
            if (preds.labels[i] != cls) continue;
            ++support;
            if (preds.hard_preds[i] == cls) ++hits;
        }
        if (support == 0) {
            if (warned_empty_class) *warned_empty_class = true;
            continue;
        }
        total += (double)hits / (double)support;
        ++classes_used;
    }
    if (classes_used == 0) throw MetricError("macro_recall undefined: no class has support");
    return total / classes_used;
}

namespace {

// Mann-Whitney with tie correction on one score column.
double binary_auc(const std::vector<double>& score, const std::vector<char>& positive) {
    const std::size_t n = score.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    double pos = 0.0, neg = 0.0, u = 0.0;
    std::size_t i = 0;
    double seen_neg = 0.0;
    while (i < n) {
        std::size_t j = i;
        double tie_pos = 0.0, tie_neg = 0.0;
        while (j < n && score[order[j]] == score[order[i]]) {
            if (positive[order[j]])
                tie_pos += 1.0;
            else
                tie_neg += 1.0;
            ++j;
        }
        u += tie_pos * (seen_neg + 0.5 * tie_neg);
        seen_neg += tie_neg;
        pos += tie_pos;
        neg += tie_neg;
        i = j;
    }
    if (pos == 0.0 || neg == 0.0) return std::nan("");
    return u / (pos * neg);
}

} // namespace

double roc_auc(const PredictionSet& preds) {
    check_lengths(preds, false, true);
    const int c = preds.class_count;
    for (const auto& row : preds.scores) {
        if ((int)row.size() != c) throw ShapeError("score row width != class_count");
        for (double v : row)
            if (!std::isfinite(v)) throw NumericError("non-finite score");
    }
    const std::size_t n = preds.labels.size();
    auto one_vs_rest = [&](int cls) {
        std::vector<double> col(n);
        std::vector<char> pos(n);
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = preds.scores[i][cls];
            pos[i] = preds.labels[i] == cls ? 1 : 0;
        }
        return binary_auc(col, pos);
    };
    if (c == 2) {
        const double auc = one_vs_rest(1);
        if (std::isnan(auc)) throw MetricError("roc_auc undefined: single observed class");
        return auc;
    }
    double total = 0.0;
    int used = 0;
    for (int cls = 0; cls < c; ++cls) {
        const double auc = one_vs_rest(cls);
        if (std::isnan(auc)) continue;  // class without both outcomes
        total += auc;
        ++used;
    }
    if (used == 0) throw MetricError("roc_auc undefined: no class has both outcomes");
    return total / used;
}

bool metric_known(const std::string& id) {
    return id == "qkappa" || id == "recall_macro" || id == "auc";
}

double metric_by_id(const std::string& id, const PredictionSet& preds) {
    if (id == "qkappa") return quadratic_kappa(preds);
    if (id == "recall_macro") return macro_recall(preds);
    if (id == "auc") return roc_auc(preds);
    throw LookupError("unknown metric id: " + id);
}

double fid(const Tensor& embeds_a, const Tensor& embeds_b, bool* low_sample_flag) {
    if (embeds_a.rank() != 2 || embeds_b.rank() != 2)
        throw ShapeError("fid: expects (n,d) embeddings");
    const int d = embeds_a.dim(1);
    if (embeds_b.dim(1) != d) throw ShapeError("fid: embedding widths differ");
    const int n = embeds_a.dim(0), m = embeds_b.dim(0);
    if (n < 2 || m < 2) throw DataError("fid: need at least 2 samples per set");
    for (float v : embeds_a.data)
        if (!std::isfinite(v)) throw NumericError("fid: non-finite embedding");
    for (float v : embeds_b.data)
        if (!std::isfinite(v)) throw NumericError("fid: non-finite embedding");
    if (low_sample_flag) *low_sample_flag = (n <= d || m <= d);

    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    auto fit = [d](const Tensor& t, VectorXd& mu, MatrixXd& cov) {
        const int rows = t.dim(0);
        MatrixXd x(rows, d);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < d; ++j) x(i, j) = t[(std::size_t)i * d + j];
        mu = x.colwise().mean();
        MatrixXd centered = x.rowwise() - mu.transpose();
        cov = centered.transpose() * centered / (double)(rows - 1);
    };
    VectorXd mu_a, mu_b;
    MatrixXd cov_a, cov_b;
    fit(embeds_a, mu_a, cov_a);
    fit(embeds_b, mu_b, cov_b);

    constexpr double kEps = 1e-6;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es_a(cov_a);
    VectorXd ev_a = es_a.eigenvalues();
    for (int i = 0; i < ev_a.size(); ++i) ev_a(i) = ev_a(i) < kEps ? 0.0 : std::sqrt(ev_a(i));
    const MatrixXd sqrt_a = es_a.eigenvectors() * ev_a.asDiagonal() * es_a.eigenvectors().transpose();

    const MatrixXd inner = sqrt_a * cov_b * sqrt_a;  // symmetric PSD up to noise
    Eigen::SelfAdjointEigenSolver<MatrixXd> es_m((inner + inner.transpose()) * 0.5);
    double trace_sqrt = 0.0;
    for (int i = 0; i < es_m.eigenvalues().size(); ++i) {
        const double lam = es_m.eigenvalues()(i);
        trace_sqrt += lam < kEps ? 0.0 : std::sqrt(lam);
    }
    const double dist = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() -
                        2.0 * trace_sqrt;
    if (!std::isfinite(dist)) throw NumericError("fid: non-finite result");
    return std::max(dist, 0.0);
}

GainSummary gain_summary(std::span<const double> wt_scores, std::span<const double> st_scores,
                         std::span<const double> ri_scores) {
    if (wt_scores.empty() || st_scores.empty() || ri_scores.empty())
        throw DataError("gain_summary: empty score list");
    auto mean = [](std::span<const double> v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / (double)v.size();
    };
    GainSummary g;
    g.wt = mean(wt_scores);
    g.st = mean(st_scores);
    g.ri = mean(ri_scores);
    if (g.ri <= 0.0 || g.wt <= 0.0)
        throw MetricError("gain_summary undefined: non-positive mean score");
    g.gain_ratio = g.wt / g.ri;
    g.reuse_share = (g.wt - g.st) / g.wt;
    g.reuse_share_normalized = 0.0;
    return g;
}

void normalize_shares(std::vector<GainSummary>& summaries) {
    if (summaries.empty()) return;
    double lo = summaries[0].reuse_share, hi = summaries[0].reuse_share;
    for (const auto& s : summaries) {
        lo = std::min(lo, s.reuse_share);
        hi = std::max(hi, s.reuse_share);
    }
    const double span = hi - lo;
    for (auto& s : summaries)
        s.reuse_share_normalized = span > 0.0 ? (s.reuse_share - lo) / span : 0.0;
}

} // namespace tlab::metrics
