#pragma once

#include <span>
#include <string>
#include <vector>

#include "tlab/tensor.hpp"

namespace tlab::metrics {

struct PredictionSet {
    std::vector<int> labels;
    std::vector<int> hard_preds;              // consumed by kappa / recall
    std::vector<std::vector<double>> scores;  // per-sample per-class, consumed by AUC
    int class_count = 0;
};

/// Cohen's kappa with quadratic weights w_ij = (i-j)^2 / (C-1)^2.
double quadratic_kappa(const PredictionSet& preds);

/// Mean over classes of per-class recall; zero-support classes are excluded
/// and flagged through warned_empty_class when provided.
double macro_recall(const PredictionSet& preds, bool* warned_empty_class = nullptr);

/// Probability a random positive outranks a random negative, ties counted
/// half. Binary uses the positive-class column; multi-class macro-averages
/// one-vs-rest over classes with both outcomes present.
double roc_auc(const PredictionSet& preds);

bool metric_known(const std::string& id);
/// Dispatch on "qkappa" | "recall_macro" | "auc".
double metric_by_id(const std::string& id, const PredictionSet& preds);

/// Frechet distance between Gaussian fits of two embedding sets (n,d), (m,d).
/// low_sample_flag is raised when either set has no more rows than columns.
double fid(const Tensor& embeds_a, const Tensor& embeds_b, bool* low_sample_flag = nullptr);

struct GainSummary {
    double wt = 0.0, st = 0.0, ri = 0.0;  // seed means
    double gain_ratio = 0.0;              // wt / ri
    double reuse_share = 0.0;             // (wt - st) / wt
    double reuse_share_normalized = 0.0;  // min-max over the reported settings
};

GainSummary gain_summary(std::span<const double> wt_scores, std::span<const double> st_scores,
                         std::span<const double> ri_scores);

/// Linearly rescales reuse_share so the minimum maps to 0 and the maximum to 1.
void normalize_shares(std::vector<GainSummary>& summaries);

} // namespace tlab::metrics
