#pragma once

#include <span>
#include <string>
#include <vector>

#include "tlab/netlab/network.hpp"

namespace tlab::probes {

/// Linear centered kernel alignment between two activation sets with matching
/// rows: ||Yc' Xc||_F^2 / (||Xc' Xc||_F * ||Yc' Yc||_F), columns centered
/// internally. Invariant to orthogonal transforms and isotropic scaling.
double linear_cka(const Tensor& x, const Tensor& y);

/// Unbiased linear-kernel HSIC estimator on raw Gram matrices (diagonal
/// zeroed); requires n >= 4.
double hsic1(const std::vector<double>& gram_k, const std::vector<double>& gram_l, int n);

/// Gram matrix F F' of flattened rows, accumulated in double precision.
std::vector<double> linear_gram(const Tensor& feats2d);

/// Streaming minibatch CKA: accumulates unbiased HSIC terms per batch;
/// result = sum_cross / sqrt(sum_self_a * sum_self_b).
class MinibatchCka {
public:
    /// x, y: (n, p) activation batches with the same sample rows. Sample ids,
    /// when provided, must pair up exactly.
    void add_batch(const Tensor& x, const Tensor& y,
                   const std::vector<std::int64_t>* ids_x = nullptr,
                   const std::vector<std::int64_t>* ids_y = nullptr);
    void add_grams(const std::vector<double>& k, const std::vector<double>& l, int n);
    double result() const;
    int batches() const { return batches_; }

private:
    double cross_ = 0.0, self_a_ = 0.0, self_b_ = 0.0;
    int batches_ = 0;
};

struct CKAMatrix {
    std::vector<std::string> rows;  // tap ids of network A
    std::vector<std::string> cols;  // tap ids of network B
    std::vector<double> values;     // rows x cols
    int n_samples = 0;
    int batch_size = 0;
    int runs_averaged = 0;

    double at(std::size_t i, std::size_t j) const { return values[i * cols.size() + j]; }
};

/// Pairwise minibatch CKA over tap pairs, averaged over seed-paired network
/// repeats. Networks are forwarded in inference mode over the evaluation set.
CKAMatrix cka_map(std::span<netlab::ProbeableNetwork* const> nets_a,
                  std::span<netlab::ProbeableNetwork* const> nets_b, const Tensor& eval_images,
                  const std::vector<std::string>& taps_a, const std::vector<std::string>& taps_b,
                  int batch_size = 128);

/// Single-pair convenience overload.
CKAMatrix cka_map(netlab::ProbeableNetwork& a, netlab::ProbeableNetwork& b,
                  const Tensor& eval_images, const std::vector<std::string>& taps_a,
                  const std::vector<std::string>& taps_b, int batch_size = 128);

/// Flattened (n, c*h*w) or (n, tokens*dim) view of a captured activation.
Tensor flatten_activation(const netlab::ActivationBatch& ab);

} // namespace tlab::probes
