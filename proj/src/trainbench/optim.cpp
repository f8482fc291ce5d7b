#include "tlab/trainbench/optim.hpp"

#include <cmath>

#include "tlab/error.hpp"

namespace tlab::trainbench {

Adam::Adam(double beta1, double beta2, double eps, double weight_decay, bool decoupled)
    : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay),
      decoupled_(decoupled) {}

void Adam::step(const std::vector<ParamRef>& params, double lr) {
    if (m_.empty()) {
        for (auto& p : params) {
            m_.emplace_back(p.param->value.shape);
            v_.emplace_back(p.param->value.shape);
        }
    }
    if (m_.size() != params.size()) throw ShapeError("Adam: parameter set changed mid-run");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, (double)t_);
    const double bc2 = 1.0 - std::pow(beta2_, (double)t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i].param->value;
        Tensor& g = params[i].param->grad;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < w.numel(); ++j) {
            double grad = g[j];
            if (weight_decay_ != 0.0 && !decoupled_) grad += weight_decay_ * w[j];
            const double mn = beta1_ * m[j] + (1.0 - beta1_) * grad;
            const double vn = beta2_ * v[j] + (1.0 - beta2_) * grad * grad;
            m[j] = (float)mn;
            v[j] = (float)vn;
            double update = lr * (mn / bc1) / (std::sqrt(vn / bc2) + eps_);
            if (weight_decay_ != 0.0 && decoupled_) update += lr * weight_decay_ * w[j];
            w[j] = (float)(w[j] - update);
        }
    }
}

} // namespace tlab::trainbench
