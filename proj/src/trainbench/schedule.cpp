#include "tlab/trainbench/schedule.hpp"

#include "tlab/error.hpp"

namespace tlab::trainbench {

LrSchedule::LrSchedule(double base_lr, int warmup_iters, double factor, double min_lr)
    : base_lr_(base_lr), factor_(factor), min_lr_(min_lr), warmup_iters_(warmup_iters) {
    if (min_lr <= 0.0 || min_lr > base_lr)
        throw ConfigError("schedule: requires 0 < min_lr <= base_lr");
    if (factor <= 0.0 || factor >= 1.0) throw ConfigError("schedule: factor must be in (0,1)");
    if (warmup_iters < 0) throw ConfigError("schedule: warmup_iters must be >= 0");
}

double LrSchedule::at(long it) const {
    if (warmup_iters_ > 0 && it < warmup_iters_)
        return base_lr_ * (double)(it + 1) / (double)warmup_iters_;
    return base_lr_ * scale_;
}

bool LrSchedule::decay() {
    const double next = base_lr_ * scale_ * factor_;
    if (next < min_lr_) return false;
    scale_ *= factor_;
    return true;
}

PlateauController::PlateauController(int patience_evals, double improve_threshold)
    : patience_evals_(patience_evals), threshold_(improve_threshold), best_(0.0) {
    if (patience_evals < 1) throw ConfigError("plateau: patience must be >= 1");
}

bool PlateauController::observe(double metric) {
    if (!seen_any_ || metric > best_ + threshold_) {
        best_ = seen_any_ ? std::max(best_, metric) : metric;
        seen_any_ = true;
        stale_ = 0;
        return false;
    }
    if (++stale_ >= patience_evals_) {
        stale_ = 0;
        return true;
    }
    return false;
}

} // namespace tlab::trainbench
