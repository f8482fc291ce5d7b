#pragma once

namespace tlab::trainbench {

/// Learning-rate schedule: linear warmup to the base rate, then piecewise
/// constant with multiplicative plateau drops. A drop that would land below
/// min_lr instead signals the run to stop.
class LrSchedule {
public:
    LrSchedule(double base_lr, int warmup_iters, double factor, double min_lr);

    /// Rate for iteration `it` (0-based).
    double at(long it) const;

    /// Applies one plateau decay; returns false when the decayed rate would
    /// fall below min_lr (the stop condition).
    bool decay();

    double current_scale() const { return scale_; }

private:
    double base_lr_, factor_, min_lr_, scale_ = 1.0;
    int warmup_iters_;
};

/// Counts validation evaluations without an improvement above the threshold;
/// fires once the patience is exhausted and then restarts the count.
class PlateauController {
public:
    PlateauController(int patience_evals, double improve_threshold = 1e-4);

    /// Returns true when the schedule should decay now.
    bool observe(double metric);

private:
    int patience_evals_;
    double threshold_;
    double best_;
    int stale_ = 0;
    bool seen_any_ = false;
};

} // namespace tlab::trainbench
