#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sharedrep/matrix.hpp"

namespace sharedrep {

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup, then linear decay to a fraction of
// the base rate.

struct ScheduleSpec {
    double base_lr = 1e-4;
    std::size_t total_steps = 0;
    double warmup_frac = 0.20;
    double final_frac = 0.10;

    /// round(warmup_frac * total_steps)
    std::size_t warmup_steps() const;
    void validate() const;
};

/// Steps are 0-based and valid on [0, total_steps]. During warmup the rate is
/// base * (step + 1) / warmup_steps, reaching base at step warmup_steps - 1;
/// from warmup_steps it falls linearly to final_frac * base at total_steps.
double lr_at(const ScheduleSpec& spec, std::size_t step);

// ---------------------------------------------------------------------------
// Gradient clipping

struct ClipResult {
    double norm = 0.0;   // global L2 norm before clipping
    double scale = 1.0;  // factor applied to every entry
    bool clipped = false;
};

/// Scales all gradients jointly so their concatenated L2 norm is at most
/// max_norm. Throws NumericError, leaving the gradients untouched, if any
/// entry is non-finite.
ClipResult clip_global_norm(std::span<const std::span<Scalar>> grads, double max_norm);

/// Clamps each entry to [-max_value, max_value].
ClipResult clip_by_value(std::span<const std::span<Scalar>> grads, double max_value);

enum class ClipMode { Norm, Value };

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay

struct ParamRef {
    std::string name;
    std::span<Scalar> value;
    bool decay = true;  // false for biases and batch-norm affine parameters
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamWState {
    std::uint64_t step = 0;
    std::vector<Vector> m;
    std::vector<Vector> v;
    AdamWConfig config;
};

class AdamW {
public:
    AdamW(AdamWConfig config, std::span<const ParamRef> params);
    explicit AdamW(AdamWState state) : state_(std::move(state)) {}

    /// One update: moments, bias correction, then
    /// p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)   (wd only where decay is set).
    void step(std::span<const ParamRef> params, std::span<const std::span<const Scalar>> grads,
              double lr);

    const AdamWState& state() const noexcept { return state_; }
    std::uint64_t step_count() const noexcept { return state_.step; }

private:
    AdamWState state_;
};

}  // namespace sharedrep
