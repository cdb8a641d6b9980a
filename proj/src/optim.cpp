#include "sharedrep/optim.hpp"

#include <algorithm>
#include <cmath>

namespace sharedrep {

std::size_t ScheduleSpec::warmup_steps() const {
    return static_cast<std::size_t>(std::llround(warmup_frac * static_cast<double>(total_steps)));
}

void ScheduleSpec::validate() const {
    if (!(base_lr > 0)) throw ConfigError("schedule: base_lr must be positive");
    if (!(warmup_frac > 0 && warmup_frac < 1)) throw ConfigError("schedule: warmup_frac must be in (0, 1)");
    if (!(final_frac > 0 && final_frac <= 1)) throw ConfigError("schedule: final_frac must be in (0, 1]");
}

double lr_at(const ScheduleSpec& spec, std::size_t step) {
    if (step > spec.total_steps)
        throw UsageError("lr_at: step " + std::to_string(step) + " beyond total " +
                         std::to_string(spec.total_steps));
    const std::size_t warmup = spec.warmup_steps();
    if (step < warmup)
        return spec.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const double final_lr = spec.final_frac * spec.base_lr;
    if (step == spec.total_steps) return final_lr;
    const double t = static_cast<double>(step - warmup) /
                     static_cast<double>(spec.total_steps - warmup);
    return spec.base_lr + (final_lr - spec.base_lr) * t;
}

namespace {

double global_norm(std::span<const std::span<Scalar>> grads) {
    double sq = 0.0;
    for (auto g : grads)
        for (Scalar v : g) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient entry");
            sq += static_cast<double>(v) * v;
        }
    return std::sqrt(sq);
}

}  // namespace

ClipResult clip_global_norm(std::span<const std::span<Scalar>> grads, double max_norm) {
    if (!(max_norm > 0)) throw ConfigError("clip: max_norm must be positive");
    ClipResult r;
    r.norm = global_norm(grads);
    if (r.norm > max_norm) {
        r.scale = max_norm / r.norm;
        r.clipped = true;
        const auto s = static_cast<Scalar>(r.scale);
        for (auto g : grads)
            for (Scalar& v : g) v *= s;
    }
    return r;
}

ClipResult clip_by_value(std::span<const std::span<Scalar>> grads, double max_value) {
    if (!(max_value > 0)) throw ConfigError("clip: max_value must be positive");
    ClipResult r;
    r.norm = global_norm(grads);
    const auto hi = static_cast<Scalar>(max_value);
    for (auto g : grads)
        for (Scalar& v : g) {
            if (v > hi || v < -hi) r.clipped = true;
            v = std::clamp(v, -hi, hi);
        }
    return r;
}

AdamW::AdamW(AdamWConfig config, std::span<const ParamRef> params) {
    state_.config = config;
    for (const auto& p : params) {
        state_.m.emplace_back(p.value.size(), Scalar{0});
        state_.v.emplace_back(p.value.size(), Scalar{0});
    }
}

void AdamW::step(std::span<const ParamRef> params, std::span<const std::span<const Scalar>> grads,
                 double lr) {
    require_shape(params.size() == grads.size() && params.size() == state_.m.size(),
                  "adamw: " + std::to_string(params.size()) + " params, " +
                      std::to_string(grads.size()) + " grads, " +
                      std::to_string(state_.m.size()) + " moment slots");
    for (std::size_t k = 0; k < params.size(); ++k)
        require_shape(params[k].value.size() == grads[k].size() &&
                          params[k].value.size() == state_.m[k].size(),
                      "adamw: shape mismatch for parameter " + params[k].name);

    const AdamWConfig& c = state_.config;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);

    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].value;
        auto g = grads[k];
        auto& m = state_.m[k];
        auto& v = state_.v[k];
        const double wd = params[k].decay ? c.weight_decay : 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i];
            const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
            const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
            m[i] = static_cast<Scalar>(mi);
            v[i] = static_cast<Scalar>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            const double pi = p[i];
            p[i] = static_cast<Scalar>(pi - lr * (m_hat / (std::sqrt(v_hat) + c.eps) + wd * pi));
        }
    }
}

}  // namespace sharedrep
