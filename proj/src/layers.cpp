#include "sharedrep/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sharedrep/kernels.hpp"

namespace sharedrep {

Matrix linear_forward(const Matrix& x, const Matrix& w, std::span<const Scalar> bias) {
    require_shape(x.cols() == w.rows(),
                  "linear: input " + shape_string(x) + " vs weight " + shape_string(w));
    require_shape(bias.empty() || bias.size() == w.cols(), "linear: bias length mismatch");
    Matrix y(x.rows(), w.cols());
    kernels::gemm(x, w, y);
    if (!bias.empty()) {
        for (std::size_t i = 0; i < y.rows(); ++i) {
            auto row = y.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[j];
        }
    }
    return y;
}

LinearGrads linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w, bool with_bias) {
    require_shape(x.cols() == w.rows() && dy.rows() == x.rows() && dy.cols() == w.cols(),
                  "linear_backward: dy " + shape_string(dy) + ", x " + shape_string(x) +
                      ", w " + shape_string(w));
    LinearGrads g;
    g.dx = Matrix(x.rows(), x.cols());
    kernels::gemm_nt(dy, w, g.dx);
    g.dw = Matrix(w.rows(), w.cols());
    kernels::gemm_tn(x, dy, g.dw);
    if (with_bias) {
        g.db.assign(w.cols(), Scalar{0});
        kernels::column_sums(dy, g.db);
    }
    return g;
}

BatchNormState BatchNormState::identity(std::size_t features, Scalar eps, Scalar momentum) {
    BatchNormState s;
    s.gamma.assign(features, Scalar{1});
    s.beta.assign(features, Scalar{0});
    s.running_mean.assign(features, Scalar{0});
    s.running_var.assign(features, Scalar{1});
    s.eps = eps;
    s.momentum = momentum;
    return s;
}

void BatchNormState::validate() const {
    const std::size_t f = gamma.size();
    require_shape(beta.size() == f && running_mean.size() == f && running_var.size() == f,
                  "batchnorm state vectors differ in length");
    if (!(eps > 0)) throw ConfigError("batchnorm eps must be positive");
    if (!(momentum > 0 && momentum <= 1)) throw ConfigError("batchnorm momentum must be in (0, 1]");
    for (Scalar v : running_var)
        if (!(v >= 0)) throw NumericError("batchnorm running variance is negative");
}

namespace {

Matrix normalize_with(const Matrix& x, std::span<const Scalar> mean, std::span<const Scalar> inv_std,
                      std::span<const Scalar> gamma, std::span<const Scalar> beta) {
    const std::size_t b = x.rows(), f = x.cols();
    Matrix y(b, f);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            y(i, j) = gamma[j] * ((x(i, j) - mean[j]) * inv_std[j]) + beta[j];
        }
    }
    return y;
}

}  // namespace

Matrix batchnorm_forward(const Matrix& x, BatchNormState& state, Mode mode,
                         BatchNormCache* cache) {
    const std::size_t b = x.rows(), f = x.cols();
    require_shape(f == state.features(), "batchnorm: input " + shape_string(x) + " vs " +
                                             std::to_string(state.features()) + " features");
    if (mode == Mode::Eval) {
        if (cache) {
            cache->train = false;
            cache->rows = cache->cols = 0;
            cache->x_hat.clear();
            cache->inv_std.clear();
        }
        return batchnorm_inference(x, state);
    }
    if (b < 2) throw UsageError("batchnorm: train mode needs at least 2 rows, got " +
                                std::to_string(b));

    std::vector<double> mean(f), inv_std(f);
    const Scalar m = state.momentum;
    for (std::size_t j = 0; j < f; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < b; ++i) s += x(i, j);
        const double mu = s / static_cast<double>(b);
        double ss = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            const double d = x(i, j) - mu;
            ss += d * d;
        }
        const double v = ss / static_cast<double>(b);
        mean[j] = mu;
        inv_std[j] = 1.0 / std::sqrt(v + static_cast<double>(state.eps));
        state.running_mean[j] = (Scalar{1} - m) * state.running_mean[j] + m * static_cast<Scalar>(mu);
        state.running_var[j] = (Scalar{1} - m) * state.running_var[j] + m * static_cast<Scalar>(v);
    }

    Matrix y(b, f);
    std::vector<double> x_hat(b * f);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < f; ++j) {
            const double h = (x(i, j) - mean[j]) * inv_std[j];
            x_hat[i * f + j] = h;
            y(i, j) = static_cast<Scalar>(state.gamma[j] * h + state.beta[j]);
        }
    if (cache) {
        cache->train = true;
        cache->rows = b;
        cache->cols = f;
        cache->x_hat = std::move(x_hat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Matrix batchnorm_inference(const Matrix& x, const BatchNormState& state) {
    const std::size_t f = x.cols();
    require_shape(f == state.features(), "batchnorm: input " + shape_string(x) + " vs " +
                                             std::to_string(state.features()) + " features");
    Vector inv_std(f);
    for (std::size_t j = 0; j < f; ++j)
        inv_std[j] = static_cast<Scalar>(
            1.0 / std::sqrt(static_cast<double>(state.running_var[j]) + state.eps));
    return normalize_with(x, state.running_mean, inv_std, state.gamma, state.beta);
}

BatchNormGrads batchnorm_backward(const Matrix& dy, const BatchNormCache& cache,
                                  std::span<const Scalar> gamma) {
    if (!cache.train) throw UsageError("batchnorm_backward needs a train-mode forward cache");
    const std::size_t b = cache.rows, f = cache.cols;
    require_shape(dy.rows() == b && dy.cols() == f && gamma.size() == f,
                  "batchnorm_backward: dy " + shape_string(dy) + " vs cache [" + std::to_string(b) +
                      " x " + std::to_string(f) + "]");
    auto xh = [&](std::size_t i, std::size_t j) { return cache.x_hat[i * f + j]; };

    BatchNormGrads g;
    g.dx = Matrix(b, f);
    g.dgamma.assign(f, Scalar{0});
    g.dbeta.assign(f, Scalar{0});
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t j = 0; j < f; ++j) {
        double sum_dy = 0.0, sum_dy_xh = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            sum_dy += dy(i, j);
            sum_dy_xh += static_cast<double>(dy(i, j)) * xh(i, j);
        }
        g.dbeta[j] = static_cast<Scalar>(sum_dy);
        g.dgamma[j] = static_cast<Scalar>(sum_dy_xh);
        // dx = gamma * inv_std * (dy - mean(dy) - x_hat * mean(dy * x_hat))
        const double scale = static_cast<double>(gamma[j]) * cache.inv_std[j];
        const double mean_dy = sum_dy * inv_b;
        const double mean_dy_xh = sum_dy_xh * inv_b;
        for (std::size_t i = 0; i < b; ++i)
            g.dx(i, j) = static_cast<Scalar>(scale * (dy(i, j) - mean_dy - xh(i, j) * mean_dy_xh));
    }
    return g;
}

Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (Scalar& v : y.values()) v = v > Scalar{0} ? v : Scalar{0};
    return y;
}

Matrix relu_backward(const Matrix& dy, const Matrix& x) {
    require_shape(dy.rows() == x.rows() && dy.cols() == x.cols(), "relu_backward shape mismatch");
    Matrix dx(x.rows(), x.cols());
    auto in = x.values();
    auto g = dy.values();
    auto out = dx.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > Scalar{0} ? g[i] : Scalar{0};
    return dx;
}

DropoutResult dropout(const Matrix& x, Scalar rate, Rng* rng, Mode mode) {
    if (!(rate >= 0 && rate < 1))
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    DropoutResult r;
    if (mode == Mode::Eval || rate == Scalar{0}) {
        r.y = x;
        r.mask = Matrix(x.rows(), x.cols(), Scalar{1});
        return r;
    }
    if (!rng) throw UsageError("dropout in train mode needs a random source");
    const Scalar keep_scale = Scalar{1} / (Scalar{1} - rate);
    r.mask = Matrix(x.rows(), x.cols());
    r.y = Matrix(x.rows(), x.cols());
    auto in = x.values();
    auto mask = r.mask.values();
    auto out = r.y.values();
    for (std::size_t i = 0; i < in.size(); ++i) {
        mask[i] = rng->uniform() < static_cast<double>(rate) ? Scalar{0} : keep_scale;
        out[i] = in[i] * mask[i];
    }
    return r;
}

Matrix dropout_backward(const Matrix& dy, const Matrix& mask) {
    require_shape(dy.rows() == mask.rows() && dy.cols() == mask.cols(),
                  "dropout_backward shape mismatch");
    Matrix dx = dy;
    auto m = mask.values();
    auto out = dx.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= m[i];
    return dx;
}

Matrix softmax(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (Scalar v : row) z += std::exp(static_cast<double>(v) - mx);
        for (std::size_t j = 0; j < row.size(); ++j)
            p(i, j) = static_cast<Scalar>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    return p;
}

LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    const std::size_t b = logits.rows(), c = logits.cols();
    require_shape(labels.size() == b, "cross entropy: " + std::to_string(labels.size()) +
                                          " labels for " + std::to_string(b) + " rows");
    if (b == 0) throw UsageError("cross entropy on an empty batch");
    LossResult r;
    r.dlogits = Matrix(b, c);
    const double inv_b = 1.0 / static_cast<double>(b);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        auto row = logits.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (Scalar v : row) z += std::exp(static_cast<double>(v) - mx);
        const double log_z = std::log(z) + mx;
        total += log_z - static_cast<double>(row[y]);
        for (std::size_t j = 0; j < c; ++j) {
            double p = std::exp(static_cast<double>(row[j]) - log_z);
            if (static_cast<int>(j) == y) p -= 1.0;
            r.dlogits(i, j) = static_cast<Scalar>(p * inv_b);
        }
    }
    r.loss = total * inv_b;
    return r;
}

}  // namespace sharedrep
