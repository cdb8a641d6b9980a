#pragma once

#include <span>
#include <vector>

#include "sharedrep/matrix.hpp"
#include "sharedrep/rng.hpp"

namespace sharedrep {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Fully connected

/// Y = X * W + b. An empty bias means the layer has none.
Matrix linear_forward(const Matrix& x, const Matrix& w, std::span<const Scalar> bias);

struct LinearGrads {
    Matrix dx;
    Matrix dw;
    Vector db;  // empty when the forward had no bias
};

LinearGrads linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w,
                            bool with_bias = true);

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormState {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    Scalar eps = Scalar(1e-5);
    Scalar momentum = Scalar(0.1);

    /// gamma = 1, beta = 0, running_mean = 0, running_var = 1.
    static BatchNormState identity(std::size_t features, Scalar eps = Scalar(1e-5),
                                   Scalar momentum = Scalar(0.1));
    std::size_t features() const noexcept { return gamma.size(); }
    void validate() const;
};

/// Normalized activations are kept in double: with small batches the input
/// gradient is a near-cancelling difference that float storage cannot resolve.
struct BatchNormCache {
    std::size_t rows = 0, cols = 0;
    std::vector<double> x_hat;  // row-major [rows x cols]
    std::vector<double> inv_std;
    bool train = false;
};

/// Train mode normalizes with the batch mean and biased variance and updates
/// the running statistics; eval mode uses the running statistics and leaves
/// the state untouched. `cache` may be null when no backward pass follows.
Matrix batchnorm_forward(const Matrix& x, BatchNormState& state, Mode mode,
                         BatchNormCache* cache = nullptr);

/// Eval-mode forward on a const state.
Matrix batchnorm_inference(const Matrix& x, const BatchNormState& state);

struct BatchNormGrads {
    Matrix dx;
    Vector dgamma;
    Vector dbeta;
};

BatchNormGrads batchnorm_backward(const Matrix& dy, const BatchNormCache& cache,
                                  std::span<const Scalar> gamma);

// ---------------------------------------------------------------------------
// Activations

Matrix relu(const Matrix& x);
/// Gradient passes only where x > 0.
Matrix relu_backward(const Matrix& dy, const Matrix& x);

struct DropoutResult {
    Matrix y;
    Matrix mask;  // 0 or 1/(1-rate) per element; all ones in eval mode
};

DropoutResult dropout(const Matrix& x, Scalar rate, Rng* rng, Mode mode);
Matrix dropout_backward(const Matrix& dy, const Matrix& mask);

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
    double loss = 0.0;
    Matrix dlogits;
};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

/// Row-wise softmax, computed with the row maximum subtracted.
Matrix softmax(const Matrix& logits);

}  // namespace sharedrep
