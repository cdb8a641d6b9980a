#include <gtest/gtest.h>

#include <cmath>

#include "oracle.hpp"
#include "sharedrep/layers.hpp"

using namespace sharedrep;

namespace {

constexpr double kStep = 1e-3;
constexpr double kRelTol = 1e-3;

/// Fixed random projection used to scalarize layer outputs: L = sum(R .* Y).
oracle::Mat projection(std::size_t r, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    oracle::Mat p(r, std::vector<double>(c));
    for (auto& row : p)
        for (auto& v : row) v = rng.uniform(-1.0, 1.0);
    return p;
}

double dot(const oracle::Mat& a, const oracle::Mat& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) s += a[i][j] * b[i][j];
    return s;
}

Matrix to_matrix(const oracle::Mat& m) {
    Matrix out(m.size(), m[0].size());
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = 0; j < m[i].size(); ++j) out(i, j) = static_cast<Scalar>(m[i][j]);
    return out;
}

/// Central difference of f w.r.t. entry (i, j) of x.
double fd_entry(oracle::Mat x, std::size_t i, std::size_t j,
                const std::function<double(const oracle::Mat&)>& f) {
    const double orig = x[i][j];
    x[i][j] = orig + kStep;
    const double up = f(x);
    x[i][j] = orig - kStep;
    const double down = f(x);
    return (up - down) / (2 * kStep);
}

}  // namespace

// ---------------------------------------------------------------------------
// linear

TEST(Linear, IdentityWeights) {
    const Matrix y = linear_forward(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{1, 0}, {0, 1}}),
                                    Vector{0, 0});
    EXPECT_EQ(y, Matrix::from_rows({{1, 2}}));
}

TEST(Linear, HandSum) {
    const Matrix y = linear_forward(Matrix::from_rows({{1, 1}}), Matrix::from_rows({{2}, {3}}), Vector{1});
    EXPECT_EQ(y(0, 0), 6);
}

TEST(Linear, MatchesTripleLoopOracle) {
    Rng rng(11);
    const Matrix x = oracle::random_matrix(3, 4, rng), w = oracle::random_matrix(4, 2, rng);
    const Vector b{0.25f, -0.5f};
    const Matrix y = linear_forward(x, w, b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            double s = b[j];
            for (std::size_t p = 0; p < 4; ++p) s += double(x(i, p)) * w(p, j);
            EXPECT_NEAR(y(i, j), s, 1e-6);
        }
}

TEST(Linear, ShapeMismatch) {
    EXPECT_THROW(linear_forward(Matrix(2, 3), Matrix(2, 2), {}), DimensionError);
    EXPECT_THROW(linear_forward(Matrix(2, 3), Matrix(3, 2), Vector{1, 2, 3}), DimensionError);
    EXPECT_THROW(linear_backward(Matrix(2, 3), Matrix(2, 3), Matrix(3, 2)), DimensionError);
}

TEST(LinearBackward, ZeroUpstreamGivesZeroGrads) {
    Rng rng(12);
    const Matrix x = oracle::random_matrix(3, 4, rng), w = oracle::random_matrix(4, 2, rng);
    const LinearGrads g = linear_backward(Matrix(3, 2), x, w);
    for (Scalar v : g.dx.values()) EXPECT_EQ(v, 0);
    for (Scalar v : g.dw.values()) EXPECT_EQ(v, 0);
    for (Scalar v : g.db) EXPECT_EQ(v, 0);
}

TEST(LinearBackward, ScalarChainRule) {
    const LinearGrads g =
        linear_backward(Matrix::from_rows({{1}}), Matrix::from_rows({{2}}), Matrix::from_rows({{3}}));
    EXPECT_EQ(g.dx(0, 0), 3);
    EXPECT_EQ(g.dw(0, 0), 2);
    EXPECT_EQ(g.db[0], 1);
}

TEST(LinearBackward, MatchesFiniteDifferences) {
    Rng rng(13);
    const Matrix x = oracle::random_matrix(3, 4, rng), w = oracle::random_matrix(4, 2, rng);
    const Vector b{0.1f, -0.2f};
    const auto r = projection(3, 2, 14);
    const LinearGrads g = linear_backward(to_matrix(r), x, w);

    const auto loss = [&](const oracle::Mat& xx, const oracle::Mat& ww, const std::vector<double>& bb) {
        auto y = oracle::matmul(xx, ww);
        for (auto& row : y)
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += bb[j];
        return dot(r, y);
    };
    const auto X = oracle::to_mat(x), W = oracle::to_mat(w);
    const std::vector<double> B(b.begin(), b.end());
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            EXPECT_LT(oracle::relative_error(g.dx(i, j), fd_entry(X, i, j, [&](const auto& m) { return loss(m, W, B); })),
                      kRelTol);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            EXPECT_LT(oracle::relative_error(g.dw(i, j), fd_entry(W, i, j, [&](const auto& m) { return loss(X, m, B); })),
                      kRelTol);
    for (std::size_t j = 0; j < 2; ++j) {
        auto up = B, down = B;
        up[j] += kStep;
        down[j] -= kStep;
        const double fd = (loss(X, W, up) - loss(X, W, down)) / (2 * kStep);
        EXPECT_LT(oracle::relative_error(g.db[j], fd), kRelTol);
    }
}

// ---------------------------------------------------------------------------
// batch norm

TEST(BatchNorm, TwoPointStandardization) {
    auto state = BatchNormState::identity(1);
    const Matrix y = batchnorm_forward(Matrix::from_rows({{1}, {3}}), state, Mode::Train);
    // variance 1, so eps shifts the result by ~5e-6
    EXPECT_NEAR(y(0, 0), -1.0, 1e-5);
    EXPECT_NEAR(y(1, 0), 1.0, 1e-5);
}

TEST(BatchNorm, EvalWithUnitStatsIsIdentity) {
    auto state = BatchNormState::identity(3);
    Rng rng(20);
    const Matrix x = oracle::random_matrix(4, 3, rng);
    const auto before = state;
    const Matrix y = batchnorm_forward(x, state, Mode::Eval);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.values()[i], x.values()[i], 1e-5);
    EXPECT_EQ(state.running_mean, before.running_mean);
    EXPECT_EQ(state.running_var, before.running_var);
}

TEST(BatchNorm, MomentumOneCopiesBatchStatistics) {
    auto state = BatchNormState::identity(5, Scalar(1e-5), Scalar(1.0));
    Rng rng(21);
    for (std::size_t j = 0; j < 5; ++j) {
        state.gamma[j] = static_cast<Scalar>(rng.uniform(0.5, 1.5));
        state.beta[j] = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
    }
    const Matrix x = oracle::random_matrix(6, 5, rng, -2, 3);
    const Matrix train = batchnorm_forward(x, state, Mode::Train);
    const Matrix eval = batchnorm_forward(x, state, Mode::Eval);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(eval.values()[i], train.values()[i], 1e-5);
}

TEST(BatchNorm, RunningStatisticsUpdate) {
    auto state = BatchNormState::identity(1);
    batchnorm_forward(Matrix::from_rows({{1}, {3}}), state, Mode::Train);
    // mean 2, biased var 1, momentum 0.1
    EXPECT_NEAR(state.running_mean[0], 0.2, 1e-7);
    EXPECT_NEAR(state.running_var[0], 1.0, 1e-7);
}

TEST(BatchNorm, DegenerateBatchRejected) {
    auto state = BatchNormState::identity(2);
    EXPECT_THROW(batchnorm_forward(Matrix(1, 2), state, Mode::Train), UsageError);
    EXPECT_NO_THROW(batchnorm_forward(Matrix(1, 2), state, Mode::Eval));
    EXPECT_THROW(batchnorm_forward(Matrix(3, 3), state, Mode::Train), DimensionError);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
    Rng rng(22);
    for (int trial = 0; trial < 20; ++trial) {
        auto state = BatchNormState::identity(7);
        const Matrix x = oracle::random_matrix(16, 7, rng, -1, 1);
        const Matrix y = batchnorm_forward(x, state, Mode::Train);
        for (std::size_t j = 0; j < 7; ++j) {
            double mean = 0, var = 0;
            for (std::size_t i = 0; i < 16; ++i) mean += y(i, j);
            mean /= 16;
            for (std::size_t i = 0; i < 16; ++i) var += (y(i, j) - mean) * (y(i, j) - mean);
            var /= 16;
            EXPECT_NEAR(mean, 0.0, 1e-5);
            // eps contributes var / (var + eps); inputs here have var ~ 1/3
            EXPECT_NEAR(var, 1.0, 1e-4);
        }
    }
}

TEST(BatchNormBackward, ZeroUpstream) {
    auto state = BatchNormState::identity(3);
    Rng rng(23);
    BatchNormCache cache;
    batchnorm_forward(oracle::random_matrix(4, 3, rng), state, Mode::Train, &cache);
    const auto g = batchnorm_backward(Matrix(4, 3), cache, state.gamma);
    for (Scalar v : g.dx.values()) EXPECT_EQ(v, 0);
    for (Scalar v : g.dgamma) EXPECT_EQ(v, 0);
    for (Scalar v : g.dbeta) EXPECT_EQ(v, 0);
}

TEST(BatchNormBackward, ConstantUpstreamGivesZeroInputGrad) {
    auto state = BatchNormState::identity(3);
    Rng rng(24);
    BatchNormCache cache;
    batchnorm_forward(oracle::random_matrix(5, 3, rng), state, Mode::Train, &cache);
    Matrix dy(5, 3);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) dy(i, j) = static_cast<Scalar>(0.5 + j);
    const auto g = batchnorm_backward(dy, cache, state.gamma);
    for (Scalar v : g.dx.values()) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(BatchNormBackward, EvalCacheRejected) {
    auto state = BatchNormState::identity(2);
    BatchNormCache cache;
    batchnorm_forward(Matrix(3, 2), state, Mode::Eval, &cache);
    EXPECT_THROW(batchnorm_backward(Matrix(3, 2), cache, state.gamma), UsageError);
}

TEST(BatchNormBackward, MatchesFiniteDifferences) {
    Rng rng(25);
    const std::size_t b = 5, f = 3;
    auto state = BatchNormState::identity(f);
    for (std::size_t j = 0; j < f; ++j) {
        state.gamma[j] = static_cast<Scalar>(rng.uniform(0.5, 1.5));
        state.beta[j] = static_cast<Scalar>(rng.uniform(-0.5, 0.5));
    }
    const Matrix x = oracle::random_matrix(b, f, rng, -2, 2);
    const auto r = projection(b, f, 26);
    BatchNormCache cache;
    batchnorm_forward(x, state, Mode::Train, &cache);
    const auto g = batchnorm_backward(to_matrix(r), cache, state.gamma);

    const std::vector<double> gamma(state.gamma.begin(), state.gamma.end());
    const std::vector<double> beta(state.beta.begin(), state.beta.end());
    const double eps = state.eps;
    const auto X = oracle::to_mat(x);
    const auto loss = [&](const oracle::Mat& xx, const std::vector<double>& gg, const std::vector<double>& bb) {
        return dot(r, oracle::batchnorm_train(xx, gg, bb, eps));
    };
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < f; ++j)
            EXPECT_LT(oracle::relative_error(
                          g.dx(i, j), fd_entry(X, i, j, [&](const auto& m) { return loss(m, gamma, beta); })),
                      kRelTol)
                << i << "," << j;
    for (std::size_t j = 0; j < f; ++j) {
        auto gu = gamma, gd = gamma, bu = beta, bd = beta;
        gu[j] += kStep;
        gd[j] -= kStep;
        bu[j] += kStep;
        bd[j] -= kStep;
        EXPECT_LT(oracle::relative_error(g.dgamma[j], (loss(X, gu, beta) - loss(X, gd, beta)) / (2 * kStep)), kRelTol);
        EXPECT_LT(oracle::relative_error(g.dbeta[j], (loss(X, gamma, bu) - loss(X, gamma, bd)) / (2 * kStep)), kRelTol);
    }
}

// ---------------------------------------------------------------------------
// relu / dropout

TEST(Relu, Forward) {
    EXPECT_EQ(relu(Matrix::from_rows({{-1, 0, 2}})), Matrix::from_rows({{0, 0, 2}}));
}

TEST(Relu, SubgradientAtZeroIsZero) {
    const Matrix dx = relu_backward(Matrix::from_rows({{5, 5, 5}}), Matrix::from_rows({{-1, 0, 2}}));
    EXPECT_EQ(dx, Matrix::from_rows({{0, 0, 5}}));
}

TEST(Relu, MatchesFiniteDifferencesAwayFromZero) {
    Rng rng(30);
    Matrix x = oracle::random_matrix(4, 6, rng, -2, 2);
    for (Scalar& v : x.values())
        if (std::abs(v) < 1e-2) v = Scalar(0.5);
    const auto r = projection(4, 6, 31);
    const Matrix dx = relu_backward(to_matrix(r), x);
    const auto X = oracle::to_mat(x);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j)
            EXPECT_LT(oracle::relative_error(dx(i, j), fd_entry(X, i, j, [&](const auto& m) {
                                                 return dot(r, oracle::relu(m));
                                             })),
                      kRelTol);
}

TEST(Dropout, RateZeroAndEvalAreIdentity) {
    Rng rng(40);
    const Matrix x = oracle::random_matrix(5, 5, rng);
    EXPECT_EQ(dropout(x, 0, &rng, Mode::Train).y, x);
    const auto eval = dropout(x, Scalar(0.7), nullptr, Mode::Eval);
    EXPECT_EQ(eval.y, x);
    for (Scalar m : eval.mask.values()) EXPECT_EQ(m, 1);
}

TEST(Dropout, InvertedScalingIsUnbiased) {
    Rng rng(41);
    const Matrix ones(1000, 100, Scalar{1});
    const auto r = dropout(ones, Scalar(0.5), &rng, Mode::Train);
    double mean = 0;
    std::size_t zeros = 0;
    for (Scalar v : r.y.values()) {
        mean += v;
        zeros += v == 0;
        EXPECT_TRUE(v == 0 || v == 2);
    }
    mean /= double(r.y.size());
    EXPECT_NEAR(mean, 1.0, 0.02);
    EXPECT_NEAR(double(zeros) / double(r.y.size()), 0.5, 0.01);
}

TEST(Dropout, BackwardUsesMask) {
    Rng rng(42);
    const Matrix x = oracle::random_matrix(3, 4, rng);
    const auto r = dropout(x, Scalar(0.3), &rng, Mode::Train);
    const Matrix dy(3, 4, Scalar{1});
    EXPECT_EQ(dropout_backward(dy, r.mask), r.mask);
}

TEST(Dropout, RateOneRejected) {
    Rng rng(43);
    EXPECT_THROW(dropout(Matrix(2, 2), 1, &rng, Mode::Train), ConfigError);
    EXPECT_THROW(dropout(Matrix(2, 2), Scalar(-0.1), &rng, Mode::Train), ConfigError);
}

// ---------------------------------------------------------------------------
// softmax cross entropy

TEST(CrossEntropy, UniformLogits) {
    const int label = 0;
    const auto r = softmax_cross_entropy(Matrix::from_rows({{0, 0}}), std::span(&label, 1));
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
}

TEST(CrossEntropy, LargeLogitsStable) {
    const int label = 0;
    const auto r = softmax_cross_entropy(Matrix::from_rows({{1000, 0}}), std::span(&label, 1));
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_NEAR(r.loss, 0.0, 1e-12);
    EXPECT_TRUE(r.dlogits.all_finite());
}

TEST(CrossEntropy, UniformLogitsAnyLabel) {
    for (int c = 2; c <= 5; ++c)
        for (int y = 0; y < c; ++y) {
            const auto r = softmax_cross_entropy(Matrix(1, std::size_t(c), Scalar(3.5)), std::span(&y, 1));
            EXPECT_NEAR(r.loss, std::log(double(c)), 1e-9);
        }
}

TEST(CrossEntropy, LabelOutOfRange) {
    const int label = 2;
    EXPECT_THROW(softmax_cross_entropy(Matrix(1, 2), std::span(&label, 1)), DataError);
}

TEST(CrossEntropy, GradientRowsSumToZeroAndMatchFiniteDifferences) {
    Rng rng(50);
    const Matrix logits = oracle::random_matrix(4, 3, rng, -3, 3);
    const std::vector<int> labels{0, 2, 1, 2};
    const auto r = softmax_cross_entropy(logits, labels);
    EXPECT_GE(r.loss, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 3; ++j) s += r.dlogits(i, j);
        EXPECT_NEAR(s, 0.0, 1e-6);
    }
    const auto L = oracle::to_mat(logits);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_LT(oracle::relative_error(r.dlogits(i, j), fd_entry(L, i, j, [&](const auto& m) {
                                                 return oracle::cross_entropy(m, labels);
                                             })),
                      kRelTol);
}
