#include "vaal/nn/autodiff.hpp"
#include "vaal/nn/layers.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

using namespace vaal;
using namespace vaal::nn;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal(0.0, scale);
    return m;
}

}  // namespace

TEST(Gradients, HalfSquaredNormGivesW) {
    Rng rng(1);
    Var w = parameter(random_matrix(3, 2, rng));
    Var loss = scale(sum(square(w)), 0.5);
    auto g = gradients(loss, {w});
    EXPECT_TRUE(g[0].isApprox(w.value(), 1e-14));
}

TEST(Gradients, ConstantLossGivesZero) {
    Rng rng(2);
    Var w = parameter(random_matrix(2, 2, rng));
    // depends on w structurally but is identically 3
    Var loss = add_scalar(sub(sum(w), sum(w)), 3.0);
    auto g = gradients(loss, {w});
    EXPECT_EQ(g[0], Matrix::Zero(2, 2));
}

TEST(Gradients, DetachedLossIsContractViolation) {
    Rng rng(3);
    Var w = parameter(random_matrix(2, 2, rng));
    Var loss = sum(detach(w));
    EXPECT_THROW(gradients(loss, {w}), ContractViolation);
}

TEST(Gradients, NonScalarLossRejected) {
    Var w = parameter(Matrix::Ones(2, 2));
    EXPECT_THROW(gradients(square(w), {w}), ContractViolation);
}

TEST(Gradients, UnreachedParameterGetsZeros) {
    Var a = parameter(Matrix::Ones(1, 2));
    Var b = parameter(Matrix::Ones(3, 1));
    auto g = gradients(sum(a), {a, b});
    EXPECT_EQ(g[1], Matrix::Zero(3, 1));
}

TEST(Gradients, SharedSubexpressionAccumulates) {
    Var w = parameter(Matrix::Constant(1, 1, 3.0));
    Var y = mul(w, w);         // w^2
    Var loss = sum(add(y, y));  // 2 w^2 -> 4w = 12
    EXPECT_DOUBLE_EQ(gradients(loss, {w})[0](0, 0), 12.0);
}

TEST(Gradients, EveryOpMatchesFiniteDifferences) {
    Rng rng(4);
    Var a = parameter(random_matrix(4, 3, rng));
    Var b = parameter(random_matrix(3, 5, rng));
    Var bias = parameter(random_matrix(1, 5, rng));
    Var p = parameter((random_matrix(4, 5, rng).array().abs() + 0.5).matrix());
    std::vector<int> cols{0, 4, 2, 1};
    auto loss = [&] {
        Var h = add_row(matmul(a, b), bias);
        Var t = add(tanh(h), sigmoid(h));
        Var r = mul(relu(h), exp(scale(h, 0.1)));
        Var l = log(p);
        Var picked = pick(log_softmax(sub(t, r)), cols);
        Var c = clamp(h, -0.5, 0.5);
        Var sliced = slice_cols(add(t, l), 1, 3);
        Var stacked = concat_rows(sliced, slice_cols(c, 0, 3));
        return add(add(sum(picked), mean(square(stacked))), sum(row_sum(add_scalar(l, 2.0))));
    };
    auto check = test_util::check_gradients(loss, {a, b, bias, p});
    EXPECT_LT(check.max_relative_error, 1e-4) << "abs " << check.max_abs_error;
}

TEST(Linear, XavierBoundsAndZeroBias) {
    Rng rng(5);
    Linear layer(20, 30, rng);
    const double limit = std::sqrt(6.0 / 50.0);
    EXPECT_LE(layer.weight.value().cwiseAbs().maxCoeff(), limit);
    EXPECT_EQ(layer.bias.value(), Matrix::Zero(1, 30));
}

TEST(Mlp, GraphAndInferenceAgree) {
    Rng rng(6);
    Mlp net({{4, 8, 8, 3}, Activation::Relu, Activation::Sigmoid, std::nullopt}, rng);
    Matrix x = random_matrix(5, 4, rng);
    EXPECT_TRUE(net.forward(constant(x)).value().isApprox(net.infer(x), 1e-14));
    EXPECT_EQ(net.parameter_count(), static_cast<std::size_t>(4 * 8 + 8 + 8 * 8 + 8 + 8 * 3 + 3));
}

TEST(Mlp, CloneIsIndependent) {
    Rng rng(7);
    Mlp net({{2, 3, 1}, Activation::Relu, Activation::Identity, std::nullopt}, rng);
    Mlp copy = net.clone();
    Var(copy.parameters()[0]).mutable_value().setZero();
    EXPECT_NE(net.parameters()[0].value(), copy.parameters()[0].value());
}

TEST(Mlp, ZeroDropoutRateIsDeterministic) {
    Rng rng(8);
    Mlp net({{3, 6, 2}, Activation::Relu, Activation::Identity, 0.0}, rng);
    Matrix x = random_matrix(4, 3, rng);
    Rng drop(1);
    EXPECT_EQ(net.infer(x, &drop), net.infer(x));
}
