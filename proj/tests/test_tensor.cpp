#include <gtest/gtest.h>

#include "vfd/ops.hpp"

using vfd::Tensor;

TEST(Tensor, ConstructorRejectsWrongValueCount)
{
    EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), vfd::ContractViolation);
    EXPECT_NO_THROW(Tensor<double>({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, ScalarHasEmptyShape)
{
    const auto s = Tensor<double>::scalar(2.5);
    EXPECT_EQ(s.rank(), 0u);
    EXPECT_EQ(s.numel(), 1u);
    EXPECT_EQ(s.item(), 2.5);
}

TEST(Tensor, GradientAccumulatesOverSharedUse)
{
    Tensor<double> x({3}, {1, 2, 3}, true);
    // d/dx sum(x*x + x) = 2x + 1
    vfd::backward(vfd::sum(vfd::add(vfd::mul(x, x), x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{3, 5, 7}));
}

TEST(Tensor, BackwardTwiceAccumulatesIntoLeaves)
{
    Tensor<double> x({2}, {1, -1}, true);
    vfd::backward(vfd::sum(vfd::scale(x, 2.0)));
    vfd::backward(vfd::sum(vfd::scale(x, 3.0)));
    EXPECT_EQ(x.grad(), (std::vector<double>{5, 5}));
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 0}));
}

TEST(Tensor, BackwardReleasesTheGraph)
{
    Tensor<double> x({2}, {1, 2}, true);
    const auto loss = vfd::sum(vfd::mul(x, x));
    EXPECT_FALSE(loss.is_leaf());
    vfd::backward(loss);
    EXPECT_FALSE(loss.requires_grad());
    EXPECT_THROW(vfd::backward(loss), vfd::ContractViolation);
}

TEST(Tensor, BackwardNeedsScalar)
{
    Tensor<double> x({2}, {1, 2}, true);
    EXPECT_THROW(vfd::backward(vfd::scale(x, 2.0)), vfd::ContractViolation);
}

TEST(Tensor, OpsOnConstantsRecordNothing)
{
    Tensor<double> a({2}, {1, 2}), b({2}, {3, 4});
    const auto c = vfd::add(a, b);
    EXPECT_FALSE(c.requires_grad());
    EXPECT_TRUE(c.is_leaf());
}

TEST(Tensor, DetachCopiesValuesWithoutHistory)
{
    Tensor<double> x({2}, {1, 2}, true);
    auto y = vfd::scale(x, 2.0);
    auto d = y.detach();
    EXPECT_FALSE(d.requires_grad());
    d.mutable_data()[0] = 100;
    EXPECT_EQ(y.data()[0], 2.0);
}

TEST(Tensor, DeepChainDoesNotOverflowStack)
{
    Tensor<double> x = Tensor<double>::scalar(1.0, true);
    Tensor<double> y = x;
    for (int i = 0; i < 100000; ++i)
        y = vfd::add_scalar(y, 1e-6);
    vfd::backward(y);
    EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Tensor, FloatInstantiation)
{
    Tensor<float> x({2}, {1.5f, -2.f}, true);
    vfd::backward(vfd::sum(vfd::relu(x)));
    EXPECT_EQ(x.grad(), (std::vector<float>{1.f, 0.f}));
}
