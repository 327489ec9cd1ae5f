#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"

using namespace stochattn;
using namespace testing_support;

TEST(Tensor, RejectsZeroDimensionsAndLengthMismatch) {
  EXPECT_THROW(Tensor({2, 0}, {}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(t.item(), ContractError);
}

TEST(Tensor, CloneIsIndependent) {
  Tensor a({2}, {1, 2}, true);
  Tensor b = a.clone();
  b.mutable_data()[0] = 9;
  EXPECT_EQ(a[0], 1);
  EXPECT_TRUE(b.requires_grad());
  EXPECT_FALSE(a.detach().requires_grad());
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor c = matmul(a, eye);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, UnitRowSelectsRow) {
  const Tensor c = matmul(Tensor({1, 2}, {1, 0}), Tensor({2, 1}, {2, 5}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c[0], 2);
}

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t m = 1 + seed % 8, k = 1 + (seed * 3) % 8, n = 1 + (seed * 5) % 8;
    const Tensor a = random_tensor({m, k}, seed);
    const Tensor b = random_tensor({k, n}, seed + 100);
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
        EXPECT_NEAR(c[i * n + j], acc, 1e-12);
      }
  }
  const Tensor a = random_tensor({3, 4}, 7);
  const Tensor b = random_tensor({4, 2}, 8);
  const Tensor c = matmul(a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < 4; ++p) acc += a[i * 4 + p] * b[p * 2 + j];
      worst = std::max(worst, std::abs(acc - c[i * 2 + j]));
    }
  EXPECT_LT(worst, 1e-12);
}

TEST(Matmul, BatchedAndSharedRightOperand) {
  const Tensor a = random_tensor({2, 3, 3, 4}, 1);
  const Tensor b = random_tensor({2, 3, 4, 5}, 2);
  const Tensor shared = random_tensor({4, 5}, 3);
  const Tensor c = matmul(a, b);
  const Tensor d = matmul(a, shared);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 3, 5}));
  for (std::size_t s = 0; s < 6; ++s)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double x = 0.0, y = 0.0;
        for (std::size_t p = 0; p < 4; ++p) {
          x += a[s * 12 + i * 4 + p] * b[s * 20 + p * 5 + j];
          y += a[s * 12 + i * 4 + p] * shared[p * 5 + j];
        }
        EXPECT_NEAR(c[s * 15 + i * 5 + j], x, 1e-12);
        EXPECT_NEAR(d[s * 15 + i * 5 + j], y, 1e-12);
      }
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Softmax, SymmetricInputIsUniform) {
  const Tensor s = softmax(Tensor({2}, {0, 0}), 0, 1.0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Softmax, TemperatureTwoOnLogFour) {
  const Tensor s = softmax(Tensor({2}, {std::log(4.0), 0}), 0, 2.0);
  EXPECT_NEAR(s[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, MatchesNaiveFormula) {
  const Tensor x = random_tensor({8}, 42);
  const Tensor s = softmax(x, 0, 1.0);
  double z = 0.0, total = 0.0;
  for (double v : x.data()) z += std::exp(v);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(s[i], std::exp(x[i]) / z, 1e-14);
    total += s[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(Softmax, StableForLargeMagnitudes) {
  const Tensor x = random_tensor({4, 6}, 5, 1000.0);
  for (std::size_t axis : {0u, 1u}) {
    const Tensor s = softmax(x, axis, 1.0);
    for (double v : s.data()) EXPECT_GE(v, 0.0);
    if (axis == 1) {
      for (std::size_t r = 0; r < 4; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < 6; ++j) total += s[r * 6 + j];
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    } else {
      for (std::size_t j = 0; j < 6; ++j) {
        double total = 0.0;
        for (std::size_t r = 0; r < 4; ++r) total += s[r * 6 + j];
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
    }
  }
}

TEST(Softmax, NonPositiveTemperatureIsParameterError) {
  EXPECT_THROW(softmax(Tensor({2}, {0, 1}), 0, 0.0), ParameterError);
  EXPECT_THROW(softmax(Tensor({2}, {0, 1}), 0, -1.0), ParameterError);
}

TEST(Dropout, InactiveIsBitIdentical) {
  RngStream rng(1);
  const Tensor x = random_tensor({5, 7}, 3);
  const Tensor y = dropout(x, 0.5, false, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Dropout, ZeroRateIsIdentity) {
  RngStream rng(1);
  const Tensor x = random_tensor({5, 7}, 3);
  const Tensor y = dropout(x, 0.0, true, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
}

TEST(Dropout, HalfRatePreservesMean) {
  RngStream rng(11);
  const Tensor ones = Tensor::filled({100000}, 1.0);
  const Tensor y = dropout(ones, 0.5, true, rng);
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    mean += v;
    zeros += v == 0.0 ? 1 : 0;
    EXPECT_TRUE(v == 0.0 || v == 2.0);
  }
  mean /= 100000.0;
  EXPECT_GE(mean, 0.98);
  EXPECT_LE(mean, 1.02);
  EXPECT_NEAR(static_cast<double>(zeros) / 100000.0, 0.5, 0.01);
}

TEST(Dropout, RateOutsideRangeIsParameterError) {
  RngStream rng(1);
  EXPECT_THROW(dropout(Tensor::filled({3}, 1.0), 1.0, true, rng), ParameterError);
  EXPECT_THROW(dropout(Tensor::filled({3}, 1.0), -0.1, true, rng), ParameterError);
}

TEST(Backward, SumOfSquares) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(mul(x, x));
  }
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Tensor x = random_tensor({6}, 9, 1.0, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(softmax(x, 0, 1.0));
  }
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, TwoLayerCompositionMatchesFiniteDifferences) {
  Tensor x = random_tensor({3, 4}, 1, 1.0, true);
  Tensor w1 = random_tensor({4, 5}, 2, 0.5, true);
  Tensor b1 = random_tensor({5}, 3, 0.5, true);
  Tensor w2 = random_tensor({5, 2}, 4, 0.5, true);
  const Tensor target = random_tensor({3, 2}, 5);
  const auto loss = [&] {
    const Tensor h = relu(add(matmul(x, w1), b1));
    const Tensor y = softmax(matmul(h, w2), 1, 1.0);
    return sum(mul(y, target));
  };
  EXPECT_LT(max_gradient_error({x, w1, b1, w2}, loss), 1e-4);
}

TEST(Backward, SecondCallIsAnError) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(mul(x, x));
  }
  tape.backward(loss);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss), ContractError);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x({2}, {1, 2}, true);
  Tape tape;
  Tensor y;
  {
    TapeScope scope(tape);
    y = mul(x, x);
  }
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, UntrackedOperationsRecordNothing) {
  Tensor x({2}, {1, 2}, true);
  const Tensor y = mul(x, x);
  Tape tape;
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_THROW(tape.backward(sum(y)), ContractError);
}

TEST(Numerics, NonFiniteResultThrows) {
  const Tensor big({1}, {1e200});
  EXPECT_THROW(mul(big, big), NumericError);
  EXPECT_THROW(scale(big, 1e200), NumericError);
}

TEST(Ops, GradientsOfEveryOperation) {
  Tensor x = random_tensor({2, 3, 4}, 21, 1.0, true);
  Tensor gamma = random_tensor({4}, 22, 1.0, true);
  Tensor beta = random_tensor({4}, 23, 1.0, true);
  Tensor bias = random_tensor({3, 4}, 24, 1.0, true);
  Tensor table = random_tensor({6, 4}, 25, 1.0, true);
  const Tensor weights = random_tensor({2, 3, 4}, 26);
  const PaddingMask mask{2, 3, {0, 0, 1, 0, 0, 0}};
  const Tensor slice_weights = random_tensor({2, 4}, 27);

  const auto weighted = [&](const Tensor& t) { return sum(mul(t, weights)); };
  EXPECT_LT(max_gradient_error({x, gamma, beta}, [&] { return weighted(layer_norm(x, gamma, beta)); }), 1e-4);
  EXPECT_LT(max_gradient_error({x, bias}, [&] { return weighted(add(x, bias)); }), 1e-4);
  EXPECT_LT(max_gradient_error({x}, [&] { return weighted(relu(x)); }), 1e-4);
  EXPECT_LT(max_gradient_error({x}, [&] { return weighted(scale(x, -1.7)); }), 1e-4);
  EXPECT_LT(max_gradient_error({x}, [&] { return weighted(softmax(x, 1, 0.7)); }), 1e-4);
  EXPECT_LT(max_gradient_error({x}, [&] { return weighted(merge_heads(split_heads(mul(x, x), 2))); }), 1e-4);
  EXPECT_LT(max_gradient_error({x}, [&] { return sum(mul(transpose(x), transpose(weights))); }), 1e-4);
  EXPECT_LT(max_gradient_error({x}, [&] { return sum(mul(reshape(x, {6, 4}), reshape(weights, {6, 4}))); }), 1e-4);
  EXPECT_LT(max_gradient_error({x}, [&] { return sum(mul(masked_mean(x, mask), slice_weights)); }), 1e-4);
  const std::vector<std::size_t> ids{0, 5, 2, 2, 1, 3};
  EXPECT_LT(max_gradient_error({table}, [&] { return weighted(embedding(table, ids, 2, 3)); }), 1e-4);
}

TEST(Ops, SplitAndMergeHeadsLayout) {
  const Tensor x({1, 2, 4}, {0, 1, 2, 3, 4, 5, 6, 7});
  const Tensor h = split_heads(x, 2);
  ASSERT_EQ(h.shape(), (Shape{1, 2, 2, 2}));
  // head 0 holds columns 0-1, head 1 columns 2-3
  EXPECT_EQ(std::vector<double>(h.data().begin(), h.data().end()), (std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7}));
  const Tensor back = merge_heads(h);
  EXPECT_EQ(std::vector<double>(back.data().begin(), back.data().end()),
            std::vector<double>(x.data().begin(), x.data().end()));
  EXPECT_THROW(split_heads(x, 3), ShapeError);
}

TEST(Ops, MaskedMeanSkipsPadding) {
  const Tensor x({1, 3, 2}, {1, 2, 3, 4, 100, 100});
  const Tensor m = masked_mean(x, PaddingMask{1, 3, {0, 0, 1}});
  EXPECT_DOUBLE_EQ(m[0], 2.0);
  EXPECT_DOUBLE_EQ(m[1], 3.0);
  EXPECT_THROW(masked_mean(x, PaddingMask{1, 3, {1, 1, 1}}), ContractError);
}

TEST(Ops, EmbeddingRejectsOutOfRangeIds) {
  const Tensor table = random_tensor({4, 2}, 1);
  EXPECT_THROW(embedding(table, {0, 4}, 1, 2), ContractError);
}

TEST(Ops, BroadcastLimitedToTrailingSuffix) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  const Tensor y = add(Tensor::zeros({2, 3}), Tensor({3}, {1, 2, 3}));
  EXPECT_EQ(y[4], 2.0);
}
