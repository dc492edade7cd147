#include <gtest/gtest.h>

#include <random>

#include "bfseg/kernels.hpp"
#include "oracles.hpp"

using namespace bfseg;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, std::mt19937_64& rng) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : t.values()) v = g(rng);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Conv, ForwardMatchesDirectLoop) {
  std::mt19937_64 rng(1);
  for (int k : {1, 3, 5}) {
    const auto in = random_tensor({2, 3, 7, 6}, rng);
    const auto w = random_tensor({4, 3, k, k}, rng);
    const auto b = random_tensor({4}, rng);
    const auto fast = conv2d_forward(in, w, b);
    const auto slow = oracle::conv2d(in, w, b);
    ASSERT_EQ(fast.shape(), slow.shape());
    for (std::size_t i = 0; i < fast.size(); ++i) ASSERT_NEAR(fast[i], slow[i], 1e-12);
  }
}

TEST(Conv, BackwardIsAdjointOfForward) {
  // For a linear map y = W*x + b: <gy, dy/dx * dx> = <gx, dx>, and similarly for W and b.
  std::mt19937_64 rng(2);
  const auto in = random_tensor({2, 3, 6, 5}, rng);
  const auto w = random_tensor({4, 3, 3, 3}, rng);
  const auto b = random_tensor({4}, rng);
  const auto gy = random_tensor({2, 4, 6, 5}, rng);
  Tensor<double> gx, gw(w.shape()), gb(b.shape());
  conv2d_backward(in, w, gy, &gx, gw, gb);

  const Tensor<double> zero_b(b.shape());
  const Tensor<double> zero_w(w.shape());
  // x direction
  const auto dx = random_tensor(in.shape(), rng);
  EXPECT_NEAR(dot(gy, oracle::conv2d(dx, w, zero_b)), dot(gx, dx), 1e-9);
  // w direction
  const auto dw = random_tensor(w.shape(), rng);
  EXPECT_NEAR(dot(gy, oracle::conv2d(in, dw, zero_b)), dot(gw, dw), 1e-9);
  // b: sum of gy per output channel
  for (int c = 0; c < 4; ++c) {
    double s = 0.0;
    for (int n = 0; n < 2; ++n)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 5; ++x) s += gy.at(n, c, y, x);
    EXPECT_NEAR(gb[c], s, 1e-10);
  }
}

TEST(Conv, BackwardAccumulatesParameterGradients) {
  std::mt19937_64 rng(3);
  const auto in = random_tensor({1, 2, 4, 4}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto gy = random_tensor({1, 3, 4, 4}, rng);
  Tensor<double> gw1(w.shape()), gb1({3}), gw2(w.shape()), gb2({3});
  conv2d_backward<double>(in, w, gy, nullptr, gw1, gb1);
  conv2d_backward<double>(in, w, gy, nullptr, gw2, gb2);
  conv2d_backward<double>(in, w, gy, nullptr, gw2, gb2);
  for (std::size_t i = 0; i < gw1.size(); ++i) EXPECT_NEAR(gw2[i], 2 * gw1[i], 1e-12);
}

TEST(Conv, ShapeErrors) {
  Tensor<double> in({1, 2, 4, 4}), w({3, 5, 3, 3}), b({3});
  EXPECT_THROW(conv2d_forward(in, w, b), Error);
  Tensor<double> w_even({3, 2, 2, 2});
  EXPECT_THROW(conv2d_forward(in, w_even, b), Error);
}

TEST(Pool, ForwardValuesAndIndices) {
  Tensor<double> in({1, 1, 2, 4}, {1, 5, 2, 2,  //
                                   3, 4, 2, 2});
  const auto r = maxpool2x2_forward(in);
  EXPECT_EQ(r.output.shape(), (std::vector<int>{1, 1, 1, 2}));
  EXPECT_EQ(r.output[0], 5);
  EXPECT_EQ(r.indices.offsets[0], 1);
  // Four-way tie: first position in row-major order.
  EXPECT_EQ(r.output[1], 2);
  EXPECT_EQ(r.indices.offsets[1], 2);
}

TEST(Pool, OddExtentRejected) {
  try {
    maxpool2x2_forward(Tensor<double>({1, 1, 3, 4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OddExtent);
  }
}

TEST(Pool, BackwardRoutesToArgmax) {
  std::mt19937_64 rng(4);
  const auto in = random_tensor({2, 3, 6, 8}, rng);
  const auto r = maxpool2x2_forward(in);
  const auto gy = random_tensor(r.output.shape(), rng);
  const auto gx = maxpool2x2_backward(gy, r.indices);
  ASSERT_EQ(gx.shape(), in.shape());
  std::size_t nonzero = 0;
  for (auto v : gx.values()) nonzero += v != 0.0;
  EXPECT_EQ(nonzero, gy.size());
  EXPECT_NEAR(dot(gx, in), dot(gy, r.output), 1e-10);
}

TEST(Unpool, ScattersToPoolPositions) {
  std::mt19937_64 rng(5);
  const auto in = random_tensor({1, 2, 4, 4}, rng);
  const auto r = maxpool2x2_forward(in);
  const auto up = maxunpool2x2(r.output, r.indices);
  ASSERT_EQ(up.shape(), in.shape());
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < up.size(); ++i) {
    if (up[i] != 0.0) {
      ++nonzero;
      EXPECT_EQ(up[i], in[i]);
    }
  }
  EXPECT_EQ(nonzero, r.output.size());
}

TEST(Unpool, BackwardIsAdjoint) {
  std::mt19937_64 rng(6);
  const auto in = random_tensor({2, 2, 4, 6}, rng);
  const auto r = maxpool2x2_forward(in);
  const auto x = random_tensor(r.output.shape(), rng);
  const auto gy = random_tensor(in.shape(), rng);
  EXPECT_NEAR(dot(gy, maxunpool2x2(x, r.indices)), dot(maxunpool2x2_backward(gy, r.indices), x), 1e-10);
}

TEST(Unpool, IndexOutsideWindowRejected) {
  auto r = maxpool2x2_forward(Tensor<double>({1, 1, 4, 4}));
  r.indices.offsets[0] = 3;  // column 3 belongs to the second window
  try {
    maxunpool2x2(r.output, r.indices);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfWindow);
  }
}

TEST(Relu, ForwardBackward) {
  Tensor<double> x({1, 1, 1, 4}, {-1, 0, 2, 3});
  const auto y = relu(x);
  EXPECT_EQ(y, Tensor<double>({1, 1, 1, 4}, {0, 0, 2, 3}));
  const auto g = relu_backward(y, Tensor<double>({1, 1, 1, 4}, {1, 1, 1, 1}));
  EXPECT_EQ(g, Tensor<double>({1, 1, 1, 4}, {0, 0, 1, 1}));
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  std::mt19937_64 rng(7);
  auto x = random_tensor({2, 5, 3, 3}, rng);
  const auto p = softmax_channels(x);
  for (int b = 0; b < 2; ++b)
    for (int y = 0; y < 3; ++y)
      for (int xx = 0; xx < 3; ++xx) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += p.at(b, c, y, xx);
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  for (auto& v : x.values()) v += 1000.0;
  const auto q = softmax_channels(x);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
}

TEST(Concat, SplitInvertsConcat) {
  std::mt19937_64 rng(8);
  const auto a = random_tensor({2, 3, 4, 4}, rng);
  const auto b = random_tensor({2, 5, 4, 4}, rng);
  const auto cat = concat_channels(a, b);
  EXPECT_EQ(cat.c(), 8);
  EXPECT_EQ(cat.at(1, 4, 2, 3), b.at(1, 1, 2, 3));
  auto [a2, b2] = split_channels(cat, 3);
  EXPECT_EQ(a2, a);
  EXPECT_EQ(b2, b);
  EXPECT_THROW(concat_channels(a, Tensor<double>({2, 1, 3, 4})), Error);
}
