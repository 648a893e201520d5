#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hienet/errors.hpp"
#include "hienet/gradient_check.hpp"
#include "hienet/layers.hpp"
#include "test_support.hpp"

namespace hienet {
namespace {

using testing::random_tensor;
using testing::random_values;
using testing::weighted_sum;

Tensor column(std::vector<double> v) { return Tensor::column(v); }

ConvFilterBank single_filter(std::vector<double> taps) {
  ConvFilterBank bank = ConvFilterBank::zeros(taps.size(), 1, 1);
  bank.weights = std::move(taps);
  return bank;
}

// Direct-loop cross-correlation used as the reference for the GEMM path.
Tensor reference_conv(const Tensor& x, const ConvFilterBank& bank, Padding padding) {
  const std::size_t left = padding == Padding::kSameZero ? (bank.taps - 1) / 2 : 0;
  const std::size_t out_length = conv_output_length(x.length(), bank.taps, padding);
  Tensor y({out_length, bank.out_channels});
  for (std::size_t t = 0; t < out_length; ++t) {
    for (std::size_t k = 0; k < bank.out_channels; ++k) {
      double s = bank.bias[k];
      for (std::size_t j = 0; j < bank.taps; ++j) {
        const auto i = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(left);
        if (i < 0 || i >= static_cast<std::ptrdiff_t>(x.length())) continue;
        for (std::size_t c = 0; c < bank.in_channels; ++c) {
          s += x.at(static_cast<std::size_t>(i), c) * bank.weight(j, c, k);
        }
      }
      y.at(t, k) = s;
    }
  }
  return y;
}

ConvFilterBank random_bank(std::size_t taps, std::size_t in, std::size_t out, std::uint64_t seed) {
  ConvFilterBank bank = ConvFilterBank::zeros(taps, in, out);
  bank.weights = random_values(bank.weight_count(), seed);
  bank.bias = random_values(out, seed + 1);
  return bank;
}

TEST(Conv, ValidTwoTapSum) {
  const Tensor y = conv1d_forward(column({1, 2, 3}), single_filter({1, 1}), Padding::kValid);
  ASSERT_EQ(y.shape(), (std::vector<std::size_t>{2, 1}));
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], 5.0);
}

TEST(Conv, SameZeroOddTapsIsCentered) {
  const Tensor y = conv1d_forward(column({1, 2, 3}), single_filter({1, 2, 3}), Padding::kSameZero);
  // out[t] = x[t-1] + 2 x[t] + 3 x[t+1], zeros outside.
  EXPECT_DOUBLE_EQ(y[0], 8.0);
  EXPECT_DOUBLE_EQ(y[1], 14.0);
  EXPECT_DOUBLE_EQ(y[2], 8.0);
}

TEST(Conv, SameZeroEvenTapsLeansRight) {
  const Tensor y = conv1d_forward(column({1, 2, 3}), single_filter({1, 1}), Padding::kSameZero);
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], 5.0);
  EXPECT_DOUBLE_EQ(y[2], 3.0);
}

TEST(Conv, IsCrossCorrelationNotConvolution) {
  // An impulse reproduces the taps reversed in time.
  const Tensor y = conv1d_forward(column({0, 0, 1, 0, 0}), single_filter({1, 2, 3}), Padding::kValid);
  EXPECT_DOUBLE_EQ(y[0], 3.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0);
  EXPECT_DOUBLE_EQ(y[2], 1.0);
}

TEST(Conv, MatchesDirectLoopsMultiChannel) {
  for (Padding padding : {Padding::kSameZero, Padding::kValid}) {
    for (std::size_t taps : {1, 4, 5, 8}) {
      const Tensor x = random_tensor({37, 3}, 10 + taps);
      const ConvFilterBank bank = random_bank(taps, 3, 4, 20 + taps);
      const Tensor y = conv1d_forward(x, bank, padding);
      const Tensor ref = reference_conv(x, bank, padding);
      ASSERT_EQ(y.shape(), ref.shape());
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
  }
}

TEST(Conv, RejectsChannelMismatchAndShortValidInput) {
  const ConvFilterBank bank = random_bank(3, 2, 1, 1);
  EXPECT_THROW(conv1d_forward(random_tensor({10, 3}, 1), bank, Padding::kSameZero), ShapeError);
  EXPECT_THROW(conv1d_forward(random_tensor({2, 2}, 1), bank, Padding::kValid), ShapeError);
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  for (Padding padding : {Padding::kSameZero, Padding::kValid}) {
    for (std::size_t taps : {3, 4}) {
      Tensor x = random_tensor({16, 3}, 31);
      ConvFilterBank bank = random_bank(taps, 3, 2, 32);
      const std::size_t out_length = conv_output_length(16, taps, padding);
      const auto w = random_values(out_length * 2, 33);
      const ConvGradients g = conv1d_backward(x, bank, padding, Tensor({out_length, 2}, w));
      const GradientProbe probes[] = {
          {"input", x.values(), g.input.values()},
          {"weights", bank.weights, g.weights},
          {"bias", bank.bias, g.bias},
      };
      const auto report = gradient_check(probes, [&] { return weighted_sum(conv1d_forward(x, bank, padding), w); });
      EXPECT_TRUE(report.passed) << report.worst_probe << "[" << report.worst_index
                                 << "] rel err " << report.max_relative_error;
    }
  }
}

TEST(Conv, AccumulateAddsIntoBuffers) {
  const Tensor x = random_tensor({12, 2}, 41);
  const ConvFilterBank bank = random_bank(3, 2, 2, 42);
  const Tensor up = random_tensor({12, 2}, 43);
  const ConvGradients once = conv1d_backward(x, bank, Padding::kSameZero, up);
  std::vector<double> w(bank.weight_count(), 0.0), b(2, 0.0);
  conv1d_backward_accumulate(x, bank, Padding::kSameZero, up, w, b, nullptr);
  conv1d_backward_accumulate(x, bank, Padding::kSameZero, up, w, b, nullptr);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], 2.0 * once.weights[i], 1e-12);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(b[i], 2.0 * once.bias[i], 1e-12);
}

TEST(Relu, ForwardAndZeroGradientAtZero) {
  const Tensor x = column({-1.0, 0.0, 2.0});
  const Tensor y = relu_forward(x);
  EXPECT_EQ(y.values()[0], 0.0);
  EXPECT_EQ(y.values()[1], 0.0);
  EXPECT_EQ(y.values()[2], 2.0);
  const Tensor g = relu_backward(x, column({5.0, 5.0, 5.0}));
  EXPECT_EQ(g.values()[0], 0.0);
  EXPECT_EQ(g.values()[1], 0.0);
  EXPECT_EQ(g.values()[2], 5.0);
}

TEST(Relu, GradientMatchesFiniteDifferences) {
  Tensor x = random_tensor({20, 2}, 51);
  for (double& v : x.values()) v += v >= 0 ? 0.1 : -0.1;  // stay clear of the kink
  const auto w = random_values(x.size(), 52);
  const Tensor g = relu_backward(x, Tensor(x.shape(), w));
  const GradientProbe probes[] = {{"input", x.values(), g.values()}};
  EXPECT_TRUE(gradient_check(probes, [&] { return weighted_sum(relu_forward(x), w); }).passed);
}

TEST(Pool, MaxAndAverageOracle) {
  const Tensor x = column({1, 3, 2, 5, 4, 0, 1, 2});
  const Tensor m = pool1d_forward(x, 4, 4, PoolMode::kMax);
  const Tensor a = pool1d_forward(x, 4, 4, PoolMode::kAverage);
  ASSERT_EQ(m.length(), 2u);
  EXPECT_DOUBLE_EQ(m[0], 5.0);
  EXPECT_DOUBLE_EQ(m[1], 4.0);
  EXPECT_DOUBLE_EQ(a[0], 2.75);
  EXPECT_DOUBLE_EQ(a[1], 1.75);
}

TEST(Pool, OutputLengthFloorsAndRejectsShortInput) {
  EXPECT_EQ(pool_output_length(19200, 4, 4), 4800u);
  EXPECT_EQ(pool_output_length(15, 5, 5), 3u);
  EXPECT_EQ(pool_output_length(14, 5, 5), 2u);
  EXPECT_THROW(pool_output_length(3, 4, 4), ShapeError);
}

TEST(Pool, MaxBackwardRoutesToFirstMaximum) {
  const Tensor x = column({2, 7, 7, 1});
  const Tensor g = pool1d_backward(x, 4, 4, PoolMode::kMax, column({1.0}));
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 1.0);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_EQ(g[3], 0.0);
}

TEST(Pool, GradientsMatchFiniteDifferences) {
  for (PoolMode mode : {PoolMode::kMax, PoolMode::kAverage}) {
    for (std::size_t window : {2, 4, 5}) {
      Tensor x = random_tensor({23, 3}, 60 + window);
      const std::size_t out = pool_output_length(23, window, window);
      const auto w = random_values(out * 3, 61);
      const Tensor g = pool1d_backward(x, window, window, mode, Tensor({out, 3}, w));
      const GradientProbe probes[] = {{"input", x.values(), g.values()}};
      const auto report =
          gradient_check(probes, [&] { return weighted_sum(pool1d_forward(x, window, window, mode), w); });
      EXPECT_TRUE(report.passed) << report.max_relative_error;
    }
  }
}

TEST(BatchNorm, NormalizesWithPopulationVariance) {
  BatchNormState state = BatchNormState::identity(1);
  BatchNormCache cache;
  const Tensor y = batchnorm_train(column({1, 2, 3, 4}), state, cache);
  EXPECT_DOUBLE_EQ(cache.mean[0], 2.5);
  EXPECT_DOUBLE_EQ(cache.variance[0], 1.25);
  const double inv = 1.0 / std::sqrt(1.25 + 1e-5);
  EXPECT_NEAR(y[0], -1.5 * inv, 1e-15);
  EXPECT_NEAR(y[3], 1.5 * inv, 1e-15);
}

TEST(BatchNorm, BatchAxisPoolsStatisticsAcrossSamples) {
  BatchNormState state = BatchNormState::identity(2);
  BatchNormCache cache;
  // Two samples of length 2, two channels: channel 0 = {0,2,4,6}, channel 1 = {1,1,1,1}.
  const Tensor x({2, 2, 2}, std::vector<double>{0, 1, 2, 1, 4, 1, 6, 1});
  const Tensor y = batchnorm_train(x, state, cache);
  EXPECT_DOUBLE_EQ(cache.mean[0], 3.0);
  EXPECT_DOUBLE_EQ(cache.variance[0], 5.0);
  EXPECT_DOUBLE_EQ(cache.mean[1], 1.0);
  EXPECT_DOUBLE_EQ(cache.variance[1], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
}

TEST(BatchNorm, RunningStatisticsSeedThenBlend) {
  BatchNormState state = BatchNormState::identity(1);
  BatchNormCache first, second;
  batchnorm_train(column({1, 3}), state, first);  // mean 2, var 1
  batchnorm_update_running(state, first);
  EXPECT_TRUE(state.has_running_stats);
  EXPECT_DOUBLE_EQ(state.running_mean[0], 2.0);
  EXPECT_DOUBLE_EQ(state.running_var[0], 1.0);
  batchnorm_train(column({10, 14}), state, second);  // mean 12, var 4
  batchnorm_update_running(state, second);
  EXPECT_NEAR(state.running_mean[0], 0.9 * 2.0 + 0.1 * 12.0, 1e-15);
  EXPECT_NEAR(state.running_var[0], 0.9 * 1.0 + 0.1 * 4.0, 1e-15);
}

TEST(BatchNorm, InferUsesRunningStatisticsAndNeedsThem) {
  BatchNormState state = BatchNormState::identity(1);
  EXPECT_THROW(batchnorm_infer(column({1.0}), state), DataError);
  state.running_mean = {1.0};
  state.running_var = {4.0};
  state.scale = {2.0};
  state.offset = {0.5};
  state.has_running_stats = true;
  const Tensor y = batchnorm_infer(column({5.0}), state);
  EXPECT_NEAR(y[0], 2.0 * (5.0 - 1.0) / std::sqrt(4.0 + 1e-5) + 0.5, 1e-12);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  Tensor x = random_tensor({3, 7, 4}, 71);
  BatchNormState state = BatchNormState::identity(4);
  state.scale = random_values(4, 72);
  state.offset = random_values(4, 73);
  const auto w = random_values(x.size(), 74);
  BatchNormCache cache;
  batchnorm_train(x, state, cache);
  const BatchNormGradients g = batchnorm_backward(state, cache, Tensor(x.shape(), w));
  const GradientProbe probes[] = {
      {"input", x.values(), g.input.values()},
      {"scale", state.scale, g.scale},
      {"offset", state.offset, g.offset},
  };
  const auto report = gradient_check(probes, [&] {
    BatchNormCache c;
    return weighted_sum(batchnorm_train(x, state, c), w);
  });
  EXPECT_TRUE(report.passed) << report.worst_probe << " " << report.max_relative_error;
}

TEST(Dense, ForwardOracle) {
  DenseWeights d = DenseWeights::zeros(2, 2);
  d.weights = {1, 2, 3, 4};  // [in][out]
  d.bias = {0.5, -0.5};
  const Tensor y = fully_connected_forward(Tensor({1, 2}, std::vector<double>{1, 1}), d);
  EXPECT_DOUBLE_EQ(y[0], 4.5);
  EXPECT_DOUBLE_EQ(y[1], 5.5);
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  Tensor x = random_tensor({1, 5}, 81);
  DenseWeights d = DenseWeights::zeros(5, 3);
  d.weights = random_values(15, 82);
  d.bias = random_values(3, 83);
  const auto w = random_values(3, 84);
  const DenseGradients g = fully_connected_backward(x, d, Tensor({1, 3}, w));
  const GradientProbe probes[] = {
      {"input", x.values(), g.input.values()},
      {"weights", d.weights, g.weights},
      {"bias", d.bias, g.bias},
  };
  EXPECT_TRUE(gradient_check(probes, [&] { return weighted_sum(fully_connected_forward(x, d), w); }).passed);
}

TEST(GlobalAverage, ForwardAndGradient) {
  Tensor x = Tensor({2, 2}, std::vector<double>{1, 10, 3, 20});
  const Tensor y = global_average_forward(x);
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  EXPECT_DOUBLE_EQ(y[1], 15.0);

  Tensor r = random_tensor({9, 3}, 91);
  const auto w = random_values(3, 92);
  const Tensor g = global_average_backward(r, Tensor({1, 3}, w));
  const GradientProbe probes[] = {{"input", r.values(), g.values()}};
  EXPECT_TRUE(gradient_check(probes, [&] { return weighted_sum(global_average_forward(r), w); }).passed);
}

TEST(Softmax, UniformAndStableForLargeLogits) {
  const auto p = softmax(std::vector<double>{0, 0, 0, 0});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_NEAR(cross_entropy(p, 3), std::log(4.0), 1e-15);
  const auto q = softmax(std::vector<double>{1000, 1000, 0, -1000});
  EXPECT_NEAR(q[0], 0.5, 1e-15);
  EXPECT_NEAR(q[1], 0.5, 1e-15);
  EXPECT_TRUE(std::isfinite(cross_entropy(q, 4)));
  EXPECT_THROW(cross_entropy(q, 5), DataError);
}

TEST(Softmax, CrossEntropyGradientMatchesFiniteDifferences) {
  std::vector<double> z = random_values(4, 101, 3.0);
  const auto g = softmax_cross_entropy_gradient(softmax(z), 2);
  const GradientProbe probes[] = {{"logits", z, g}};
  EXPECT_TRUE(gradient_check(probes, [&] { return cross_entropy(softmax(z), 2); }).passed);
}

}  // namespace
}  // namespace hienet
