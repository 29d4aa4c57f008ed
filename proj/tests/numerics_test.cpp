#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gcnet/numerics/checkpoint.hpp"
#include "gcnet/numerics/gradcheck.hpp"
#include "gcnet/numerics/ops.hpp"

using namespace gcnet;

namespace {

tensor random_tensor(shape_t shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = u(rng);
  return tensor(std::move(shape), std::move(v));
}

void expect_gradcheck(const std::function<tensor(const tensor&)>& f, const tensor& x, double tol = 1e-4) {
  auto rep = finite_difference_check(f, x, {1e-5, tol, 1e-6});
  EXPECT_TRUE(rep.passed) << rep.message << " (max rel " << rep.max_relative_error << ")";
}

}  // namespace

TEST(Conv2d, IdentityKernelOnSinglePixel) {
  tensor x({1, 1, 1, 1}, {3.5});
  tensor k({1, 1, 1, 1}, {1.0});
  EXPECT_DOUBLE_EQ(conv2d(x, k, 1, padding::valid).item(), 3.5);
}

TEST(Conv2d, AllOnesValidIsNine) {
  tensor x({1, 3, 3, 1}, 1.0);
  tensor k({3, 3, 1, 1}, 1.0);
  auto y = conv2d(x, k, 1, padding::valid);
  EXPECT_EQ(y.shape(), (shape_t{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 9.0);
}

TEST(Conv2d, StrideTwoSameHalvesWithCeil) {
  for (std::size_t h : {5u, 8u, 9u, 16u}) {
    for (std::size_t w : {3u, 7u, 12u}) {
      tensor x({2, h, w, 3}, 0.5);
      tensor k({3, 3, 3, 4}, 0.1);
      auto y = conv2d(x, k, 2, padding::same);
      EXPECT_EQ(y.dim(1), (h + 1) / 2);
      EXPECT_EQ(y.dim(2), (w + 1) / 2);
    }
  }
}

TEST(Conv2d, ChannelMismatchRejected) {
  tensor x({1, 4, 4, 3});
  tensor k({3, 3, 2, 4});
  try {
    conv2d(x, k);
    FAIL() << "expected shape_error";
  } catch (const shape_error& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 6, 5, 3}, rng);
  auto k = random_tensor({3, 3, 3, 2}, rng);
  auto y = conv2d(x, k, 2, padding::same);
  // same padding, stride 2: pad_total = (out-1)*2+3-in
  const int oh = 3, ow = 3, pt = ((oh - 1) * 2 + 3 - 6) / 2, pl = ((ow - 1) * 2 + 3 - 5) / 2;
  for (int b = 0; b < 2; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox)
        for (int co = 0; co < 2; ++co) {
          double s = 0;
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy * 2 + ky - pt, ix = ox * 2 + kx - pl;
              if (iy < 0 || ix < 0 || iy >= 6 || ix >= 5) continue;
              for (int ci = 0; ci < 3; ++ci)
                s += x[((b * 6 + iy) * 5 + ix) * 3 + ci] * k[((ky * 3 + kx) * 3 + ci) * 2 + co];
            }
          EXPECT_NEAR(y[((b * oh + oy) * ow + ox) * 2 + co], s, 1e-12);
        }
}

TEST(BatchNorm, ConstantChannelOutputsBeta) {
  tensor x({2, 3, 3, 2}, 4.0);
  tensor gamma({2}, {1.7, -0.3}), beta({2}, {0.25, -1.5});
  batch_norm_state<double> st(2);
  auto y = batch_norm(x, gamma, beta, st, norm_mode::train);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], i % 2 ? -1.5 : 0.25);
}

TEST(BatchNorm, TrainModeStandardizes) {
  // Two values per position alternating 3 and 7: mean 5, std 2.
  std::vector<double> v;
  for (int i = 0; i < 64; ++i) v.push_back(i % 2 ? 7.0 : 3.0);
  tensor x({4, 4, 4, 1}, v);
  batch_norm_state<double> st(1);
  auto y = batch_norm(x, tensor({1}, 1.0), tensor({1}, 0.0), st, norm_mode::train, 0.9, 1e-12);
  double m = 0, s = 0;
  for (double t : y.values()) m += t;
  m /= 64;
  for (double t : y.values()) s += (t - m) * (t - m);
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(std::sqrt(s / 64), 1.0, 1e-6);
  EXPECT_NEAR(st.mean[0], 0.1 * 5.0, 1e-12);
  EXPECT_NEAR(st.var[0], 0.9 + 0.1 * 4.0, 1e-12);
}

TEST(BatchNorm, EvalWithIdentityStatsIsAffine) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({1, 2, 2, 3}, rng);
  tensor gamma({3}, {2.0, 0.5, -1.0}), beta({3}, {0.1, 0.2, 0.3});
  batch_norm_state<double> st(3);
  auto y = batch_norm(x, gamma, beta, st, norm_mode::eval, 0.9, 1e-5);
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_NEAR(y[i], gamma[i % 3] * x[i] / std::sqrt(1 + 1e-5) + beta[i % 3], 1e-12);
}

TEST(BatchNorm, NonPositiveEpsRejected) {
  tensor x({1, 1, 1, 1});
  batch_norm_state<double> st(1);
  EXPECT_THROW(batch_norm(x, tensor({1}, 1.0), tensor({1}, 0.0), st, norm_mode::train, 0.9, 0.0),
               std::invalid_argument);
}

TEST(Elementwise, AnalyticValues) {
  EXPECT_DOUBLE_EQ(sigmoid(tensor::scalar(0.0)).item(), 0.5);
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    auto v = random_tensor({7}, rng, -5, 5);
    EXPECT_NEAR(cosine_similarity(v, v).item(), 1.0, 1e-12);
  }
}

TEST(Elementwise, IncompatibleShapesRejected) {
  EXPECT_THROW(add(tensor({2, 3}), tensor({2})), shape_error);
  EXPECT_THROW(matmul(tensor({2, 3}), tensor({2, 3})), shape_error);
  EXPECT_THROW(concat_last<double>({tensor({2, 3}), tensor({3, 3})}), shape_error);
  EXPECT_NO_THROW(add(tensor({2, 3}), tensor({3})));
}

TEST(Elementwise, CosineSimilarityBounded) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 500; ++t) {
    auto a = random_tensor({4, 5}, rng, -3, 3);
    auto b = random_tensor({4, 5}, rng, -3, 3);
    if (t % 7 == 0) b = scale(a, -2.0);
    const auto sim = cosine_similarity(a, b);
    for (double s : sim.values()) {
      EXPECT_LE(s, 1.0 + 1e-12);
      EXPECT_GE(s, -1.0 - 1e-12);
    }
  }
  // Zero rows stay finite.
  EXPECT_DOUBLE_EQ(cosine_similarity(tensor({3}), tensor({3}, 1.0)).item(), 0.0);
}

TEST(MaxPool, UniqueMaximumIsFixedPoint) {
  std::mt19937_64 rng(17);
  auto y = random_tensor({1, 5, 6, 1}, rng, 0, 0.5);
  y.mutable_data()[2 * 6 + 3] = 0.9;
  auto p = max_pool2d(y, 3, 1);
  EXPECT_DOUBLE_EQ(p[2 * 6 + 3], 0.9);
}

TEST(MaxPool, EqualityMatchesBruteForceLocalMaxima) {
  std::mt19937_64 rng(19);
  for (int t = 0; t < 200; ++t) {
    const std::size_t h = 3 + t % 7, w = 4 + t % 5;
    auto y = random_tensor({1, h, w, 1}, rng, 0, 1);
    if (t % 3 == 0)  // plateaus
      for (auto& v : y.mutable_data()) v = std::round(v * 4) / 4;
    auto p = max_pool2d(y, 3, 1);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        bool local_max = true;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const long r = long(i) + di, c = long(j) + dj;
            if (r < 0 || c < 0 || r >= long(h) || c >= long(w)) continue;
            if (y[r * w + c] > y[i * w + j]) local_max = false;
          }
        EXPECT_EQ(p[i * w + j] == y[i * w + j], local_max);
      }
  }
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(23);
  auto x = random_tensor({3, 4}, rng).set_requires_grad();
  backward(sum(x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SumOfSquares) {
  tensor x({2}, {1.0, 2.0});
  x.set_requires_grad();
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, DetachedHasNoGrad) {
  tensor x({3}, 1.5);
  x.set_requires_grad();
  auto d = x.detach();
  backward(sum(mul(d, d)));
  EXPECT_FALSE(x.has_grad());
  EXPECT_FALSE(d.has_grad());
}

TEST(Backward, NonScalarRejected) {
  tensor x({3}, 1.0);
  x.set_requires_grad();
  EXPECT_THROW(backward(scale(x, 2.0)), shape_error);
}

TEST(Backward, LeafGradientsAccumulateUntilReset) {
  tensor x({2}, {1.0, -1.0});
  x.set_requires_grad();
  auto loss = sum(scale(x, 3.0));
  backward(loss);
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  tensor x({2}, 1.0);
  x.set_requires_grad();
  no_grad_guard g;
  auto y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
}

// Every primitive against central differences at 64-bit precision.
class PrimitiveGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{29};
};

TEST_F(PrimitiveGradients, SigmoidSumSuite) {
  auto x = random_tensor({10}, rng, -3, 3);
  auto rep = finite_difference_check([](const tensor& t) { return sum(sigmoid(t)); }, x, {1e-5, 1e-6, 1e-6});
  EXPECT_TRUE(rep.passed) << rep.max_relative_error;
}

TEST_F(PrimitiveGradients, Elementwise) {
  auto x = random_tensor({3, 4}, rng, 0.2, 2.0);
  auto w = random_tensor({3, 4}, rng, 0.5, 1.5);
  auto bias = random_tensor({4}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(add(t, bias), w)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(div(w, add_scalar(t, 1.0))); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(div(t, w)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(log(t), exp(scale(t, 0.3)))); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(atan(t), sqrt(t))); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(softplus(sub(t, w)), square(t))); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(relu(sub(t, w)), w)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(minimum(t, w), maximum(t, scale(w, 0.9)))); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(clamp(t, 0.5, 1.5), w)); }, x);
}

TEST_F(PrimitiveGradients, Linear) {
  auto x = random_tensor({5, 3}, rng);
  auto w = random_tensor({4, 3}, rng);
  auto b = random_tensor({4}, rng);
  auto probe = random_tensor({5, 4}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(linear(t, w, b), probe)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(linear(x, t, b), probe)); }, w);
  expect_gradcheck([&](const tensor& t) { return sum(mul(linear(x, w, t), probe)); }, b);
  auto m2 = random_tensor({3, 6}, rng);
  auto mp = random_tensor({5, 6}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(matmul(t, m2), mp)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(matmul(x, t), mp)); }, m2);
  auto bq = random_tensor({2, 4, 3}, rng);
  auto bk = random_tensor({2, 5, 3}, rng);
  auto bp = random_tensor({2, 4, 5}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(bmm_nt(t, bk), bp)); }, bq);
  expect_gradcheck([&](const tensor& t) { return sum(mul(bmm_nt(bq, t), bp)); }, bk);
}

TEST_F(PrimitiveGradients, CosineAndNormalize) {
  auto a = random_tensor({4, 6}, rng);
  auto b = random_tensor({4, 6}, rng);
  auto probe = random_tensor({4}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(cosine_similarity(t, b), probe)); }, a);
  auto probe2 = random_tensor({4, 6}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(l2_normalize(t), probe2)); }, a);
}

TEST_F(PrimitiveGradients, ConvPoolUpsample) {
  auto x = random_tensor({2, 5, 6, 3}, rng);
  auto k = random_tensor({3, 3, 3, 2}, rng);
  auto probe = random_tensor({2, 3, 3, 2}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(conv2d(t, k, 2), probe)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(conv2d(x, t, 2), probe)); }, k);
  auto probe_valid = random_tensor({2, 3, 4, 2}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(conv2d(t, k, 1, padding::valid), probe_valid)); }, x);
  auto probe_pool = random_tensor({2, 5, 6, 3}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(max_pool2d(t, 3, 1), probe_pool)); }, x);
  auto probe_up = random_tensor({2, 9, 12, 3}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(upsample2x(t, 9, 12), probe_up)); }, x);
}

TEST_F(PrimitiveGradients, BatchNormBothModes) {
  auto x = random_tensor({2, 3, 3, 4}, rng, -2, 2);
  auto gamma = random_tensor({4}, rng, 0.5, 1.5);
  auto beta = random_tensor({4}, rng);
  auto probe = random_tensor({2, 3, 3, 4}, rng);
  for (auto mode : {norm_mode::train, norm_mode::eval}) {
    batch_norm_state<double> st(4);
    st.mean = {0.1, -0.2, 0.3, 0.0};
    st.var = {1.5, 0.7, 2.0, 1.0};
    auto frozen = st;
    auto f_x = [&](const tensor& t) {
      auto s = frozen;
      return sum(mul(batch_norm(t, gamma, beta, s, mode), probe));
    };
    auto f_g = [&](const tensor& t) {
      auto s = frozen;
      return sum(mul(batch_norm(x, t, beta, s, mode), probe));
    };
    auto f_b = [&](const tensor& t) {
      auto s = frozen;
      return sum(mul(batch_norm(x, gamma, t, s, mode), probe));
    };
    expect_gradcheck(f_x, x);
    expect_gradcheck(f_g, gamma);
    expect_gradcheck(f_b, beta);
  }
}

TEST_F(PrimitiveGradients, ShapeOps) {
  auto x = random_tensor({2, 3, 4}, rng);
  auto y = random_tensor({2, 3, 2}, rng);
  auto probe = random_tensor({2, 3, 6}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(concat_last<double>({t, y}), probe)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(slice_last(t, 1, 2), y)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(slice_first(t, 1, 1), slice_first(x, 0, 1))); }, x);
  auto p1 = random_tensor({2, 3, 1}, rng);
  auto p2 = random_tensor({2, 3}, rng);
  auto p3 = random_tensor({3, 4}, rng);
  expect_gradcheck([&](const tensor& t) { return sum(mul(max_last(t), p1)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(sum_last(t), p2)); }, x);
  expect_gradcheck([&](const tensor& t) { return sum(mul(gather_rows(flatten(t), {5, 0, 5}), p3)); }, x);
  expect_gradcheck([&](const tensor& t) { return mean(mul(t, t)); }, x);
}

TEST(GradCheck, ReportsNonFinite) {
  tensor x({2}, {-1.0, 1.0});
  auto rep = finite_difference_check([](const tensor& t) { return sum(log(t)); }, x);
  EXPECT_FALSE(rep.finite);
  EXPECT_FALSE(rep.passed);
}

TEST(GradCheck, DetectsWrongGradient) {
  // relu at an exact kink: analytic 0, numeric 0.5.
  tensor x({1}, {0.0});
  auto rep = finite_difference_check([](const tensor& t) { return sum(relu(t)); }, x);
  EXPECT_FALSE(rep.passed);
}

TEST(Checkpoint, BitExactRoundTrip) {
  std::mt19937_64 rng(31);
  checkpoint ck;
  ck.set_meta("network.c", "64");
  ck.set_meta("note", "two words");
  auto a = random_tensor({3, 4}, rng);
  a.mutable_data()[0] = -0.0;
  a.mutable_data()[1] = std::numeric_limits<double>::denorm_min();
  ck.put("a.weight", a);
  ck.put("b", a.cast<float>());
  ck.put("scalar", tensor::scalar(1.0 / 3.0));
  auto bytes = ck.serialize();
  auto back = checkpoint::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.meta("note"), "two words");
  auto a2 = back.get<double>("a.weight");
  EXPECT_EQ(a2.shape(), a.shape());
  EXPECT_EQ(std::memcmp(a2.data().data(), a.data().data(), a.size() * sizeof(double)), 0);
  EXPECT_EQ(back.shape("scalar"), shape_t{});
  auto f = back.values<float>("b");
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(f[i], static_cast<float>(a[i]));
}

TEST(Checkpoint, ManifestIsReadableText) {
  checkpoint ck;
  ck.put("w", tensorf({2, 2}, 1.0f));
  auto bytes = ck.serialize();
  EXPECT_EQ(bytes.rfind("GCNET-CHECKPOINT 1\ntensor w f32 2 2 2 0 16\nend\n", 0), 0u);
  // 1.0f little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 1]), 0x3Fu);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0x80u);
}

TEST(Checkpoint, CorruptInputsRejected) {
  EXPECT_THROW(checkpoint::deserialize("NOPE\n"), format_error);
  EXPECT_THROW(checkpoint::deserialize("GCNET-CHECKPOINT 1\ntensor w f32 1 4 0 16\nend\n"), format_error);
  EXPECT_THROW(checkpoint::deserialize("GCNET-CHECKPOINT 1\nbogus\nend\n"), format_error);
}
