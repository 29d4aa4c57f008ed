#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gcnet/layers/network.hpp"
#include "oracles.hpp"

using namespace gcnet;
using oracle::cos_rows;

namespace {

tensor random_tensor(shape_t shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = u(rng);
  return tensor(std::move(shape), std::move(v));
}

network_config small_config(std::size_t h = 64, std::size_t w = 64, std::size_t c = 32) {
  network_config cfg;
  cfg.input_h = h;
  cfg.input_w = w;
  cfg.channels = c;
  cfg.corr_channels = 16;
  cfg.confidence_hidden = 8;
  return cfg;
}

}  // namespace

TEST(PositionEmbedding, HandEvaluatedCorner) {
  auto p = position_embedding<double>(2, 2, 4);
  const double expected[] = {1, -1, 1, -1};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(p[k], expected[k], 1e-12);
  // P[1,0,0] = cos(pi/2)
  EXPECT_NEAR(p[(1 * 2 + 0) * 4 + 0], 0.0, 1e-12);
}

TEST(PositionEmbedding, SelfSimilarityIsOne) {
  auto p = position_embedding<double>(5, 7, 16);
  for (std::size_t i = 0; i < 35; ++i) EXPECT_NEAR(cos_rows(p, i, p, i, 16), 1.0, 1e-12);
}

TEST(PositionEmbedding, NearPositionsMoreSimilar) {
  auto p = position_embedding<double>(16, 16, 64);
  const double near = cos_rows(p, 0, p, 1 * 16, 64);
  const double far = cos_rows(p, 0, p, 8 * 16, 64);
  EXPECT_GT(near, far);
}

TEST(PositionEmbedding, MonotoneAlongEachAxis) {
  for (auto [h, w, c] : {std::tuple{16u, 28u, 64u}, {8u, 8u, 32u}, {4u, 6u, 8u}, {10u, 3u, 12u}}) {
    auto p = position_embedding<double>(h, w, c);
    for (std::size_t col = 0; col < w; ++col)
      for (std::size_t i = 0; i < h; ++i) {
        double prev = 2.0;
        for (std::size_t d = 0; d <= h / 2 && i + d < h; ++d) {
          const double s = cos_rows(p, i * w + col, p, (i + d) * w + col, c);
          EXPECT_LE(s, prev + 1e-12);
          prev = s;
        }
      }
  }
}

TEST(PositionEmbedding, ExplicitVariantIsIndex) {
  auto p = position_embedding<double>(3, 4, 6, position_embedding_kind::explicit_index);
  EXPECT_DOUBLE_EQ(p[(2 * 4 + 3) * 6 + 0], 2.0);
  EXPECT_DOUBLE_EQ(p[(2 * 4 + 3) * 6 + 5], 3.0);
}

TEST(PositionEmbedding, OddChannelsRejected) { EXPECT_THROW(position_embedding<double>(2, 2, 5), config_error); }

TEST(Gate, IdentityNullAndHalf) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3, 4, 5}, rng);
  auto y1 = gate(x, tensor({2, 3, 4, 1}, 1.0));
  auto y0 = gate(x, tensor({2, 3, 4, 1}, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_DOUBLE_EQ(y1[i], x[i]);
    EXPECT_DOUBLE_EQ(y0[i], 0.0);
  }
  auto half = gate(tensor({1, 2, 2, 3}, 2.0), tensor({1, 2, 2, 1}, 0.5));
  for (double v : half.values()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Gate, SpatialMismatchRejected) {
  EXPECT_THROW(gate(tensor({1, 3, 3, 4}), tensor({1, 3, 2, 1})), shape_error);
  EXPECT_THROW(gate(tensor({1, 3, 3, 4}), tensor({1, 3, 3, 2})), shape_error);
}

TEST(Gate, MultiClassAttentionIsChannelMax) {
  tensor y({1, 1, 2, 3}, {0.1, 0.7, 0.3, 0.9, 0.2, 0.4});
  auto a = gate_attention(y);
  EXPECT_EQ(a.shape(), (shape_t{1, 1, 2, 1}));
  EXPECT_DOUBLE_EQ(a[0], 0.7);
  EXPECT_DOUBLE_EQ(a[1], 0.9);
}

TEST(GlobalCorrelation, MatchesBruteForceOnAllSmallMaps) { EXPECT_EQ(oracle::check_correlation(), ""); }

TEST(GlobalCorrelation, OneHotAgainstOrthogonalKeys) {
  // 2x2 map, c = 4: K rows are basis vectors; Q[0,1] equals K row 2.
  tensor k({1, 2, 2, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 3, 0, 0, 0, 0, 1});
  tensor q({1, 2, 2, 4}, 0.0);
  for (int j = 0; j < 4; ++j) q.mutable_data()[1 * 4 + j] = k[2 * 4 + j];
  auto s = similarity_maps(q, k);
  for (int pos = 0; pos < 4; ++pos) EXPECT_NEAR(s[1 * 4 + pos], pos == 2 ? 1.0 : 0.0, 1e-12);
}

TEST(GlobalCorrelation, SelfSimilarityDiagonal) {
  std::mt19937_64 rng(9);
  auto q = random_tensor({1, 3, 4, 6}, rng);
  auto s = similarity_maps(q, q);
  for (std::size_t p = 0; p < 12; ++p) EXPECT_NEAR(s[p * 12 + p], 1.0, 1e-12);
}

TEST(GlobalCorrelation, ZeroRowsStayFinite) {
  tensor q({1, 2, 2, 3}, 0.0), k({1, 2, 2, 3}, 0.0);
  auto s = similarity_maps(q, k);
  for (double v : s.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(GlobalCorrelation, SparseRowsEqualDense) {
  std::mt19937_64 rng(10);
  auto q = random_tensor({1, 3, 5, 6}, rng);
  auto k = random_tensor({1, 3, 5, 6}, rng);
  auto w = random_tensor({4, 15}, rng);
  auto dense = global_correlation(q, k, w);
  auto kn = l2_normalize(reshape(k, {15, 6}));
  auto rows = gather_rows(reshape(q, {15, 6}), {0, 7, 14});
  auto sparse = sparse_correlation(rows, kn, w);
  const std::size_t pick[] = {0, 7, 14};
  for (int r = 0; r < 3; ++r)
    for (int o = 0; o < 4; ++o) EXPECT_NEAR(sparse[r * 4 + o], dense[pick[r] * 4 + o], 1e-12);
}

TEST(NetworkConfig, RejectsNonStrideMultiples) {
  auto cfg = small_config(60, 64);
  EXPECT_THROW(cfg.validate(), config_error);
  EXPECT_THROW(gcnet_model<double>{cfg}, config_error);
  gcnet_model<double> m(small_config());
  EXPECT_THROW(m.detect(tensor({1, 56, 64, 3}), norm_mode::eval), config_error);
}

TEST(NetworkConfig, KeyValueRoundTrip) {
  auto cfg = small_config();
  cfg.use_gate = false;
  cfg.position_embedding = position_embedding_kind::explicit_index;
  auto back = network_config::from_kv(cfg.to_kv());
  EXPECT_EQ(back.to_kv(), cfg.to_kv());
}

TEST(ComputeQkv, NoGateSharedZeroWeightsGivesEqualMaps) {
  auto cfg = small_config();
  cfg.use_gate = false;
  gcnet_model<double> m(cfg);
  for (auto& [name, p] : m.parameters())
    if (name == "qkv.q_proj" || name == "qkv.k_proj")
      for (auto& v : p.get().mutable_data()) v = 0.0;
  std::mt19937_64 rng(2);
  auto f = random_tensor({1, 8, 8, 32}, rng);
  auto maps = m.compute_qkv(f, tensor({1, 8, 8, 1}, 0.3), norm_mode::eval);
  for (std::size_t i = 0; i < maps.q.size(); ++i) EXPECT_DOUBLE_EQ(maps.q[i], maps.k[i]);
}

TEST(ComputeQkv, UnitAttentionLeavesKeysUnchanged) {
  auto gated = small_config();
  auto plain = small_config();
  plain.use_gate = false;
  gcnet_model<double> a(gated, 5), b(plain, 5);
  std::mt19937_64 rng(3);
  auto f = random_tensor({1, 8, 8, 32}, rng);
  auto ka = a.compute_qkv(f, tensor({1, 8, 8, 1}, 1.0), norm_mode::eval).k;
  auto kb = b.compute_qkv(f, tensor({1, 8, 8, 1}, 1.0), norm_mode::eval).k;
  for (std::size_t i = 0; i < ka.size(); ++i) EXPECT_DOUBLE_EQ(ka[i], kb[i]);
}

TEST(ComputeQkv, QueryDependsOnPositionEmbedding) {
  gcnet_model<double> m(small_config());
  std::mt19937_64 rng(4);
  auto f = random_tensor({1, 8, 8, 32}, rng);
  auto y = tensor({1, 8, 8, 1}, 0.5);
  auto q0 = m.compute_qkv(f, y, norm_mode::eval).q;
  m.position().mutable_data()[5] += 0.25;
  auto q1 = m.compute_qkv(f, y, norm_mode::eval).q;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < q0.size(); ++i) changed += q0[i] != q1[i];
  EXPECT_EQ(changed, 1u);
}

TEST(BoxHead, ShapePositivityAndValueToggle) {
  std::mt19937_64 rng(6);
  auto cfg = small_config();
  gcnet_model<double> with_v(cfg);
  auto corr = random_tensor({2, 64, 16}, rng, -3, 3);
  auto vals = random_tensor({2, 64, 32}, rng, -3, 3);
  auto out = with_v.regression_head(corr, vals, norm_mode::train, false);
  EXPECT_EQ(out.boxes.shape(), (shape_t{2, 64, 4}));
  for (std::size_t i = 0; i < out.boxes.size(); i += 4) {
    EXPECT_GT(out.boxes[i + 2], 0.0);
    EXPECT_GT(out.boxes[i + 3], 0.0);
  }
  cfg.use_value_concat = false;
  gcnet_model<double> without_v(cfg);
  // V widens the head input by c: normalization (gamma, beta), box rows (4)
  // and the confidence hidden layer each gain c weights per unit.
  const std::size_t inner = 2 + 4 + cfg.confidence_hidden;
  EXPECT_EQ(with_v.parameter_count() - without_v.parameter_count(), cfg.channels * inner);
  auto out2 = without_v.regression_head(corr, vals, norm_mode::train, false);
  EXPECT_EQ(out2.boxes.shape(), (shape_t{2, 64, 4}));
}

TEST(Detection, StrideEightShapes) {
  gcnet_model<double> m(small_config());
  auto out = m.detect(tensor({1, 64, 64, 3}, 0.5), norm_mode::train);
  EXPECT_EQ(out.confidence.shape(), (shape_t{1, 8, 8, 1}));
  EXPECT_EQ(out.boxes.shape(), (shape_t{1, 64, 4}));
  EXPECT_EQ(out.q.shape(), (shape_t{1, 8, 8, 32}));
  auto cfg = small_config(128, 224);
  gcnet_model<float> big(cfg);
  no_grad_guard ng;
  auto o2 = big.detect(tensorf({1, 128, 224, 3}, 0.2f), norm_mode::eval);
  EXPECT_EQ(o2.confidence.shape(), (shape_t{1, 16, 28, 1}));
  for (float v : o2.confidence.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Detection, EvalIsDeterministicAndSparseMatchesDense) {
  gcnet_model<double> m(small_config());
  std::mt19937_64 rng(8);
  auto img = random_tensor({1, 64, 64, 3}, rng, 0, 1);
  m.detect(img, norm_mode::train);  // populate running statistics
  no_grad_guard ng;
  auto a = m.detect(img, norm_mode::eval);
  auto b = m.detect(img, norm_mode::eval);
  ASSERT_EQ(a.boxes.values(), b.boxes.values());
  ASSERT_EQ(a.confidence.values(), b.confidence.values());
  const std::vector<std::size_t> peaks{0, 9, 33, 63};
  auto sparse = m.boxes_at(a, 0, peaks);
  for (std::size_t r = 0; r < peaks.size(); ++r)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(sparse[r * 4 + j], a.boxes[peaks[r] * 4 + j], 1e-10);
}

TEST(Tracking, ArityOrderAndRange) {
  gcnet_model<double> m(small_config());
  std::mt19937_64 rng(12);
  no_grad_guard ng;
  auto prev = m.detect(random_tensor({1, 64, 64, 3}, rng, 0, 1), norm_mode::eval, false);
  auto cur = m.detect(random_tensor({1, 64, 64, 3}, rng, 0, 1), norm_mode::eval, false);
  auto keys = m.normalized_keys(cur, 0);
  std::vector<track_query<double>> qs{m.query_at(prev.q, prev.v, 0, 1, 2), m.query_at(prev.q, prev.v, 0, 5, 5),
                                      m.query_at(prev.k, prev.v, 0, 7, 0)};
  auto all = m.track(qs, keys);
  ASSERT_EQ(all.boxes.dim(0), 3u);
  ASSERT_EQ(all.confidence.dim(0), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    auto one = m.track(std::span(qs).subspan(i, 1), keys);
    EXPECT_NEAR(one.confidence[0], all.confidence[i], 1e-12);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(one.boxes[j], all.boxes[i * 4 + j], 1e-12);
    EXPECT_GT(all.confidence[i], 0.0);
    EXPECT_LT(all.confidence[i], 1.0);
    EXPECT_TRUE(std::isfinite(all.boxes[i * 4]));
  }
  EXPECT_EQ(m.track({}, keys).boxes.dim(0), 0u);
}

TEST(Tracking, SparseMatchesDenseTracking) {
  gcnet_model<double> m(small_config());
  std::mt19937_64 rng(13);
  no_grad_guard ng;
  auto prev = m.detect(random_tensor({1, 64, 64, 3}, rng, 0, 1), norm_mode::eval, false);
  auto cur = m.detect(random_tensor({1, 64, 64, 3}, rng, 0, 1), norm_mode::eval, false);
  auto dense = m.track_dense(prev.q, prev.v, cur.k);
  auto sparse = m.track(std::vector{m.query_at(prev.q, prev.v, 0, 3, 6)}, m.normalized_keys(cur, 0));
  const std::size_t pos = 3 * 8 + 6;
  EXPECT_NEAR(sparse.confidence[0], dense.confidence[pos], 1e-10);
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(sparse.boxes[j], dense.boxes[pos * 4 + j], 1e-10);
}

TEST(Tracking, SharesRegressionWeightsWithDetection) {
  gcnet_model<double> m(small_config());
  std::mt19937_64 rng(14);
  no_grad_guard ng;
  auto img = random_tensor({1, 64, 64, 3}, rng, 0, 1);
  auto base = m.detect(img, norm_mode::eval);
  auto keys = m.normalized_keys(base, 0);
  std::vector qs{m.query_at(base.q, base.v, 0, 2, 2)};
  auto t0 = m.track(qs, keys);

  // Tracking-only layers leave detection untouched.
  for (auto& [name, p] : m.tracking_confidence_parameters()) p.get().mutable_data()[0] += 1.0;
  auto d1 = m.detect(img, norm_mode::eval);
  EXPECT_EQ(d1.boxes.values(), base.boxes.values());
  EXPECT_NE(m.track(qs, keys).confidence[0], t0.confidence[0]);

  // The correlation weight is one object used by both paths.
  m.corr_weight().mutable_data()[3] += 0.5;
  auto d2 = m.detect(img, norm_mode::eval);
  auto t2 = m.track(qs, keys);
  EXPECT_NE(d2.boxes.values(), base.boxes.values());
  EXPECT_NE(t2.boxes.values(), t0.boxes.values());

  std::size_t shared = 0;
  for (auto& [name, p] : m.parameters())
    if (name.rfind("track.", 0) != 0) ++shared;
  EXPECT_EQ(m.parameters().size() - shared, m.tracking_confidence_parameters().size());
}
