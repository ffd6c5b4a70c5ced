#include <gtest/gtest.h>

#include "gradcheck.hpp"

using namespace revit;

namespace {

AttentionParams<double> random_params(std::size_t dim, std::size_t heads, Rng& rng) {
  AttentionParams<double> p;
  p.wq = oracle::random_tensor<double>({dim, dim}, rng);
  p.wk = oracle::random_tensor<double>({dim, dim}, rng);
  p.wv = oracle::random_tensor<double>({dim, dim}, rng);
  p.wo = oracle::random_tensor<double>({dim, dim}, rng);
  p.heads = heads;
  return p;
}

}  // namespace

TEST(RawScores, ZerosGiveZeros) {
  auto s = raw_scores(Tensor<float>::zeros({1, 3, 2}), Tensor<float>::zeros({1, 3, 2}));
  EXPECT_EQ(s.shape(), (Shape{1, 3, 3}));
  for (float v : s.data()) EXPECT_EQ(v, 0.0f);
}

TEST(RawScores, IdentityCase) {
  auto i2 = Tensor<double>(Shape{1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  auto s = raw_scores(i2, i2);
  EXPECT_NEAR(s.data()[0], 0.70711, 1e-5);
  EXPECT_EQ(s.data()[1], 0.0);
  EXPECT_EQ(s.data()[2], 0.0);
  EXPECT_NEAR(s.data()[3], 0.70711, 1e-5);
}

TEST(RawScores, MatchesDoubleLoop) {
  Rng rng(4);
  auto q = oracle::random_tensor<double>({1, 3, 2}, rng);
  auto k = oracle::random_tensor<double>({1, 3, 2}, rng);
  auto s = raw_scores(q, k);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 2; ++c) dot += q.at({0, i, c}) * k.at({0, j, c});
      EXPECT_NEAR(s.at({0, i, j}), dot / std::sqrt(2.0), 1e-12);
    }
}

TEST(RawScores, ShapeMismatch) {
  EXPECT_THROW(raw_scores(Tensor<float>::zeros({1, 3, 2}), Tensor<float>::zeros({1, 4, 2})), DimensionError);
}

TEST(ResidualScores, AlphaOneKeepsCurrent) {
  Rng rng(8);
  auto cur = oracle::random_tensor<float>({2, 3, 3}, rng);
  ScoreState<float> prev{oracle::random_tensor<float>({2, 3, 3}, rng), 0};
  auto s = residual_scores(cur, &prev, 1, Tensor<float>::scalar(1.0f));
  for (std::size_t i = 0; i < cur.numel(); ++i) EXPECT_EQ(s.data()[i], cur.data()[i]);
}

TEST(ResidualScores, AlphaZeroGivesPrevious) {
  Rng rng(8);
  auto cur = oracle::random_tensor<float>({2, 3, 3}, rng);
  ScoreState<float> prev{oracle::random_tensor<float>({2, 3, 3}, rng), 0};
  auto s = residual_scores(cur, &prev, 2, Tensor<float>::scalar(0.0f));
  for (std::size_t i = 0; i < cur.numel(); ++i) EXPECT_EQ(s.data()[i], prev.scores.data()[i]);
}

TEST(ResidualScores, Midpoint) {
  ScoreState<float> prev{Tensor<float>(Shape{1, 1, 1}, 0.0f), 0};
  auto s = residual_scores(Tensor<float>(Shape{1, 1, 1}, 2.0f), &prev, 1, Tensor<float>::scalar(0.5f));
  EXPECT_EQ(s.item(), 1.0f);
}

TEST(ResidualScores, LayerZeroIgnoresPrevious) {
  auto cur = Tensor<float>(Shape{1, 2, 2}, 3.0f);
  auto s = residual_scores<float>(cur, nullptr, 0, Tensor<float>::scalar(0.5f));
  for (float v : s.data()) EXPECT_EQ(v, 3.0f);
}

TEST(ResidualScores, Errors) {
  auto cur = Tensor<float>(Shape{1, 2, 2}, 1.0f);
  EXPECT_THROW(residual_scores<float>(cur, nullptr, 1, Tensor<float>::scalar(0.5f)), ContractError);
  ScoreState<float> bad{Tensor<float>(Shape{1, 3, 3}, 1.0f), 0};
  EXPECT_THROW(residual_scores(cur, &bad, 1, Tensor<float>::scalar(0.5f)), DimensionError);
}

TEST(ResidualScores, ConvexityOfBlend) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    auto cur = oracle::random_tensor<double>({2, 4, 4}, rng, -5, 5);
    ScoreState<double> prev{oracle::random_tensor<double>({2, 4, 4}, rng, -5, 5), 0};
    const double alpha = rng.uniform();
    auto s = residual_scores(cur, &prev, 1, Tensor<double>::scalar(alpha));
    for (std::size_t i = 0; i < s.numel(); ++i) {
      const double lo = std::min(cur.data()[i], prev.scores.data()[i]);
      const double hi = std::max(cur.data()[i], prev.scores.data()[i]);
      EXPECT_GE(s.data()[i], lo - 1e-12);
      EXPECT_LE(s.data()[i], hi + 1e-12);
    }
  }
}

TEST(Attend, IdentityKeepsValues) {
  Rng rng(5);
  auto v = oracle::random_tensor<double>({1, 3, 2}, rng);
  auto a = Tensor<double>(Shape{1, 3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = attend(a, v);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(out.data()[i], v.data()[i]);
}

TEST(Attend, UniformGivesColumnMean) {
  Rng rng(5);
  auto v = oracle::random_tensor<double>({1, 3, 2}, rng);
  auto out = attend(Tensor<double>(Shape{1, 3, 3}, 1.0 / 3.0), v);
  for (std::size_t c = 0; c < 2; ++c) {
    const double mean = (v.at({0, 0, c}) + v.at({0, 1, c}) + v.at({0, 2, c})) / 3.0;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out.at({0, i, c}), mean, 1e-12);
  }
}

TEST(Attend, MatchesDoubleLoopAndIsConvex) {
  Rng rng(12);
  auto a = oracle::from_mat<double>(oracle::random_stochastic(3, rng));
  a = reshape(a, Shape{1, 3, 3});
  auto v = oracle::random_tensor<double>({1, 3, 2}, rng);
  auto out = attend(a, v);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0, lo = 1e9, hi = -1e9;
      for (std::size_t j = 0; j < 3; ++j) {
        s += a.at({0, i, j}) * v.at({0, j, c});
        lo = std::min(lo, v.at({0, j, c}));
        hi = std::max(hi, v.at({0, j, c}));
      }
      EXPECT_NEAR(out.at({0, i, c}), s, 1e-12);
      EXPECT_GE(out.at({0, i, c}), lo - 1e-12);
      EXPECT_LE(out.at({0, i, c}), hi + 1e-12);
    }
}

TEST(Attend, ShapeMismatch) {
  EXPECT_THROW(attend(Tensor<float>::zeros({1, 3, 3}), Tensor<float>::zeros({1, 4, 2})), DimensionError);
}

TEST(AlphaMode, Parsing) {
  EXPECT_EQ(AlphaMode::parse("shared").kind, AlphaKind::shared);
  EXPECT_EQ(AlphaMode::parse("per_layer").kind, AlphaKind::per_layer);
  auto f = AlphaMode::parse("fixed:0.25");
  EXPECT_EQ(f.kind, AlphaKind::fixed);
  EXPECT_EQ(f.value, 0.25);
  EXPECT_EQ(AlphaMode::parse("fixed(1.0)").value, 1.0);
  EXPECT_EQ(AlphaMode::parse(f.str()), f);
  EXPECT_THROW(AlphaMode::parse("fixed:1.5"), ValidationError);
  EXPECT_THROW(AlphaMode::parse("fixed:abc"), ValidationError);
  EXPECT_THROW(AlphaMode::parse("sometimes"), ValidationError);
}

TEST(AlphaGate, EffectiveValues) {
  AlphaGate<float> shared(AlphaMode::parse("shared"), 3);
  EXPECT_TRUE(shared.trainable());
  EXPECT_EQ(shared.raw().shape(), (Shape{1}));
  EXPECT_DOUBLE_EQ(shared.value(2), 0.5);
  AlphaGate<float> per(AlphaMode::parse("per_layer"), 3);
  EXPECT_EQ(per.raw().shape(), (Shape{3}));
  per.raw().data()[1] = 2.0f;
  EXPECT_NEAR(per.value(1), 1.0 / (1.0 + std::exp(-2.0)), 1e-7);
  EXPECT_NEAR(per.effective(1).item(), per.value(1), 1e-6);
  per.raw().data()[0] = 1e4f;
  EXPECT_LE(per.value(0), 1.0);
  AlphaGate<float> fixed(AlphaMode::parse("fixed:0.3"), 3);
  EXPECT_FALSE(fixed.trainable());
  EXPECT_FLOAT_EQ(fixed.effective(0).item(), 0.3f);
}

TEST(Mhsa, MatchesNaiveOracle) {
  Rng rng(31);
  auto p = random_params(4, 2, rng);
  auto x = oracle::random_tensor<double>({1, 3, 4}, rng);
  auto out = mhsa_forward<double>(x, p, nullptr, nullptr, 0);
  auto xm = oracle::to_mat(reshape(x, Shape{3, 4}));
  auto ref = oracle::naive_mhsa(xm, oracle::to_mat(p.wq), oracle::to_mat(p.wk), oracle::to_mat(p.wv),
                                oracle::to_mat(p.wo), 2, nullptr, 1.0, nullptr);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.out.at({0, i, j}), ref[i][j], 1e-12);
}

TEST(Mhsa, ResidualLayerMatchesNaiveOracle) {
  Rng rng(32);
  auto p0 = random_params(4, 2, rng);
  auto p1 = random_params(4, 2, rng);
  auto x = oracle::random_tensor<double>({1, 3, 4}, rng);
  AlphaGate<double> gate(AlphaMode::parse("fixed:0.3"), 2);
  auto l0 = mhsa_forward<double>(x, p0, nullptr, &gate, 0);
  auto l1 = mhsa_forward<double>(x, p1, &l0.state, &gate, 1);

  auto xm = oracle::to_mat(reshape(x, Shape{3, 4}));
  std::vector<oracle::Mat> s0, s1;
  oracle::naive_mhsa(xm, oracle::to_mat(p0.wq), oracle::to_mat(p0.wk), oracle::to_mat(p0.wv), oracle::to_mat(p0.wo),
                     2, nullptr, 1.0, &s0);
  auto ref = oracle::naive_mhsa(xm, oracle::to_mat(p1.wq), oracle::to_mat(p1.wk), oracle::to_mat(p1.wv),
                                oracle::to_mat(p1.wo), 2, &s0, 0.3, &s1);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(l1.out.at({0, i, j}), ref[i][j], 1e-12);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(l1.state.scores.at({0, h, i, j}), s1[h][i][j], 1e-12);
}

TEST(Mhsa, SingleToken) {
  Rng rng(33);
  auto p = random_params(4, 2, rng);
  auto x = oracle::random_tensor<double>({1, 1, 4}, rng);
  auto out = mhsa_forward<double>(x, p, nullptr, nullptr, 0);
  for (double a : out.weights.data()) EXPECT_EQ(a, 1.0);
  auto expected = oracle::matmul(oracle::matmul(oracle::to_mat(reshape(x, Shape{1, 4})), oracle::to_mat(p.wv)),
                                 oracle::to_mat(p.wo));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.out.data()[j], expected[0][j], 1e-12);
}

TEST(Mhsa, FixedAlphaOneMatchesPlain) {
  Rng rng(34);
  auto p0 = random_params(8, 2, rng);
  auto p1 = random_params(8, 2, rng);
  auto x = oracle::random_tensor<double>({2, 5, 8}, rng);
  AlphaGate<double> gate(AlphaMode::parse("fixed:1.0"), 2);
  auto r0 = mhsa_forward<double>(x, p0, nullptr, &gate, 0);
  auto r1 = mhsa_forward<double>(x, p1, &r0.state, &gate, 1);
  auto plain = mhsa_forward<double>(x, p1, nullptr, nullptr, 1);
  for (std::size_t i = 0; i < plain.out.numel(); ++i) EXPECT_NEAR(r1.out.data()[i], plain.out.data()[i], 1e-6);
}

TEST(Mhsa, RowsAreStochastic) {
  Rng rng(35);
  auto p = random_params(8, 4, rng);
  auto x = oracle::random_tensor<float>({2, 6, 8}, rng, -3, 3);
  AttentionParams<float> pf{};
  pf.heads = 4;
  for (auto [src, dst] : {std::pair{&p.wq, &pf.wq}, {&p.wk, &pf.wk}, {&p.wv, &pf.wv}, {&p.wo, &pf.wo}}) {
    std::vector<float> d(src->data().begin(), src->data().end());
    *dst = Tensor<float>(src->shape(), std::move(d));
  }
  auto out = mhsa_forward<float>(x, pf, nullptr, nullptr, 0);
  const std::size_t rows = out.weights.numel() / 6;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += out.weights.data()[r * 6 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Mhsa, RejectsWrongInputDim) {
  Rng rng(36);
  auto p = random_params(4, 2, rng);
  EXPECT_THROW(mhsa_forward<double>(Tensor<double>::zeros({1, 3, 5}), p, nullptr, nullptr, 0), DimensionError);
}

TEST(Mhsa, AlphaReceivesGradient) {
  Rng rng(37);
  auto p0 = random_params(4, 2, rng);
  auto p1 = random_params(4, 2, rng);
  auto x = oracle::random_tensor<double>({1, 3, 4}, rng);
  auto w = oracle::random_tensor<double>({1, 3, 4}, rng);
  AlphaGate<double> gate(AlphaMode::parse("shared"), 2);
  gate.raw().data()[0] = 0.3;
  auto loss = [&] {
    auto l0 = mhsa_forward<double>(x, p0, nullptr, &gate, 0);
    auto l1 = mhsa_forward<double>(l0.out, p1, &l0.state, &gate, 1);
    return sum(mul(l1.out, w));
  };
  auto r = gradcheck::check<double>(loss, {gate.raw()}, 1e-3, 1e-6);
  EXPECT_LT(r.max_rel, 1e-5);
  EXPECT_GT(std::abs(gate.raw().grad()[0]), 1e-8);
}

TEST(Mhsa, GradientsThroughScoreState) {
  Rng rng(38);
  auto p0 = random_params(4, 2, rng);
  auto p1 = random_params(4, 2, rng);
  auto x = oracle::random_tensor<double>({1, 3, 4}, rng);
  auto w = oracle::random_tensor<double>({1, 3, 4}, rng);
  AlphaGate<double> gate(AlphaMode::parse("shared"), 2);
  // Only the second layer's output enters the loss, so layer-0 projections
  // get gradient solely through the carried scores.
  auto loss = [&] {
    auto l0 = mhsa_forward<double>(x, p0, nullptr, &gate, 0);
    auto l1 = mhsa_forward<double>(x, p1, &l0.state, &gate, 1);
    return sum(mul(l1.out, w));
  };
  auto r = gradcheck::check<double>(loss, {p0.wq, p0.wk, p1.wq, p1.wv}, 1e-3, 1e-6);
  EXPECT_LT(r.max_rel, 1e-5);
  double mag = 0.0;
  for (double g : p0.wq.grad()) mag += std::abs(g);
  EXPECT_GT(mag, 1e-8);
}
