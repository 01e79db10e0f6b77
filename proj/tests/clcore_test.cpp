#include "relocl/clcore/clcore.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace relocl;
using namespace relocl::cl;
using model::EmbeddingBundle;

namespace {

ParameterSet<double> two_tensors(double a, double b, double c) {
  ParameterSet<double> p;
  Matrix<double> x(1, 2);
  x << a, b;
  p.add("x", x);
  p.add("y", Matrix<double>::Constant(1, 1, c));
  return p;
}

ConsolidationAnchor<double> anchor_at(const ParameterSet<double>& p, Vector<double> fisher) {
  return {p, {std::move(fisher)}};
}

Matrix<double> rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix<double> m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

}  // namespace

TEST(Consolidation, ZeroAtAnchor) {
  auto p = two_tensors(0.3, -1.0, 2.0);
  auto a = anchor_at(p, Vector<double>::Ones(3));
  EXPECT_EQ(consolidation_loss(p, a, 200.0), 0.0);
}

TEST(Consolidation, UnitFisherArithmetic) {
  auto prev = two_tensors(0, 0, 0);
  auto theta = two_tensors(1, -1, 0);
  auto a = anchor_at(prev, Vector<double>::Ones(3));
  EXPECT_DOUBLE_EQ(consolidation_loss(theta, a, 2.0), 2.0);
  EXPECT_EQ(consolidation_loss(theta, a, 0.0), 0.0);
}

TEST(Consolidation, LengthMismatchIsAnError) {
  auto prev = two_tensors(0, 0, 0);
  EXPECT_THROW(consolidation_loss(prev, anchor_at(prev, Vector<double>::Ones(2)), 1.0), CLError);
  ParameterSet<double> other;
  other.add("x", Matrix<double>::Zero(1, 2));
  EXPECT_THROW(consolidation_loss(other, anchor_at(prev, Vector<double>::Ones(3)), 1.0), CLError);
}

TEST(Consolidation, TapeGradientMatchesClosedForm) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet<double> prev;
    prev.add("a", Matrix<double>::NullaryExpr(3, 4, [&] { return n(rng); }));
    prev.add("b", Matrix<double>::NullaryExpr(1, 5, [&] { return n(rng); }));
    auto theta = prev;
    for (auto& v : theta.values()) v += Matrix<double>::NullaryExpr(v.rows(), v.cols(), [&] { return n(rng); });
    Vector<double> f = Vector<double>::NullaryExpr(17, [&] { return std::abs(n(rng)); });
    auto anchor = anchor_at(prev, f);
    const double lambda = 200.0;

    num::Tape<double> tape;
    std::vector<num::Var<double>> leaves;
    for (const auto& v : theta.values()) leaves.push_back(tape.leaf(v));
    auto loss = consolidation_loss<double>(tape, leaves, anchor, lambda);
    const Vector<double> tape_grad = ParameterSet<double>::flatten(num::gradient<double>(loss, leaves));

    // Independent closed form, element by element.
    const Vector<double> t = theta.flatten();
    const Vector<double> p = prev.flatten();
    double expected_loss = 0.0;
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double dev = t(i) - p(i);
      expected_loss += 0.5 * lambda * f(i) * dev * dev;
      EXPECT_LT(std::abs(tape_grad(i) - lambda * f(i) * dev), 1e-10);
    }
    EXPECT_NEAR(loss.scalar(), expected_loss, 1e-9 * expected_loss);
    EXPECT_NEAR(consolidation_loss(theta, anchor, lambda), expected_loss, 1e-9 * expected_loss);
    EXPECT_LT((consolidation_gradient(theta, anchor, lambda) - tape_grad).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GE(loss.scalar(), 0.0);
  }
}

TEST(Fisher, EmptySamplesIsAnError) {
  auto p = two_tensors(0, 0, 0);
  std::vector<int> none;
  auto fn = [&](int) { return p.values(); };
  EXPECT_THROW(fisher_diagonal<double>(p, std::span<const int>(none), fn), CLError);
}

TEST(Fisher, SquaresAndAveragesGradients) {
  auto p = two_tensors(0, 0, 0);
  // gradient for sample s: x -> (s, 0), y -> 2s
  auto fn = [](int s) {
    std::vector<Matrix<double>> g{rows({{double(s), 0.0}}), rows({{2.0 * s}})};
    return g;
  };
  std::vector<int> one{3};
  auto f1 = fisher_diagonal<double>(p, std::span<const int>(one), fn);
  EXPECT_EQ(f1.values, (Vector<double>(3) << 9, 0, 36).finished());
  std::vector<int> two{1, 3};
  auto f2 = fisher_diagonal<double>(p, std::span<const int>(two), fn);
  EXPECT_DOUBLE_EQ(f2.values(0), 5.0);
  EXPECT_EQ(f2.values(1), 0.0);
  EXPECT_DOUBLE_EQ(f2.values(2), 20.0);
  // Scaling the loss by c scales the Fisher by c^2.
  auto scaled = fisher_diagonal<double>(p, std::span<const int>(two), [&](int s) {
    auto g = fn(s);
    for (auto& m : g) m *= 3.0;
    return g;
  });
  EXPECT_LT((scaled.values - 9.0 * f2.values).norm(), 1e-12);
}

TEST(Fisher, SingleModelSampleEqualsSquaredGradient) {
  auto cat = std::make_shared<const graph::EntityCatalog>(
      graph::EntityCatalog::from_ids({"mug", "book"}, {"house", "table", "sink"}, "house"));
  auto snap = [&](std::int64_t t, int a, int b) {
    graph::GraphSnapshot s;
    s.catalog = cat;
    s.time = graph::Timestamp{t};
    s.parent = {cat->location_node(a), cat->location_node(b)};
    return s;
  };
  model::ModelConfig cfg;
  cfg.embedding_dim = 4;
  cfg.hidden_dim = 4;
  auto params = model::init_parameters<double>(cfg, *cat, 5);
  std::vector<SnapshotPair> samples{{snap(0, 1, 1), snap(10, 2, 1)}};
  auto fn = [&](const SnapshotPair& s) {
    return model::loss_and_gradient(params, cfg, s.input, s.target).gradient;
  };
  auto f = fisher_diagonal<double>(params, std::span<const SnapshotPair>(samples), fn);
  const Vector<double> g = ParameterSet<double>::flatten(fn(samples[0]));
  EXPECT_EQ(f.values, g.array().square().matrix().eval());
  EXPECT_GE(f.values.minCoeff(), 0.0);
}

TEST(MeanFeature, TwoPointMean) {
  std::vector<EmbeddingBundle<double>> b{{rows({{1, 0}, {0, 1}}), Matrix<double>(0, 2), Matrix<double>(0, 2)}};
  auto m = mean_feature_vector<double>(b);
  EXPECT_EQ(m.c, (Vector<double>(2) << 0.5, 0.5).finished());
  EXPECT_EQ(m.node_count, 2u);
  EXPECT_EQ(m.edge_count, 0u);
}

TEST(MeanFeature, ConstantEmbeddingsGiveThatVector) {
  std::vector<EmbeddingBundle<double>> b(3, {rows({{2, -1}, {2, -1}}), rows({{2, -1}}), rows({{2, -1}})});
  auto m = mean_feature_vector<double>(b);
  EXPECT_EQ(m.c, (Vector<double>(2) << 2, -1).finished());
  EXPECT_EQ(m.node_count + m.edge_count + m.time_count, 12u);
}

TEST(MeanFeature, MatchesFlatSumOracle) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  std::vector<EmbeddingBundle<double>> b;
  for (int i = 0; i < 30; ++i) {
    b.push_back({Matrix<double>::NullaryExpr(7, 5, [&] { return n(rng); }),
                 Matrix<double>::NullaryExpr(3, 5, [&] { return n(rng); }),
                 Matrix<double>::NullaryExpr(1, 5, [&] { return n(rng); })});
  }
  std::vector<double> flat(5, 0.0);
  double count = 0;
  for (const auto& x : b) {
    for (const Matrix<double>* m : {&x.nodes, &x.edges, &x.time}) {
      for (Eigen::Index r = 0; r < m->rows(); ++r) {
        for (int c = 0; c < 5; ++c) flat[static_cast<std::size_t>(c)] += (*m)(r, c);
        count += 1;
      }
    }
  }
  auto m = mean_feature_vector<double>(b);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(m.c(c), flat[static_cast<std::size_t>(c)] / count, 1e-6);
  EXPECT_TRUE(m.c.allFinite());
}

TEST(MeanFeature, DimensionMismatchAndEmptyAreErrors) {
  std::vector<EmbeddingBundle<double>> b{{rows({{1, 0}}), rows({{1, 0, 0}}), Matrix<double>(0, 2)}};
  EXPECT_THROW(mean_feature_vector<double>(b), CLError);
  EXPECT_THROW(mean_feature_vector<double>(std::span<const EmbeddingBundle<double>>()), CLError);
}

TEST(Informativeness, ThreeFourFive) {
  MeanFeatureVector<double> c{Vector<double>::Zero(2), 1, 0, 0};
  EmbeddingBundle<double> zero{rows({{0, 0}}), Matrix<double>(0, 2), Matrix<double>(0, 2)};
  EmbeddingBundle<double> far{rows({{3, 4}}), Matrix<double>(0, 2), Matrix<double>(0, 2)};
  EXPECT_EQ(sample_informativeness(zero, c), 0.0);
  EXPECT_DOUBLE_EQ(sample_informativeness(far, c), 5.0);
  // aggregate is the mean of all rows: (1,1),(5,7) -> (3,4)
  EmbeddingBundle<double> split{rows({{1, 1}}), rows({{5, 7}}), Matrix<double>(0, 2)};
  EXPECT_DOUBLE_EQ(sample_informativeness(split, c), 5.0);
}

TEST(Informativeness, RankingMatchesPairwiseOracle) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  MeanFeatureVector<double> c{Vector<double>::NullaryExpr(3, [&] { return n(rng); }), 1, 0, 0};
  std::vector<EmbeddingBundle<double>> b;
  for (int i = 0; i < 40; ++i) {
    b.push_back({Matrix<double>::NullaryExpr(2, 3, [&] { return n(rng); }), Matrix<double>(0, 3), Matrix<double>(0, 3)});
  }
  std::vector<double> d;
  for (const auto& x : b) d.push_back(sample_informativeness(x, c));
  // i precedes j iff its aggregate is strictly closer (computed independently).
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      double di = 0, dj = 0;
      for (int k = 0; k < 3; ++k) {
        const double ai = 0.5 * (b[i].nodes(0, k) + b[i].nodes(1, k)) - c.c(k);
        const double aj = 0.5 * (b[j].nodes(0, k) + b[j].nodes(1, k)) - c.c(k);
        di += ai * ai;
        dj += aj * aj;
      }
      if (di + 1e-12 < dj) {
        EXPECT_LT(d[i], d[j]);
      }
    }
  }
}

namespace {

std::vector<SnapshotPair> fake_samples(std::size_t n, int tag) {
  std::vector<SnapshotPair> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i].input.task = tag;
    s[i].input.time = graph::Timestamp{static_cast<std::int64_t>(i)};
  }
  return s;
}

// Independent quota rule: exact rational comparison of 2q against
// 2|D|/(beta*(k-j)) with half-up rounding, searching q upward.
std::size_t oracle_quota(std::size_t size, double beta, int age) {
  const double x = static_cast<double>(size) / (beta * age);
  std::size_t q = 0;
  while (static_cast<double>(q) + 0.5 <= x) ++q;
  return q;
}

}  // namespace

TEST(Buffer, SessionZeroKeepsEverything) {
  auto d0 = fake_samples(25, 0);
  std::vector<double> dist(25);
  for (std::size_t i = 0; i < 25; ++i) dist[i] = static_cast<double>((i * 7) % 5);
  auto m = buffer_update(MemoryBuffer{}, d0, dist, {200, 10}, 0);
  ASSERT_EQ(m.size(), 25u);
  EXPECT_EQ(m.retained, std::vector<std::size_t>{25});
  for (std::size_t i = 1; i < m.size(); ++i) {
    const auto& a = m.entries[i - 1];
    const auto& b = m.entries[i];
    EXPECT_TRUE(a.distance < b.distance || (a.distance == b.distance && a.index < b.index));
  }
}

TEST(Buffer, TableVFirstSession) {
  auto d0 = fake_samples(5175, 0);
  auto d1 = fake_samples(5175, 1);
  std::vector<double> dist0(5175), dist1(5175, 0.0);
  for (std::size_t i = 0; i < dist0.size(); ++i) dist0[i] = static_cast<double>(5175 - i);
  auto m0 = buffer_update(MemoryBuffer{}, d0, dist0, {200, 10}, 0);
  auto m1 = buffer_update(m0, d1, dist1, {200, 10}, 1);
  EXPECT_NEAR(static_cast<double>(m1.size()), 5693.0, 1.0);
  EXPECT_EQ(m1.retained[0], 518u);
  // The retained past samples are the closest ones.
  EXPECT_EQ(m1.entries.front().index, 5174u);
  EXPECT_EQ(m1.entries[517].index, 5174u - 517u);
}

TEST(Buffer, QuotaFormulaAtSessionThree) {
  const std::vector<std::size_t> sizes{1000, 2345, 999, 4000};
  const auto q = buffer_quotas(sizes, 10.0, 3);
  EXPECT_EQ(q[1], static_cast<std::size_t>(std::floor(2345.0 / 20.0 + 0.5)));
  EXPECT_EQ(q[3], 4000u);
}

TEST(Buffer, MatchesBruteForceOnRandomTuples) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> size(0, 3000);
  std::uniform_int_distribution<int> sessions(1, 8);
  const double betas[] = {1.0, 2.0, 2.5, 5.0, 10.0, 20.0};
  for (int t = 0; t < 100; ++t) {
    const int k = sessions(rng) - 1;
    const double beta = betas[rng() % 6];
    std::vector<std::size_t> sizes;
    MemoryBuffer m;
    for (int s = 0; s <= k; ++s) {
      sizes.push_back(size(rng));
      auto d = fake_samples(sizes.back(), s);
      std::vector<double> dist(d.size());
      for (auto& x : dist) x = static_cast<double>(rng() % 100);
      m = buffer_update(m, d, dist, {200.0, beta}, s);
    }
    std::size_t expected_total = sizes[static_cast<std::size_t>(k)];
    ASSERT_EQ(m.retained[static_cast<std::size_t>(k)], sizes[static_cast<std::size_t>(k)]);
    for (int j = 0; j < k; ++j) {
      const auto q = oracle_quota(sizes[static_cast<std::size_t>(j)], beta, k - j);
      ASSERT_EQ(m.retained[static_cast<std::size_t>(j)], q) << "tuple " << t << " session " << j;
      expected_total += q;
    }
    ASSERT_EQ(m.size(), expected_total);
    // Bound with rounding slack.
    double bound = static_cast<double>(sizes[static_cast<std::size_t>(k)]) + k;
    for (int j = 0; j < k; ++j) bound += static_cast<double>(sizes[static_cast<std::size_t>(j)]) / (beta * (k - j));
    EXPECT_LE(static_cast<double>(m.size()), bound);
  }
}

TEST(Buffer, PerSessionCountsNeverGrow) {
  MemoryBuffer m;
  std::vector<std::size_t> first_counts;
  for (int k = 0; k < 6; ++k) {
    auto d = fake_samples(777, k);
    std::vector<double> dist(d.size(), 1.0);
    m = buffer_update(m, d, dist, {200, 10}, k);
    if (k > 0) {
      for (std::size_t j = 0; j < first_counts.size(); ++j) EXPECT_LE(m.retained[j], first_counts[j]);
    }
    first_counts = m.retained;
  }
}

TEST(Buffer, SelectionIsStable) {
  auto d = fake_samples(50, 0);
  std::vector<double> dist(50, 0.25);
  auto a = buffer_update(MemoryBuffer{}, d, dist, {200, 10}, 0);
  auto b = buffer_update(MemoryBuffer{}, d, dist, {200, 10}, 0);
  EXPECT_EQ(a, b);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(a.entries[i].index, i);
  auto r1 = select_replay(a, 10, 1);
  auto r2 = select_replay(b, 10, 1);
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(r1.size(), 5u);
}

TEST(Buffer, ReplaySessionMismatchIsAnError) {
  EXPECT_THROW(select_replay(MemoryBuffer{}, 10, 1), CLError);
  EXPECT_EQ(select_replay(MemoryBuffer{}, 10, 0).size(), 0u);
}

TEST(Forecast, HarmonicGrowth) {
  auto f = buffer_size_forecast(1.0, 10.0, 10);
  ASSERT_EQ(f.size(), 11u);
  EXPECT_NEAR(f[1], 1.1, 1e-12);
  double h10 = 0;
  for (int m = 1; m <= 10; ++m) h10 += 1.0 / m;
  EXPECT_NEAR(f[10], 1.0 + h10 / 10.0, 1e-9);
  EXPECT_NEAR(f[10], 1.29290, 1e-5);
  for (int k = 2; k <= 10; ++k) EXPECT_LT(f[k] - f[k - 1], f[k - 1] - f[k - 2]);
  EXPECT_NEAR(buffer_size_forecast(1000.0, 10.0, 10)[10], 1292.897, 1e-3);
  EXPECT_THROW(buffer_size_forecast(1.0, 10.0, 0), CLError);
}

TEST(Forecast, EqualSizeBuffersFollowTheProjection) {
  MemoryBuffer m;
  const auto f = buffer_size_forecast(5175.0, 10.0, 9);
  for (int k = 0; k < 10; ++k) {
    auto d = fake_samples(5175, k);
    std::vector<double> dist(d.size(), 0.0);
    m = buffer_update(m, d, dist, {200, 10}, k);
    EXPECT_LE(std::abs(static_cast<double>(m.size()) - f[static_cast<std::size_t>(k)]), k + 1.0);
  }
}

TEST(Consolidation, InPlaceGradientMatchesTape) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  ParameterSet<double> prev;
  prev.add("a", Matrix<double>::NullaryExpr(2, 3, [&] { return n(rng); }));
  prev.add("b", Matrix<double>::NullaryExpr(4, 1, [&] { return n(rng); }));
  auto theta = prev;
  for (auto& v : theta.values()) v += Matrix<double>::NullaryExpr(v.rows(), v.cols(), [&] { return n(rng); });
  auto anchor = anchor_at(prev, Vector<double>::NullaryExpr(10, [&] { return std::abs(n(rng)); }));

  num::Tape<double> tape;
  std::vector<num::Var<double>> leaves;
  for (const auto& v : theta.values()) leaves.push_back(tape.leaf(v));
  const auto tape_grad = num::gradient<double>(consolidation_loss<double>(tape, leaves, anchor, 200.0), leaves);

  std::vector<Matrix<double>> grads{Matrix<double>::Zero(2, 3), Matrix<double>::Zero(4, 1)};
  add_consolidation_gradient(grads, theta, anchor, 200.0);
  for (std::size_t i = 0; i < grads.size(); ++i) EXPECT_LT((grads[i] - tape_grad[i]).cwiseAbs().maxCoeff(), 1e-10);
}
