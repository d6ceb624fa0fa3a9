#include <gtest/gtest.h>

#include <fstream>

#include "stemgan/evaluation.hpp"
#include "stemgan/models/synthetic.hpp"
#include "test_util.hpp"

using namespace stemgan;
using namespace stemgan::eval;

namespace {

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

VectorXd naive_stoi(const MatrixXd& x, const MatrixXd& y) {
  VectorXd out = VectorXd::Zero(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
      double xm = 0.0, ym = 0.0;
      for (Eigen::Index k = 0; k < x.rows(); ++k) xm += x(k, t), ym += y(k, t);
      xm /= static_cast<double>(x.rows());
      ym /= static_cast<double>(x.rows());
      out(i) += (x(i, t) - xm) * (y(i, t) - ym);
    }
  return out;
}

GaussianModel model(VectorXd mu, MatrixXd sigma) { return {std::move(mu), std::move(sigma)}; }

LevelMatrix random_levels(int size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, 255);
  LevelMatrix m(size, size);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<std::uint8_t>(u(rng));
  return m;
}

}  // namespace

TEST(Stoi, MatchesNaiveOracle) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_matrix(4, 4, rng), y = random_matrix(4, 4, rng);
    const VectorXd s = stoi_features(x, y), o = naive_stoi(x, y);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(s(i), o(i), 1e-10);
  }
  const auto x = random_matrix(64, 64, rng), y = random_matrix(64, 64, rng);
  EXPECT_LT((stoi_features(x, y) - naive_stoi(x, y)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Stoi, SelfPairIsSquareSum) {
  std::mt19937_64 rng(2);
  const auto x = random_matrix(8, 6, rng);
  const VectorXd s = stoi_features(x, x);
  for (Eigen::Index i = 0; i < 8; ++i) {
    double q = 0.0;
    for (Eigen::Index t = 0; t < 6; ++t) q += std::pow(x(i, t) - x.col(t).mean(), 2);
    EXPECT_NEAR(s(i), q, 1e-12);
    EXPECT_GE(s(i), 0.0);
  }
}

TEST(Stoi, ConstantGeneratedGivesZero) {
  std::mt19937_64 rng(3);
  const VectorXd s = stoi_features(random_matrix(8, 8, rng), MatrixXd::Constant(8, 8, -12.5));
  EXPECT_EQ(s.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(stoi_features(MatrixXd::Zero(4, 4), MatrixXd::Zero(4, 5)), Error);
}

TEST(Gaussian, TwoSamplesAndDegenerateCovariance) {
  MatrixXd s(2, 3);
  s << 1, 2, 3, 3, 6, 9;
  const auto m = fit_gaussian(s);
  EXPECT_TRUE(m.mu.isApprox(Eigen::Vector3d(2, 4, 6)));
  const auto same = fit_gaussian(MatrixXd::Constant(5, 3, 0.7));
  EXPECT_TRUE(same.sigma.isApprox(kCovarianceEpsilon * MatrixXd::Identity(3, 3)));
  EXPECT_THROW(fit_gaussian(MatrixXd::Zero(1, 3)), Error);
}

TEST(Gaussian, MonteCarloRecovery) {
  std::mt19937_64 rng(4);
  const Eigen::Vector3d mu(1.0, -2.0, 0.5);
  Eigen::Matrix3d l;
  l << 1.0, 0, 0, 0.5, 1.5, 0, -0.3, 0.2, 0.8;
  const Eigen::Matrix3d sigma = l * l.transpose();
  MatrixXd z = random_matrix(10000, 3, rng);
  const MatrixXd draws = (z * l.transpose()).rowwise() + mu.transpose();
  const auto m = fit_gaussian(draws);
  EXPECT_LT((m.mu - mu).norm(), 0.05 * mu.norm());
  EXPECT_LT((m.sigma - sigma).norm(), 0.05 * sigma.norm());
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(m.sigma(i, i), sigma(i, i), 0.05 * sigma(i, i));
}

TEST(Fid, ClosedForms) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + trial % 7;
    const VectorXd a = random_matrix(d, 1, rng), b = random_matrix(d, 1, rng);
    EXPECT_NEAR(fid(model(a, MatrixXd::Identity(d, d)), model(b, MatrixXd::Identity(d, d))), (a - b).squaredNorm(),
                1e-8);
    VectorXd da(d), db(d);
    for (int i = 0; i < d; ++i) da(i) = u(rng), db(i) = u(rng);
    const double expected = (a - b).squaredNorm() + (da.cwiseSqrt() - db.cwiseSqrt()).squaredNorm();
    EXPECT_NEAR(fid(model(a, da.asDiagonal()), model(b, db.asDiagonal())), expected, 1e-8);
  }
}

TEST(Fid, SymmetricAndZeroOnSelf) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = fit_gaussian(random_matrix(40, 6, rng)), g = fit_gaussian(random_matrix(40, 6, rng) * 2.0);
    EXPECT_NEAR(fid(r, g), fid(g, r), 1e-8);
    EXPECT_LE(fid(r, r), 1e-8);
    EXPECT_GE(fid(r, g), 0.0);
  }
}

TEST(Fid, RejectsBadCovariances) {
  const VectorXd mu = VectorXd::Zero(2);
  MatrixXd neg(2, 2);
  neg << 1, 0, 0, -1;
  EXPECT_THROW(fid(model(mu, neg), model(mu, MatrixXd::Identity(2, 2))), Error);
  MatrixXd asym(2, 2);
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(fid(model(mu, asym), model(mu, MatrixXd::Identity(2, 2))), Error);
  EXPECT_THROW(fid(model(mu, MatrixXd::Identity(2, 2)), model(VectorXd::Zero(3), MatrixXd::Identity(3, 3))), Error);
}

TEST(LogDensity, KnownValues) {
  const double ln2pi = std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(gaussian_log_density(VectorXd::Zero(5), model(VectorXd::Zero(5), MatrixXd::Identity(5, 5))),
              -2.5 * ln2pi, 1e-12);
  EXPECT_NEAR(gaussian_log_density(VectorXd::Ones(1), model(VectorXd::Zero(1), MatrixXd::Identity(1, 1))),
              -1.4189385332046727, 1e-12);
  MatrixXd singular = MatrixXd::Zero(2, 2);
  singular(0, 0) = 1.0;
  EXPECT_THROW(gaussian_log_density(VectorXd::Zero(2), model(VectorXd::Zero(2), singular)), Error);
}

TEST(LogDensity, DecreasesAlongRays) {
  std::mt19937_64 rng(7);
  const auto m = fit_gaussian(random_matrix(30, 4, rng));
  for (int trial = 0; trial < 10; ++trial) {
    const VectorXd dir = random_matrix(4, 1, rng);
    double prev = gaussian_log_density(m.mu, m);
    for (double t = 0.25; t < 4.0; t += 0.25) {
      const double v = gaussian_log_density(m.mu + t * dir, m);
      EXPECT_LT(v, prev);
      prev = v;
    }
  }
}

TEST(Pearson, Identities) {
  std::mt19937_64 rng(8);
  const VectorXd a = random_matrix(20, 1, rng);
  EXPECT_NEAR(pearson(a, a), 1.0, 1e-12);
  EXPECT_NEAR(pearson(a, -a), -1.0, 1e-12);
  EXPECT_NEAR(pearson(a, (3.0 * a).array() + 2.0), 1.0, 1e-12);
  EXPECT_NEAR(pearson(a, (-0.5 * a).array() + 7.0), -1.0, 1e-12);
  EXPECT_THROW(pearson(a, VectorXd::Constant(20, 1.0)), Error);
  EXPECT_THROW(pearson(VectorXd::Ones(1), VectorXd::Ones(1)), Error);
}

TEST(Buckets, BoundariesAndMonotone) {
  EXPECT_EQ(grade_bucket(3.4), GradeBucket::b0_3);
  EXPECT_EQ(grade_bucket(3.6), GradeBucket::b4_5);
  EXPECT_EQ(grade_bucket(9.0), GradeBucket::b8_9);
  EXPECT_EQ(grade_bucket(0.0), GradeBucket::b0_3);
  EXPECT_EQ(grade_bucket(7.49), GradeBucket::b6_7);
  EXPECT_THROW(grade_bucket(9.6), Error);
  EXPECT_THROW(grade_bucket(-0.6), Error);
  EXPECT_THROW(grade_bucket(std::nan("")), Error);
  GradeBucket prev = grade_bucket(0.0);
  for (double g = 0.0; g <= 9.4; g += 0.01) {
    EXPECT_GE(grade_bucket(g), prev);
    prev = grade_bucket(g);
  }
  EXPECT_EQ(parse_bucket("B6_7"), GradeBucket::b6_7);
}

namespace {

struct Toy {
  MatrixXd x;
  std::vector<GradeBucket> y;
};

Toy separable(std::mt19937_64& rng, int n = 60) {
  Toy t{random_matrix(n, 3, rng), {}};
  for (int i = 0; i < n; ++i) {
    const bool pos = i % 2 == 0;
    t.x(i, 0) = (pos ? 1.0 : -1.0) * (0.5 + std::abs(t.x(i, 0)));
    t.y.push_back(pos ? GradeBucket::b8_9 : GradeBucket::b0_3);
  }
  return t;
}

}  // namespace

TEST(Logistic, SeparableDataIsFitExactly) {
  std::mt19937_64 rng(9);
  const auto t = separable(rng);
  const auto m = fit_logistic(t.x, t.y);
  EXPECT_EQ(accuracy(predict(m, t.x), t.y), 1.0);
  EXPECT_TRUE(m.weights.allFinite());
  for (std::size_t i = 1; i < m.loss_history.size(); ++i) ASSERT_LE(m.loss_history[i], m.loss_history[i - 1]);
}

TEST(Logistic, FourClassesConverge) {
  std::mt19937_64 rng(10);
  MatrixXd x = random_matrix(200, 2, rng) * 0.5;
  std::vector<GradeBucket> y;
  for (int i = 0; i < 200; ++i) {
    const int c = i % 4;
    x(i, 0) += c == 1 || c == 3 ? 2.0 : -2.0;
    x(i, 1) += c >= 2 ? 2.0 : -2.0;
    y.push_back(static_cast<GradeBucket>(c));
  }
  const auto m = fit_logistic(x, y, {1e-2, 1e-6, 10000});
  EXPECT_LT(m.iterations, 10000);
  EXPECT_GT(accuracy(predict(m, x), y), 0.95);
  for (std::size_t i = 1; i < m.loss_history.size(); ++i) ASSERT_LE(m.loss_history[i], m.loss_history[i - 1] + 1e-15);
}

TEST(Logistic, RowOrderDoesNotMatter) {
  std::mt19937_64 rng(11);
  auto t = separable(rng, 40);
  const auto a = fit_logistic(t.x, t.y, {1e-2, 1e-6, 10000});
  std::vector<int> perm(40);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  MatrixXd px(40, 3);
  std::vector<GradeBucket> py;
  for (int i = 0; i < 40; ++i) {
    px.row(i) = t.x.row(perm[static_cast<std::size_t>(i)]);
    py.push_back(t.y[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
  }
  const auto b = fit_logistic(px, py, {1e-2, 1e-6, 10000});
  EXPECT_LT((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((a.bias - b.bias).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Logistic, ShiftingAllClassRowsKeepsPredictions) {
  std::mt19937_64 rng(12);
  const auto t = separable(rng);
  auto m = fit_logistic(t.x, t.y);
  const auto before = predict(m, t.x);
  m.weights.rowwise() += Eigen::RowVector3d(5.0, -2.0, 1.0);
  m.bias.array() += 3.0;
  EXPECT_EQ(predict(m, t.x), before);
}

TEST(Logistic, Errors) {
  std::mt19937_64 rng(13);
  const MatrixXd x = random_matrix(10, 2, rng);
  EXPECT_THROW(fit_logistic(x, std::vector<GradeBucket>(10, GradeBucket::b4_5)), Error);
  EXPECT_THROW(fit_logistic(x, std::vector<GradeBucket>(9, GradeBucket::b4_5)), Error);
  EXPECT_THROW(predict(LogisticModel{}, x), Error);
}

TEST(Linear, RecoversAffineTarget) {
  std::mt19937_64 rng(14);
  const MatrixXd x = random_matrix(100, 4, rng);
  const VectorXd y = (x * Eigen::Vector4d(1.0, -2.0, 0.5, 0.0)).array() + 3.0;
  const auto m = fit_linear(x, y, 0.0);
  EXPECT_LT((predict(m, x) - y).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(predict(LinearModel{}, x), Error);
}

TEST(EmbedderTest, ShapesAndDeterminism) {
  EXPECT_THROW(Embedder{}.embed(LevelMatrix::Zero(64, 64)), Error);
  std::mt19937_64 rng(15);
  const Embedder e(models::PatchDiscriminator<float>(models::DiscriminatorConfig::desk(), rng));
  EXPECT_EQ(e.dim(), 128);
  const auto c = random_levels(64, rng);
  const auto a = e.embed(c), b = e.embed(c);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], b[0]);
  EXPECT_THROW(Embedder(models::PatchDiscriminator<float>(models::DiscriminatorConfig::desk(), rng), {4}), Error);
}

TEST(EmbedderTest, SixtyFourChannelLayerHasFullRankCovariance) {
  std::mt19937_64 rng(16);
  const Embedder e(models::PatchDiscriminator<float>(models::DiscriminatorConfig::desk(), rng), {2});
  ASSERT_EQ(e.dim(), 64);
  std::vector<LevelMatrix> chunks;
  for (int i = 0; i < 100; ++i) chunks.push_back(random_levels(64, rng));
  std::vector<const LevelMatrix*> ptrs;
  for (const auto& c : chunks) ptrs.push_back(&c);
  const MatrixXd emb = e.embed_all(ptrs)[0];
  const MatrixXd centered = emb.rowwise() - emb.colwise().mean();
  const MatrixXd cov = centered.transpose() * centered / 99.0;
  Eigen::FullPivLU<MatrixXd> lu(cov);
  lu.setThreshold(1e-10);
  EXPECT_EQ(lu.rank(), 64);
}

TEST(EmbeddingFile, ReadsAndValidates) {
  testutil::TempDir dir("emb");
  {
    std::ofstream f(dir / "e.tsv");
    f << "#song\toffset\tlayer\tvalues\ns\t0\t0\t1\t2\ns\t206\t0\t3\t4\n";
  }
  const auto t = EmbeddingTable::read(dir / "e.tsv");
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.at("s", 206)[0], Eigen::Vector2d(3, 4));
  EXPECT_THROW(t.at("s", 1), Error);
  EXPECT_EQ(t.matrices()[0].rows(), 2);
  {
    std::ofstream f(dir / "bad.tsv");
    f << "s\t0\t0\t1\t2\ns\t206\t0\t3\n";
  }
  EXPECT_THROW(EmbeddingTable::read(dir / "bad.tsv"), Error);
}

TEST(Scoring, SelfConsistentPairsLandInTopBucket) {
  std::mt19937_64 rng(17);
  std::vector<Chunk> originals;
  for (int i = 0; i < 40; ++i) originals.push_back({random_levels(16, rng), "s", i * 206, Domain::drums});
  const auto train = self_consistency_pairs(originals, 1);
  ASSERT_EQ(train.generated.size(), 80u);
  FeatureContext ctx;
  const auto m = fit_logistic(pair_feature_matrix(train.originals, train.generated, ctx), train.labels);

  const auto table = score_samples(originals, originals, m, ctx);
  ASSERT_EQ(table.rows.size(), originals.size());
  EXPECT_EQ(table.histogram[static_cast<std::size_t>(GradeBucket::b8_9)], originals.size());
  EXPECT_EQ(table.rows[3].offset, 3 * 206);

  EXPECT_TRUE(score_samples({}, {}, m, ctx).rows.empty());
  EXPECT_THROW(score_samples(originals, {}, m, ctx), Error);
  EXPECT_THROW(score_samples(originals, originals, LogisticModel{}, ctx), Error);
}

TEST(Scoring, DensityFeatureAndTableFile) {
  testutil::TempDir dir("score");
  std::mt19937_64 rng(18);
  const Embedder e(models::PatchDiscriminator<float>(models::DiscriminatorConfig::desk(), rng), {1, 3});
  std::vector<Chunk> originals;
  for (int i = 0; i < 12; ++i) originals.push_back({random_levels(64, rng), "s", i, Domain::drums});
  std::vector<const LevelMatrix*> ptrs;
  for (const auto& c : originals) ptrs.push_back(&c.pixels);
  FeatureContext ctx{embed_with(e), fit_gaussians(e.embed_all(ptrs))};
  const auto train = self_consistency_pairs(originals, 2);
  const MatrixXd f = pair_feature_matrix(train.originals, train.generated, ctx);
  ASSERT_EQ(f.cols(), 64 + 2);
  EXPECT_NEAR(f(0, 64), gaussian_log_density(e.embed(originals[0].pixels)[0], ctx.real[0]), 1e-12);
  const auto m = fit_logistic(f, train.labels);
  const auto table = score_samples(originals, originals, m, ctx);
  write_score_table(dir / "scores.tsv", table);
  std::ifstream in(dir / "scores.tsv");
  std::string header, line, last;
  std::getline(in, header);
  EXPECT_TRUE(header.starts_with("#song_id\toffset\tS0\t"));
  EXPECT_TRUE(header.ends_with("\tS63\tlogp0\tlogp1\tbucket"));
  int rows = 0;
  while (std::getline(in, line)) last = line, rows += line[0] != '#';
  EXPECT_EQ(rows, 12);
  EXPECT_EQ(last, "#histogram\tB0_3=0\tB4_5=0\tB6_7=0\tB8_9=12");
}

TEST(AnnotationsTest, ParsesAndCorrelates) {
  testutil::TempDir dir("ann");
  {
    std::ofstream f(dir / "a.tsv");
    f << "#sample_id\trater_id\tquality\tcontamination\tcredibility\ttime\n";
    const int g[3][3] = {{2, 3, 1}, {5, 6, 5}, {9, 8, 8}};
    for (int s = 0; s < 3; ++s)
      for (int r = 0; r < 3; ++r)
        f << "x" << s << "\tr" << r << '\t' << g[s][r] << '\t' << g[s][r] << '\t' << g[s][r] << '\t' << g[s][r] << '\n';
  }
  const auto a = read_annotations(dir / "a.tsv");
  EXPECT_EQ(a.samples.size(), 3u);
  EXPECT_EQ(a.raters.size(), 3u);
  EXPECT_NEAR(a.mean_grade(a.sample_index("x1")), 16.0 / 3.0, 1e-12);
  EXPECT_EQ(grade_bucket(a.mean_grade(0)), GradeBucket::b0_3);
  const MatrixXd c = rater_correlation(a);
  EXPECT_EQ(c(0, 0), 1.0);
  EXPECT_NEAR(c(0, 1), c(1, 0), 0.0);
  EXPECT_GT(c(0, 1), 0.9);

  {
    std::ofstream f(dir / "bad.tsv");
    f << "x\tr\t1\t2\t10\t3\n";
  }
  EXPECT_THROW(read_annotations(dir / "bad.tsv"), Error);
  {
    std::ofstream f(dir / "dup.tsv");
    f << "x\tr\t1\t2\t1\t3\nx\tr\t1\t2\t1\t3\n";
  }
  EXPECT_THROW(read_annotations(dir / "dup.tsv"), Error);
}
