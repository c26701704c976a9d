#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ptta/registration.hpp"
#include "ptta/synth.hpp"

using namespace ptta;
using ad::Tape;
using ad::Var;
using Eigen::Index;

namespace {

PointCloud random_cloud(Rng& rng, Index n, double spread = 1.0) {
  PointCloud::Points pts(n, 3);
  for (Index i = 0; i < pts.size(); ++i) pts.data()[i] = uniform(rng, -spread, spread);
  return PointCloud(pts);
}

CorrespondenceSet identity_pairs(Index n) {
  CorrespondenceSet c;
  for (Index i = 0; i < n; ++i) {
    c.source.push_back(i);
    c.target.push_back(i);
  }
  return c;
}

/// Exhaustive matcher: full distance table, first minimum per row.
IndexList brute_force_nn(const Matrix& a, const Matrix& b) {
  IndexList out;
  for (Index i = 0; i < a.rows(); ++i) {
    std::vector<double> d;
    for (Index j = 0; j < b.rows(); ++j) d.push_back((a.row(i) - b.row(j)).squaredNorm());
    out.push_back(std::min_element(d.begin(), d.end()) - d.begin());
  }
  return out;
}

double objective(const RigidTransform& t, const Matrix& x, const Matrix& y, const Eigen::VectorXd& w) {
  double s = 0.0;
  for (Index k = 0; k < x.rows(); ++k) s += w(k) * (t * Vector3<double>(x.row(k).transpose()) - y.row(k).transpose()).squaredNorm();
  return s;
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.encoder.feature_dim = 8;
  c.encoder.hidden = 6;
  c.encoder.width = 6;
  c.encoder.k = 3;
  c.decoder_hidden = 6;
  c.byol_hidden = 6;
  c.projection_dim = 4;
  c.head_width = 6;
  return c;
}

}  // namespace

TEST(MatchFeatures, Fixtures) {
  Rng rng(1);
  const Matrix f = Matrix::Random(10, 5);
  const CorrespondenceSet same = match_features(f, f);
  for (Index i = 0; i < 10; ++i) EXPECT_EQ(same.target[i], i);

  const CorrespondenceSet two = match_features(Matrix::Random(2, 4), Matrix::Random(3, 4));
  EXPECT_EQ(two.size(), 2u);
  EXPECT_THROW(match_features(Matrix::Random(2, 4), Matrix::Random(3, 5)), ArgumentError);
  EXPECT_THROW(match_features(Matrix(0, 4), Matrix::Random(3, 4)), ArgumentError);
}

TEST(MatchFeatures, TiesGoToSmallestTargetIndex) {
  Matrix target(4, 2);
  target << 1, 0, -1, 0, 0, 1, 1, 0;  // rows 0 and 3 coincide; rows 0, 1, 2 equidistant from origin
  Matrix source(2, 2);
  source << 0, 0, 1, 0;
  const CorrespondenceSet c = match_features(source, target);
  EXPECT_EQ(c.target[0], 0);
  EXPECT_EQ(c.target[1], 0);
}

TEST(MatchFeatures, AgreesWithBruteForce) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Matrix a(64, 16), b(64, 16);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = gaussian(rng, 1.0);
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = gaussian(rng, 1.0);
    if (seed % 10 == 0) b.row(40) = b.row(3);  // exact duplicate target rows
    ASSERT_EQ(match_features(a, b).target, brute_force_nn(a, b)) << "seed " << seed;
  }
}

TEST(MatchFeatures, MutualIsSubsetOfForward) {
  Rng rng(3);
  const Matrix a = Matrix::Random(30, 6), b = Matrix::Random(25, 6);
  const CorrespondenceSet fwd = match_features(a, b);
  const CorrespondenceSet mut = match_features(a, b, true);
  const IndexList back = brute_force_nn(b, a);
  for (std::size_t k = 0; k < mut.size(); ++k) {
    EXPECT_EQ(fwd.target[static_cast<std::size_t>(mut.source[k])], mut.target[k]);
    EXPECT_EQ(back[static_cast<std::size_t>(mut.target[k])], mut.source[k]);
  }
}

TEST(LabelInliers, FixturesAndResidualOracle) {
  Rng rng(4);
  const PointCloud src = random_cloud(rng, 20);
  const RigidTransform t = sample_random_transform(rng);
  const PointCloud tgt = apply_transform(src, t);
  CorrespondenceSet c = identity_pairs(20);
  const auto all = label_inliers(c, src, tgt, t, 1e-6);
  EXPECT_TRUE(std::all_of(all.begin(), all.end(), [](bool b) { return b; }));

  PointCloud::Points moved = tgt.points();
  const Vector3<double> dir(0.6, 0.8, 0.0);
  moved.row(5) += dir.transpose();  // 1 m off
  const auto some = label_inliers(c, src, PointCloud(moved), t, 0.1);
  EXPECT_FALSE(some[5]);
  EXPECT_THROW(label_inliers(c, src, tgt, t, 0.0), ArgumentError);

  c.target = IndexList(20);
  for (auto& j : c.target) j = static_cast<Index>(rng() % 20);
  const auto labels = label_inliers(c, src, tgt, t, 0.5);
  for (std::size_t k = 0; k < 20; ++k) {
    const Vector3<double> r = t.rotation() * src.point(c.source[k]) + t.translation() - tgt.point(c.target[k]);
    EXPECT_EQ(labels[k], r.norm() <= 0.5);
  }
}

TEST(Procrustes, IdentityOnSelfPair) {
  Rng rng(5);
  const PointCloud x = random_cloud(rng, 16);
  const RigidTransform t = weighted_procrustes(x, x, identity_pairs(16));
  EXPECT_LT((t.homogeneous() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Procrustes, RecoversTransformWithAndWithoutMaskedOutliers) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const PointCloud x = random_cloud(rng, 32);
    const RigidTransform t = sample_random_transform(rng);
    PointCloud::Points y = apply_transform(x, t).points();
    CorrespondenceSet c = identity_pairs(32);
    RigidTransform est = weighted_procrustes(x, PointCloud(y), c);
    ASSERT_LT(rotation_error(est, t), 1e-6);
    ASSERT_LT(translation_error(est, t), 1e-9);

    Eigen::VectorXd w = Eigen::VectorXd::Ones(32);
    for (Index k = 0; k < 32; k += 5) {
      y.row(k) = Eigen::RowVector3d(uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5));
      w(k) = 0.0;
    }
    c.weights = w;
    est = weighted_procrustes(x, PointCloud(y), c);
    ASSERT_LT(rotation_error(est, t), 1e-6);
    ASSERT_LT(translation_error(est, t), 1e-9);
  }
}

TEST(Procrustes, MinimisesWeightedObjective) {
  Rng rng(6);
  const PointCloud x = random_cloud(rng, 12);
  const PointCloud y = random_cloud(rng, 12);  // unrelated clouds: no exact solution
  CorrespondenceSet c = identity_pairs(12);
  Eigen::VectorXd w(12);
  for (Index k = 0; k < 12; ++k) w(k) = uniform(rng, 0.1, 1.0);
  c.weights = w;
  const RigidTransform est = weighted_procrustes(x, y, c);
  EXPECT_NEAR(est.rotation().determinant(), 1.0, 1e-12);
  const Matrix xm = x.points(), ym = y.points();
  const double best = objective(est, xm, ym, w);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Matrix3d dr = Eigen::AngleAxisd(uniform(rng, 0.001, 0.2),
                                                 Vector3<double>::Random().normalized()).toRotationMatrix();
    Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
    h.topLeftCorner<3, 3>() = dr * est.rotation();
    h.topRightCorner<3, 1>() = est.translation() + 0.01 * Vector3<double>::Random();
    std::array<double, 12> rm{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) rm[static_cast<std::size_t>(4 * i + j)] = h(i, j);
    EXPECT_GE(objective(RigidTransform::from_row_major(rm), xm, ym, w), best - 1e-12);
  }
}

TEST(Procrustes, WeightScaleInvarianceAndFixedPoint) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const PointCloud x = random_cloud(rng, 20);
    const PointCloud y = random_cloud(rng, 20);
    CorrespondenceSet c = identity_pairs(20);
    Eigen::VectorXd w(20);
    for (Index k = 0; k < 20; ++k) w(k) = uniform(rng, 0.01, 1.0);
    c.weights = w;
    const RigidTransform a = weighted_procrustes(x, y, c);
    c.weights = w * 0.37;
    const RigidTransform b = weighted_procrustes(x, y, c);
    EXPECT_LT((a.homogeneous() - b.homogeneous()).cwiseAbs().maxCoeff(), 1e-10);

    const RigidTransform t = sample_random_transform(rng);
    const PointCloud tx = apply_transform(x, t);
    const RigidTransform fixed = weighted_procrustes(tx, tx, identity_pairs(20));
    EXPECT_LT((fixed.homogeneous() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Procrustes, DistinctDegenerateErrors) {
  PointCloud::Points line(6, 3);
  for (Index i = 0; i < 6; ++i) line.row(i) << 0.1 * i, 0.2 * i, -0.05 * i;
  EXPECT_THROW(weighted_procrustes(PointCloud(line), PointCloud(line), identity_pairs(6)), RankDeficientError);

  Rng rng(7);
  const PointCloud x = random_cloud(rng, 6);
  EXPECT_THROW(weighted_procrustes(x, x, identity_pairs(2)), TooFewPairsError);
  CorrespondenceSet c = identity_pairs(6);
  c.weights = Eigen::VectorXd::Zero(6);
  EXPECT_THROW(weighted_procrustes(x, x, c), ZeroWeightError);
}

TEST(Procrustes, PolarGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Matrix h(3, 3);
    for (Index i = 0; i < 9; ++i) h.data()[i] = gaussian(rng, 1.0);
    if (seed % 2 == 0 && h.determinant() > 0) h.row(0) *= -1.0;  // reflection branch
    const Matrix w = Matrix::Random(3, 3);
    auto report = ad::grad_check([&](Tape& t, const Var& v) {
      return ad::reduce_sum(polar_rotation(v) * t.constant(w));
    }, h, 1e-6, 1e-6);
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_relative_error;
  }
}

TEST(Procrustes, WeightGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const PointCloud x = random_cloud(rng, 10);
    const RigidTransform gt = sample_random_transform(rng);
    PointCloud::Points y = apply_transform(x, gt).points();
    for (Index i = 0; i < y.size(); ++i) y.data()[i] += gaussian(rng, 0.2);
    Matrix w0(10, 1);
    for (Index k = 0; k < 10; ++k) w0(k) = uniform(rng, 0.2, 1.0);
    const Matrix xm = x.points(), ym = y;
    const Matrix wr = Matrix::Random(3, 3), wt = Matrix::Random(1, 3);
    auto report = ad::grad_check([&](Tape& t, const Var& w) {
      const TransformVars est = weighted_procrustes(w, xm, ym);
      return ad::reduce_sum(est.rotation * t.constant(wr)) + ad::reduce_sum(est.translation * t.constant(wt));
    }, w0, 1e-6);
    EXPECT_TRUE(report.passed) << "seed " << seed << " err " << report.max_relative_error;
  }
}

TEST(PrimaryLoss, PerfectPredictionIsNearZero) {
  Rng rng(8);
  const PointCloud x = random_cloud(rng, 20);
  const RigidTransform gt = sample_random_transform(rng);
  PointCloud::Points y = apply_transform(x, gt).points();
  Matrix p = Matrix::Ones(20, 1);
  for (Index k = 0; k < 20; k += 4) {
    y.row(k) += Eigen::RowVector3d(2.0, 0.0, 0.0);
    p(k) = 0.0;
  }
  Tape tape;
  const PrimaryTerms terms = primary_terms(tape.constant(p), x, PointCloud(y), identity_pairs(20), gt, {});
  EXPECT_LT(terms.loss.item(), 1e-5);
  EXPECT_EQ(std::count(terms.corr.gt_labels->begin(), terms.corr.gt_labels->end(), false), 5);
}

TEST(PrimaryLoss, FairCoinAndFormulaOracle) {
  Tape tape;
  const std::vector<bool> labels{true, false, false, true, true};
  EXPECT_NEAR(binary_cross_entropy(tape.constant(Matrix::Constant(5, 1, 0.5)), labels).item(), std::log(2.0), 1e-15);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const PointCloud x = random_cloud(rng, 15);
    const RigidTransform gt = sample_random_transform(rng);
    PointCloud::Points y = apply_transform(x, gt).points();
    for (Index i = 0; i < y.size(); ++i) y.data()[i] += gaussian(rng, 0.08);
    Matrix p(15, 1);
    for (Index k = 0; k < 15; ++k) p(k) = uniform(rng, 0.05, 0.95);
    RegistrationConfig cfg;
    cfg.lambda_t = 0.7;
    Tape t;
    const PrimaryTerms terms = primary_terms(t.constant(p), x, PointCloud(y), identity_pairs(15), gt, cfg);

    double bce = 0.0;
    for (Index k = 0; k < 15; ++k) {
      const bool in = (gt * x.point(k) - Vector3<double>(y.row(k).transpose())).norm() <= cfg.inlier_threshold;
      bce -= in ? std::log(p(k)) : std::log(1.0 - p(k));
    }
    bce /= 15.0;
    CorrespondenceSet c = identity_pairs(15);
    c.weights = p.col(0);
    const RigidTransform est = weighted_procrustes(x, PointCloud(y), c);
    const double expected = bce + 0.7 * (std::sqrt((est.rotation() - gt.rotation()).squaredNorm() + 1e-12) +
                                         std::sqrt((est.translation() - gt.translation()).squaredNorm() + 1e-12));
    EXPECT_NEAR(terms.loss.item(), expected, 1e-12);
  }
}

TEST(PrimaryLoss, BceMinimisedAtEmpiricalRate) {
  Rng rng(9);
  std::vector<bool> labels(200);
  int positives = 0;
  for (auto&& l : labels) {
    l = uniform(rng, 0, 1) < 0.3;
    positives += l;
  }
  const double rate = positives / 200.0;
  double best_p = 0.0, best = 1e300;
  for (int i = 1; i < 1000; ++i) {
    Tape t;
    const double p = i / 1000.0;
    const double v = binary_cross_entropy(t.constant(Matrix::Constant(200, 1, p)), labels).item();
    if (v < best) {
      best = v;
      best_p = p;
    }
  }
  EXPECT_NEAR(best_p, rate, 1e-3);
}

TEST(PrimaryLoss, ParameterGradientsMatchFiniteDifferences) {
  Rng init(10);
  const ParamPartition p = init_partition(tiny_config(), init);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    const PointCloud x = random_cloud(rng, 8, 0.3);
    const RigidTransform gt = sample_random_transform(rng);
    PointCloud::Points y = apply_transform(x, gt).points();
    for (Index i = 0; i < y.size(); ++i) y.data()[i] += gaussian(rng, 0.05);
    const PointCloud yc(y);
    const LocalGeometry gx = local_geometry(x, p.config.encoder), gy = local_geometry(yc, p.config.encoder);
    CorrespondenceSet corr;
    {
      Tape t;
      const Bindings b = bind_partition(t, p, false);
      corr = match_features(encode(t, b, prefix::shar, gx).value(), encode(t, b, prefix::shar, gy).value());
    }
    for (const ParamStore* store : {&p.shar, &p.pri}) {
      for (const auto& [name, value] : *store) {
        auto report = ad::grad_check([&, n = name](Tape& t, const Var& v) {
          Bindings b = bind_partition(t, p, false);
          b[n] = v;
          const Var sf = encode(t, b, prefix::shar, gx), tf = encode(t, b, prefix::shar, gy);
          return primary_loss(t, b, prefix::pri, sf, tf, x, yc, corr, gt, {}).loss;
        }, value, 1e-6);
        EXPECT_TRUE(report.passed) << name << " seed " << seed << " err " << report.max_relative_error;
      }
    }
  }
}

TEST(Register, SelfPairIsIdentityAndDeterministic) {
  Rng init(11);
  const ParamPartition p = init_partition(NetworkConfig{}, init);
  DomainProfile prof;
  prof.point_count = 200;
  Rng rng(12);
  const PointCloud scene = generate_scene(prof, rng);
  const RegistrationResult a = register_pair(p, scene, scene, {});
  EXPECT_LT(rotation_error(a.predicted, RigidTransform::identity()), 1e-6);
  EXPECT_LT(translation_error(a.predicted, RigidTransform::identity()), 1e-9);

  const ScenePair pair = make_pair(scene, prof, rng);
  const RegistrationResult r1 = register_pair(p, pair.source, pair.target, {});
  const RegistrationResult r2 = register_pair(p, pair.source, pair.target, {});
  EXPECT_EQ(r1.predicted, r2.predicted);

  // Manual chain of the four stages.
  const Matrix sf = encode_points(p, pair.source), tf = encode_points(p, pair.target);
  CorrespondenceSet c = match_features(sf, tf);
  const Matrix in = correspondence_input(sf, tf, pair.source, pair.target, c, 0.10);
  c.weights = score_correspondences(p, prefix::pri, in).col(0);
  EXPECT_EQ(weighted_procrustes(pair.source, pair.target, c), r1.predicted);
}

TEST(CorrespondenceInput, DifferentiableMatchesPlain) {
  Rng rng(13);
  const PointCloud x = random_cloud(rng, 12), y = random_cloud(rng, 12);
  const Matrix fx = Matrix::Random(12, 8), fy = Matrix::Random(12, 8);
  const CorrespondenceSet c = match_features(fx, fy);
  Tape t;
  const Var v = correspondence_input(t.constant(fx), t.constant(fy), x, y, c, 0.2);
  EXPECT_LT((v.value() - correspondence_input(fx, fy, x, y, c, 0.2)).cwiseAbs().maxCoeff(), 1e-15);
  const Eigen::VectorXd sc = spatial_consistency(c, x, y, 0.2);
  EXPECT_TRUE((sc.array() >= 0.0).all() && (sc.array() <= 1.0).all());
}

TEST(SpectralConsistency, RigidSetIsUniformAndOutlierScoresLow) {
  Rng rng(14);
  const PointCloud x = random_cloud(rng, 20);
  const RigidTransform gt = sample_random_transform(rng);
  PointCloud::Points y = apply_transform(x, gt).points();
  const Eigen::VectorXd clean = spectral_consistency(identity_pairs(20), x, PointCloud(y), 0.1);
  EXPECT_LT((clean.array() - 1.0).abs().maxCoeff(), 1e-10);

  y.row(3) += Eigen::RowVector3d(2.0, -1.0, 0.5);
  const Eigen::VectorXd dirty = spectral_consistency(identity_pairs(20), x, PointCloud(y), 0.1);
  for (Index k = 0; k < 20; ++k)
    if (k != 3) EXPECT_GT(dirty(k), 10.0 * dirty(3)) << k;
  EXPECT_DOUBLE_EQ(dirty.maxCoeff(), 1.0);
}

TEST(SpectralConsistency, PoseInvariantAndDegenerateCases) {
  Rng rng(15);
  const PointCloud x = random_cloud(rng, 15), y = random_cloud(rng, 15);
  const RigidTransform t = sample_random_transform(rng);
  const Eigen::VectorXd a = spectral_consistency(identity_pairs(15), x, y, 0.3);
  const Eigen::VectorXd b = spectral_consistency(identity_pairs(15), x, apply_transform(y, t), 0.3);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_TRUE((a.array() >= 0.0).all() && (a.array() <= 1.0).all());

  EXPECT_EQ(spectral_consistency(identity_pairs(1), x, y, 0.1).size(), 1);
  EXPECT_EQ(spectral_consistency(identity_pairs(1), x, y, 0.1)(0), 0.0);
  PointCloud::Points far = y.points();
  far *= 1000.0;
  EXPECT_EQ(spectral_consistency(identity_pairs(15), x, PointCloud(far), 1e-6).maxCoeff(), 0.0);
  EXPECT_THROW(spectral_consistency(identity_pairs(3), x, y, 0.0), ArgumentError);
}

TEST(DescriptorLoss, MatchesHandComputedInfoNce) {
  Rng rng(16);
  const PointCloud x = random_cloud(rng, 6, 2.0);
  const RigidTransform gt = sample_random_transform(rng);
  const PointCloud y = apply_transform(x, gt);
  const auto nn = ground_truth_neighbors(x, y, gt, 0.1);
  ASSERT_EQ(nn.size(), 6u);
  for (Index i = 0; i < 6; ++i) EXPECT_EQ(nn[static_cast<std::size_t>(i)], std::make_pair(i, i));

  Matrix fs = Matrix::Random(6, 4), ft = Matrix::Random(6, 4);
  fs.rowwise().normalize();
  ft.rowwise().normalize();
  RegistrationConfig cfg;
  cfg.temperature = 0.5;
  double expected = 0.0;
  for (Index i = 0; i < 6; ++i) {
    double zs = 0.0, zt = 0.0;
    for (Index j = 0; j < 6; ++j) {
      zs += std::exp(fs.row(i).dot(ft.row(j)) / 0.5);
      zt += std::exp(ft.row(i).dot(fs.row(j)) / 0.5);
    }
    const double pos = fs.row(i).dot(ft.row(i)) / 0.5;
    expected += 0.5 * ((std::log(zs) - pos) + (std::log(zt) - pos)) / 6.0;
  }
  Tape t;
  EXPECT_NEAR(descriptor_loss(t.constant(fs), t.constant(ft), x, y, gt, cfg).item(), expected, 1e-12);
}

TEST(DescriptorLoss, EmptyOverlapAndGradient) {
  Rng rng(17);
  const PointCloud x = random_cloud(rng, 8, 0.5);
  const RigidTransform gt = sample_random_transform(rng);
  PointCloud::Points far = apply_transform(x, gt).points();
  far.col(0).array() += 50.0;
  Tape t;
  const Matrix f = Matrix::Random(8, 5);
  EXPECT_EQ(descriptor_loss(t.constant(f), t.constant(f), x, PointCloud(far), gt, {}).item(), 0.0);

  PointCloud::Points y = apply_transform(x, gt).points();
  for (Index i = 0; i < y.size(); ++i) y.data()[i] += gaussian(rng, 0.01);
  const PointCloud yc(y);
  const Matrix other = Matrix::Random(8, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix point = Matrix::Random(8, 5);
    const auto report = ad::grad_check([&](Tape& tape, const Var& v) {
      return descriptor_loss(ad::l2_normalize(v), tape.constant(other), x, yc, gt, {});
    }, point);
    EXPECT_TRUE(report.passed) << report.max_relative_error;
  }
}

TEST(PrimaryLoss, DescriptorTermIsAdditive) {
  Rng init(18);
  const ParamPartition p = init_partition(tiny_config(), init);
  Rng rng(19);
  const PointCloud x = random_cloud(rng, 12, 0.4);
  const RigidTransform gt = sample_random_transform(rng);
  const PointCloud y = apply_transform(x, gt);
  const LocalGeometry gx = local_geometry(x, p.config.encoder), gy = local_geometry(y, p.config.encoder);
  RegistrationConfig off;
  off.lambda_f = 0.0;
  RegistrationConfig on;
  on.lambda_f = 2.5;
  Tape t;
  const Bindings b = bind_partition(t, p, false);
  const PrimaryTerms a = primary_loss(t, b, gx, gy, x, y, gt, off);
  const PrimaryTerms c = primary_loss(t, b, gx, gy, x, y, gt, on);
  EXPECT_EQ(a.descriptor.item(), 0.0);
  EXPECT_GT(c.descriptor.item(), 0.0);
  EXPECT_NEAR(c.loss.item(), a.loss.item() + 2.5 * c.descriptor.item(), 1e-12);
}
