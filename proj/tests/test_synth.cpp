#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ptta/binio.hpp"
#include "ptta/synth.hpp"

using namespace ptta;
namespace fs = std::filesystem;

namespace {

DomainProfile only(Primitive kind) {
  DomainProfile p;
  p.name = "only";
  p.shape_mix = {0, 0, 0, 0};
  p.shape_mix[static_cast<int>(kind)] = 1.0;
  return p;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ptta_test_" + name);
  fs::remove_all(dir);
  return dir;
}

/// Brute-force: fraction of `a` points having some `b` point within `radius`.
double covered_fraction(const PointCloud& a, const PointCloud& b, double radius) {
  int hit = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    bool found = false;
    for (Eigen::Index j = 0; j < b.size() && !found; ++j)
      found = (a.points().row(i) - b.points().row(j)).norm() < radius;
    hit += found;
  }
  return double(hit) / double(a.size());
}

}  // namespace

TEST(DomainProfile, Validation) {
  DomainProfile p;
  EXPECT_NO_THROW(p.validate());
  p.shape_mix = {0.5, 0.5, 0.5, 0.0};
  EXPECT_THROW(p.validate(), ConfigError);
  p = DomainProfile{};
  p.point_count = 31;
  EXPECT_THROW(p.validate(), ConfigError);
  p = DomainProfile{};
  p.overlap_ratio = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(GenerateScene, PlaneIsCoplanarAndCountExact) {
  Rng rng(1);
  DomainProfile p = only(Primitive::Plane);
  p.point_count = 512;
  const PointCloud scene = generate_scene(p, rng);
  EXPECT_EQ(scene.size(), 512);
  EXPECT_LT(scene.points().col(2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GenerateScene, SphereShellPointsLieOnTheirSphere) {
  Rng rng(2);
  DomainProfile p = only(Primitive::Sphere);
  p.objects_per_kind = 1;
  const SceneLayout layout = make_layout(p, rng);
  ASSERT_EQ(layout.spheres.size(), 1u);
  const PointCloud scene = sample_layout(layout, p, rng);
  const SphereShape& s = layout.spheres.front();
  for (Eigen::Index i = 0; i < scene.size(); ++i) {
    EXPECT_NEAR((scene.point(i) - s.center).norm() / s.radius, 1.0, 1e-9);
  }

  // Unit sphere at the origin through the same sampler.
  SceneLayout unit = layout;
  unit.spheres.front() = SphereShape{Vector3<double>::Zero(), 1.0};
  const PointCloud shell = sample_layout(unit, p, rng);
  EXPECT_LT((shell.points().rowwise().norm().array() - 1.0).abs().maxCoeff(), 1e-9);
}

TEST(GenerateScene, DeterministicPerSeed) {
  const DomainProfile p;
  Rng a(3), b(3);
  EXPECT_EQ(generate_scene(p, a), generate_scene(p, b));
}

TEST(MakePair, IdentityNoiselessFullOverlap) {
  DomainProfile p;
  p.noise_sigma = 0.0;
  p.outlier_fraction = 0.0;
  p.overlap_ratio = 1.0;
  p.rotation_range = 0.0;
  p.translation_range = 0.0;
  Rng rng(4);
  const PointCloud scene = generate_scene(p, rng);
  const ScenePair pair = make_pair(scene, p, rng, "id");
  EXPECT_EQ(pair.gt, RigidTransform::identity());
  EXPECT_EQ(pair.source, pair.target);
  EXPECT_EQ(pair.pair_id, "id");
}

TEST(MakePair, OverlapMeetsRequestedRatio) {
  DomainProfile p;
  p.noise_sigma = 0.0;
  p.overlap_ratio = 0.2;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const PointCloud scene = generate_scene(p, rng);
    const ScenePair pair = make_pair(scene, p, rng);
    const PointCloud moved = apply_transform(pair.source, pair.gt);
    const double smaller = double(std::min(pair.source.size(), pair.target.size()));
    const double measured = covered_fraction(moved, pair.target, 1e-6) * double(pair.source.size()) / smaller;
    EXPECT_GE(measured, 0.2);
    EXPECT_LE(measured, 1.0 + 1e-12);
  }
}

TEST(MakePair, NoiselessOverlapHasExactPartners) {
  DomainProfile p;
  p.noise_sigma = 0.0;
  p.overlap_ratio = 0.4;
  Rng rng(5);
  const PointCloud scene = generate_scene(p, rng);
  const ScenePair pair = make_pair(scene, p, rng);
  const PointCloud moved = apply_transform(pair.source, pair.gt);
  int exact = 0;
  for (Eigen::Index i = 0; i < moved.size(); ++i) {
    double best = 1e300;
    for (Eigen::Index j = 0; j < pair.target.size(); ++j)
      best = std::min(best, (moved.points().row(i) - pair.target.points().row(j)).norm());
    exact += best < 1e-9;
  }
  const double smaller = double(std::min(pair.source.size(), pair.target.size()));
  EXPECT_GE(exact / smaller, 0.4);
}

TEST(MakePair, OutlierFractionOfTargetFailsResidualTest) {
  DomainProfile clean;
  clean.noise_sigma = 0.01;
  clean.outlier_fraction = 0.0;
  DomainProfile dirty = clean;
  dirty.outlier_fraction = 0.5;
  Rng r0(6), r1(6);
  const PointCloud scene = generate_scene(clean, r0);
  generate_scene(dirty, r1);
  const ScenePair a = make_pair(scene, clean, r0);
  const ScenePair b = make_pair(scene, dirty, r1);
  ASSERT_EQ(a.target.size(), b.target.size());
  // Same stream up to outlier injection: the clean target is the residual reference.
  int failed = 0;
  for (Eigen::Index i = 0; i < a.target.size(); ++i)
    failed += (a.target.points().row(i) - b.target.points().row(i)).norm() > 3.0 * clean.noise_sigma;
  const double expected = std::round(0.5 * double(a.target.size()));
  EXPECT_LE(failed, expected);
  EXPECT_GE(failed, expected - 0.02 * double(a.target.size()));
}

TEST(MakePair, UnsatisfiableOverlapErrors) {
  DomainProfile p;
  p.point_count = 32;
  p.overlap_ratio = 0.0;
  // Only 32 points: a zero-width slab leaves one side below the minimum view size often,
  // but some attempts succeed. A single-point scene can never be cropped twice.
  Rng rng(7);
  PointCloud::Points one(1, 3);
  one << 0, 0, 0;
  EXPECT_THROW(make_pair(PointCloud(one), p, rng), NumericError);
}

TEST(MakePair, NoiseProfilesAreDistinguishable) {
  DomainProfile low, high;
  low.noise_sigma = 0.005;
  high.noise_sigma = 0.04;
  low.point_count = high.point_count = 512;
  // Median residual of aligned source points to their nearest target point.
  auto residual = [](const ScenePair& pair) {
    const PointCloud moved = apply_transform(pair.source, pair.gt);
    std::vector<double> d;
    for (Eigen::Index i = 0; i < moved.size(); ++i) {
      double best = 1e300;
      for (Eigen::Index j = 0; j < pair.target.size(); ++j)
        best = std::min(best, (moved.points().row(i) - pair.target.points().row(j)).norm());
      d.push_back(best);
    }
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return d[d.size() / 2];
  };
  std::vector<double> a, b;
  for (std::uint64_t s = 0; s < 8; ++s) {
    Rng r1(s), r2(s);
    const PointCloud scene = generate_scene(low, r1);
    generate_scene(high, r2);
    a.push_back(residual(make_pair(scene, low, r1)));
    b.push_back(residual(make_pair(scene, high, r2)));
  }
  // Welch t statistic between the two groups.
  auto stats = [](const std::vector<double>& v) {
    double m = 0, s2 = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    for (double x : v) s2 += (x - m) * (x - m);
    return std::pair{m, s2 / double(v.size() - 1)};
  };
  const auto [ma, va] = stats(a);
  const auto [mb, vb] = stats(b);
  const double t = (mb - ma) / std::sqrt(va / double(a.size()) + vb / double(b.size()));
  EXPECT_GT(t, 3.0);
}

TEST(Dataset, RoundTripIsBitExact) {
  const DomainProfile p;
  std::vector<ScenePair> pairs = generate_pairs(p, 3, 11, "rt-");
  DatasetManifest m{{p}, {}, 11};
  const fs::path dir = scratch_dir("roundtrip");
  write_dataset(pairs, m, dir);
  auto [back, manifest] = read_dataset(dir);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(manifest, m);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].source, pairs[i].source);
    EXPECT_EQ(back[i].target, pairs[i].target);
    EXPECT_EQ(back[i].gt, pairs[i].gt);
    EXPECT_EQ(back[i].pair_id, pairs[i].pair_id);
  }
}

TEST(Dataset, GenerationIsBitIdenticalAcrossRuns) {
  const DomainProfile p;
  const fs::path d1 = scratch_dir("det1"), d2 = scratch_dir("det2");
  auto pairs1 = generate_pairs(p, 4, 5, "");
  auto pairs2 = generate_pairs(p, 4, 5, "");
  DatasetManifest m1{{p}, {}, 5}, m2{{p}, {}, 5};
  write_dataset(pairs1, m1, d1);
  write_dataset(pairs2, m2, d2);
  for (const auto& e : m1.pairs) EXPECT_EQ(binio::read_file(d1 / e.file), binio::read_file(d2 / e.file));
  EXPECT_EQ(binio::read_file(d1 / kManifestName), binio::read_file(d2 / kManifestName));
}

TEST(Dataset, DistinctErrors) {
  const DomainProfile p;
  auto pairs = generate_pairs(p, 2, 1, "");
  DatasetManifest m{{p}, {}, 1};
  const fs::path dir = scratch_dir("errors");
  write_dataset(pairs, m, dir);

  EXPECT_THROW(read_dataset(scratch_dir("nothing")), MissingFileError);

  const fs::path victim = dir / m.pairs[0].file;
  const std::string original = binio::read_file(victim);
  binio::write_file(victim, original.substr(0, original.size() / 2));
  EXPECT_THROW(read_dataset(dir), CorruptFileError);

  // Valid blob, but not the one the manifest recorded.
  auto other = generate_pairs(p, 1, 99, "");
  const std::array<PointCloud, 2> clouds{other[0].source, other[0].target};
  binio::write_file(victim, encode_blob(clouds, other[0].gt));
  EXPECT_THROW(read_dataset(dir), ChecksumError);

  binio::write_file(victim, original);
  EXPECT_NO_THROW(read_dataset(dir));
  fs::remove(victim);
  EXPECT_THROW(read_dataset(dir), MissingFileError);
  binio::write_file(victim, original);

  // A blob with a future format version.
  binio::Writer w;
  w.bytes("PTTA");
  w.put(std::uint32_t{99});
  w.seal();
  EXPECT_THROW(decode_blob(w.buffer(), "mem"), VersionError);

  std::string manifest = binio::read_file(dir / kManifestName);
  const auto pos = manifest.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  manifest.replace(pos, 11, "\"version\":7");
  binio::write_file(dir / kManifestName, manifest);
  EXPECT_THROW(read_dataset(dir), VersionError);
}

TEST(Dataset, CloudFileRoundTripWithFeatures) {
  const fs::path dir = scratch_dir("cloud");
  fs::create_directories(dir);
  PointCloud::Points pts = PointCloud::Points::Random(10, 3);
  PointCloud::Features f = PointCloud::Features::Random(10, 4);
  const PointCloud c(pts, f);
  write_cloud_file(dir / "c.ptta", c);
  EXPECT_EQ(read_cloud_file(dir / "c.ptta"), c);
}

TEST(SplitDataset, CountsAndDeterminism) {
  DatasetManifest m;
  for (int i = 0; i < 100; ++i) m.pairs.push_back(PairEntry{"p" + std::to_string(i), "", "train", "x", 0});
  Rng a(1), b(1), c(1);
  const DatasetManifest all_train = split_dataset(m, {1, 0, 0}, a);
  for (const auto& e : all_train.pairs) EXPECT_EQ(e.split, "train");

  const DatasetManifest s1 = split_dataset(m, {0.5, 0.25, 0.25}, b);
  const DatasetManifest s2 = split_dataset(m, {0.5, 0.25, 0.25}, c);
  EXPECT_EQ(s1, s2);
  std::map<std::string, int> counts;
  for (const auto& e : s1.pairs) ++counts[e.split];
  EXPECT_EQ(counts["train"], 50);
  EXPECT_EQ(counts["val"], 25);
  EXPECT_EQ(counts["test"], 25);
  Rng d(1);
  EXPECT_THROW(split_dataset(m, {0.5, 0.5, 0.5}, d), ArgumentError);
}
