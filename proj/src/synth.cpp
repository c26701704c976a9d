#include "ptta/synth.hpp"


#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ptta/binio.hpp"
#include "ptta/json.hpp"

namespace ptta {

void DomainProfile::validate() const {
  double total = 0.0;
  for (double w : shape_mix) {
    if (!(w >= 0.0)) throw ConfigError("profile " + name + ": negative shape weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("profile " + name + ": shape weights must sum to 1");
  if (point_count < 32) throw ConfigError("profile " + name + ": point_count must be at least 32");
  if (!(noise_sigma >= 0.0)) throw ConfigError("profile " + name + ": negative noise_sigma");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0))
    throw ConfigError("profile " + name + ": outlier_fraction outside [0,1]");
  if (!(overlap_ratio >= 0.0 && overlap_ratio <= 1.0))
    throw ConfigError("profile " + name + ": overlap_ratio outside [0,1]");
  if (!(voxel > 0.0)) throw ConfigError("profile " + name + ": voxel must be positive");
  if (!(extent > 0.0)) throw ConfigError("profile " + name + ": extent must be positive");
  if (objects_per_kind < 1) throw ConfigError("profile " + name + ": objects_per_kind must be positive");
  if (!(rotation_range >= 0.0) || !(translation_range >= 0.0))
    throw ConfigError("profile " + name + ": sampler ranges must be non-negative");
}

namespace {

Vector3<double> random_unit(Rng& rng) {
  for (;;) {
    Vector3<double> v(gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

Vector3<double> sample_box(const BoxShape& b, Rng& rng) {
  const double ax = b.half.y() * b.half.z(), ay = b.half.x() * b.half.z(), az = b.half.x() * b.half.y();
  const double pick = uniform(rng, 0.0, ax + ay + az);
  const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
  const double u = uniform(rng, -1.0, 1.0), v = uniform(rng, -1.0, 1.0);
  Vector3<double> local;
  if (pick < ax) {
    local = {sign * b.half.x(), u * b.half.y(), v * b.half.z()};
  } else if (pick < ax + ay) {
    local = {u * b.half.x(), sign * b.half.y(), v * b.half.z()};
  } else {
    local = {u * b.half.x(), v * b.half.y(), sign * b.half.z()};
  }
  return Eigen::AngleAxisd(b.yaw, Vector3<double>::UnitZ()) * local + b.center;
}

}  // namespace

SceneLayout make_layout(const DomainProfile& profile, Rng& rng) {
  profile.validate();
  SceneLayout layout;
  const double h = profile.extent / 2.0;
  const double unit = profile.extent / 3.0;
  layout.half_extent = h;
  for (int i = 0; i < profile.objects_per_kind; ++i) {
    BoxShape b;
    b.half = {uniform(rng, 0.1, 0.3) * unit, uniform(rng, 0.1, 0.3) * unit, uniform(rng, 0.1, 0.4) * unit};
    b.center = {uniform(rng, -0.7, 0.7) * h, uniform(rng, -0.7, 0.7) * h, b.half.z()};
    b.yaw = uniform(rng, 0.0, std::numbers::pi);
    layout.boxes.push_back(b);
  }
  for (int i = 0; i < profile.objects_per_kind; ++i) {
    SphereShape s;
    s.radius = uniform(rng, 0.1, 0.3) * unit;
    s.center = {uniform(rng, -0.7, 0.7) * h, uniform(rng, -0.7, 0.7) * h, s.radius + uniform(rng, 0.0, 0.5) * unit};
    layout.spheres.push_back(s);
  }
  for (int i = 0; i < profile.objects_per_kind; ++i) {
    ClusterShape c;
    c.center = {uniform(rng, -0.7, 0.7) * h, uniform(rng, -0.7, 0.7) * h, uniform(rng, 0.2, 0.9) * unit};
    c.sigma = {uniform(rng, 0.03, 0.15) * unit, uniform(rng, 0.03, 0.15) * unit, uniform(rng, 0.03, 0.15) * unit};
    layout.clusters.push_back(c);
  }
  return layout;
}

PointCloud sample_layout(const SceneLayout& layout, const DomainProfile& profile, Rng& rng) {
  profile.validate();
  std::discrete_distribution<int> kind(profile.shape_mix.begin(), profile.shape_mix.end());
  PointCloud::Points pts(profile.point_count, 3);
  const double h = layout.half_extent;
  for (int i = 0; i < profile.point_count; ++i) {
    Vector3<double> p;
    switch (static_cast<Primitive>(kind(rng))) {
      case Primitive::Plane:
        p = {uniform(rng, -h, h), uniform(rng, -h, h), 0.0};
        break;
      case Primitive::Box: {
        std::uniform_int_distribution<std::size_t> pick(0, layout.boxes.size() - 1);
        p = sample_box(layout.boxes[pick(rng)], rng);
        break;
      }
      case Primitive::Sphere: {
        std::uniform_int_distribution<std::size_t> pick(0, layout.spheres.size() - 1);
        const SphereShape& s = layout.spheres[pick(rng)];
        p = s.center + s.radius * random_unit(rng);
        break;
      }
      case Primitive::Cluster: {
        std::uniform_int_distribution<std::size_t> pick(0, layout.clusters.size() - 1);
        const ClusterShape& c = layout.clusters[pick(rng)];
        p = c.center + Vector3<double>(gaussian(rng, c.sigma.x()), gaussian(rng, c.sigma.y()), gaussian(rng, c.sigma.z()));
        break;
      }
    }
    pts.row(i) = p.transpose();
  }
  return PointCloud(std::move(pts));
}

PointCloud generate_scene(const DomainProfile& profile, Rng& rng) {
  const SceneLayout layout = make_layout(profile, rng);
  return sample_layout(layout, profile, rng);
}

namespace {

struct Crop {
  std::vector<Eigen::Index> source, target;
  std::size_t shared = 0;
};

Crop half_space_crop(const Eigen::VectorXd& signed_dist, double offset) {
  Crop c;
  for (Eigen::Index i = 0; i < signed_dist.size(); ++i) {
    const double s = signed_dist(i);
    if (s <= offset) c.source.push_back(i);
    if (s >= -offset) c.target.push_back(i);
    if (std::abs(s) <= offset) ++c.shared;
  }
  return c;
}

double crop_overlap(const Crop& c) {
  const std::size_t smaller = std::min(c.source.size(), c.target.size());
  return smaller == 0 ? 0.0 : static_cast<double>(c.shared) / static_cast<double>(smaller);
}

Eigen::VectorXd signed_distances(const PointCloud& scene, const Vector3<double>& normal) {
  return (scene.points().rowwise() - scene.centroid().transpose()) * normal;
}

PointCloud::Points take_rows(const PointCloud::Points& pts, const std::vector<Eigen::Index>& rows) {
  PointCloud::Points out(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts.row(rows[i]);
  return out;
}

void add_noise(PointCloud::Points& pts, double sigma, Rng& rng) {
  if (sigma <= 0.0) return;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (int d = 0; d < 3; ++d) pts(i, d) += gaussian(rng, sigma);
}

void inject_outliers(PointCloud::Points& pts, double fraction, Rng& rng) {
  const auto n = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(pts.rows())));
  if (n == 0) return;
  const Eigen::RowVector3d lo = pts.colwise().minCoeff(), hi = pts.colwise().maxCoeff();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pts.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t k = 0; k < n; ++k) {
    for (int d = 0; d < 3; ++d) pts(idx[k], d) = uniform(rng, lo(d), hi(d));
  }
}

}  // namespace

double half_space_overlap(const PointCloud& scene, const Vector3<double>& normal, double offset) {
  return crop_overlap(half_space_crop(signed_distances(scene, normal), offset));
}

ScenePair make_pair(const PointCloud& scene, const DomainProfile& profile, Rng& rng, std::string pair_id) {
  profile.validate();
  constexpr std::size_t kMinView = 16;
  constexpr int kAttempts = 100;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const Vector3<double> normal = random_unit(rng);
    const Eigen::VectorXd sd = signed_distances(scene, normal);
    const double reach = sd.cwiseAbs().maxCoeff() + 1e-9;
    double offset = reach;
    if (profile.overlap_ratio < 1.0) {
      // Smallest slab half-width whose overlap reaches the requested ratio.
      double lo = 0.0, hi = reach;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (crop_overlap(half_space_crop(sd, mid)) >= profile.overlap_ratio ? hi : lo) = mid;
      }
      offset = hi;
    }
    const Crop crop = half_space_crop(sd, offset);
    if (crop.source.size() < kMinView || crop.target.size() < kMinView) continue;
    if (crop_overlap(crop) < profile.overlap_ratio) continue;

    PointCloud::Points src = take_rows(scene.points(), crop.source);
    const RigidTransform gt = sample_random_transform(rng, profile.rotation_range, profile.translation_range);
    PointCloud::Points tgt =
        (take_rows(scene.points(), crop.target) * gt.rotation().transpose()).rowwise() + gt.translation().transpose();
    add_noise(src, profile.noise_sigma, rng);
    add_noise(tgt, profile.noise_sigma, rng);
    inject_outliers(src, profile.outlier_fraction, rng);
    inject_outliers(tgt, profile.outlier_fraction, rng);
    return ScenePair{PointCloud(std::move(src)), PointCloud(std::move(tgt)), gt, profile.name, std::move(pair_id)};
  }
  throw NumericError("make_pair: overlap constraint unsatisfiable after 100 attempts");
}

std::vector<ScenePair> generate_pairs(const DomainProfile& profile, int count, std::uint64_t seed,
                                      const std::string& id_prefix) {
  std::vector<ScenePair> pairs;
  pairs.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    Rng rng = substream(seed, "data:" + profile.name, static_cast<std::uint64_t>(i));
    const PointCloud scene = generate_scene(profile, rng);
    std::ostringstream id;
    id << id_prefix << profile.name << "-" << i;
    pairs.push_back(make_pair(scene, profile, rng, id.str()));
  }
  return pairs;
}

// ---------------------------------------------------------------------------------------
// Persistence

std::string encode_blob(std::span<const PointCloud> clouds, const std::optional<RigidTransform>& gt) {
  binio::Writer w;
  w.bytes("PTTA");
  w.put(kDatasetVersion);
  w.put(static_cast<std::uint8_t>(gt ? 1 : 0));
  if (gt) {
    for (double v : gt->to_row_major()) w.put(v);
  }
  w.put(static_cast<std::uint32_t>(clouds.size()));
  for (const PointCloud& c : clouds) {
    w.put(static_cast<std::uint64_t>(c.size()));
    w.put(static_cast<std::uint32_t>(c.has_features() ? c.features().cols() : 0));
    for (Eigen::Index i = 0; i < c.size(); ++i)
      for (int d = 0; d < 3; ++d) w.put(c.points()(i, d));
    if (c.has_features()) {
      for (Eigen::Index i = 0; i < c.size(); ++i)
        for (Eigen::Index d = 0; d < c.features().cols(); ++d) w.put(c.features()(i, d));
    }
  }
  w.seal();
  return w.buffer();
}

std::pair<std::vector<PointCloud>, std::optional<RigidTransform>> decode_blob(std::string bytes,
                                                                              const std::string& origin) {
  binio::Reader r(std::move(bytes), origin);
  if (r.bytes(4) != "PTTA") throw CorruptFileError(origin + ": bad magic");
  r.verify_seal();
  if (const auto version = r.get<std::uint32_t>(); version != kDatasetVersion)
    throw VersionError(origin + ": unsupported PTTA version " + std::to_string(version));
  std::optional<RigidTransform> gt;
  const auto has_gt = r.get<std::uint8_t>();
  if (has_gt > 1) throw CorruptFileError(origin + ": bad gt flag");
  if (has_gt) {
    std::array<double, 12> v{};
    for (double& x : v) x = r.get<double>();
    try {
      gt = RigidTransform::from_row_major(v);
    } catch (const ArgumentError& e) {
      throw CorruptFileError(origin + ": invalid transform (" + e.what() + ")");
    }
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<PointCloud> clouds;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto n = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    const auto dim = static_cast<Eigen::Index>(r.get<std::uint32_t>());
    if (n < 1) throw CorruptFileError(origin + ": empty cloud");
    PointCloud::Points pts(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) pts(i, d) = r.get<double>();
    std::optional<PointCloud::Features> feats;
    if (dim > 0) {
      feats.emplace(n, dim);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index d = 0; d < dim; ++d) (*feats)(i, d) = r.get<double>();
    }
    try {
      clouds.emplace_back(std::move(pts), std::move(feats));
    } catch (const ArgumentError& e) {
      throw CorruptFileError(origin + ": invalid cloud (" + e.what() + ")");
    }
  }
  if (!r.at_end()) throw CorruptFileError(origin + ": trailing bytes");
  return {std::move(clouds), gt};
}

void write_cloud_file(const std::filesystem::path& path, const PointCloud& cloud) {
  binio::write_file(path, encode_blob(std::span<const PointCloud>(&cloud, 1), std::nullopt));
}

PointCloud read_cloud_file(const std::filesystem::path& path) {
  auto [clouds, gt] = decode_blob(binio::read_file(path), path.string());
  if (clouds.empty()) throw CorruptFileError(path.string() + ": no cloud in file");
  return clouds.front();
}

namespace {

using nlohmann::json;

std::string encode_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  json header{{"format", "ptta-manifest"}, {"version", kDatasetVersion}, {"seed", m.seed}, {"profiles", json::array()}};
  for (const auto& p : m.profiles) header["profiles"].push_back(json(p));
  out << header.dump() << '\n';
  for (const auto& e : m.pairs) {
    out << json{{"pair_id", e.pair_id}, {"file", e.file}, {"split", e.split}, {"profile", e.profile}, {"crc32", e.crc32}}
               .dump()
        << '\n';
  }
  return out.str();
}

void check_unique_ids(const DatasetManifest& m) {
  std::set<std::string> ids;
  for (const auto& e : m.pairs) {
    if (!ids.insert(e.pair_id).second) throw CorruptFileError("duplicate pair id " + e.pair_id);
  }
}

}  // namespace

namespace {

// The sealed blob ends in its own CRC, so checksumming the whole file yields a constant residue.
std::uint32_t payload_crc(std::string_view blob) {
  return binio::crc32(blob.substr(0, blob.size() >= 4 ? blob.size() - 4 : 0));
}

}  // namespace

void write_dataset(std::span<const ScenePair> pairs, DatasetManifest& manifest, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<PairEntry> entries;
  for (const ScenePair& p : pairs) {
    auto existing = std::find_if(manifest.pairs.begin(), manifest.pairs.end(),
                                 [&](const PairEntry& e) { return e.pair_id == p.pair_id; });
    PairEntry e = existing != manifest.pairs.end() ? *existing : PairEntry{};
    e.pair_id = p.pair_id;
    e.profile = p.profile_name;
    e.file = p.pair_id + ".ptta";
    const std::array<PointCloud, 2> clouds{p.source, p.target};
    const std::string blob = encode_blob(clouds, p.gt);
    e.crc32 = payload_crc(blob);
    binio::write_file(dir / e.file, blob);
    entries.push_back(std::move(e));
  }
  manifest.pairs = std::move(entries);
  check_unique_ids(manifest);
  binio::write_file(dir / kManifestName, encode_manifest(manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const std::string text = binio::read_file(dir / kManifestName);
  std::istringstream in(text);
  std::string line;
  DatasetManifest m;
  bool header = true;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      if (header) {
        if (j.at("format") != "ptta-manifest") throw CorruptFileError("manifest: wrong format tag");
        if (j.at("version").get<std::uint32_t>() != kDatasetVersion)
          throw VersionError("manifest: unsupported version " + j.at("version").dump());
        m.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& p : j.at("profiles")) m.profiles.push_back(p.get<DomainProfile>());
        header = false;
        continue;
      }
      m.pairs.push_back(PairEntry{j.at("pair_id").get<std::string>(), j.at("file").get<std::string>(),
                                  j.at("split").get<std::string>(), j.at("profile").get<std::string>(),
                                  j.at("crc32").get<std::uint32_t>()});
    }
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("manifest: ") + e.what());
  }
  if (header) throw CorruptFileError("manifest: missing header line");
  check_unique_ids(m);
  return m;
}

std::pair<std::vector<ScenePair>, DatasetManifest> read_dataset(const std::filesystem::path& dir) {
  DatasetManifest m = read_manifest(dir);
  std::vector<ScenePair> pairs;
  for (const PairEntry& e : m.pairs) {
    const auto path = dir / e.file;
    if (!std::filesystem::exists(path)) throw MissingFileError("dataset file missing: " + path.string());
    std::string bytes = binio::read_file(path);
    const std::uint32_t crc = payload_crc(bytes);
    auto [clouds, gt] = decode_blob(std::move(bytes), path.string());
    if (crc != e.crc32) throw ChecksumError(path.string() + ": checksum differs from manifest");
    if (clouds.size() != 2 || !gt) throw CorruptFileError(path.string() + ": not a pair blob");
    pairs.push_back(ScenePair{std::move(clouds[0]), std::move(clouds[1]), *gt, e.profile, e.pair_id});
  }
  return {std::move(pairs), std::move(m)};
}

DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> fractions, Rng& rng) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ArgumentError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("split fractions must sum to 1");
  DatasetManifest out = manifest;
  const auto n = out.pairs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::lround(fractions[0] * double(n))));
  const auto n_val =
      std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::lround(fractions[1] * double(n))));
  for (std::size_t k = 0; k < n; ++k) {
    out.pairs[order[k]].split = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
  }
  return out;
}

}  // namespace ptta
