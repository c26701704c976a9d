#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ptta/cloud.hpp"
#include "ptta/rng.hpp"

namespace ptta {

enum class Primitive { Plane = 0, Box = 1, Sphere = 2, Cluster = 3 };

/// Statistics of one synthetic "scanner + environment". Train and test profiles differ to
/// produce domain shift.
struct DomainProfile {
  std::string name = "default";
  std::array<double, 4> shape_mix{0.25, 0.35, 0.2, 0.2};  ///< plane, box, sphere shell, Gaussian cluster
  int point_count = 384;
  double noise_sigma = 0.01;       ///< meters
  double outlier_fraction = 0.0;
  double overlap_ratio = 0.5;
  double voxel = 0.05;             ///< meters
  double extent = 3.0;             ///< scene side length, meters
  int objects_per_kind = 3;
  double rotation_range = 360.0;   ///< degrees, ground-truth sampler
  double translation_range = 0.6;  ///< meters, ground-truth sampler

  void validate() const;
  friend bool operator==(const DomainProfile&, const DomainProfile&) = default;
};

struct BoxShape {
  Vector3<double> center;
  Vector3<double> half;
  double yaw = 0.0;  ///< radians about +z
};
struct SphereShape {
  Vector3<double> center;
  double radius = 1.0;
};
struct ClusterShape {
  Vector3<double> center;
  Vector3<double> sigma;
};

/// Primitive instances of one scene; the plane is the floor z = 0.
struct SceneLayout {
  double half_extent = 1.5;
  std::vector<BoxShape> boxes;
  std::vector<SphereShape> spheres;
  std::vector<ClusterShape> clusters;
};

struct ScenePair {
  PointCloud source;
  PointCloud target;
  RigidTransform gt;  ///< maps source coordinates into the target frame
  std::string profile_name;
  std::string pair_id;
};

SceneLayout make_layout(const DomainProfile& profile, Rng& rng);
PointCloud sample_layout(const SceneLayout& layout, const DomainProfile& profile, Rng& rng);
/// `make_layout` followed by `sample_layout`; noiseless.
PointCloud generate_scene(const DomainProfile& profile, Rng& rng);

/// Crops two overlapping views, moves the target by a sampled ground truth, then adds noise
/// and outliers to both.
ScenePair make_pair(const PointCloud& scene, const DomainProfile& profile, Rng& rng, std::string pair_id = "");

/// Fraction of the smaller crop shared by two half-space crops along `normal` with slab half-width `offset`.
double half_space_overlap(const PointCloud& scene, const Vector3<double>& normal, double offset);

struct PairEntry {
  std::string pair_id;
  std::string file;  ///< relative to the dataset directory
  std::string split = "train";
  std::string profile;
  std::uint32_t crc32 = 0;

  friend bool operator==(const PairEntry&, const PairEntry&) = default;
};

struct DatasetManifest {
  std::vector<DomainProfile> profiles;
  std::vector<PairEntry> pairs;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr const char* kManifestName = "manifest.jsonl";

/// Writes one blob per pair plus the manifest; fills file names and checksums into `manifest`.
void write_dataset(std::span<const ScenePair> pairs, DatasetManifest& manifest, const std::filesystem::path& dir);
std::pair<std::vector<ScenePair>, DatasetManifest> read_dataset(const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);

/// Shuffles pairs into train/val/test with counts round(f_train n), round(f_val n), remainder.
DatasetManifest split_dataset(const DatasetManifest& manifest, std::array<double, 3> fractions, Rng& rng);

/// Pair blob: "PTTA", u32 version, u8 has_gt, [12 f64 gt], u32 cloud count,
/// per cloud { u64 points, u32 feature dim, xyz f64..., features f64... }, u32 CRC-32.
std::string encode_blob(std::span<const PointCloud> clouds, const std::optional<RigidTransform>& gt);
std::pair<std::vector<PointCloud>, std::optional<RigidTransform>> decode_blob(std::string bytes,
                                                                              const std::string& origin);

void write_cloud_file(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud_file(const std::filesystem::path& path);

/// Generates `count` pairs per profile with independent streams per pair id.
std::vector<ScenePair> generate_pairs(const DomainProfile& profile, int count, std::uint64_t seed,
                                      const std::string& id_prefix);

}  // namespace ptta
