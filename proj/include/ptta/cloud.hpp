#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptta/errors.hpp"
#include "ptta/rng.hpp"

namespace ptta {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;

template <typename Scalar>
constexpr Scalar deg2rad(Scalar deg) {
  return deg * std::numbers::pi_v<Scalar> / Scalar(180);
}
template <typename Scalar>
constexpr Scalar rad2deg(Scalar rad) {
  return rad * Scalar(180) / std::numbers::pi_v<Scalar>;
}

/// N x 3 coordinates (meters) with optional per-point feature rows.
template <typename Scalar>
class BasicPointCloud {
 public:
  using Points = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;
  using Features = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  explicit BasicPointCloud(Points points, std::optional<Features> features = std::nullopt)
      : points_(std::move(points)), features_(std::move(features)) {
    if (points_.rows() < 1) throw ArgumentError("point cloud must hold at least one point");
    if (!points_.allFinite()) throw ArgumentError("point cloud has non-finite coordinates");
    if (features_ && features_->rows() != points_.rows())
      throw ArgumentError("feature count does not match point count");
  }

  Eigen::Index size() const { return points_.rows(); }
  const Points& points() const { return points_; }
  Vector3<Scalar> point(Eigen::Index i) const { return points_.row(i).transpose(); }

  bool has_features() const { return features_.has_value(); }
  const Features& features() const { return *features_; }
  const std::optional<Features>& maybe_features() const { return features_; }

  Vector3<Scalar> centroid() const { return points_.colwise().mean().transpose(); }

  friend bool operator==(const BasicPointCloud& a, const BasicPointCloud& b) {
    if (a.points_.rows() != b.points_.rows() || a.points_ != b.points_) return false;
    if (a.features_.has_value() != b.features_.has_value()) return false;
    if (!a.features_) return true;
    return a.features_->rows() == b.features_->rows() && a.features_->cols() == b.features_->cols() &&
           *a.features_ == *b.features_;
  }

 private:
  Points points_;
  std::optional<Features> features_;
};

/// x -> R x + t with R in SO(3).
template <typename Scalar>
class BasicRigidTransform {
 public:
  BasicRigidTransform() : rotation_(Matrix3<Scalar>::Identity()), translation_(Vector3<Scalar>::Zero()) {}

  BasicRigidTransform(const Matrix3<Scalar>& rotation, const Vector3<Scalar>& translation)
      : rotation_(rotation), translation_(translation) {
    if (!rotation_.allFinite() || !translation_.allFinite())
      throw ArgumentError("rigid transform has non-finite entries");
    const Scalar tol = Scalar(1e-9);
    if ((rotation_.transpose() * rotation_ - Matrix3<Scalar>::Identity()).cwiseAbs().maxCoeff() > tol)
      throw ArgumentError("rotation is not orthonormal");
    if (std::abs(rotation_.determinant() - Scalar(1)) > tol)
      throw ArgumentError("rotation determinant is not +1");
  }

  static BasicRigidTransform identity() { return {}; }

  /// Top 3x4 block of a homogeneous matrix, row-major.
  static BasicRigidTransform from_row_major(std::span<const Scalar, 12> v) {
    Matrix3<Scalar> r;
    Vector3<Scalar> t;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) r(i, j) = v[4 * i + j];
      t(i) = v[4 * i + 3];
    }
    return {r, t};
  }

  std::array<Scalar, 12> to_row_major() const {
    std::array<Scalar, 12> v{};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) v[4 * i + j] = rotation_(i, j);
      v[4 * i + 3] = translation_(i);
    }
    return v;
  }

  Eigen::Matrix<Scalar, 4, 4> homogeneous() const {
    Eigen::Matrix<Scalar, 4, 4> m = Eigen::Matrix<Scalar, 4, 4>::Identity();
    m.template topLeftCorner<3, 3>() = rotation_;
    m.template topRightCorner<3, 1>() = translation_;
    return m;
  }

  const Matrix3<Scalar>& rotation() const { return rotation_; }
  const Vector3<Scalar>& translation() const { return translation_; }

  Vector3<Scalar> operator*(const Vector3<Scalar>& p) const { return rotation_ * p + translation_; }

  friend bool operator==(const BasicRigidTransform&, const BasicRigidTransform&) = default;

 private:
  Matrix3<Scalar> rotation_;
  Vector3<Scalar> translation_;
};

using PointCloud = BasicPointCloud<double>;
using RigidTransform = BasicRigidTransform<double>;

template <typename Scalar>
Matrix3<Scalar> rotation_x(Scalar deg) {
  return Eigen::AngleAxis<Scalar>(deg2rad(deg), Vector3<Scalar>::UnitX()).toRotationMatrix();
}
template <typename Scalar>
Matrix3<Scalar> rotation_y(Scalar deg) {
  return Eigen::AngleAxis<Scalar>(deg2rad(deg), Vector3<Scalar>::UnitY()).toRotationMatrix();
}
template <typename Scalar>
Matrix3<Scalar> rotation_z(Scalar deg) {
  return Eigen::AngleAxis<Scalar>(deg2rad(deg), Vector3<Scalar>::UnitZ()).toRotationMatrix();
}

template <typename Scalar>
BasicPointCloud<Scalar> apply_transform(const BasicPointCloud<Scalar>& cloud,
                                        const BasicRigidTransform<Scalar>& T) {
  typename BasicPointCloud<Scalar>::Points moved =
      (cloud.points() * T.rotation().transpose()).rowwise() + T.translation().transpose();
  return BasicPointCloud<Scalar>(std::move(moved), cloud.maybe_features());
}

/// Applies `b` first, then `a`.
template <typename Scalar>
BasicRigidTransform<Scalar> compose(const BasicRigidTransform<Scalar>& a, const BasicRigidTransform<Scalar>& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

template <typename Scalar>
BasicRigidTransform<Scalar> invert(const BasicRigidTransform<Scalar>& T) {
  Matrix3<Scalar> rt = T.rotation().transpose();
  return {rt, -rt * T.translation()};
}

/// Geodesic angle between the two rotations, degrees in [0, 180].
///
/// Equal to arccos((tr(pred^T gt) - 1) / 2). The cosine comes from the trace and the sine from
/// the skew part of pred^T gt; atan2 of the pair keeps full precision near 0 and 180 degrees,
/// where arccos of a clamped trace loses about half the mantissa.
template <typename Scalar>
Scalar rotation_error(const BasicRigidTransform<Scalar>& pred, const BasicRigidTransform<Scalar>& gt) {
  const Matrix3<Scalar> m = pred.rotation().transpose() * gt.rotation();
  const Scalar cos2 = m.trace() - Scalar(1);
  const Vector3<Scalar> skew(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  return rad2deg(std::atan2(skew.norm(), cos2));
}

/// Euclidean distance between translations, meters.
template <typename Scalar>
Scalar translation_error(const BasicRigidTransform<Scalar>& pred, const BasicRigidTransform<Scalar>& gt) {
  return (pred.translation() - gt.translation()).norm();
}

/// Rotation rot_x(a) rot_y(b) rot_z(c) with a, b, c ~ U[0, rot_range]; translation components ~ U[0, trans_range].
template <typename Scalar = double>
BasicRigidTransform<Scalar> sample_random_transform(Rng& rng, Scalar rot_range_deg = Scalar(360),
                                                    Scalar trans_range = Scalar(0.6)) {
  if (rot_range_deg < 0 || trans_range < 0) throw ArgumentError("sampling ranges must be non-negative");
  std::uniform_real_distribution<double> rot(0.0, static_cast<double>(rot_range_deg));
  std::uniform_real_distribution<double> trans(0.0, static_cast<double>(trans_range));
  const auto ax = static_cast<Scalar>(rot(rng));
  const auto ay = static_cast<Scalar>(rot(rng));
  const auto az = static_cast<Scalar>(rot(rng));
  Vector3<Scalar> t;
  for (int i = 0; i < 3; ++i) t(i) = static_cast<Scalar>(trans(rng));
  Matrix3<Scalar> r = rotation_x(ax) * rotation_y(ay) * rotation_z(az);
  // Re-orthonormalize so the product of three rotations stays inside the 1e-9 invariant band.
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  r = svd.matrixU() * svd.matrixV().transpose();
  return {r, t};
}

/// One centroid per occupied voxel, emitted in lexicographic voxel-index order.
template <typename Scalar>
BasicPointCloud<Scalar> voxel_downsample(const BasicPointCloud<Scalar>& cloud, Scalar voxel) {
  if (!(voxel > 0)) throw ArgumentError("voxel size must be positive");
  using Key = std::array<long long, 3>;
  struct Cell {
    Vector3<Scalar> sum = Vector3<Scalar>::Zero();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> feature_sum;
    long long count = 0;
  };
  std::map<Key, Cell> cells;
  const auto& pts = cloud.points();
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    Key key;
    for (int d = 0; d < 3; ++d) key[d] = static_cast<long long>(std::floor(pts(i, d) / voxel));
    Cell& cell = cells[key];
    cell.sum += pts.row(i).transpose();
    if (cloud.has_features()) {
      if (cell.count == 0) cell.feature_sum = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(cloud.features().cols());
      cell.feature_sum += cloud.features().row(i).transpose();
    }
    ++cell.count;
  }
  typename BasicPointCloud<Scalar>::Points out(static_cast<Eigen::Index>(cells.size()), 3);
  std::optional<typename BasicPointCloud<Scalar>::Features> feats;
  if (cloud.has_features()) feats.emplace(static_cast<Eigen::Index>(cells.size()), cloud.features().cols());
  Eigen::Index row = 0;
  for (const auto& [key, cell] : cells) {
    out.row(row) = (cell.sum / static_cast<Scalar>(cell.count)).transpose();
    if (feats) feats->row(row) = (cell.feature_sum / static_cast<Scalar>(cell.count)).transpose();
    ++row;
  }
  return BasicPointCloud<Scalar>(std::move(out), std::move(feats));
}

struct EvalThresholds {
  double re_max = 15.0;  ///< degrees
  double te_max = 0.30;  ///< meters

  EvalThresholds() = default;
  EvalThresholds(double re, double te) : re_max(re), te_max(te) {
    if (!(re > 0) || !(te > 0)) throw ArgumentError("evaluation thresholds must be positive");
  }

  static EvalThresholds indoor() { return {15.0, 0.30}; }
  static EvalThresholds outdoor() { return {5.0, 0.60}; }
};

struct RegistrationResult {
  RigidTransform predicted;
  double re = 0.0;
  double te = 0.0;
  bool success = false;
  std::vector<double> aux_loss_trace;
  bool fell_back = false;  ///< test-time adaptation reverted to the unadapted model
  bool halved_step = false;
};

inline bool succeeds(double re, double te, const EvalThresholds& th) { return re <= th.re_max && te <= th.te_max; }

/// Fills re/te/success of `result` against a ground truth.
inline void score_against(RegistrationResult& result, const RigidTransform& gt, const EvalThresholds& th) {
  result.re = rotation_error(result.predicted, gt);
  result.te = translation_error(result.predicted, gt);
  result.success = succeeds(result.re, result.te, th);
}

inline double registration_recall(std::span<const RegistrationResult> results, const EvalThresholds& th) {
  if (results.empty()) throw ArgumentError("registration recall of an empty result list");
  const auto hits = std::count_if(results.begin(), results.end(),
                                  [&](const RegistrationResult& r) { return succeeds(r.re, r.te, th); });
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

}  // namespace ptta
