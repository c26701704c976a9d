#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <utility>

#include "ptta/autodiff.hpp"
#include "ptta/cloud.hpp"
#include "ptta/networks.hpp"
#include "ptta/registration.hpp"
#include "ptta/rng.hpp"

namespace ptta {

struct AugmentationSpec {
  double crop_min = 0.6;
  double crop_max = 0.9;
  double rotation_deg = 30.0;
  double jitter_sigma = 0.025;
  double downsample_min = 0.7;
  double downsample_max = 1.0;

  static AugmentationSpec identity() { return {1.0, 1.0, 0.0, 0.0, 1.0, 1.0}; }
  void validate() const;
  friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

enum AuxTask : int { kRec = 0, kByol = 1, kCc = 2 };

struct AuxConfig {
  std::array<bool, 3> enabled{true, true, true};  ///< reconstruction, BYOL, correspondence classification
  AugmentationSpec augment;
  double cc_jitter = 0.025;
  double cc_rotation_range = 360.0;
  double inlier_threshold = 0.10;

  bool any() const { return enabled[0] || enabled[1] || enabled[2]; }
  void validate() const;
  friend bool operator==(const AuxConfig&, const AuxConfig&) = default;
};

inline constexpr std::size_t kMinViewPoints = 16;

/// Two independent crop / rotate / jitter / downsample augmentations of `cloud`.
std::pair<PointCloud, PointCloud> make_views(const PointCloud& cloud, const AugmentationSpec& spec, Rng& rng);
PointCloud augment(const PointCloud& cloud, const AugmentationSpec& spec, Rng& rng);

/// Centred coordinates in the cloud's principal-axis frame; the reconstruction target.
Matrix canonical_coordinates(const PointCloud& cloud);

/// Mean absolute error over all N x 3 entries.
ad::Var reconstruction_error(const ad::Var& reconstruction, const Matrix& target);
/// 2 - 2 cos(q, z) per row pair, summed over rows (one row per view in practice).
ad::Var byol_directional(const ad::Var& prediction, const ad::Var& projection);

/// Task inputs for one cloud. `features` may carry online encoder output computed elsewhere.
struct AuxCloud {
  const PointCloud* cloud = nullptr;
  const LocalGeometry* geometry = nullptr;
  std::optional<ad::Var> features;
};

ad::Var reconstruction_loss(ad::Tape& tape, const Bindings& b, const AuxCloud& in);
ad::Var byol_loss(ad::Tape& tape, const Bindings& b, const AuxCloud& in, const AugmentationSpec& spec,
                  const EncoderConfig& encoder, Rng& rng);
ad::Var cc_loss(ad::Tape& tape, const Bindings& b, const AuxCloud& in, const AuxConfig& config,
                const EncoderConfig& encoder, Rng& rng);

/// Softmax over 1/(2 c_i^2) of the enabled tasks; disabled tasks get weight 0.
ad::Var balance_weights(const ad::Var& c, const std::array<bool, 3>& enabled = {true, true, true});
Eigen::Vector3d balance_weights(const Eigen::Vector3d& c, const std::array<bool, 3>& enabled = {true, true, true});

struct AuxTerms {
  ad::Var total;
  ad::Var lambda;                        ///< 1 x 3
  std::array<std::optional<ad::Var>, 3> task;  ///< per-task loss averaged over both clouds
  std::array<double, 3> values{0.0, 0.0, 0.0};
};

/// sum_k lambda_k l_k over the present tasks.
ad::Var weighted_aux_sum(const ad::Var& lambda, const std::array<std::optional<ad::Var>, 3>& task);

/// L_aux over both clouds of a pair. No ground truth enters anywhere.
AuxTerms aux_total_loss(ad::Tape& tape, const Bindings& b, const AuxCloud& x, const AuxCloud& y,
                        const AuxConfig& config, const EncoderConfig& encoder, Rng& rng);

}  // namespace ptta
