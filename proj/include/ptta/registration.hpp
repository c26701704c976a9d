#pragma once

#include <Eigen/Dense>

#include <optional>
#include <utility>
#include <vector>

#include "ptta/autodiff.hpp"
#include "ptta/cloud.hpp"
#include "ptta/networks.hpp"

namespace ptta {

using IndexList = std::vector<Eigen::Index>;

struct CorrespondenceSet {
  IndexList source;
  IndexList target;
  std::optional<Eigen::VectorXd> weights;
  std::optional<std::vector<bool>> gt_labels;

  std::size_t size() const { return source.size(); }
  void validate(Eigen::Index source_points, Eigen::Index target_points) const;
};

struct RegistrationConfig {
  double inlier_threshold = 0.10;  ///< metres; also the spatial-consistency tolerance
  double lambda_t = 1.0;
  double lambda_f = 1.0;      ///< weight of the descriptor term
  double temperature = 0.1;  ///< descriptor softmax temperature
  bool mutual = false;

  void validate() const;
  friend bool operator==(const RegistrationConfig&, const RegistrationConfig&) = default;
};

/// Nearest target row per source row; ties go to the smallest target index. With `mutual`,
/// only pairs that are also the source's nearest neighbour from the target side survive.
CorrespondenceSet match_features(const Matrix& source, const Matrix& target, bool mutual = false);

std::vector<bool> label_inliers(const CorrespondenceSet& corr, const PointCloud& source, const PointCloud& target,
                                const RigidTransform& t, double threshold);

/// Fraction of other correspondences whose mutual distance is preserved within `threshold`.
Eigen::VectorXd spatial_consistency(const CorrespondenceSet& corr, const PointCloud& source,
                                    const PointCloud& target, double threshold);

/// Leading eigenvector of the pairwise length-consistency matrix
/// A_ab = max(0, 1 - ((|x_a - x_b| - |y_a - y_b|) / threshold)^2), scaled to a maximum of 1.
/// Zeros when no two correspondences agree.
Eigen::VectorXd spectral_consistency(const CorrespondenceSet& corr, const PointCloud& source,
                                     const PointCloud& target, double threshold);

/// Rejection-head input rows: centred source point, centred target point, squared feature
/// distance, spectral consistency.
Matrix correspondence_input(const Matrix& source_features, const Matrix& target_features,
                            const PointCloud& source, const PointCloud& target, const CorrespondenceSet& corr,
                            double threshold);
/// Same rows with the feature distance column differentiable in both feature matrices.
ad::Var correspondence_input(const ad::Var& source_features, const ad::Var& target_features,
                             const PointCloud& source, const PointCloud& target, const CorrespondenceSet& corr,
                             double threshold);

/// Rotation factor U diag(1, 1, det(UV^T)) V^T of a 3x3 matrix, with the exact polar-factor gradient.
ad::Var polar_rotation(const ad::Var& h);

struct TransformVars {
  ad::Var rotation;     ///< 3x3
  ad::Var translation;  ///< 1x3
};

/// Weighted Procrustes on M pairs (x_k, y_k); `weights` is M x 1 and may carry gradients.
TransformVars weighted_procrustes(const ad::Var& weights, const Matrix& x, const Matrix& y);
RigidTransform weighted_procrustes(const PointCloud& source, const PointCloud& target, const CorrespondenceSet& corr);

struct PrimaryTerms {
  ad::Var loss;
  ad::Var bce;
  ad::Var transform;
  ad::Var descriptor;
  ad::Var probabilities;
  TransformVars estimate;
  CorrespondenceSet corr;
};

/// Binary cross-entropy of clamped probabilities against labels, averaged over rows.
ad::Var binary_cross_entropy(const ad::Var& probabilities, const std::vector<bool>& labels);

/// BCE against residual labels plus lambda_t (||R - R*||_F + ||t - t*||), each norm smoothed by 1e-12
/// under the root. `probabilities` (M x 1) also weight the Procrustes estimate.
PrimaryTerms primary_terms(const ad::Var& probabilities, const PointCloud& source, const PointCloud& target,
                           CorrespondenceSet corr, const RigidTransform& gt, const RegistrationConfig& config);

/// Point pairs (i, j) where j is the target point nearest to gt * x_i, kept within `radius`.
std::vector<std::pair<Eigen::Index, Eigen::Index>> ground_truth_neighbors(const PointCloud& source,
                                                                          const PointCloud& target,
                                                                          const RigidTransform& gt, double radius);

/// Symmetric InfoNCE on ground-truth neighbours: each anchor's positive competes with every point
/// of the other cloud under cosine similarity / temperature. Zero when the clouds share no neighbours.
ad::Var descriptor_loss(const ad::Var& source_features, const ad::Var& target_features, const PointCloud& source,
                        const PointCloud& target, const RigidTransform& gt, const RegistrationConfig& config);

/// Loss of the primary branch for given correspondences, plus lambda_f times the descriptor term; the head named by `head` scores them.
PrimaryTerms primary_loss(ad::Tape& tape, const Bindings& b, const std::string& head, const ad::Var& source_features,
                          const ad::Var& target_features, const PointCloud& source, const PointCloud& target,
                          CorrespondenceSet corr, const RigidTransform& gt, const RegistrationConfig& config);

/// Encodes both clouds with `shar.`, matches them and evaluates the primary loss with `pri.`.
PrimaryTerms primary_loss(ad::Tape& tape, const Bindings& b, const LocalGeometry& source_geometry,
                          const LocalGeometry& target_geometry, const PointCloud& source, const PointCloud& target,
                          const RigidTransform& gt, const RegistrationConfig& config);

/// Encode, match, score with the primary head, weighted Procrustes.
RegistrationResult register_pair(const ParamPartition& p, const PointCloud& source, const PointCloud& target,
                                 const RegistrationConfig& config);

}  // namespace ptta
