#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>
#include <vector>

#include "ptta/autodiff.hpp"
#include "ptta/cloud.hpp"
#include "ptta/params.hpp"
#include "ptta/rng.hpp"

namespace ptta {

/// Dense point encoder: two blocks of per-neighbour MLPs with symmetric max/mean pooling over
/// k-nearest neighbourhoods. Inputs are pose-invariant point-pair features, so source and
/// target clouds related by any rigid motion produce comparable descriptors.
struct EncoderConfig {
  Eigen::Index feature_dim = 32;
  Eigen::Index hidden = 32;  ///< per-neighbour width of block one
  Eigen::Index width = 64;   ///< block output width
  Eigen::Index k = 10;
  double distance_scale = 0.1;  ///< metres mapped to unit input

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct NetworkConfig {
  EncoderConfig encoder;
  Eigen::Index decoder_hidden = 64;
  Eigen::Index projection_dim = 32;
  Eigen::Index byol_hidden = 64;
  Eigen::Index head_width = 32;

  void validate() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Per-correspondence input width of the rejection heads.
inline constexpr Eigen::Index kCorrespondenceInputDim = 8;

/// Parameter prefixes. The BYOL target mirrors `shar.` and `aux.proj.` under `target.`.
namespace prefix {
inline const std::string shar = "shar.";
inline const std::string pri = "pri.";
inline const std::string rec = "aux.rec.";
inline const std::string proj = "aux.proj.";
inline const std::string pred = "aux.pred.";
inline const std::string cc = "aux.cc.";
inline const std::string target = "target.";
inline const std::string balance = "balance.c";
}  // namespace prefix

struct ParamPartition {
  NetworkConfig config;
  ParamStore shar;     ///< encoder
  ParamStore pri;      ///< primary rejection head
  ParamStore aux;      ///< decoder, BYOL projector and predictor, auxiliary rejection head
  ParamStore balance;  ///< `balance.c`, 1x3 task uncertainty scalars
  ParamStore target;   ///< BYOL target encoder and projector, never gradient-trained

  /// Name-disjointness, target shapes, finite nonzero c. Throws InvariantError.
  void validate() const;
  Eigen::Index parameter_count() const;
  bool same_values(const ParamPartition& other) const;
};

ParamPartition init_partition(const NetworkConfig& config, Rng& rng);

/// Binds shar, pri, aux and balance as trainable leaves and the target as constants.
Bindings bind_partition(ad::Tape& tape, const ParamPartition& p, bool trainable = true);
/// Gradients for every trainable store, keyed by parameter name.
GradMap collect_partition_grads(const ad::Tape& tape, const Bindings& b, const ParamPartition& p);
void sgd_step(ParamPartition& p, const GradMap& grads, double lr);

/// Neighbourhood structure of one cloud; depends on coordinates only.
struct LocalGeometry {
  Eigen::Index k = 0;
  std::vector<Eigen::Index> neighbors;  ///< N*k, row-major by point
  Matrix pair_features;                 ///< N*k x 4
  Matrix point_features;                ///< N x 3
};

inline constexpr Eigen::Index kPairFeatureDim = 4;
inline constexpr Eigen::Index kPointFeatureDim = 3;

LocalGeometry local_geometry(const PointCloud& cloud, const EncoderConfig& config);

ad::Var encode(ad::Tape& tape, const Bindings& b, const std::string& prefix, const LocalGeometry& geom);
ad::Var decode(const Bindings& b, const ad::Var& features);
ad::Var byol_project(const Bindings& b, const std::string& prefix, const ad::Var& pooled);
ad::Var byol_predict(const Bindings& b, const ad::Var& z);
/// Inlier probability per correspondence row (M x kCorrespondenceInputDim -> M x 1).
ad::Var score_correspondences(const Bindings& b, const std::string& prefix, const ad::Var& input);

/// Per-channel standardisation across rows; std below 1e-8 is replaced by 1.
ad::Var context_norm(const ad::Var& x);

/// Forward-only conveniences.
Matrix encode_points(const ParamPartition& p, const PointCloud& cloud);
Matrix decode_points(const ParamPartition& p, const Matrix& features);
Matrix score_correspondences(const ParamPartition& p, const std::string& prefix, const Matrix& input);

/// xi <- tau xi + (1 - tau) theta for every target entry; the online name drops the `target.` prefix.
void ema_update(ParamStore& target, std::initializer_list<const ParamStore*> online, double tau);
void ema_update(ParamPartition& p, double tau);

}  // namespace ptta
