#include "ptta/registration.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace ptta {

using ad::Tape;
using ad::Var;
using Eigen::Index;

void CorrespondenceSet::validate(Index source_points, Index target_points) const {
  if (source.size() != target.size()) throw InvariantError("correspondence index lists differ in length");
  for (std::size_t k = 0; k < source.size(); ++k) {
    if (source[k] < 0 || source[k] >= source_points || target[k] < 0 || target[k] >= target_points)
      throw InvariantError("correspondence index out of range");
  }
  if (weights) {
    if (static_cast<std::size_t>(weights->size()) != size()) throw InvariantError("weight count differs from pairs");
    if ((weights->array() < 0.0).any() || (weights->array() > 1.0).any())
      throw InvariantError("correspondence weights must lie in [0, 1]");
  }
  if (gt_labels && gt_labels->size() != size()) throw InvariantError("label count differs from pairs");
}

void RegistrationConfig::validate() const {
  if (!(inlier_threshold > 0.0)) throw ConfigError("inlier threshold must be positive");
  if (!(lambda_t >= 0.0) || !std::isfinite(lambda_t)) throw ConfigError("lambda_t must be finite and non-negative");
  if (!(lambda_f >= 0.0) || !std::isfinite(lambda_f)) throw ConfigError("lambda_f must be finite and non-negative");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("descriptor temperature must be positive");
}

namespace {

IndexList nearest_rows(const Matrix& from, const Matrix& to) {
  IndexList nn(static_cast<std::size_t>(from.rows()));
  for (Index i = 0; i < from.rows(); ++i) {
    Index best = 0;
    double best_d = (from.row(i) - to.row(0)).squaredNorm();
    for (Index j = 1; j < to.rows(); ++j) {
      const double d = (from.row(i) - to.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    nn[static_cast<std::size_t>(i)] = best;
  }
  return nn;
}

Matrix take(const PointCloud& cloud, const IndexList& idx) {
  Matrix out(static_cast<Index>(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = cloud.points().row(idx[k]);
  return out;
}

/// Columns 0-5 and 7 of the head input; column 6 (feature distance) is left at zero.
Matrix geometric_input(const PointCloud& source, const PointCloud& target, const CorrespondenceSet& corr,
                       double threshold) {
  const Index m = static_cast<Index>(corr.size());
  const Matrix x = take(source, corr.source);
  const Matrix y = take(target, corr.target);
  Matrix out = Matrix::Zero(m, kCorrespondenceInputDim);
  out.leftCols(3) = x.rowwise() - x.colwise().mean();
  out.middleCols(3, 3) = y.rowwise() - y.colwise().mean();
  out.col(7) = spectral_consistency(corr, source, target, threshold);
  return out;
}

}  // namespace

CorrespondenceSet match_features(const Matrix& source, const Matrix& target, bool mutual) {
  if (source.rows() == 0 || target.rows() == 0) throw ArgumentError("match_features: empty feature set");
  if (source.cols() != target.cols()) throw ArgumentError("match_features: feature dimensions differ");
  CorrespondenceSet corr;
  const IndexList forward = nearest_rows(source, target);
  if (!mutual) {
    corr.source.resize(forward.size());
    for (std::size_t i = 0; i < forward.size(); ++i) corr.source[i] = static_cast<Index>(i);
    corr.target = forward;
    return corr;
  }
  const IndexList backward = nearest_rows(target, source);
  for (std::size_t i = 0; i < forward.size(); ++i) {
    if (backward[static_cast<std::size_t>(forward[i])] == static_cast<Index>(i)) {
      corr.source.push_back(static_cast<Index>(i));
      corr.target.push_back(forward[i]);
    }
  }
  return corr;
}

std::vector<bool> label_inliers(const CorrespondenceSet& corr, const PointCloud& source, const PointCloud& target,
                                const RigidTransform& t, double threshold) {
  if (!(threshold > 0.0)) throw ArgumentError("label_inliers: threshold must be positive");
  corr.validate(source.size(), target.size());
  std::vector<bool> labels(corr.size());
  for (std::size_t k = 0; k < corr.size(); ++k) {
    const Vector3<double> x = source.point(corr.source[k]);
    const Vector3<double> y = target.point(corr.target[k]);
    labels[k] = (t * x - y).norm() <= threshold;
  }
  return labels;
}

Eigen::VectorXd spatial_consistency(const CorrespondenceSet& corr, const PointCloud& source,
                                    const PointCloud& target, double threshold) {
  const Index m = static_cast<Index>(corr.size());
  const Matrix x = take(source, corr.source);
  const Matrix y = take(target, corr.target);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(m);
  if (m < 2) return score;
  for (Index a = 0; a < m; ++a) {
    int agree = 0;
    for (Index b = 0; b < m; ++b) {
      if (a == b) continue;
      const double dx = (x.row(a) - x.row(b)).norm();
      const double dy = (y.row(a) - y.row(b)).norm();
      agree += std::abs(dx - dy) < threshold;
    }
    score(a) = static_cast<double>(agree) / static_cast<double>(m - 1);
  }
  return score;
}

Eigen::VectorXd spectral_consistency(const CorrespondenceSet& corr, const PointCloud& source,
                                     const PointCloud& target, double threshold) {
  if (!(threshold > 0.0)) throw ArgumentError("spectral_consistency: threshold must be positive");
  const Index m = static_cast<Index>(corr.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
  if (m < 2) return v;
  const Matrix x = take(source, corr.source);
  const Matrix y = take(target, corr.target);
  Matrix a = Matrix::Zero(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = i + 1; j < m; ++j) {
      const double r = ((x.row(i) - x.row(j)).norm() - (y.row(i) - y.row(j)).norm()) / threshold;
      a(i, j) = a(j, i) = std::max(0.0, 1.0 - r * r);
    }
  }
  v.setOnes();
  for (int it = 0; it < 200; ++it) {
    Eigen::VectorXd next = a * v;
    const double top = next.maxCoeff();
    if (!(top > 0.0)) return Eigen::VectorXd::Zero(m);
    next /= top;
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (change < 1e-12) break;
  }
  return v;
}

Matrix correspondence_input(const Matrix& source_features, const Matrix& target_features, const PointCloud& source,
                            const PointCloud& target, const CorrespondenceSet& corr, double threshold) {
  corr.validate(source.size(), target.size());
  Matrix out = geometric_input(source, target, corr, threshold);
  for (std::size_t k = 0; k < corr.size(); ++k) {
    double d = 0.0;
    for (Index c = 0; c < source_features.cols(); ++c) {
      const double diff = source_features(corr.source[k], c) - target_features(corr.target[k], c);
      d += diff * diff;
    }
    out(static_cast<Index>(k), 6) = d;
  }
  return out;
}

Var correspondence_input(const Var& source_features, const Var& target_features, const PointCloud& source,
                         const PointCloud& target, const CorrespondenceSet& corr, double threshold) {
  corr.validate(source.size(), target.size());
  Tape& tape = source_features.tape();
  const Matrix geo = geometric_input(source, target, corr, threshold);
  const Var diff = ad::gather_rows(source_features, corr.source) - ad::gather_rows(target_features, corr.target);
  const Var dist = ad::reduce_sum(ad::square(diff), ad::Axis::Cols);
  return ad::concat({tape.constant(geo.leftCols(6)), dist, tape.constant(geo.col(7))});
}

Var polar_rotation(const Var& h) {
  if (h.rows() != 3 || h.cols() != 3) throw ArgumentError("polar_rotation expects a 3x3 matrix");
  const Eigen::Matrix3d hm = h.value();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(hm, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  const double d = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Eigen::Vector3d s = svd.singularValues();
  const Eigen::Matrix3d r = u * Eigen::Vector3d(1.0, 1.0, d).asDiagonal() * v.transpose();
  return h.tape().record(Matrix(r), {h}, [h, r, v, s, d](Tape& t, const Matrix& g) {
    // H = R P with P = V diag(s1, s2, d s3) V^T symmetric; dR = R Omega, Omega skew.
    const Eigen::Vector3d sp(s(0), s(1), d * s(2));
    const Eigen::Matrix3d b = v.transpose() * r.transpose() * Eigen::Matrix3d(g) * v;
    Eigen::Matrix3d c = Eigen::Matrix3d::Zero();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double den = sp(i) + sp(j);
        if (i != j && std::abs(den) > 1e-12) c(i, j) = b(i, j) / den;
      }
    }
    const Eigen::Matrix3d e = v * c * v.transpose();
    t.accumulate(h, Matrix(r * (e - e.transpose())));
  }, "polar_rotation");
}

TransformVars weighted_procrustes(const Var& weights, const Matrix& x, const Matrix& y) {
  const Index m = weights.rows();
  if (weights.cols() != 1 || x.rows() != m || y.rows() != m || x.cols() != 3 || y.cols() != 3)
    throw ArgumentError("weighted_procrustes: shape mismatch");
  if (m < 3) throw TooFewPairsError("weighted Procrustes needs at least 3 pairs");
  const double total = weights.value().sum();
  if (!(total > 1e-12)) throw ZeroWeightError("weighted Procrustes: total weight is not positive");

  Tape& tape = weights.tape();
  const Var w = weights / ad::reduce_sum(weights);
  const Var xs = tape.constant(x);
  const Var ys = tape.constant(y);
  const Var x_bar = ad::reduce_sum(xs * w, ad::Axis::Rows);
  const Var y_bar = ad::reduce_sum(ys * w, ad::Axis::Rows);
  const Var h = ad::matmul(ad::transpose((ys - y_bar) * w), xs - x_bar);

  Eigen::JacobiSVD<Eigen::Matrix3d> svd{Eigen::Matrix3d(h.value())};
  if ((svd.singularValues().array() > 1e-9).count() < 2)
    throw RankDeficientError("weighted Procrustes: correspondences are degenerate (collinear or coincident)");

  const Var r = polar_rotation(h);
  return {r, y_bar - ad::matmul(x_bar, ad::transpose(r))};
}

RigidTransform weighted_procrustes(const PointCloud& source, const PointCloud& target, const CorrespondenceSet& corr) {
  corr.validate(source.size(), target.size());
  Tape tape;
  const Eigen::VectorXd w = corr.weights ? *corr.weights : Eigen::VectorXd::Ones(static_cast<Index>(corr.size()));
  const TransformVars est = weighted_procrustes(tape.constant(w), take(source, corr.source), take(target, corr.target));
  std::array<double, 12> rm{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) rm[static_cast<std::size_t>(4 * i + j)] = est.rotation.value()(i, j);
    rm[static_cast<std::size_t>(4 * i + 3)] = est.translation.value()(0, i);
  }
  return RigidTransform::from_row_major(rm);
}

Var binary_cross_entropy(const Var& probabilities, const std::vector<bool>& labels) {
  if (static_cast<std::size_t>(probabilities.rows()) != labels.size() || probabilities.cols() != 1)
    throw ArgumentError("binary_cross_entropy: one probability per label expected");
  Tape& tape = probabilities.tape();
  Matrix l(probabilities.rows(), 1);
  for (std::size_t k = 0; k < labels.size(); ++k) l(static_cast<Index>(k), 0) = labels[k] ? 1.0 : 0.0;
  const Var p = ad::clamp(probabilities, 1e-7, 1.0 - 1e-7);
  const Var y = tape.constant(l);
  const Var not_y = tape.constant(Matrix::Ones(l.rows(), 1) - l);
  return -ad::reduce_mean(y * ad::log(p) + not_y * ad::log(ad::add_scalar(-p, 1.0)));
}

std::vector<std::pair<Index, Index>> ground_truth_neighbors(const PointCloud& source, const PointCloud& target,
                                                           const RigidTransform& gt, double radius) {
  std::vector<std::pair<Index, Index>> out;
  const Matrix moved = (source.points() * gt.rotation().transpose()).rowwise() + gt.translation().transpose();
  for (Index i = 0; i < moved.rows(); ++i) {
    Index best = 0;
    const Eigen::Index n = target.size();
    double best_d = (target.points().row(0) - moved.row(i)).squaredNorm();
    for (Index j = 1; j < n; ++j) {
      const double d = (target.points().row(j) - moved.row(i)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (best_d <= radius * radius) out.emplace_back(i, best);
  }
  return out;
}

Var descriptor_loss(const Var& source_features, const Var& target_features, const PointCloud& source,
                    const PointCloud& target, const RigidTransform& gt, const RegistrationConfig& config) {
  Tape& tape = source_features.tape();
  const auto pairs = ground_truth_neighbors(source, target, gt, config.inlier_threshold);
  if (pairs.empty()) return tape.scalar(0.0);
  IndexList si;
  IndexList ti;
  for (const auto& [i, j] : pairs) {
    si.push_back(i);
    ti.push_back(j);
  }
  const double inv_t = 1.0 / config.temperature;
  const Var fs = ad::gather_rows(source_features, si);
  const Var ft = ad::gather_rows(target_features, ti);
  const Var positive = ad::scale(ad::reduce_sum(fs * ft, ad::Axis::Cols), inv_t);
  auto cross_entropy = [&](const Var& anchors, const Var& candidates) {
    const Var logits = ad::scale(ad::matmul(anchors, ad::transpose(candidates)), inv_t);
    const Var lse = ad::log(ad::reduce_sum(ad::exp(logits), ad::Axis::Cols));
    return ad::reduce_mean(lse - positive);
  };
  return ad::scale(cross_entropy(fs, target_features) + cross_entropy(ft, source_features), 0.5);
}

PrimaryTerms primary_terms(const Var& probabilities, const PointCloud& source, const PointCloud& target,
                           CorrespondenceSet corr, const RigidTransform& gt, const RegistrationConfig& config) {
  Tape& tape = probabilities.tape();
  PrimaryTerms out;
  out.probabilities = probabilities;
  corr.gt_labels = label_inliers(corr, source, target, gt, config.inlier_threshold);
  corr.weights = Eigen::VectorXd(probabilities.value().col(0));
  out.bce = binary_cross_entropy(probabilities, *corr.gt_labels);
  out.estimate = weighted_procrustes(probabilities, take(source, corr.source), take(target, corr.target));

  const Var r_err = out.estimate.rotation - tape.constant(gt.rotation());
  const Var t_err = out.estimate.translation - tape.constant(gt.translation().transpose());
  out.transform = ad::sqrt(ad::add_scalar(ad::reduce_sum(ad::square(r_err)), 1e-12)) +
                  ad::sqrt(ad::add_scalar(ad::reduce_sum(ad::square(t_err)), 1e-12));
  out.loss = out.bce + config.lambda_t * out.transform;
  out.descriptor = tape.scalar(0.0);
  out.corr = std::move(corr);
  return out;
}

PrimaryTerms primary_loss(Tape&, const Bindings& b, const std::string& head, const Var& source_features,
                          const Var& target_features, const PointCloud& source, const PointCloud& target,
                          CorrespondenceSet corr, const RigidTransform& gt, const RegistrationConfig& config) {
  const Var input = correspondence_input(source_features, target_features, source, target, corr,
                                         config.inlier_threshold);
  PrimaryTerms out = primary_terms(score_correspondences(b, head, input), source, target, std::move(corr), gt, config);
  if (config.lambda_f > 0.0) {
    out.descriptor = descriptor_loss(source_features, target_features, source, target, gt, config);
    out.loss = out.loss + config.lambda_f * out.descriptor;
  }
  return out;
}

PrimaryTerms primary_loss(Tape& tape, const Bindings& b, const LocalGeometry& source_geometry,
                          const LocalGeometry& target_geometry, const PointCloud& source, const PointCloud& target,
                          const RigidTransform& gt, const RegistrationConfig& config) {
  const Var sf = encode(tape, b, prefix::shar, source_geometry);
  const Var tf = encode(tape, b, prefix::shar, target_geometry);
  CorrespondenceSet corr = match_features(sf.value(), tf.value(), config.mutual);
  return primary_loss(tape, b, prefix::pri, sf, tf, source, target, std::move(corr), gt, config);
}

RegistrationResult register_pair(const ParamPartition& p, const PointCloud& source, const PointCloud& target,
                                 const RegistrationConfig& config) {
  const Matrix sf = encode_points(p, source);
  const Matrix tf = encode_points(p, target);
  CorrespondenceSet corr = match_features(sf, tf, config.mutual);
  const Matrix input = correspondence_input(sf, tf, source, target, corr, config.inlier_threshold);
  corr.weights = Eigen::VectorXd(score_correspondences(p, prefix::pri, input).col(0));
  RegistrationResult result;
  result.predicted = weighted_procrustes(source, target, corr);
  return result;
}

}  // namespace ptta
