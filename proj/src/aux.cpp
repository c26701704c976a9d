#include "ptta/aux.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ptta {

using ad::Tape;
using ad::Var;
using Eigen::Index;

void AugmentationSpec::validate() const {
  auto fraction_range = [](double lo, double hi, const char* what) {
    if (!(lo > 0.0 && lo <= hi && hi <= 1.0)) throw ConfigError(std::string(what) + " range must lie in (0, 1]");
  };
  fraction_range(crop_min, crop_max, "crop fraction");
  fraction_range(downsample_min, downsample_max, "downsample fraction");
  if (!(rotation_deg >= 0.0 && rotation_deg <= 360.0)) throw ConfigError("augmentation rotation must lie in [0, 360]");
  if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma)) throw ConfigError("jitter sigma must be non-negative");
}

void AuxConfig::validate() const {
  augment.validate();
  if (!(cc_jitter >= 0.0) || !std::isfinite(cc_jitter)) throw ConfigError("cc jitter must be non-negative");
  if (!(cc_rotation_range >= 0.0 && cc_rotation_range <= 360.0)) throw ConfigError("cc rotation range must lie in [0, 360]");
  if (!(inlier_threshold > 0.0)) throw ConfigError("inlier threshold must be positive");
}

namespace {

Vector3<double> random_direction(Rng& rng) {
  Vector3<double> d;
  do {
    d = Vector3<double>(gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0));
  } while (d.norm() < 1e-9);
  return d.normalized();
}

double draw(Rng& rng, double lo, double hi) { return lo == hi ? lo : uniform(rng, lo, hi); }

std::vector<Index> keep_fraction(std::vector<Index> idx, double fraction) {
  const auto keep = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
  idx.resize(std::min(keep, idx.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Var pooled(Tape& tape, const Bindings& b, const std::string& encoder_prefix, const LocalGeometry& g) {
  return ad::reduce_mean(encode(tape, b, encoder_prefix, g), ad::Axis::Rows);
}

Var online_features(Tape& tape, const Bindings& b, const AuxCloud& in) {
  return in.features ? *in.features : encode(tape, b, prefix::shar, *in.geometry);
}

}  // namespace

PointCloud augment(const PointCloud& cloud, const AugmentationSpec& spec, Rng& rng) {
  spec.validate();
  const Index n = cloud.size();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});

  const double crop = draw(rng, spec.crop_min, spec.crop_max);
  if (crop < 1.0) {
    const Vector3<double> dir = random_direction(rng);
    const Eigen::VectorXd proj = cloud.points() * dir;
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return proj(a) < proj(b); });
    idx = keep_fraction(std::move(idx), crop);
  }
  const double down = draw(rng, spec.downsample_min, spec.downsample_max);
  if (down < 1.0) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx = keep_fraction(std::move(idx), down);
  }
  if (idx.size() < kMinViewPoints) throw ArgumentError("augmented view has fewer than 16 points");

  PointCloud::Points pts(static_cast<Index>(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) pts.row(static_cast<Index>(k)) = cloud.points().row(idx[k]);

  const double angle = draw(rng, 0.0, spec.rotation_deg);
  if (angle > 0.0) {
    const Vector3<double> axis = random_direction(rng);
    const Eigen::RowVector3d c = pts.colwise().mean();
    const Matrix3<double> r = Eigen::AngleAxisd(deg2rad(angle), axis).toRotationMatrix();
    pts = ((pts.rowwise() - c) * r.transpose()).rowwise() + c;
  }
  if (spec.jitter_sigma > 0.0) {
    for (Index i = 0; i < pts.size(); ++i) pts.data()[i] += gaussian(rng, spec.jitter_sigma);
  }
  return PointCloud(std::move(pts));
}

std::pair<PointCloud, PointCloud> make_views(const PointCloud& cloud, const AugmentationSpec& spec, Rng& rng) {
  PointCloud a = augment(cloud, spec, rng);
  PointCloud b = augment(cloud, spec, rng);
  return {std::move(a), std::move(b)};
}

Matrix canonical_coordinates(const PointCloud& cloud) {
  const Matrix c = cloud.points().rowwise() - cloud.points().colwise().mean();
  const Matrix3<double> cov = c.transpose() * c / static_cast<double>(cloud.size());
  Eigen::SelfAdjointEigenSolver<Matrix3<double>> eig(cov);
  Matrix3<double> axes;
  axes.col(0) = eig.eigenvectors().col(2);
  axes.col(1) = eig.eigenvectors().col(1);
  for (int a = 0; a < 2; ++a) {
    const double skew = (c * axes.col(a)).array().cube().sum();
    if (skew < 0.0) axes.col(a) *= -1.0;
  }
  axes.col(2) = axes.col(0).cross(axes.col(1));
  return c * axes;
}

Var reconstruction_error(const Var& reconstruction, const Matrix& target) {
  return ad::reduce_mean(ad::abs(reconstruction - reconstruction.tape().constant(target)));
}

Var byol_directional(const Var& prediction, const Var& projection) {
  const Var cos = ad::reduce_sum(ad::l2_normalize(prediction) * ad::l2_normalize(projection));
  return ad::add_scalar(ad::scale(cos, -2.0), 2.0 * static_cast<double>(prediction.rows()));
}

Var reconstruction_loss(Tape& tape, const Bindings& b, const AuxCloud& in) {
  return reconstruction_error(decode(b, online_features(tape, b, in)), canonical_coordinates(*in.cloud));
}

Var byol_loss(Tape& tape, const Bindings& b, const AuxCloud& in, const AugmentationSpec& spec,
              const EncoderConfig& encoder, Rng& rng) {
  const auto [v1, v2] = make_views(*in.cloud, spec, rng);
  const LocalGeometry g1 = local_geometry(v1, encoder);
  const LocalGeometry g2 = local_geometry(v2, encoder);
  auto online = [&](const LocalGeometry& g) {
    return byol_predict(b, byol_project(b, prefix::proj, pooled(tape, b, prefix::shar, g)));
  };
  auto target = [&](const LocalGeometry& g) {
    return byol_project(b, prefix::target + prefix::proj, pooled(tape, b, prefix::target + prefix::shar, g));
  };
  return byol_directional(online(g1), target(g2)) + byol_directional(online(g2), target(g1));
}

Var cc_loss(Tape& tape, const Bindings& b, const AuxCloud& in, const AuxConfig& config, const EncoderConfig& encoder,
            Rng& rng) {
  const PointCloud& p = *in.cloud;
  const RigidTransform t = sample_random_transform(rng, config.cc_rotation_range, 0.0);
  PointCloud::Points moved = apply_transform(p, t).points();
  if (config.cc_jitter > 0.0) {
    for (Index i = 0; i < moved.size(); ++i) moved.data()[i] += gaussian(rng, config.cc_jitter);
  }
  const PointCloud q(std::move(moved));
  const Var fp = online_features(tape, b, in);
  const Var fq = encode(tape, b, prefix::shar, local_geometry(q, encoder));
  const CorrespondenceSet corr = match_features(fp.value(), fq.value());
  const std::vector<bool> labels = label_inliers(corr, p, q, t, config.inlier_threshold);
  const Var input = correspondence_input(fp, fq, p, q, corr, config.inlier_threshold);
  return binary_cross_entropy(score_correspondences(b, prefix::cc, input), labels);
}

Var balance_weights(const Var& c, const std::array<bool, 3>& enabled) {
  if (c.rows() != 1 || c.cols() != 3) throw ArgumentError("balance weights expect a 1x3 c");
  Tape& tape = c.tape();
  std::vector<Var> parts;
  for (int k = 0; k < 3; ++k) {
    if (!enabled[k]) continue;
    if (c.value()(0, k) == 0.0) throw ArgumentError("balance weight c_i = 0 gives a singular logit");
    parts.push_back(ad::slice_cols(c, k, 1));
  }
  if (parts.empty()) throw ArgumentError("balance weights need at least one enabled task");
  const Var active = ad::concat(parts);
  const Var logits = tape.constant(Matrix::Constant(1, active.cols(), 0.5)) / ad::square(active);
  const Var soft = ad::softmax(logits);
  std::vector<Var> out;
  Index pos = 0;
  for (int k = 0; k < 3; ++k) out.push_back(enabled[k] ? ad::slice_cols(soft, pos++, 1) : tape.scalar(0.0));
  return ad::concat(out);
}

Eigen::Vector3d balance_weights(const Eigen::Vector3d& c, const std::array<bool, 3>& enabled) {
  Tape tape;
  return balance_weights(tape.constant(c.transpose()), enabled).value().transpose();
}

Var weighted_aux_sum(const Var& lambda, const std::array<std::optional<Var>, 3>& task) {
  std::optional<Var> total;
  for (int k = 0; k < 3; ++k) {
    if (!task[k]) continue;
    const Var term = ad::slice_cols(lambda, k, 1) * *task[k];
    total = total ? *total + term : term;
  }
  if (!total) throw ArgumentError("weighted auxiliary sum of no tasks");
  return *total;
}

AuxTerms aux_total_loss(Tape& tape, const Bindings& b, const AuxCloud& x, const AuxCloud& y, const AuxConfig& config,
                        const EncoderConfig& encoder, Rng& rng) {
  if (!config.any()) throw ConfigError("auxiliary loss requested with every task disabled");
  AuxTerms out;
  out.lambda = balance_weights(b.at(prefix::balance), config.enabled);

  if (config.enabled[kRec])
    out.task[kRec] = 0.5 * (reconstruction_loss(tape, b, x) + reconstruction_loss(tape, b, y));
  if (config.enabled[kByol]) {
    const Var lx = byol_loss(tape, b, x, config.augment, encoder, rng);
    out.task[kByol] = 0.5 * (lx + byol_loss(tape, b, y, config.augment, encoder, rng));
  }
  if (config.enabled[kCc]) {
    const Var lx = cc_loss(tape, b, x, config, encoder, rng);
    out.task[kCc] = 0.5 * (lx + cc_loss(tape, b, y, config, encoder, rng));
  }

  for (int k = 0; k < 3; ++k)
    if (out.task[k]) out.values[k] = out.task[k]->item();
  out.total = weighted_aux_sum(out.lambda, out.task);
  return out;
}

}  // namespace ptta
