#include "ptta/networks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ptta {

using ad::Tape;
using ad::Var;
using Eigen::Index;

void EncoderConfig::validate() const {
  if (feature_dim < 8) throw ConfigError("encoder.feature_dim must be at least 8");
  if (k < 1) throw ConfigError("encoder.k must be at least 1");
  if (hidden < 1 || width < 1) throw ConfigError("encoder widths must be positive");
  if (!(distance_scale > 0.0) || !std::isfinite(distance_scale))
    throw ConfigError("encoder.distance_scale must be positive");
}

void NetworkConfig::validate() const {
  encoder.validate();
  if (decoder_hidden < 1 || projection_dim < 1 || byol_hidden < 1 || head_width < 1)
    throw ConfigError("network widths must be positive");
}

namespace {

void add_linear(ParamStore& store, const std::string& name, Index in, Index out, double gain, Rng& rng) {
  Matrix w(in, out);
  const double sigma = gain * std::sqrt(1.0 / static_cast<double>(in));
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = gaussian(rng, sigma);
  store.add(name + ".w", std::move(w));
  store.add(name + ".b", Matrix::Zero(1, out));
}

void add_head(ParamStore& store, const std::string& p, Index width, Rng& rng) {
  add_linear(store, p + "l1", kCorrespondenceInputDim, width, std::sqrt(2.0), rng);
  add_linear(store, p + "l2", width, width, std::sqrt(2.0), rng);
  add_linear(store, p + "l3", width, 1, 1.0, rng);
}

Var lin(const Bindings& b, const std::string& name, const Var& x) {
  auto w = b.find(name + ".w");
  auto bias = b.find(name + ".b");
  if (w == b.end() || bias == b.end()) throw ArgumentError("missing parameter " + name);
  return ad::linear(x, w->second, bias->second);
}

bool starts_with(const std::string& s, const std::string& p) { return s.compare(0, p.size(), p) == 0; }

}  // namespace

ParamPartition init_partition(const NetworkConfig& config, Rng& rng) {
  config.validate();
  const EncoderConfig& e = config.encoder;
  const double relu_gain = std::sqrt(2.0);
  ParamPartition p;
  p.config = config;

  add_linear(p.shar, prefix::shar + "l1", kPairFeatureDim, e.hidden, relu_gain, rng);
  add_linear(p.shar, prefix::shar + "l2", e.hidden, e.hidden, relu_gain, rng);
  add_linear(p.shar, prefix::shar + "l3", 2 * e.hidden + kPointFeatureDim, e.width, relu_gain, rng);
  add_linear(p.shar, prefix::shar + "l4", e.width + kPairFeatureDim, e.width, relu_gain, rng);
  add_linear(p.shar, prefix::shar + "l5", 3 * e.width, e.width, relu_gain, rng);
  add_linear(p.shar, prefix::shar + "l6", e.width, e.feature_dim, 1.0, rng);

  add_head(p.pri, prefix::pri, config.head_width, rng);

  add_linear(p.aux, prefix::rec + "l1", e.feature_dim, config.decoder_hidden, relu_gain, rng);
  add_linear(p.aux, prefix::rec + "l2", config.decoder_hidden, 3, 1.0, rng);
  add_linear(p.aux, prefix::proj + "l1", e.feature_dim, config.byol_hidden, relu_gain, rng);
  add_linear(p.aux, prefix::proj + "l2", config.byol_hidden, config.projection_dim, 1.0, rng);
  add_linear(p.aux, prefix::pred + "l1", config.projection_dim, config.byol_hidden, relu_gain, rng);
  add_linear(p.aux, prefix::pred + "l2", config.byol_hidden, config.projection_dim, 1.0, rng);
  add_head(p.aux, prefix::cc, config.head_width, rng);

  p.balance.add(prefix::balance, Matrix::Ones(1, 3));

  for (const auto& [name, v] : p.shar) p.target.add(prefix::target + name, v);
  for (const auto& [name, v] : p.aux)
    if (starts_with(name, prefix::proj)) p.target.add(prefix::target + name, v);
  return p;
}

void ParamPartition::validate() const {
  auto check_prefix = [](const ParamStore& s, std::initializer_list<std::string> allowed, const char* what) {
    for (const auto& [name, v] : s) {
      const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const std::string& a) { return starts_with(name, a); });
      if (!ok) throw InvariantError(std::string(what) + " store holds foreign parameter " + name);
    }
  };
  check_prefix(shar, {prefix::shar}, "shar");
  check_prefix(pri, {prefix::pri}, "pri");
  check_prefix(aux, {prefix::rec, prefix::proj, prefix::pred, prefix::cc}, "aux");
  check_prefix(target, {prefix::target}, "target");

  for (const auto& [name, v] : target) {
    const std::string online = name.substr(prefix::target.size());
    const ParamStore& src = starts_with(online, prefix::shar) ? shar : aux;
    if (!src.contains(online)) throw InvariantError("target entry without online counterpart: " + name);
    const Matrix& o = src.at(online);
    if (o.rows() != v.rows() || o.cols() != v.cols()) throw InvariantError("target shape mismatch: " + name);
  }
  if (!balance.contains(prefix::balance)) throw InvariantError("missing balance weights");
  const Matrix& c = balance.at(prefix::balance);
  if (c.size() != 3 || !c.allFinite() || (c.array() == 0.0).any())
    throw InvariantError("balance weights must be three finite nonzero scalars");
}

Index ParamPartition::parameter_count() const {
  return shar.parameter_count() + pri.parameter_count() + aux.parameter_count() + balance.parameter_count();
}

bool ParamPartition::same_values(const ParamPartition& other) const {
  return config == other.config && shar.same_values(other.shar) && pri.same_values(other.pri) &&
         aux.same_values(other.aux) && balance.same_values(other.balance) && target.same_values(other.target);
}

Bindings bind_partition(Tape& tape, const ParamPartition& p, bool trainable) {
  Bindings b;
  bind_params(tape, p.shar, b, trainable);
  bind_params(tape, p.pri, b, trainable);
  bind_params(tape, p.aux, b, trainable);
  bind_params(tape, p.balance, b, trainable);
  bind_params(tape, p.target, b, false);
  return b;
}

GradMap collect_partition_grads(const Tape& tape, const Bindings& b, const ParamPartition& p) {
  GradMap g = collect_grads(tape, b, p.shar);
  g.merge(collect_grads(tape, b, p.pri));
  g.merge(collect_grads(tape, b, p.aux));
  g.merge(collect_grads(tape, b, p.balance));
  return g;
}

void sgd_step(ParamPartition& p, const GradMap& grads, double lr) {
  sgd_step(p.shar, grads, lr);
  sgd_step(p.pri, grads, lr);
  sgd_step(p.aux, grads, lr);
  sgd_step(p.balance, grads, lr);
}

LocalGeometry local_geometry(const PointCloud& cloud, const EncoderConfig& config) {
  const auto& pts = cloud.points();
  const Index n = cloud.size();
  const Index k = std::min(config.k, n);
  LocalGeometry g;
  g.k = k;
  g.neighbors.resize(static_cast<std::size_t>(n * k));
  g.pair_features.resize(n * k, kPairFeatureDim);
  g.point_features.resize(n, kPointFeatureDim);
  Matrix normals(n, 3);

  // Neighbour order depends on values only (distance, then coordinates), never on input position.
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) d2[j] = (pts.row(j) - pts.row(i)).squaredNorm();
    std::iota(order.begin(), order.end(), Index{0});
    auto before = [&](Index a, Index b) {
      if (d2[a] != d2[b]) return d2[a] < d2[b];
      for (int c = 0; c < 3; ++c)
        if (pts(a, c) != pts(b, c)) return pts(a, c) < pts(b, c);
      return false;
    };
    std::partial_sort(order.begin(), order.begin() + k, order.end(), before);
    Vector3<double> mean = Vector3<double>::Zero();
    for (Index m = 0; m < k; ++m) {
      g.neighbors[static_cast<std::size_t>(i * k + m)] = order[m];
      mean += pts.row(order[m]).transpose();
    }
    mean /= static_cast<double>(k);
    Matrix3<double> cov = Matrix3<double>::Zero();
    for (Index m = 0; m < k; ++m) {
      const Vector3<double> d = pts.row(order[m]).transpose() - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(k);
    Eigen::SelfAdjointEigenSolver<Matrix3<double>> eig(cov);
    const Vector3<double> ev = eig.eigenvalues().cwiseMax(0.0);
    const double total = ev.sum();
    normals.row(i) = eig.eigenvectors().col(0).transpose();
    if (total > 1e-18) {
      g.point_features.row(i) << ev(0) / total, ev(1) / total, std::sqrt(total) / config.distance_scale;
    } else {
      g.point_features.row(i) << 1.0 / 3.0, 1.0 / 3.0, 0.0;
    }
  }

  for (Index i = 0; i < n; ++i) {
    const Vector3<double> ni = normals.row(i).transpose();
    for (Index m = 0; m < k; ++m) {
      const Index j = g.neighbors[static_cast<std::size_t>(i * k + m)];
      const Vector3<double> nj = normals.row(j).transpose();
      const Vector3<double> d = pts.row(j).transpose() - pts.row(i).transpose();
      const double r = d.norm();
      const Index row = i * k + m;
      g.pair_features(row, 0) = r / config.distance_scale;
      if (r > 1e-12) {
        g.pair_features(row, 1) = std::abs(ni.dot(d)) / r;
        g.pair_features(row, 2) = std::abs(nj.dot(d)) / r;
      } else {
        g.pair_features(row, 1) = 0.0;
        g.pair_features(row, 2) = 0.0;
      }
      g.pair_features(row, 3) = std::abs(ni.dot(nj));
    }
  }
  return g;
}

Var encode(Tape& tape, const Bindings& b, const std::string& p, const LocalGeometry& geom) {
  const Index k = geom.k;
  const Var pair = tape.constant(geom.pair_features);
  const Var point = tape.constant(geom.point_features);

  Var h = ad::relu(lin(b, p + "l1", pair));
  h = ad::relu(lin(b, p + "l2", h));
  const Var h1 = ad::relu(lin(b, p + "l3", ad::concat({ad::group_max(h, k), ad::group_mean(h, k), point})));

  Var g = ad::concat({ad::gather_rows(h1, geom.neighbors), pair});
  g = ad::relu(lin(b, p + "l4", g));
  const Var h2 = ad::relu(lin(b, p + "l5", ad::concat({ad::group_max(g, k), ad::group_mean(g, k), h1})));
  return ad::l2_normalize(lin(b, p + "l6", h2));
}

Var decode(const Bindings& b, const Var& features) {
  return lin(b, prefix::rec + "l2", ad::relu(lin(b, prefix::rec + "l1", features)));
}

Var byol_project(const Bindings& b, const std::string& p, const Var& pooled) {
  return lin(b, p + "l2", ad::relu(lin(b, p + "l1", pooled)));
}

Var byol_predict(const Bindings& b, const Var& z) {
  return lin(b, prefix::pred + "l2", ad::relu(lin(b, prefix::pred + "l1", z)));
}

Var context_norm(const Var& x) {
  constexpr double kGuard = 1e-8;
  const Index m = x.rows();
  const Eigen::RowVectorXd mean = x.value().colwise().mean();
  Matrix centered = x.value().rowwise() - mean;
  Eigen::RowVectorXd sd = (centered.array().square().colwise().sum() / static_cast<double>(m)).sqrt().matrix();
  std::vector<bool> guarded(static_cast<std::size_t>(sd.size()));
  for (Index c = 0; c < sd.size(); ++c) {
    guarded[c] = sd(c) < kGuard;
    if (guarded[c]) sd(c) = 1.0;
  }
  Matrix y = centered.array().rowwise() / sd.array();
  const Matrix y_copy = y;
  return x.tape().record(std::move(y), {x}, [x, sd, guarded, y_copy, m](Tape& t, const Matrix& g) {
    const double inv_m = 1.0 / static_cast<double>(m);
    const Eigen::RowVectorXd g_mean = g.colwise().sum() * inv_m;
    const Eigen::RowVectorXd gy_mean = (g.array() * y_copy.array()).colwise().sum().matrix() * inv_m;
    Matrix gx(g.rows(), g.cols());
    for (Index c = 0; c < g.cols(); ++c) {
      // A guarded channel is a plain centring.
      if (guarded[c]) {
        gx.col(c) = g.col(c).array() - g_mean(c);
      } else {
        gx.col(c) = (g.col(c).array() - g_mean(c) - y_copy.col(c).array() * gy_mean(c)) / sd(c);
      }
    }
    t.accumulate(x, gx);
  }, "context_norm");
}

Var score_correspondences(const Bindings& b, const std::string& p, const Var& input) {
  if (input.rows() == 0) throw ArgumentError("score_correspondences: empty correspondence set");
  if (input.cols() != kCorrespondenceInputDim) throw ArgumentError("score_correspondences: wrong input width");
  Var h = ad::relu(context_norm(lin(b, p + "l1", input)));
  h = ad::relu(context_norm(lin(b, p + "l2", h)));
  return ad::sigmoid(lin(b, p + "l3", h));
}

Matrix encode_points(const ParamPartition& p, const PointCloud& cloud) {
  Tape tape;
  Bindings b;
  bind_params(tape, p.shar, b, false);
  return encode(tape, b, prefix::shar, local_geometry(cloud, p.config.encoder)).value();
}

Matrix decode_points(const ParamPartition& p, const Matrix& features) {
  Tape tape;
  Bindings b;
  bind_params(tape, p.aux, b, false);
  return decode(b, tape.constant(features)).value();
}

Matrix score_correspondences(const ParamPartition& p, const std::string& head, const Matrix& input) {
  Tape tape;
  Bindings b;
  bind_params(tape, head == prefix::pri ? p.pri : p.aux, b, false);
  return score_correspondences(b, head, tape.constant(input)).value();
}

void ema_update(ParamStore& target, std::initializer_list<const ParamStore*> online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ArgumentError("ema_update: tau must lie in [0, 1]");
  for (const auto& [name, value] : target) {
    const std::string src = starts_with(name, prefix::target) ? name.substr(prefix::target.size()) : name;
    const Matrix* theta = nullptr;
    for (const ParamStore* s : online)
      if (s->contains(src)) theta = &s->at(src);
    if (theta == nullptr) throw ArgumentError("ema_update: no online parameter for " + name);
    if (theta->rows() != value.rows() || theta->cols() != value.cols())
      throw ArgumentError("ema_update: shape mismatch for " + name);
    Matrix& xi = target.at(name);
    xi = tau * xi + (1.0 - tau) * *theta;
  }
}

void ema_update(ParamPartition& p, double tau) { ema_update(p.target, {&p.shar, &p.aux}, tau); }

}  // namespace ptta
