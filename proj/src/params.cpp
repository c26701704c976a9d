#include "ptta/params.hpp"

#include "ptta/binio.hpp"

namespace ptta {

namespace {

void check_shape(const std::string& name, const Matrix& param, const Matrix& grad) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw ArgumentError("gradient shape mismatch for " + name);
}

}  // namespace

void ParamStore::add(const std::string& name, Matrix value) {
  if (values_.contains(name)) throw ArgumentError("duplicate parameter " + name);
  values_.emplace(name, std::move(value));
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ArgumentError("unknown parameter " + name);
  return it->second;
}

Matrix& ParamStore::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ArgumentError("unknown parameter " + name);
  return it->second;
}

Eigen::Index ParamStore::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& [name, v] : values_) n += v.size();
  return n;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (values_.size() != other.values_.size()) return false;
  for (const auto& [name, v] : values_) {
    auto it = other.values_.find(name);
    if (it == other.values_.end()) return false;
    if (v.rows() != it->second.rows() || v.cols() != it->second.cols() || v != it->second) return false;
  }
  return true;
}

void sgd_step(ParamStore& store, const GradMap& grads, double lr) {
  for (const auto& [name, g] : grads) {
    if (!store.contains(name)) continue;
    Matrix& p = store.at(name);
    check_shape(name, p, g);
    p -= lr * g;
  }
}

void adam_step(ParamStore& store, const GradMap& grads, double lr, double beta1, double beta2, double eps) {
  for (const auto& [name, g] : grads) {
    if (store.contains(name)) check_shape(name, store.at(name), g);
  }
  AdamState& st = store.adam();
  ++st.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (const auto& [name, value] : store) {
    auto [mit, m_new] = st.m.try_emplace(name, Matrix::Zero(value.rows(), value.cols()));
    auto [vit, v_new] = st.v.try_emplace(name, Matrix::Zero(value.rows(), value.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    auto git = grads.find(name);
    if (git != grads.end()) {
      m = beta1 * m + (1.0 - beta1) * git->second;
      v = beta2 * v + (1.0 - beta2) * git->second.cwiseAbs2();
    } else {
      m *= beta1;
      v *= beta2;
    }
    Matrix& p = store.at(name);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

ParamStore clone_params(const ParamStore& store) { return store; }

ParamStore apply_delta(const ParamStore& store, const GradMap& grads, double lr) {
  ParamStore out = store;
  sgd_step(out, grads, lr);
  return out;
}

void bind_params(ad::Tape& tape, const ParamStore& store, Bindings& out, bool trainable) {
  for (const auto& [name, value] : store) {
    out.insert_or_assign(name, trainable ? tape.variable(value) : tape.constant(value));
  }
}

GradMap collect_grads(const ad::Tape& tape, const Bindings& bindings, const ParamStore& store) {
  GradMap grads;
  for (const auto& [name, value] : store) {
    auto it = bindings.find(name);
    grads.emplace(name, it == bindings.end() ? Matrix::Zero(value.rows(), value.cols()) : tape.grad(it->second));
  }
  return grads;
}

GradMap operator+(const GradMap& a, const GradMap& b) {
  GradMap out = a;
  for (const auto& [name, g] : b) {
    auto [it, inserted] = out.try_emplace(name, g);
    if (!inserted) {
      check_shape(name, it->second, g);
      it->second += g;
    }
  }
  return out;
}

GradMap scaled(const GradMap& g, double s) {
  GradMap out = g;
  for (auto& [name, m] : out) m *= s;
  return out;
}

std::string encode_tensor_file(const TensorFile& file) {
  binio::Writer w;
  w.bytes("PTCK");
  w.put(kTensorFileVersion);
  w.str(file.metadata);
  w.put(static_cast<std::uint64_t>(file.tensors.size()));
  for (const auto& [name, m] : file.tensors) {
    w.str(name);
    w.put(static_cast<std::uint64_t>(m.rows()));
    w.put(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.put(m(r, c));
  }
  w.seal();
  return w.buffer();
}

TensorFile decode_tensor_file(std::string bytes, const std::string& origin) {
  binio::Reader r(std::move(bytes), origin);
  if (r.bytes(4) != "PTCK") throw CorruptFileError(origin + ": not a tensor file");
  r.verify_seal();
  if (const auto version = r.get<std::uint32_t>(); version != kTensorFileVersion)
    throw VersionError(origin + ": unsupported tensor file version " + std::to_string(version));
  TensorFile file;
  file.metadata = r.str();
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rows = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    Matrix m(rows, cols);
    for (Eigen::Index a = 0; a < rows; ++a)
      for (Eigen::Index b = 0; b < cols; ++b) m(a, b) = r.get<double>();
    file.tensors.emplace(std::move(name), std::move(m));
  }
  if (!r.at_end()) throw CorruptFileError(origin + ": trailing bytes");
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  binio::write_file(path, encode_tensor_file(file));
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  return decode_tensor_file(binio::read_file(path), path.string());
}

}  // namespace ptta
