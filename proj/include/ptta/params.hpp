#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>

#include "ptta/autodiff.hpp"

namespace ptta {

using ad::Matrix;
using GradMap = std::map<std::string, Matrix>;
using Bindings = std::unordered_map<std::string, ad::Var>;

struct AdamState {
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
  std::int64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Named parameter tensors plus the adaptive-optimizer moments that belong to them.
class ParamStore {
 public:
  void add(const std::string& name, Matrix value);

  bool contains(const std::string& name) const { return values_.contains(name); }
  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }
  std::size_t size() const { return values_.size(); }
  Eigen::Index parameter_count() const;

  const AdamState& adam() const { return adam_; }
  AdamState& adam() { return adam_; }

  /// Bitwise comparison of values (optimizer state excluded).
  bool same_values(const ParamStore& other) const;

 private:
  std::map<std::string, Matrix> values_;
  AdamState adam_;
};

/// Gradient names absent from `store` are skipped so one map can serve several stores.
void sgd_step(ParamStore& store, const GradMap& grads, double lr);
void adam_step(ParamStore& store, const GradMap& grads, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8);

ParamStore clone_params(const ParamStore& store);
/// Returns `store - lr * grads` without touching `store`.
ParamStore apply_delta(const ParamStore& store, const GradMap& grads, double lr);

/// Binds every tensor of `store` onto the tape, as leaves that track gradients or as constants.
void bind_params(ad::Tape& tape, const ParamStore& store, Bindings& out, bool trainable);
GradMap collect_grads(const ad::Tape& tape, const Bindings& bindings, const ParamStore& store);

GradMap operator+(const GradMap& a, const GradMap& b);
GradMap scaled(const GradMap& g, double s);

/// Named-tensor container: format version, shapes, little-endian f64 values, CRC-32 trailer.
struct TensorFile {
  std::map<std::string, Matrix> tensors;
  std::string metadata;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

std::string encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(std::string bytes, const std::string& origin);
void write_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace ptta
