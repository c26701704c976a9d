#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "ptta/meta.hpp"
#include "ptta/synth.hpp"

namespace ptta {

/// A profile plus how many pairs to draw from it and where they go. `split` is "train",
/// "val", "test" or "auto" (shuffled by the data fractions).
struct ProfileSpec {
  DomainProfile profile;
  int pairs = 40;
  std::string split = "auto";
};

struct DataConfig {
  std::string dir = "data";
  std::vector<ProfileSpec> profiles = default_profiles();
  std::array<double, 3> fractions{0.8, 0.2, 0.0};

  /// A source profile split into train/val and a shifted profile held out for testing.
  static std::vector<ProfileSpec> default_profiles();
};

struct EvalConfig {
  double re_max = 15.0;
  double te_max = 0.30;
  std::string split = "test";
};

struct RunConfig {
  TrainConfig train;
  NetworkConfig network;
  DataConfig data;
  EvalConfig eval;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies `patch` onto the defaults. Keys may be nested objects or flat dotted paths
/// ("train.alpha"); unknown keys raise ConfigError.
RunConfig resolve_config(const nlohmann::json& patch);
RunConfig load_config(const std::filesystem::path& path);

/// Deterministic dataset for the configured profiles; returns the manifest as written.
DatasetManifest generate_dataset(const RunConfig& config, const std::filesystem::path& dir);
std::vector<ScenePair> load_split(const std::filesystem::path& dir, const std::string& split);

/// Content hash in the form git uses for blobs: SHA-1 of "blob <size>\0" + bytes.
std::string git_blob_sha1(std::string_view bytes);

struct CurvePoint {
  std::string profile;
  double re_max = 0.0;
  double te_max = 0.0;
  double recall = 0.0;
};

/// Recall over RE in {1..20} degrees and TE in {0.05..0.60} m, per profile and for "all".
std::vector<CurvePoint> recall_curves(const EvalReport& report);

std::string report_csv(const EvalReport& report);
std::string curves_csv(std::span<const CurvePoint> curve);
std::string history_csv(std::span<const EpochRecord> history);

int exit_code(Error::Category category);

/// Entry point of the command-line tool; returns the process exit code.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace ptta
