#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptta/aux.hpp"
#include "ptta/cloud.hpp"
#include "ptta/networks.hpp"
#include "ptta/params.hpp"
#include "ptta/registration.hpp"
#include "ptta/rng.hpp"
#include "ptta/synth.hpp"

namespace ptta {

enum class OuterOptimizer { Adam, Sgd };

struct TrainConfig {
  double alpha = 2.5e-5;  ///< inner-loop and test-time step
  double beta = 2.5e-5;   ///< meta step
  double joint_lr = 1e-4;
  double lr_decay = 0.99;  ///< per joint epoch
  int batch_size = 4;
  int inner_steps = 5;
  int tta_steps = 5;
  int epochs = 10;  ///< joint training
  int meta_epochs = 2;
  std::uint64_t seed = 0;
  bool use_rec = true;
  bool use_byol = true;
  bool use_cc = true;
  bool use_meta = true;
  bool use_tta = true;
  double ema_tau = 0.99;
  OuterOptimizer outer_optimizer = OuterOptimizer::Adam;
  AuxConfig aux;  ///< `aux.enabled` is overwritten from the use_* flags
  RegistrationConfig registration;

  void validate() const;
  AuxConfig aux_config() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

enum class LossKind { Primary, Auxiliary, Joint };

struct LossEval {
  double primary = 0.0;
  double aux = 0.0;
  std::array<double, 3> tasks{0.0, 0.0, 0.0};
  GradMap grads;  ///< empty unless requested
};

/// A finite collection of training elements with a primary and an auxiliary loss.
/// `stream` seeds every random draw of the auxiliary losses, so a fixed stream makes
/// L_aux a deterministic function of the parameters.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t size() const = 0;
  virtual LossEval eval(const ParamPartition& p, std::size_t element, LossKind kind, std::uint64_t stream,
                        bool want_grads) const = 0;
};

/// Point-cloud pairs with cached neighbourhoods. Pairs without a ground truth support only the
/// auxiliary loss.
class SceneObjective final : public Objective {
 public:
  struct Element {
    PointCloud source;
    PointCloud target;
    std::optional<RigidTransform> gt;
    LocalGeometry source_geometry;
    LocalGeometry target_geometry;
  };

  SceneObjective(std::span<const ScenePair> pairs, const TrainConfig& config, const EncoderConfig& encoder);
  /// Unlabelled single pair, as seen at test time.
  SceneObjective(const PointCloud& source, const PointCloud& target, const AuxConfig& aux,
                 const RegistrationConfig& registration, const EncoderConfig& encoder);

  std::size_t size() const override { return elements_.size(); }
  LossEval eval(const ParamPartition& p, std::size_t element, LossKind kind, std::uint64_t stream,
                bool want_grads) const override;

 private:
  std::vector<Element> elements_;
  AuxConfig aux_;
  RegistrationConfig registration_;
  EncoderConfig encoder_;
};

/// Two-parameter quadratic model: `shar.w` and `aux.z` (both 1x1).
/// L_aux = a/2 (w - u)^2 + q/2 (z - r)^2,  L_pri = p/2 (w - v)^2.
class ScalarToyObjective final : public Objective {
 public:
  struct Coefficients {
    double a = 1.0, u = 0.0, q = 1.0, r = 0.0, p = 1.0, v = 0.0;
  };
  explicit ScalarToyObjective(std::vector<Coefficients> elements) : elements_(std::move(elements)) {}
  static ParamPartition make_params(double w, double z);

  std::size_t size() const override { return elements_.size(); }
  LossEval eval(const ParamPartition& p, std::size_t element, LossKind kind, std::uint64_t stream,
                bool want_grads) const override;

 private:
  std::vector<Coefficients> elements_;
};

struct Adaptation {
  ParamPartition phi;
  std::vector<double> trace;  ///< L_aux before each step, plus the final value when requested
  GradMap initial_grads;      ///< gradient of L_aux at theta
};

/// K plain gradient steps on L_aux from a copy of theta. The balance scalars c stay frozen.
Adaptation inner_adapt(const ParamPartition& theta, const Objective& objective, std::size_t element, double alpha,
                       int steps, std::uint64_t stream, bool evaluate_final);

struct MetaStepConfig {
  double alpha = 2.5e-5;
  double beta = 2.5e-5;
  double aux_alpha = 2.5e-5;  ///< direct auxiliary-branch step after the outer update
  int inner_steps = 5;
  OuterOptimizer optimizer = OuterOptimizer::Adam;
  bool ema = true;
  double ema_tau = 0.99;
};

struct StepStats {
  double primary = 0.0;  ///< mean over used elements
  double aux = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;  ///< degenerate Procrustes instances
};

/// First-order meta update: theta^{shar,pri} -= beta * sum_b grad_phi L_pri(phi_b), then
/// theta^aux and c -= aux_alpha * sum_b grad L_aux(theta).
StepStats meta_outer_step(ParamPartition& theta, const Objective& objective, std::span<const std::size_t> batch,
                          const MetaStepConfig& config, std::uint64_t stream);

struct JointStepConfig {
  double lr = 1e-4;
  bool ema = true;
  double ema_tau = 0.99;
};

/// One Adam step of every trainable store on the batch mean of L_pri + L_aux.
StepStats joint_train_step(ParamPartition& theta, const Objective& objective, std::span<const std::size_t> batch,
                           const JointStepConfig& config, std::uint64_t stream);

enum class Regime { Joint, Meta };

struct EpochRecord {
  Regime regime = Regime::Joint;
  int epoch = 0;
  double lr = 0.0;
  double primary = 0.0;
  double aux = 0.0;
  std::size_t skipped = 0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainState {
  ParamPartition params;
  TrainConfig config;
  Regime regime = Regime::Joint;
  int epoch = 0;  ///< completed epochs of the current regime
  Rng rng;
  std::vector<EpochRecord> history;
};

TrainState initial_state(const NetworkConfig& network, const TrainConfig& config);
/// Switches a jointly trained state to meta-auxiliary training: fresh optimizer moments,
/// epoch counter and random stream.
void begin_meta(TrainState& state);

/// Runs epochs of the state's regime until `state.epoch == last_epoch`; `on_epoch` fires after each.
void train(TrainState& state, const Objective& objective, int last_epoch,
           const std::function<void(const TrainState&)>& on_epoch = {});

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const TrainState& state);
TrainState decode_checkpoint(std::string bytes, const std::string& origin);

struct TtaConfig {
  double alpha = 2.5e-5;
  int steps = 5;
  bool safeguard = true;
  AuxConfig aux;
  RegistrationConfig registration;
};

TtaConfig tta_config(const TrainConfig& config);

/// Adapts a private copy of theta on the pair's auxiliary loss, then registers with it.
/// No ground truth is accepted.
RegistrationResult tta_register(const ParamPartition& theta, const PointCloud& source, const PointCloud& target,
                                const TtaConfig& config, std::uint64_t stream);

enum class EvalMode { Plain, Tta };

struct PairOutcome {
  std::string pair_id;
  std::string profile;
  RegistrationResult result;
  bool degenerate = false;
};

struct Summary {
  std::string profile;
  std::size_t pairs = 0;
  double recall = 0.0;
  double mean_re = 0.0;
  double median_re = 0.0;
  double mean_te = 0.0;
  double median_te = 0.0;
};

struct EvalReport {
  std::vector<PairOutcome> rows;
  std::vector<Summary> summaries;  ///< one per profile in first-seen order, then "all"
};

Summary summarize(std::span<const PairOutcome> rows, const EvalThresholds& thresholds, const std::string& name);

/// Worker count from PTTA_THREADS, else the hardware concurrency.
std::size_t worker_count();

EvalReport evaluate(const ParamPartition& theta, std::span<const ScenePair> pairs, const EvalThresholds& thresholds,
                    EvalMode mode, const TrainConfig& config, std::size_t workers = 0);

}  // namespace ptta
