#include "ptta/meta.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "ptta/binio.hpp"
#include "ptta/json.hpp"

namespace ptta {

using ad::Tape;
using ad::Var;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be positive");
  if (!(joint_lr >= 0.0) || !std::isfinite(joint_lr)) throw ConfigError("joint learning rate must be non-negative");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("learning-rate decay must lie in (0, 1]");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (inner_steps < 1) throw ConfigError("inner steps must be at least 1");
  if (tta_steps < 0) throw ConfigError("test-time steps must be non-negative");
  if (epochs < 0 || meta_epochs < 0) throw ConfigError("epoch counts must be non-negative");
  if (!(ema_tau >= 0.0 && ema_tau <= 1.0)) throw ConfigError("ema tau must lie in [0, 1]");
  if ((use_meta || use_tta) && !(use_rec || use_byol || use_cc))
    throw ConfigError("meta training and test-time adaptation need an auxiliary task");
  aux.validate();
  registration.validate();
}

AuxConfig TrainConfig::aux_config() const {
  AuxConfig out = aux;
  out.enabled = {use_rec, use_byol, use_cc};
  return out;
}

// ---------------------------------------------------------------------------------------------
// Objectives

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " loss");
}

}  // namespace

SceneObjective::SceneObjective(std::span<const ScenePair> pairs, const TrainConfig& config,
                               const EncoderConfig& encoder)
    : aux_(config.aux_config()), registration_(config.registration), encoder_(encoder) {
  elements_.reserve(pairs.size());
  for (const ScenePair& p : pairs) {
    elements_.push_back(
        {p.source, p.target, p.gt, local_geometry(p.source, encoder), local_geometry(p.target, encoder)});
  }
}

SceneObjective::SceneObjective(const PointCloud& source, const PointCloud& target, const AuxConfig& aux,
                               const RegistrationConfig& registration, const EncoderConfig& encoder)
    : aux_(aux), registration_(registration), encoder_(encoder) {
  elements_.push_back(
      {source, target, std::nullopt, local_geometry(source, encoder), local_geometry(target, encoder)});
}

LossEval SceneObjective::eval(const ParamPartition& p, std::size_t element, LossKind kind, std::uint64_t stream,
                              bool want_grads) const {
  const Element& e = elements_.at(element);
  if (!(p.config.encoder == encoder_)) throw ArgumentError("objective geometry was built for another encoder");
  Tape tape;
  const Bindings b = bind_partition(tape, p, want_grads);
  const Var sf = encode(tape, b, prefix::shar, e.source_geometry);
  const Var tf = encode(tape, b, prefix::shar, e.target_geometry);

  LossEval out;
  std::optional<Var> total;
  if (kind != LossKind::Auxiliary) {
    if (!e.gt) throw InvariantError("primary loss requested for a pair without ground truth");
    CorrespondenceSet corr = match_features(sf.value(), tf.value(), registration_.mutual);
    const PrimaryTerms t =
        primary_loss(tape, b, prefix::pri, sf, tf, e.source, e.target, std::move(corr), *e.gt, registration_);
    out.primary = t.loss.item();
    require_finite(out.primary, "primary");
    total = t.loss;
  }
  if (kind == LossKind::Auxiliary || (kind == LossKind::Joint && aux_.any())) {
    Rng rng = substream(stream, "aux", element);
    const AuxCloud x{&e.source, &e.source_geometry, sf};
    const AuxCloud y{&e.target, &e.target_geometry, tf};
    const AuxTerms a = aux_total_loss(tape, b, x, y, aux_, encoder_, rng);
    out.aux = a.total.item();
    out.tasks = a.values;
    require_finite(out.aux, "auxiliary");
    total = total ? *total + a.total : a.total;
  }
  if (want_grads) {
    tape.backward(*total);
    out.grads = collect_partition_grads(tape, b, p);
  }
  return out;
}

ParamPartition ScalarToyObjective::make_params(double w, double z) {
  ParamPartition p;
  p.shar.add("shar.w", scalar(w));
  p.aux.add("aux.z", scalar(z));
  return p;
}

LossEval ScalarToyObjective::eval(const ParamPartition& params, std::size_t element, LossKind kind, std::uint64_t,
                                  bool want_grads) const {
  const Coefficients& c = elements_.at(element);
  const double w = params.shar.at("shar.w")(0, 0);
  const double z = params.aux.at("aux.z")(0, 0);
  LossEval out;
  double gw = 0.0;
  double gz = 0.0;
  if (kind != LossKind::Auxiliary) {
    out.primary = 0.5 * c.p * (w - c.v) * (w - c.v);
    gw += c.p * (w - c.v);
  }
  if (kind != LossKind::Primary) {
    out.aux = 0.5 * c.a * (w - c.u) * (w - c.u) + 0.5 * c.q * (z - c.r) * (z - c.r);
    gw += c.a * (w - c.u);
    gz += c.q * (z - c.r);
  }
  if (want_grads) out.grads = {{"shar.w", scalar(gw)}, {"aux.z", scalar(gz)}};
  return out;
}

// ---------------------------------------------------------------------------------------------
// Update rules

Adaptation inner_adapt(const ParamPartition& theta, const Objective& objective, std::size_t element, double alpha,
                       int steps, std::uint64_t stream, bool evaluate_final) {
  if (steps < 0) throw ArgumentError("inner_adapt: negative step count");
  Adaptation out{theta, {}, {}};
  for (int k = 0; k < steps; ++k) {
    LossEval e = objective.eval(out.phi, element, LossKind::Auxiliary, stream, true);
    out.trace.push_back(e.aux);
    sgd_step(out.phi.shar, e.grads, alpha);
    sgd_step(out.phi.pri, e.grads, alpha);
    sgd_step(out.phi.aux, e.grads, alpha);
    if (k == 0) out.initial_grads = std::move(e.grads);
  }
  if (evaluate_final) out.trace.push_back(objective.eval(out.phi, element, LossKind::Auxiliary, stream, false).aux);
  return out;
}

StepStats meta_outer_step(ParamPartition& theta, const Objective& objective, std::span<const std::size_t> batch,
                          const MetaStepConfig& config, std::uint64_t stream) {
  if (config.inner_steps < 1) throw ArgumentError("meta_outer_step: at least one inner step required");
  StepStats stats;
  GradMap outer;
  GradMap direct;
  for (const std::size_t b : batch) {
    Adaptation a = inner_adapt(theta, objective, b, config.alpha, config.inner_steps, stream, false);
    LossEval pe;
    try {
      pe = objective.eval(a.phi, b, LossKind::Primary, stream, true);
    } catch (const DegenerateError&) {
      ++stats.skipped;
      continue;
    }
    outer = outer.empty() ? std::move(pe.grads) : outer + pe.grads;
    direct = direct.empty() ? std::move(a.initial_grads) : direct + a.initial_grads;
    stats.primary += pe.primary;
    stats.aux += a.trace.front();
    ++stats.used;
  }
  if (stats.used == 0) return stats;
  stats.primary /= static_cast<double>(stats.used);
  stats.aux /= static_cast<double>(stats.used);

  if (config.optimizer == OuterOptimizer::Sgd) {
    sgd_step(theta.shar, outer, config.beta);
    sgd_step(theta.pri, outer, config.beta);
  } else {
    adam_step(theta.shar, outer, config.beta);
    adam_step(theta.pri, outer, config.beta);
  }
  sgd_step(theta.aux, direct, config.aux_alpha);
  sgd_step(theta.balance, direct, config.aux_alpha);
  if (config.ema) ema_update(theta, config.ema_tau);
  return stats;
}

StepStats joint_train_step(ParamPartition& theta, const Objective& objective, std::span<const std::size_t> batch,
                           const JointStepConfig& config, std::uint64_t stream) {
  StepStats stats;
  GradMap sum;
  for (const std::size_t b : batch) {
    LossEval e;
    try {
      e = objective.eval(theta, b, LossKind::Joint, stream, true);
    } catch (const DegenerateError&) {
      ++stats.skipped;
      continue;
    }
    sum = sum.empty() ? std::move(e.grads) : sum + e.grads;
    stats.primary += e.primary;
    stats.aux += e.aux;
    ++stats.used;
  }
  if (stats.used == 0) return stats;
  const double inv = 1.0 / static_cast<double>(stats.used);
  stats.primary *= inv;
  stats.aux *= inv;
  const GradMap mean = scaled(sum, inv);
  adam_step(theta.shar, mean, config.lr);
  adam_step(theta.pri, mean, config.lr);
  adam_step(theta.aux, mean, config.lr);
  adam_step(theta.balance, mean, config.lr);
  if (config.ema) ema_update(theta, config.ema_tau);
  return stats;
}

// ---------------------------------------------------------------------------------------------
// Training driver

TrainState initial_state(const NetworkConfig& network, const TrainConfig& config) {
  config.validate();
  network.validate();
  Rng init = substream(config.seed, "init");
  return TrainState{init_partition(network, init), config, Regime::Joint, 0, substream(config.seed, "train"), {}};
}

void begin_meta(TrainState& state) {
  state.regime = Regime::Meta;
  state.epoch = 0;
  state.rng = substream(state.config.seed, "meta");
  for (ParamStore* s : {&state.params.shar, &state.params.pri, &state.params.aux, &state.params.balance})
    s->adam() = AdamState{};
}

void train(TrainState& state, const Objective& objective, int last_epoch,
           const std::function<void(const TrainState&)>& on_epoch) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (state.regime == Regime::Meta && !cfg.use_meta) throw ConfigError("meta training requested with use_meta off");
  if (state.epoch >= last_epoch) return;
  if (objective.size() == 0) throw IoError("training split is empty");

  std::vector<std::size_t> order(objective.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  while (state.epoch < last_epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    EpochRecord rec;
    rec.regime = state.regime;
    rec.epoch = state.epoch + 1;
    rec.lr = state.regime == Regime::Joint ? cfg.joint_lr * std::pow(cfg.lr_decay, state.epoch) : cfg.beta;
    std::size_t used = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::span<const std::size_t> elems(order.data() + start, std::min(batch, order.size() - start));
      const std::uint64_t stream = state.rng();
      StepStats s;
      if (state.regime == Regime::Joint) {
        s = joint_train_step(state.params, objective, elems, {rec.lr, cfg.use_byol, cfg.ema_tau}, stream);
      } else {
        const MetaStepConfig m{cfg.alpha, cfg.beta,     cfg.alpha,   cfg.inner_steps,
                               cfg.outer_optimizer, cfg.use_byol, cfg.ema_tau};
        s = meta_outer_step(state.params, objective, elems, m, stream);
      }
      rec.primary += s.primary * static_cast<double>(s.used);
      rec.aux += s.aux * static_cast<double>(s.used);
      rec.skipped += s.skipped;
      used += s.used;
    }
    if (used > 0) {
      rec.primary /= static_cast<double>(used);
      rec.aux /= static_cast<double>(used);
    }
    ++state.epoch;
    state.history.push_back(rec);
    if (on_epoch) on_epoch(state);
  }
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kMoment1 = "adam.m/";
constexpr const char* kMoment2 = "adam.v/";

template <typename Partition>
auto stores(Partition& p) {
  using Ptr = decltype(&p.shar);
  return std::array<std::pair<const char*, Ptr>, 5>{
      {{"shar", &p.shar}, {"pri", &p.pri}, {"aux", &p.aux}, {"balance", &p.balance}, {"target", &p.target}}};
}

}  // namespace

std::string encode_checkpoint(const TrainState& state) {
  TensorFile file;
  json meta{{"format", "ptta-checkpoint"},
            {"network", state.params.config},
            {"train", state.config},
            {"regime", state.regime == Regime::Joint ? "joint" : "meta"},
            {"epoch", state.epoch},
            {"rng", serialize_rng(state.rng)},
            {"history", state.history},
            {"stores", json::object()},
            {"adam_steps", json::object()}};
  for (const auto& [key, store] : stores(state.params)) {
    json names = json::array();
    for (const auto& [name, value] : *store) {
      file.tensors.emplace(name, value);
      names.push_back(name);
    }
    for (const auto& [name, m] : store->adam().m) file.tensors.emplace(kMoment1 + name, m);
    for (const auto& [name, v] : store->adam().v) file.tensors.emplace(kMoment2 + name, v);
    meta["stores"][key] = names;
    meta["adam_steps"][key] = store->adam().step;
  }
  file.metadata = meta.dump();
  return encode_tensor_file(file);
}

TrainState decode_checkpoint(std::string bytes, const std::string& origin) {
  TensorFile file = decode_tensor_file(std::move(bytes), origin);
  TrainState state;
  try {
    const json meta = json::parse(file.metadata);
    if (meta.at("format") != "ptta-checkpoint") throw CorruptFileError(origin + ": not a checkpoint");
    meta.at("network").get_to(state.params.config);
    meta.at("train").get_to(state.config);
    state.regime = meta.at("regime") == "meta" ? Regime::Meta : Regime::Joint;
    meta.at("epoch").get_to(state.epoch);
    state.rng = deserialize_rng(meta.at("rng").get<std::string>());
    meta.at("history").get_to(state.history);
    for (const auto& [key, store] : stores(state.params)) {
      for (const auto& name : meta.at("stores").at(key)) {
        const std::string n = name.get<std::string>();
        auto take = [&](const std::string& tensor) -> Matrix {
          const auto it = file.tensors.find(tensor);
          if (it == file.tensors.end()) throw CorruptFileError(origin + ": missing tensor " + tensor);
          return it->second;
        };
        store->add(n, take(n));
        if (file.tensors.contains(kMoment1 + n)) {
          store->adam().m[n] = take(kMoment1 + n);
          store->adam().v[n] = take(kMoment2 + n);
        }
      }
      meta.at("adam_steps").at(key).get_to(store->adam().step);
    }
  } catch (const json::exception& e) {
    throw CorruptFileError(origin + ": malformed checkpoint metadata: " + e.what());
  }
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  binio::write_file(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path), path.string());
}

// ---------------------------------------------------------------------------------------------
// Test-time adaptation and evaluation

TtaConfig tta_config(const TrainConfig& config) {
  return {config.alpha, config.tta_steps, true, config.aux_config(), config.registration};
}

RegistrationResult tta_register(const ParamPartition& theta, const PointCloud& source, const PointCloud& target,
                                const TtaConfig& config, std::uint64_t stream) {
  if (config.steps == 0) return register_pair(theta, source, target, config.registration);
  const SceneObjective objective(source, target, config.aux, config.registration, theta.config.encoder);
  auto attempt = [&](double alpha) -> std::optional<Adaptation> {
    if (!config.safeguard) return inner_adapt(theta, objective, 0, alpha, config.steps, stream, true);
    try {
      return inner_adapt(theta, objective, 0, alpha, config.steps, stream, true);
    } catch (const NumericError&) {
      return std::nullopt;
    }
  };
  auto descended = [](const std::optional<Adaptation>& a) { return a && a->trace.back() <= a->trace.front(); };

  std::optional<Adaptation> a = attempt(config.alpha);
  bool halved = false;
  bool fell_back = false;
  if (config.safeguard && !descended(a)) {
    halved = true;
    a = attempt(0.5 * config.alpha);
    fell_back = !descended(a);
  }
  RegistrationResult r = register_pair(fell_back ? theta : a->phi, source, target, config.registration);
  if (a) r.aux_loss_trace = std::move(a->trace);
  r.halved_step = halved;
  r.fell_back = fell_back;
  return r;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Summary summarize(std::span<const PairOutcome> rows, const EvalThresholds& thresholds, const std::string& name) {
  if (rows.empty()) throw ArgumentError("summary of an empty result list");
  Summary s;
  s.profile = name;
  s.pairs = rows.size();
  std::vector<double> re;
  std::vector<double> te;
  std::size_t hits = 0;
  for (const PairOutcome& r : rows) {
    re.push_back(r.result.re);
    te.push_back(r.result.te);
    hits += succeeds(r.result.re, r.result.te, thresholds) ? 1 : 0;
  }
  const double n = static_cast<double>(rows.size());
  s.recall = static_cast<double>(hits) / n;
  s.mean_re = std::accumulate(re.begin(), re.end(), 0.0) / n;
  s.mean_te = std::accumulate(te.begin(), te.end(), 0.0) / n;
  s.median_re = median(std::move(re));
  s.median_te = median(std::move(te));
  return s;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("PTTA_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("PTTA_THREADS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

EvalReport evaluate(const ParamPartition& theta, std::span<const ScenePair> pairs, const EvalThresholds& thresholds,
                    EvalMode mode, const TrainConfig& config, std::size_t workers) {
  if (pairs.empty()) throw IoError("evaluation split is empty");
  const TtaConfig tta = tta_config(config);
  EvalReport report;
  report.rows.resize(pairs.size());

  auto run = [&](std::size_t i) {
    const ScenePair& pair = pairs[i];
    PairOutcome& out = report.rows[i];
    out.pair_id = pair.pair_id;
    out.profile = pair.profile_name;
    try {
      out.result = mode == EvalMode::Plain
                       ? register_pair(theta, pair.source, pair.target, config.registration)
                       : tta_register(theta, pair.source, pair.target, tta,
                                      substream(config.seed, "tta", fnv1a(pair.pair_id))());
    } catch (const DegenerateError&) {
      out.result = RegistrationResult{};
      out.degenerate = true;
    }
    score_against(out.result, pair.gt, thresholds);
  };

  const std::size_t n_workers = std::min(workers == 0 ? worker_count() : workers, pairs.size());
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < pairs.size(); i = next++) {
          try {
            run(i);
          } catch (...) {
            const std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::vector<std::string> profiles;
  for (const PairOutcome& r : report.rows)
    if (std::find(profiles.begin(), profiles.end(), r.profile) == profiles.end()) profiles.push_back(r.profile);
  for (const std::string& name : profiles) {
    std::vector<PairOutcome> subset;
    std::copy_if(report.rows.begin(), report.rows.end(), std::back_inserter(subset),
                 [&](const PairOutcome& r) { return r.profile == name; });
    report.summaries.push_back(summarize(subset, thresholds, name));
  }
  report.summaries.push_back(summarize(report.rows, thresholds, "all"));
  return report;
}

}  // namespace ptta
