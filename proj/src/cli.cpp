#include "ptta/cli.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include "ptta/binio.hpp"
#include "ptta/json.hpp"

namespace ptta {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

json profile_json(const ProfileSpec& s) {
  json j = s.profile;
  j["pairs"] = s.pairs;
  j["split"] = s.split;
  return j;
}

ProfileSpec profile_from_json(const json& j) {
  ProfileSpec s;
  s.profile = j.get<DomainProfile>();
  j.at("pairs").get_to(s.pairs);
  j.at("split").get_to(s.split);
  return s;
}

// Splits "a.b.c" into its head and the remaining path.
std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) return {key, ""};
  return {key.substr(0, dot), key.substr(dot + 1)};
}

void merge_known(json& base, const json& patch, const std::string& where);

void merge_value(json& slot, const json& value, const std::string& where) {
  if (where == "data.profiles") {
    if (!value.is_array()) throw ConfigError(where + " must be a list of profiles");
    const json templ = profile_json(ProfileSpec{});
    json list = json::array();
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!value[i].is_object()) throw ConfigError(where + " entries must be objects");
      json entry = templ;
      merge_known(entry, value[i], where + "[" + std::to_string(i) + "]");
      list.push_back(std::move(entry));
    }
    slot = std::move(list);
  } else if (slot.is_object()) {
    if (!value.is_object()) throw ConfigError(where + " must be an object");
    merge_known(slot, value, where);
  } else {
    if (value.is_object()) throw ConfigError(where + " is not a section");
    slot = value;
  }
}

void merge_known(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("configuration must be an object");
  for (const auto& [key, value] : patch.items()) {
    const auto [head, rest] = split_key(key);
    const std::string path = where.empty() ? head : where + "." + head;
    if (head.empty() || !base.contains(head)) throw ConfigError("unknown configuration key '" + path + "'");
    json& slot = base[head];
    if (rest.empty()) {
      merge_value(slot, value, path);
    } else {
      if (!slot.is_object()) throw ConfigError("unknown configuration key '" + path + "." + rest + "'");
      merge_known(slot, json{{rest, value}}, path);
    }
  }
}

std::string describe(const std::set<std::string>& names) {
  std::string s;
  for (const auto& n : names) s += (s.empty() ? "" : ", ") + n;
  return s;
}

}  // namespace

std::vector<ProfileSpec> DataConfig::default_profiles() {
  ProfileSpec source;
  source.profile.name = "source";
  source.pairs = 40;
  source.split = "auto";
  ProfileSpec shifted;
  shifted.profile.name = "shifted";
  shifted.profile.noise_sigma = 0.02;
  shifted.profile.point_count = 192;
  shifted.profile.overlap_ratio = 0.45;
  shifted.pairs = 40;
  shifted.split = "test";
  return {source, shifted};
}

void RunConfig::validate() const {
  train.validate();
  network.validate();
  if (data.dir.empty()) throw ConfigError("data.dir must not be empty");
  if (data.profiles.empty()) throw ConfigError("data.profiles must list at least one profile");
  std::set<std::string> names;
  for (const ProfileSpec& s : data.profiles) {
    s.profile.validate();
    if (!names.insert(s.profile.name).second) throw ConfigError("duplicate profile name '" + s.profile.name + "'");
    if (s.pairs < 0) throw ConfigError("profile pair counts must be non-negative");
    static const std::set<std::string> splits{"train", "val", "test", "auto"};
    if (!splits.contains(s.split)) throw ConfigError("profile split must be one of " + describe(splits));
  }
  double total = 0.0;
  for (double f : data.fractions) {
    if (!(f >= 0.0)) throw ConfigError("data.fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("data.fractions must sum to 1");
  if (!(eval.re_max > 0) || !(eval.te_max > 0)) throw ConfigError("evaluation thresholds must be positive");
  if (eval.split != "train" && eval.split != "val" && eval.split != "test")
    throw ConfigError("eval.split must be train, val or test");
}

json to_json(const RunConfig& c) {
  json profiles = json::array();
  for (const ProfileSpec& s : c.data.profiles) profiles.push_back(profile_json(s));
  return json{{"train", c.train},
              {"network", c.network},
              {"data", {{"dir", c.data.dir}, {"profiles", profiles}, {"fractions", c.data.fractions}}},
              {"eval", {{"re_max", c.eval.re_max}, {"te_max", c.eval.te_max}, {"split", c.eval.split}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    j.at("train").get_to(c.train);
    j.at("network").get_to(c.network);
    const json& d = j.at("data");
    d.at("dir").get_to(c.data.dir);
    c.data.profiles.clear();
    for (const json& p : d.at("profiles")) c.data.profiles.push_back(profile_from_json(p));
    d.at("fractions").get_to(c.data.fractions);
    const json& e = j.at("eval");
    e.at("re_max").get_to(c.eval.re_max);
    e.at("te_max").get_to(c.eval.te_max);
    e.at("split").get_to(c.eval.split);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig resolve_config(const json& patch) {
  json base = to_json(RunConfig{});
  merge_known(base, patch, "");
  return run_config_from_json(base);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration " + path.string());
  try {
    return resolve_config(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

DatasetManifest generate_dataset(const RunConfig& config, const std::filesystem::path& dir) {
  config.validate();
  const std::uint64_t seed = config.train.seed;
  std::vector<ScenePair> pairs;
  DatasetManifest manifest;
  manifest.seed = seed;
  DatasetManifest shuffled;
  for (const ProfileSpec& s : config.data.profiles) {
    manifest.profiles.push_back(s.profile);
    for (ScenePair& p : generate_pairs(s.profile, s.pairs, seed, "")) {
      PairEntry e;
      e.pair_id = p.pair_id;
      e.profile = p.profile_name;
      e.split = s.split;
      (s.split == "auto" ? shuffled : manifest).pairs.push_back(e);
      pairs.push_back(std::move(p));
    }
  }
  if (!shuffled.pairs.empty()) {
    Rng rng = substream(seed, "split");
    shuffled = split_dataset(shuffled, config.data.fractions, rng);
    manifest.pairs.insert(manifest.pairs.end(), shuffled.pairs.begin(), shuffled.pairs.end());
  }
  write_dataset(pairs, manifest, dir);
  return manifest;
}

std::vector<ScenePair> load_split(const std::filesystem::path& dir, const std::string& split) {
  auto [pairs, manifest] = read_dataset(dir);
  std::vector<ScenePair> out;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (manifest.pairs[i].split == split) out.push_back(std::move(pairs[i]));
  return out;
}

std::string git_blob_sha1(std::string_view bytes) {
  std::string header = "blob " + std::to_string(bytes.size());
  header.push_back('\0');
  const std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw InvariantError("SHA-1 digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

std::vector<CurvePoint> recall_curves(const EvalReport& report) {
  std::vector<CurvePoint> out;
  for (const Summary& s : report.summaries) {
    std::vector<const PairOutcome*> rows;
    for (const PairOutcome& r : report.rows)
      if (s.profile == "all" || r.profile == s.profile) rows.push_back(&r);
    for (int re = 1; re <= 20; ++re) {
      for (int k = 1; k <= 12; ++k) {
        const EvalThresholds th(re, k / 20.0);
        const auto hits = std::count_if(rows.begin(), rows.end(), [&](const PairOutcome* r) {
          return succeeds(r->result.re, r->result.te, th);
        });
        out.push_back({s.profile, th.re_max, th.te_max, double(hits) / double(rows.size())});
      }
    }
  }
  return out;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "pair_id,profile,re_deg,te_m,success,degenerate,fell_back,halved_step,aux_initial,aux_final,aux_trace\n";
  for (const PairOutcome& r : report.rows) {
    const auto& trace = r.result.aux_loss_trace;
    out << r.pair_id << ',' << r.profile << ',' << num(r.result.re) << ',' << num(r.result.te) << ','
        << int(r.result.success) << ',' << int(r.degenerate) << ',' << int(r.result.fell_back) << ','
        << int(r.result.halved_step) << ',' << (trace.empty() ? "" : num(trace.front())) << ','
        << (trace.empty() ? "" : num(trace.back())) << ',';
    for (std::size_t i = 0; i < trace.size(); ++i) out << (i ? ";" : "") << num(trace[i]);
    out << '\n';
  }
  return out.str();
}

std::string curves_csv(std::span<const CurvePoint> curve) {
  std::ostringstream out;
  out << "profile,re_max_deg,te_max_m,recall\n";
  for (const CurvePoint& c : curve)
    out << c.profile << ',' << num(c.re_max) << ',' << num(c.te_max) << ',' << num(c.recall) << '\n';
  return out.str();
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream out;
  out << "regime,epoch,lr,primary,aux,skipped\n";
  for (const EpochRecord& r : history)
    out << (r.regime == Regime::Joint ? "joint" : "meta") << ',' << r.epoch << ',' << num(r.lr) << ','
        << num(r.primary) << ',' << num(r.aux) << ',' << r.skipped << '\n';
  return out.str();
}

int exit_code(Error::Category category) {
  switch (category) {
    case Error::Category::Config: return 2;
    case Error::Category::DataIo: return 3;
    case Error::Category::Numeric: return 4;
    case Error::Category::Invariant: return 5;
  }
  return 5;
}

namespace {

struct Options {
  std::string config;
  json flags = json::object();
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string mode;
  std::filesystem::path out_dir = ".";
  std::string gt;
  bool tta = false;
  std::string source;
  std::string target;
};

RunConfig resolve(const Options& o) {
  json base = to_json(RunConfig{});
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw ConfigError("cannot open configuration " + o.config);
    try {
      merge_known(base, json::parse(in), "");
    } catch (const json::parse_error& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
  }
  for (const std::string& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string text = s.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    merge_known(base, json{{s.substr(0, eq), value}}, "");
  }
  merge_known(base, o.flags, "");
  return run_config_from_json(base);
}

TrainState checkpoint_state(const Options& o, const RunConfig& cfg) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  TrainState state = load_checkpoint(o.checkpoint);
  if (!(state.params.config == cfg.network))
    throw ConfigError("checkpoint network differs from the configured network");
  return state;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  binio::write_file(path, text);
}

void print_summaries(std::ostream& out, std::span<const Summary> summaries) {
  out << std::left << std::setw(12) << "profile" << std::right << std::setw(7) << "pairs" << std::setw(9) << "RR"
      << std::setw(10) << "RE mean" << std::setw(10) << "RE med" << std::setw(10) << "TE mean" << std::setw(10)
      << "TE med" << '\n';
  out << std::fixed;
  for (const Summary& s : summaries)
    out << std::left << std::setw(12) << s.profile << std::right << std::setw(7) << s.pairs << std::setw(9)
        << std::setprecision(4) << s.recall << std::setw(10) << std::setprecision(3) << s.mean_re << std::setw(10)
        << s.median_re << std::setw(10) << s.mean_te << std::setw(10) << s.median_te << '\n';
  out << std::defaultfloat;
}

int cmd_generate(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve(o);
  const DatasetManifest m = generate_dataset(cfg, cfg.data.dir);
  std::map<std::pair<std::string, std::string>, int> counts;
  for (const PairEntry& e : m.pairs) ++counts[{e.profile, e.split}];
  out << "wrote " << m.pairs.size() << " pairs to " << cfg.data.dir << " (seed " << m.seed << ")\n";
  for (const auto& [key, n] : counts) out << "  " << key.first << " / " << key.second << ": " << n << '\n';
  return 0;
}

int cmd_train(const Options& o, Regime regime, std::ostream& out) {
  const RunConfig cfg = resolve(o);
  const std::vector<ScenePair> pairs = load_split(cfg.data.dir, "train");
  TrainState state;
  if (regime == Regime::Joint) {
    if (o.checkpoint.empty()) {
      state = initial_state(cfg.network, cfg.train);
    } else {
      state = checkpoint_state(o, cfg);
      if (state.regime != Regime::Joint) throw ConfigError("cannot resume joint training from a meta checkpoint");
    }
  } else {
    state = checkpoint_state(o, cfg);
  }
  state.config = cfg.train;
  if (regime == Regime::Meta && state.regime == Regime::Joint) begin_meta(state);

  const std::string stem = regime == Regime::Joint ? "joint" : "meta";
  const std::filesystem::path ckpt = o.out_dir / (stem + ".ckpt");
  const std::filesystem::path curve = o.out_dir / (stem + "_losses.csv");
  std::filesystem::create_directories(o.out_dir);
  auto persist = [&](const TrainState& s) {
    save_checkpoint(ckpt, s);
    std::vector<EpochRecord> rows;
    std::copy_if(s.history.begin(), s.history.end(), std::back_inserter(rows),
                 [&](const EpochRecord& r) { return r.regime == regime; });
    write_text(curve, history_csv(rows));
  };
  const SceneObjective objective(pairs, cfg.train, cfg.network.encoder);
  const int last = regime == Regime::Joint ? cfg.train.epochs : cfg.train.meta_epochs;
  train(state, objective, last, [&](const TrainState& s) {
    const EpochRecord& r = s.history.back();
    out << stem << " epoch " << r.epoch << "/" << last << "  lr " << r.lr << "  L_pri " << r.primary << "  L_aux "
        << r.aux << (r.skipped ? "  skipped " + std::to_string(r.skipped) : "") << std::endl;
    persist(s);
  });
  persist(state);
  out << "checkpoint " << ckpt.string() << '\n';
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve(o);
  const TrainState state = checkpoint_state(o, cfg);
  EvalMode mode = cfg.train.use_tta ? EvalMode::Tta : EvalMode::Plain;
  if (!o.mode.empty()) mode = o.mode == "tta" ? EvalMode::Tta : EvalMode::Plain;
  const EvalThresholds th(cfg.eval.re_max, cfg.eval.te_max);
  const std::vector<ScenePair> pairs = load_split(cfg.data.dir, cfg.eval.split);
  const EvalReport report = evaluate(state.params, pairs, th, mode, cfg.train);
  const std::vector<CurvePoint> curve = recall_curves(report);

  json rows = json::array();
  for (const PairOutcome& r : report.rows)
    rows.push_back({{"pair_id", r.pair_id},
                    {"profile", r.profile},
                    {"re_deg", r.result.re},
                    {"te_m", r.result.te},
                    {"success", r.result.success},
                    {"degenerate", r.degenerate},
                    {"fell_back", r.result.fell_back},
                    {"halved_step", r.result.halved_step},
                    {"aux_trace", r.result.aux_loss_trace}});
  json summaries = json::array();
  for (const Summary& s : report.summaries)
    summaries.push_back({{"profile", s.profile},
                         {"pairs", s.pairs},
                         {"recall", s.recall},
                         {"mean_re_deg", s.mean_re},
                         {"median_re_deg", s.median_re},
                         {"mean_te_m", s.mean_te},
                         {"median_te_m", s.median_te}});
  const json doc{{"command", "eval"},
                 {"mode", mode == EvalMode::Tta ? "tta" : "plain"},
                 {"split", cfg.eval.split},
                 {"checkpoint", {{"path", o.checkpoint}, {"sha1", git_blob_sha1(binio::read_file(o.checkpoint))}}},
                 {"config", to_json(cfg)},
                 {"summaries", summaries},
                 {"rows", rows}};
  write_text(o.out_dir / "report.txt", doc.dump(2) + "\n");
  write_text(o.out_dir / "report.csv", report_csv(report));
  write_text(o.out_dir / "curves.csv", curves_csv(curve));
  out << (mode == EvalMode::Tta ? "tta" : "plain") << " evaluation on split '" << cfg.eval.split << "' (RE <= "
      << th.re_max << " deg, TE <= " << th.te_max << " m)\n";
  print_summaries(out, report.summaries);
  return 0;
}

RigidTransform read_gt_file(const std::string& path) {
  std::istringstream in(binio::read_file(path));
  std::array<double, 12> v{};
  for (double& x : v)
    if (!(in >> x)) throw CorruptFileError(path + ": expected 12 numbers");
  std::string extra;
  if (in >> extra) throw CorruptFileError(path + ": trailing content");
  try {
    return RigidTransform::from_row_major(std::span<const double, 12>(v));
  } catch (const InvariantError& e) {
    throw CorruptFileError(path + ": " + e.what());
  }
}

int cmd_register(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve(o);
  const TrainState state = checkpoint_state(o, cfg);
  const PointCloud source = read_cloud_file(o.source);
  const PointCloud target = read_cloud_file(o.target);
  std::optional<RigidTransform> gt;
  if (!o.gt.empty()) gt = read_gt_file(o.gt);

  RegistrationResult result =
      o.tta ? tta_register(state.params, source, target, tta_config(cfg.train),
                           substream(cfg.train.seed, "tta", fnv1a(std::filesystem::path(o.source).stem().string()))())
            : register_pair(state.params, source, target, cfg.train.registration);
  if (gt) score_against(result, *gt, EvalThresholds(cfg.eval.re_max, cfg.eval.te_max));

  const auto m = result.predicted.to_row_major();
  out << std::setprecision(17);
  for (int i = 0; i < 3; ++i)
    out << m[4 * i] << ' ' << m[4 * i + 1] << ' ' << m[4 * i + 2] << ' ' << m[4 * i + 3] << '\n';
  if (gt) out << "RE " << result.re << " deg  TE " << result.te << " m  success " << result.success << '\n';
  out << std::defaultfloat;

  json doc{{"command", "register"},
           {"source", o.source},
           {"target", o.target},
           {"tta", o.tta},
           {"checkpoint", {{"path", o.checkpoint}, {"sha1", git_blob_sha1(binio::read_file(o.checkpoint))}}},
           {"config", to_json(cfg)},
           {"transform", m},
           {"aux_trace", result.aux_loss_trace},
           {"fell_back", result.fell_back},
           {"halved_step", result.halved_step}};
  if (gt) {
    doc["re_deg"] = result.re;
    doc["te_m"] = result.te;
    doc["success"] = result.success;
  }
  write_text(o.out_dir / "register.json", doc.dump(2) + "\n");
  return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Point-cloud registration with meta-auxiliary test-time adaptation", "ptta"};
  app.require_subcommand(1);
  Options o;

  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, auto sample,
                  const std::string& help) {
    using T = decltype(sample);
    sub->add_option_function<T>(name, [&o, key](const T& v) { o.flags[key] = v; }, help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "configuration file (JSON, nested or dotted keys)");
    sub->add_option("--set", o.sets, "override one configuration key: key=value");
    flag(sub, "--seed", "train.seed", std::uint64_t{}, "master seed");
    flag(sub, "--data-dir", "data.dir", std::string{}, "dataset directory");
  };
  auto training = [&](CLI::App* sub) {
    flag(sub, "--use-rec", "train.use_rec", bool{}, "reconstruction task on/off");
    flag(sub, "--use-byol", "train.use_byol", bool{}, "BYOL task on/off");
    flag(sub, "--use-cc", "train.use_cc", bool{}, "correspondence-classification task on/off");
    flag(sub, "--use-meta", "train.use_meta", bool{}, "meta-auxiliary training on/off");
    flag(sub, "--use-tta", "train.use_tta", bool{}, "test-time adaptation on/off");
    flag(sub, "--tta-steps", "train.tta_steps", int{}, "test-time gradient steps");
    flag(sub, "--alpha", "train.alpha", double{}, "inner-loop and test-time step size");
    flag(sub, "--beta", "train.beta", double{}, "meta step size");
    sub->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
  };

  CLI::App* gen = app.add_subcommand("generate", "write a synthetic dataset");
  common(gen);
  CLI::App* joint = app.add_subcommand("train-joint", "joint training of the primary and auxiliary losses");
  common(joint);
  training(joint);
  joint->add_option("--checkpoint", o.checkpoint, "resume from a joint checkpoint");
  CLI::App* meta = app.add_subcommand("train-meta", "meta-auxiliary training from a joint checkpoint");
  common(meta);
  training(meta);
  meta->add_option("--checkpoint", o.checkpoint, "joint or meta checkpoint")->required();
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  common(eval);
  training(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint")->required();
  eval->add_option("--mode", o.mode, "plain or tta (default follows use_tta)")
      ->check(CLI::IsMember({"plain", "tta"}));
  flag(eval, "--split", "eval.split", std::string{}, "train, val or test");
  CLI::App* reg = app.add_subcommand("register", "register two cloud files");
  common(reg);
  training(reg);
  reg->add_option("--checkpoint", o.checkpoint, "checkpoint")->required();
  reg->add_option("source", o.source, "source cloud file")->required();
  reg->add_option("target", o.target, "target cloud file")->required();
  reg->add_flag("--tta", o.tta, "adapt on the pair before registering");
  reg->add_option("--gt", o.gt, "ground truth: 12 numbers, row-major 3x4");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return exit_code(Error::Category::Config);
  }

  try {
    if (gen->parsed()) return cmd_generate(o, out);
    if (joint->parsed()) return cmd_train(o, Regime::Joint, out);
    if (meta->parsed()) return cmd_train(o, Regime::Meta, out);
    if (eval->parsed()) return cmd_eval(o, out);
    return cmd_register(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return exit_code(Error::Category::Invariant);
  }
}

}  // namespace ptta
