#include "ptta/json.hpp"

namespace ptta {

using nlohmann::json;

void to_json(json& j, const DomainProfile& p) {
  j = json{{"name", p.name},
           {"shape_mix", p.shape_mix},
           {"point_count", p.point_count},
           {"noise_sigma", p.noise_sigma},
           {"outlier_fraction", p.outlier_fraction},
           {"overlap_ratio", p.overlap_ratio},
           {"voxel", p.voxel},
           {"extent", p.extent},
           {"objects_per_kind", p.objects_per_kind},
           {"rotation_range", p.rotation_range},
           {"translation_range", p.translation_range}};
}

void from_json(const json& j, DomainProfile& p) {
  j.at("name").get_to(p.name);
  j.at("shape_mix").get_to(p.shape_mix);
  j.at("point_count").get_to(p.point_count);
  j.at("noise_sigma").get_to(p.noise_sigma);
  j.at("outlier_fraction").get_to(p.outlier_fraction);
  j.at("overlap_ratio").get_to(p.overlap_ratio);
  j.at("voxel").get_to(p.voxel);
  j.at("extent").get_to(p.extent);
  j.at("objects_per_kind").get_to(p.objects_per_kind);
  j.at("rotation_range").get_to(p.rotation_range);
  j.at("translation_range").get_to(p.translation_range);
}

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"feature_dim", c.feature_dim}, {"hidden", c.hidden}, {"width", c.width}, {"k", c.k},
           {"distance_scale", c.distance_scale}};
}

void from_json(const json& j, EncoderConfig& c) {
  j.at("feature_dim").get_to(c.feature_dim);
  j.at("hidden").get_to(c.hidden);
  j.at("width").get_to(c.width);
  j.at("k").get_to(c.k);
  j.at("distance_scale").get_to(c.distance_scale);
}

void to_json(json& j, const NetworkConfig& c) {
  j = json{{"encoder", c.encoder},
           {"decoder_hidden", c.decoder_hidden},
           {"projection_dim", c.projection_dim},
           {"byol_hidden", c.byol_hidden},
           {"head_width", c.head_width}};
}

void from_json(const json& j, NetworkConfig& c) {
  j.at("encoder").get_to(c.encoder);
  j.at("decoder_hidden").get_to(c.decoder_hidden);
  j.at("projection_dim").get_to(c.projection_dim);
  j.at("byol_hidden").get_to(c.byol_hidden);
  j.at("head_width").get_to(c.head_width);
}

void to_json(json& j, const AugmentationSpec& s) {
  j = json{{"crop_min", s.crop_min},         {"crop_max", s.crop_max},
           {"rotation_deg", s.rotation_deg}, {"jitter_sigma", s.jitter_sigma},
           {"downsample_min", s.downsample_min}, {"downsample_max", s.downsample_max}};
}

void from_json(const json& j, AugmentationSpec& s) {
  j.at("crop_min").get_to(s.crop_min);
  j.at("crop_max").get_to(s.crop_max);
  j.at("rotation_deg").get_to(s.rotation_deg);
  j.at("jitter_sigma").get_to(s.jitter_sigma);
  j.at("downsample_min").get_to(s.downsample_min);
  j.at("downsample_max").get_to(s.downsample_max);
}

void to_json(json& j, const AuxConfig& c) {
  j = json{{"augment", c.augment},
           {"cc_jitter", c.cc_jitter},
           {"cc_rotation_range", c.cc_rotation_range},
           {"inlier_threshold", c.inlier_threshold}};
}

void from_json(const json& j, AuxConfig& c) {
  j.at("augment").get_to(c.augment);
  j.at("cc_jitter").get_to(c.cc_jitter);
  j.at("cc_rotation_range").get_to(c.cc_rotation_range);
  j.at("inlier_threshold").get_to(c.inlier_threshold);
}

void to_json(json& j, const RegistrationConfig& c) {
  j = json{{"inlier_threshold", c.inlier_threshold},
           {"lambda_t", c.lambda_t},
           {"lambda_f", c.lambda_f},
           {"temperature", c.temperature},
           {"mutual", c.mutual}};
}

void from_json(const json& j, RegistrationConfig& c) {
  j.at("inlier_threshold").get_to(c.inlier_threshold);
  j.at("lambda_t").get_to(c.lambda_t);
  j.at("lambda_f").get_to(c.lambda_f);
  j.at("temperature").get_to(c.temperature);
  j.at("mutual").get_to(c.mutual);
}

NLOHMANN_JSON_SERIALIZE_ENUM(OuterOptimizer, {{OuterOptimizer::Adam, "adam"}, {OuterOptimizer::Sgd, "sgd"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Regime, {{Regime::Joint, "joint"}, {Regime::Meta, "meta"}})

void to_json(json& j, const TrainConfig& c) {
  j = json{{"alpha", c.alpha},
           {"beta", c.beta},
           {"joint_lr", c.joint_lr},
           {"lr_decay", c.lr_decay},
           {"batch_size", c.batch_size},
           {"inner_steps", c.inner_steps},
           {"tta_steps", c.tta_steps},
           {"epochs", c.epochs},
           {"meta_epochs", c.meta_epochs},
           {"seed", c.seed},
           {"use_rec", c.use_rec},
           {"use_byol", c.use_byol},
           {"use_cc", c.use_cc},
           {"use_meta", c.use_meta},
           {"use_tta", c.use_tta},
           {"ema_tau", c.ema_tau},
           {"outer_optimizer", c.outer_optimizer},
           {"aux", c.aux},
           {"registration", c.registration}};
}

void from_json(const json& j, TrainConfig& c) {
  j.at("alpha").get_to(c.alpha);
  j.at("beta").get_to(c.beta);
  j.at("joint_lr").get_to(c.joint_lr);
  j.at("lr_decay").get_to(c.lr_decay);
  j.at("batch_size").get_to(c.batch_size);
  j.at("inner_steps").get_to(c.inner_steps);
  j.at("tta_steps").get_to(c.tta_steps);
  j.at("epochs").get_to(c.epochs);
  j.at("meta_epochs").get_to(c.meta_epochs);
  j.at("seed").get_to(c.seed);
  j.at("use_rec").get_to(c.use_rec);
  j.at("use_byol").get_to(c.use_byol);
  j.at("use_cc").get_to(c.use_cc);
  j.at("use_meta").get_to(c.use_meta);
  j.at("use_tta").get_to(c.use_tta);
  j.at("ema_tau").get_to(c.ema_tau);
  if (!j.at("outer_optimizer").is_string() ||
      (j.at("outer_optimizer") != "adam" && j.at("outer_optimizer") != "sgd"))
    throw ConfigError("outer_optimizer must be \"adam\" or \"sgd\"");
  j.at("outer_optimizer").get_to(c.outer_optimizer);
  j.at("aux").get_to(c.aux);
  j.at("registration").get_to(c.registration);
}

void to_json(json& j, const EpochRecord& r) {
  j = json{{"regime", r.regime}, {"epoch", r.epoch},     {"lr", r.lr},
           {"primary", r.primary}, {"aux", r.aux}, {"skipped", r.skipped}};
}

void from_json(const json& j, EpochRecord& r) {
  j.at("regime").get_to(r.regime);
  j.at("epoch").get_to(r.epoch);
  j.at("lr").get_to(r.lr);
  j.at("primary").get_to(r.primary);
  j.at("aux").get_to(r.aux);
  j.at("skipped").get_to(r.skipped);
}

}  // namespace ptta
