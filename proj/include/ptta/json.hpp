#pragma once

#include <nlohmann/json.hpp>

#include "ptta/aux.hpp"
#include "ptta/meta.hpp"
#include "ptta/networks.hpp"
#include "ptta/registration.hpp"
#include "ptta/synth.hpp"

// Structured-text forms of the configuration types. Readers require every key.
namespace ptta {

void to_json(nlohmann::json& j, const DomainProfile& p);
void from_json(const nlohmann::json& j, DomainProfile& p);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);
void to_json(nlohmann::json& j, const AugmentationSpec& s);
void from_json(const nlohmann::json& j, AugmentationSpec& s);
void to_json(nlohmann::json& j, const AuxConfig& c);
void from_json(const nlohmann::json& j, AuxConfig& c);
void to_json(nlohmann::json& j, const RegistrationConfig& c);
void from_json(const nlohmann::json& j, RegistrationConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);

}  // namespace ptta
