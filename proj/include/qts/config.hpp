#pragma once

/**
 * @file
 * @brief JSON round-trip of parameter presets.
 */

#include <string>

#include <json.hpp>

#include "qts/model.hpp"

namespace qts {

nlohmann::json to_json(const ModelParams & p);
nlohmann::json to_json(const NoiseParams & n);

/// Missing keys keep the values already in `base`.
ModelParams model_params_from_json(const nlohmann::json & j, ModelParams base = {});
NoiseParams noise_params_from_json(const nlohmann::json & j, NoiseParams base = {});

/// "nominal" or "estimated-rig". Throws std::invalid_argument otherwise.
ModelParams model_preset(const std::string & name);
NoiseParams noise_preset(const std::string & name);

/// Accepts a preset name or an object ({"model": {...}, "noise": {...}} or the model keys).
ModelParams model_params_from_config(const nlohmann::json & j);

nlohmann::json read_json_file(const std::string & path);
void write_json_file(const std::string & path, const nlohmann::json & j);

}  // namespace qts
