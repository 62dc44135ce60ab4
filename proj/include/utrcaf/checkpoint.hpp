#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "utrcaf/model.hpp"

namespace utrcaf {

nlohmann::json arch_to_json(const ArchitectureSpec& arch);
// Rejects unknown keys; missing keys keep their defaults.
ArchitectureSpec arch_from_json(const nlohmann::json& j);

// {"arch": ..., "encoder_layers": [[weights row-major], [bias]] per layer,
//  "classifier_direction": [...row-major K×d...], "classifier_scale": [...]}
nlohmann::json params_to_json(const ModelParams& params);
ModelParams params_from_json(const nlohmann::json& j);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace utrcaf
