#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "ptychoforge/experiments.hpp"

namespace ptychoforge {

/// Parses a configuration document. Every key is optional; unknown keys and
/// ill-typed values raise ConfigError with the JSON pointer of the offending
/// key. Component seeds missing from the document are derived from the
/// master seed (`seed`, replaced by `seed_override` when given).
ExperimentConfig config_from_json(const nlohmann::json& doc, std::optional<std::uint64_t> seed_override = std::nullopt);

/// Fully resolved document (all defaults and seeds explicit). Feeding it
/// back to config_from_json reproduces the same configuration.
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Reads and parses a file. Missing file → MissingInputError, malformed JSON
/// → ConfigError with an empty path.
ExperimentConfig load_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace ptychoforge
