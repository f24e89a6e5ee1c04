#pragma once

#include <string>

#include "eval/evalbench.hpp"
#include "train/trainer.hpp"
#include "world/world.hpp"

namespace dys {

struct RunConfig {
  WorldConfig world;
  TrainConfig train;
  EvalConfig eval;

  bool operator==(const RunConfig&) const = default;
};

RunConfig default_config();

// Line-oriented `key = value` format with `#` comments and [train], [world],
// [loss], [eval] sections. Unknown keys, duplicate keys, and type mismatches
// are errors carrying the line number; an empty text yields the defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Canonical emission; re-parsing the result yields an equal RunConfig.
std::string emit_config(const RunConfig& cfg);

// Applies a single `section.key` override from its string value.
void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

}  // namespace dys
