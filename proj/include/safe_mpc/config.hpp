#pragma once

#include <string>
#include <utility>
#include <vector>

#include "safe_mpc/agent.hpp"

namespace safe_mpc {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Sets one `section.name` key. Unknown keys and unparsable values raise ConfigError.
void apply_override(AgentConfig& cfg, const std::string& key, const std::string& value);

void apply_overrides(AgentConfig& cfg, const KeyValues& overrides);

/// Every key in registry order with its value formatted for exact round trip.
KeyValues dump_config(const AgentConfig& cfg);

std::vector<std::string> config_keys();

/// Parses flat `key=value` text. Blank lines and lines starting with '#' are skipped.
KeyValues parse_key_values(const std::string& text, const std::string& source);
KeyValues read_key_values(const std::string& path);

std::string format_key_values(const KeyValues& kv);

}  // namespace safe_mpc
