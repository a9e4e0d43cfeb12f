#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <utility>
#include <vector>

#include "deml/train.hpp"

namespace deml {

// key=value configuration, one entry per line, '#' starts a comment.
// Keys mirror the TrainConfig and ModelConfig field names. Unknown keys,
// repeated keys and unparsable values throw ParameterError naming the line.
TrainConfig parse_config(std::istream& in, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

// Applies one setting; throws ParameterError for an unknown key or bad value.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);

// Every key with its resolved value, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace deml
