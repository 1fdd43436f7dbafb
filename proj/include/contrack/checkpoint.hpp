#pragma once

#include <string>

#include "contrack/nn.hpp"

namespace contrack {

// Versioned binary checkpoint: magic string, length-prefixed config JSON,
// then name-length-prefixed float64 tensors.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const nn::ParamMap& params);

// Loads into an existing ParamMap; every stored tensor must match a parameter
// by name and shape. Returns the embedded config JSON.
std::string load_checkpoint(const std::string& path, nn::ParamMap& params);

// Reads only the embedded config JSON.
std::string read_checkpoint_config(const std::string& path);

}  // namespace contrack
