#pragma once

#include <string>

#include "rego/glimpse.hpp"

namespace rego {

// Checkpoint layout: <dir>/manifest.json with the hyperparameters plus one
// tensor binary per named parameter under <dir>/tensors/.
void save_checkpoint(const std::string& dir, const RegoModel& model);

// Rebuilds the model from the manifest and loads every parameter; shape or
// manifest mismatches are errors.
RegoModel load_checkpoint(const std::string& dir);

}  // namespace rego
