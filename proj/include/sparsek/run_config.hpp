#pragma once

#include <string>

#include "sparsek/trainer.hpp"

namespace sparsek {

// One JSON document describing a full run: model shape, attention budget,
// scoring, and training hyperparameters. Every field is optional and falls
// back to the struct defaults; unknown keys are an error rather than a silent
// no-op, so a typoed budget never trains the wrong model.
struct RunConfig {
    ToyModelConfig model;
    TrainHparams train;
};

// Throws ConfigError on malformed JSON, unknown keys, wrong types, or values
// the model validator rejects. The parsed config always round-trips:
// run_config_from_json(run_config_to_json(c)) reproduces c exactly.
RunConfig run_config_from_json(const std::string& text);

// Serializes every field (defaults included) with stable key order.
std::string run_config_to_json(const RunConfig& cfg);

// Reads the file and parses it. IoError if unreadable.
RunConfig load_run_config(const std::string& path);

}  // namespace sparsek
