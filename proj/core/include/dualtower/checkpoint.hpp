#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualtower/config.hpp"
#include "dualtower/encoder.hpp"

namespace dualtower {

struct IncompatibleCheckpoint : std::runtime_error {
    explicit IncompatibleCheckpoint(const std::string& msg) : std::runtime_error(msg) {}
};

// Checkpoint bundle: a directory holding manifest.txt (schema version, both
// encoder configs, tensor names with shapes) plus one .dtw tensor file per
// entry. Extra tensors (optimizer moments, step counter) ride along under
// names the model loader ignores.
struct CheckpointManifest {
    int schema_version = 1;
    ModelConfig config;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> tensors;
};

void encoder_config_to_kv(KeyValueFile& kv, const std::string& prefix,
                          const EncoderConfig& cfg);
EncoderConfig encoder_config_from_kv(const KeyValueFile& kv, const std::string& prefix);

void save_checkpoint(const TwoTowerModel& model, const std::string& dir,
                     const std::vector<NamedTensor>& extra = {});

CheckpointManifest read_checkpoint_manifest(const std::string& dir);

// Rebuilds the model exactly as saved.
TwoTowerModel load_checkpoint_model(const std::string& dir);

// Overwrites the selected parts of an existing model from a bundle. A grid
// mismatch in the image positional table is resolved by interpolation; any
// other mismatch raises IncompatibleCheckpoint naming the tensor.
void load_checkpoint_parts(TwoTowerModel& model, const std::string& dir,
                           const std::set<ModelPart>& parts);

// Reads bundle tensors whose names start with the prefix (e.g. "optim.").
std::vector<NamedTensor> load_checkpoint_extras(const std::string& dir,
                                                std::string_view prefix);

}  // namespace dualtower
