#include "dualtower/checkpoint.hpp"

#include <cmath>
#include <filesystem>

namespace dualtower {

namespace fs = std::filesystem;

void encoder_config_to_kv(KeyValueFile& kv, const std::string& prefix,
                          const EncoderConfig& cfg) {
    kv.set(prefix + "kind", encoder_kind_name(cfg.kind));
    kv.set_u64(prefix + "layers", cfg.layers);
    kv.set_u64(prefix + "width", cfg.width);
    kv.set_u64(prefix + "heads", cfg.heads);
    kv.set_u64(prefix + "patch_size", cfg.patch_size);
    kv.set_u64(prefix + "resolution", cfg.resolution);
    kv.set_u64(prefix + "vocab_size", cfg.vocab_size);
    kv.set_u64(prefix + "max_text_length", cfg.max_text_length);
    kv.set_u64(prefix + "embed_dim", cfg.embed_dim);
}

EncoderConfig encoder_config_from_kv(const KeyValueFile& kv, const std::string& prefix) {
    EncoderConfig cfg;
    cfg.kind = encoder_kind_from_name(kv.get(prefix + "kind"));
    cfg.layers = kv.get_u64_or(prefix + "layers", cfg.layers);
    cfg.width = kv.get_u64_or(prefix + "width", cfg.width);
    cfg.heads = kv.get_u64_or(prefix + "heads", cfg.heads);
    cfg.patch_size = kv.get_u64_or(prefix + "patch_size", cfg.patch_size);
    cfg.resolution = kv.get_u64_or(prefix + "resolution", cfg.resolution);
    cfg.vocab_size = kv.get_u64_or(prefix + "vocab_size", cfg.vocab_size);
    cfg.max_text_length = kv.get_u64_or(prefix + "max_text_length", cfg.max_text_length);
    cfg.embed_dim = kv.get_u64_or(prefix + "embed_dim", cfg.embed_dim);
    return cfg;
}

namespace {

std::string tensor_path(const std::string& dir, const std::string& name) {
    return dir + "/" + name + ".dtw";
}

std::vector<std::size_t> parse_shape(const std::string& s) {
    std::vector<std::size_t> shape;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t used = 0;
        shape.push_back(std::stoull(s.substr(pos), &used));
        pos += used;
        if (pos < s.size()) {
            if (s[pos] != 'x') {
                throw CorruptFile("bad shape string in manifest: " + s);
            }
            ++pos;
        }
    }
    return shape;
}

// model tensors and batch-norm buffers in serialization order
std::vector<std::pair<std::string, const Tensor*>> model_tensors(const TwoTowerModel& m) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const NamedTensor& p : m.params.items()) {
        out.emplace_back(p.name, &p.value);
    }
    for (const auto& [name, state] : m.bn_states) {
        out.emplace_back(name + ".running_mean", &state.running_mean);
        out.emplace_back(name + ".running_var", &state.running_var);
    }
    return out;
}

}  // namespace

void save_checkpoint(const TwoTowerModel& model, const std::string& dir,
                     const std::vector<NamedTensor>& extra) {
    fs::create_directories(dir);
    KeyValueFile kv;
    kv.set_u64("schema_version", 1);
    encoder_config_to_kv(kv, "image.", model.config.image);
    encoder_config_to_kv(kv, "text.", model.config.text);
    const auto tensors = model_tensors(model);
    for (const auto& [name, t] : tensors) {
        kv.set("tensor." + name, shape_to_string(t->shape()));
        write_tensor_file(tensor_path(dir, name), *t);
    }
    for (const NamedTensor& e : extra) {
        kv.set("tensor." + e.name, shape_to_string(e.value.shape()));
        write_tensor_file(tensor_path(dir, e.name), e.value);
    }
    kv.write(dir + "/manifest.txt");
}

CheckpointManifest read_checkpoint_manifest(const std::string& dir) {
    const std::string path = dir + "/manifest.txt";
    if (!fs::exists(path)) {
        throw std::runtime_error("not a checkpoint bundle (no manifest.txt): " + dir);
    }
    const KeyValueFile kv = KeyValueFile::parse_file(path);
    CheckpointManifest m;
    m.schema_version = static_cast<int>(kv.get_u64("schema_version"));
    if (m.schema_version != 1) {
        throw IncompatibleCheckpoint("unsupported checkpoint schema version " +
                                     std::to_string(m.schema_version));
    }
    m.config.image = encoder_config_from_kv(kv, "image.");
    m.config.text = encoder_config_from_kv(kv, "text.");
    for (const auto& [k, v] : kv.entries()) {
        if (k.starts_with("tensor.")) {
            m.tensors.emplace_back(k.substr(7), parse_shape(v));
        }
    }
    return m;
}

namespace {

bool manifest_has(const CheckpointManifest& m, const std::string& name) {
    for (const auto& [n, s] : m.tensors) {
        if (n == name) {
            return true;
        }
    }
    return false;
}

void check_tower_compatible(const EncoderConfig& have, const EncoderConfig& want,
                            const char* tower) {
    const bool structural_match = have.kind == want.kind && have.layers == want.layers &&
                                  have.width == want.width && have.heads == want.heads;
    if (!structural_match) {
        throw IncompatibleCheckpoint(std::string("checkpoint ") + tower +
                                     " tower structure does not match the target config");
    }
    if (want.kind == EncoderKind::TextTransformer &&
        (have.vocab_size != want.vocab_size ||
         have.max_text_length != want.max_text_length)) {
        throw IncompatibleCheckpoint("checkpoint text tower vocab/length does not match");
    }
    if (want.kind != EncoderKind::TextTransformer && have.patch_size != want.patch_size) {
        throw IncompatibleCheckpoint("checkpoint image tower patch size does not match");
    }
    // resolution may differ: positional interpolation covers it
}

Tensor load_for(const std::string& dir, const std::string& name,
                const std::vector<std::size_t>& want_shape) {
    const std::string path = tensor_path(dir, name);
    if (!fs::exists(path)) {
        throw IncompatibleCheckpoint("checkpoint is missing tensor " + name);
    }
    Tensor t = read_tensor_file(path);
    if (t.shape() == want_shape) {
        return t;
    }
    // grid mismatch in the positional table is the one shape change we repair
    if (name == "image.positional_embedding" && t.rank() == 2 &&
        want_shape.size() == 2 && t.dim(1) == want_shape[1]) {
        const std::size_t want_rows = want_shape[0];
        const std::size_t new_grid = static_cast<std::size_t>(
            std::lround(std::sqrt(static_cast<double>(want_rows - 1))));
        if (new_grid * new_grid + 1 == want_rows) {
            Tensor resampled = interpolate_positional_embeddings(t, new_grid);
            if (resampled.shape() == want_shape) {
                return resampled;
            }
        }
    }
    throw IncompatibleCheckpoint("checkpoint tensor " + name + ": shape " +
                                 shape_to_string(t.shape()) + " incompatible with " +
                                 shape_to_string(want_shape));
}

}  // namespace

void load_checkpoint_parts(TwoTowerModel& model, const std::string& dir,
                           const std::set<ModelPart>& parts) {
    const CheckpointManifest manifest = read_checkpoint_manifest(dir);
    if (parts.count(ModelPart::ImageTower) != 0) {
        check_tower_compatible(manifest.config.image, model.config.image, "image");
    }
    if (parts.count(ModelPart::TextTower) != 0) {
        check_tower_compatible(manifest.config.text, model.config.text, "text");
    }
    for (NamedTensor& p : model.params.items()) {
        if (parts.count(part_of_parameter(p.name)) == 0) {
            continue;
        }
        if (!manifest_has(manifest, p.name)) {
            throw IncompatibleCheckpoint("checkpoint is missing tensor " + p.name);
        }
        p.value = load_for(dir, p.name, p.value.shape());
    }
    if (parts.count(ModelPart::ImageTower) != 0) {
        for (auto& [name, state] : model.bn_states) {
            state.running_mean =
                load_for(dir, name + ".running_mean", state.running_mean.shape());
            state.running_var =
                load_for(dir, name + ".running_var", state.running_var.shape());
        }
    }
}

TwoTowerModel load_checkpoint_model(const std::string& dir) {
    const CheckpointManifest manifest = read_checkpoint_manifest(dir);
    return init_model(manifest.config, 0, InitSource::checkpoint(dir));
}

std::vector<NamedTensor> load_checkpoint_extras(const std::string& dir,
                                                std::string_view prefix) {
    const CheckpointManifest manifest = read_checkpoint_manifest(dir);
    std::vector<NamedTensor> out;
    for (const auto& [name, shape] : manifest.tensors) {
        if (std::string_view(name).starts_with(prefix)) {
            out.push_back({name, read_tensor_file(tensor_path(dir, name))});
        }
    }
    return out;
}

}  // namespace dualtower
