#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dualtower/data.hpp"
#include "dualtower/graph.hpp"

namespace dualtower {

enum class EncoderKind { PatchTransformer, ConvNet, TextTransformer };

const char* encoder_kind_name(EncoderKind k);
EncoderKind encoder_kind_from_name(std::string_view name);

struct EncoderConfig {
    EncoderKind kind = EncoderKind::TextTransformer;
    std::size_t layers = 2;
    std::size_t width = 64;
    std::size_t heads = 4;
    std::size_t patch_size = 8;        // image kinds
    std::size_t resolution = 32;       // image kinds
    std::size_t vocab_size = 512;      // text kind
    std::size_t max_text_length = 50;  // text kind
    std::size_t embed_dim = 32;

    std::size_t grid() const { return resolution / patch_size; }
    void validate() const;

    static EncoderConfig desk_text();
    static EncoderConfig desk_image();
    static EncoderConfig desk_conv();
};

struct ModelConfig {
    EncoderConfig image = EncoderConfig::desk_image();
    EncoderConfig text = EncoderConfig::desk_text();

    void validate() const;
    static ModelConfig desk_default();
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Parameters in a fixed creation order; iteration order is the serialization
// and update order, so it must never depend on map iteration.
class ParamStore {
public:
    void add(std::string name, Tensor value);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    std::vector<NamedTensor>& items() { return items_; }
    const std::vector<NamedTensor>& items() const { return items_; }
    std::size_t count() const { return items_.size(); }

private:
    std::vector<NamedTensor> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Parameter-group name used by freezing: "image.*" -> image_tower,
// "text.*" -> text_tower, otherwise the parameter's own name
// (image_projection, text_projection, logit_scale).
std::string parameter_group(std::string_view param_name);

enum class ModelPart { ImageTower, TextTower, ImageProjection, TextProjection, LogitScale };

ModelPart part_of_parameter(std::string_view param_name);

struct TwoTowerModel {
    ModelConfig config;
    ParamStore params;
    // running statistics for conv-tower batch norm, keyed "image.bn1" etc.
    std::vector<std::pair<std::string, BatchNormState>> bn_states;

    BatchNormState& bn_state(const std::string& name);
    double logit_scale_log() const { return params.get("logit_scale")[0]; }
};

// Graph-side view of the model: every parameter registered once as a leaf
// (or as a constant when its group is frozen).
struct ModelBinding {
    Graph* graph = nullptr;
    TwoTowerModel* model = nullptr;
    bool training = false;
    std::unordered_map<std::string, Tensor> nodes;

    const Tensor& node(const std::string& name) const;
};

ModelBinding bind_model(Graph& g, TwoTowerModel& model,
                        const std::set<std::string>& frozen_groups, bool training);

// Training-path encoders; return [n, embed_dim] unit rows. The image batch
// form exists because conv batch norm couples items through batch statistics.
Tensor encode_text_node(ModelBinding& b, const TokenSequence& seq);
Tensor encode_texts_node(ModelBinding& b, const std::vector<TokenSequence>& seqs);
Tensor encode_images_node(ModelBinding& b, const std::vector<Image>& images);

// Evaluation-path encoders: unit vectors of embed_dim, no graph exposure,
// batch-norm running statistics untouched.
Tensor encode_text(const TwoTowerModel& model, const TokenSequence& seq);
Tensor encode_image(const TwoTowerModel& model, const Image& image);

// Resamples a [g*g+1, width] positional table (class slot in row 0) to a new
// grid with corner-aligned bilinear interpolation; the class row is copied.
Tensor interpolate_positional_embeddings(const Tensor& pos, std::size_t new_grid);

struct InitSource {
    std::optional<std::string> checkpoint_dir;
    std::set<ModelPart> parts;  // parts taken from the checkpoint

    static InitSource random() { return {}; }
    static InitSource checkpoint(std::string dir);
    static InitSource checkpoint(std::string dir, std::set<ModelPart> parts);
};

// Builds the model with seeded random initialization, then overwrites the
// selected parts from the checkpoint (interpolating the image positional
// table when only the grid differs).
TwoTowerModel init_model(const ModelConfig& config, std::uint64_t seed,
                         const InitSource& source);

// log-space temperature: exp(init) ~= 14.29, exp(max) <= 100 exactly
double initial_logit_scale_log();
double max_logit_scale_log();

}  // namespace dualtower
