#include "dualtower/encoder.hpp"

#include <cmath>
#include <cstring>

#include "dualtower/checkpoint.hpp"
#include "dualtower/rng.hpp"

namespace dualtower {

const char* encoder_kind_name(EncoderKind k) {
    switch (k) {
        case EncoderKind::PatchTransformer:
            return "patch_transformer";
        case EncoderKind::ConvNet:
            return "conv_net";
        case EncoderKind::TextTransformer:
            return "text_transformer";
    }
    return "?";
}

EncoderKind encoder_kind_from_name(std::string_view name) {
    if (name == "patch_transformer") {
        return EncoderKind::PatchTransformer;
    }
    if (name == "conv_net") {
        return EncoderKind::ConvNet;
    }
    if (name == "text_transformer") {
        return EncoderKind::TextTransformer;
    }
    throw ContractViolation("unknown encoder kind: " + std::string(name));
}

void EncoderConfig::validate() const {
    if (layers == 0 || width == 0 || embed_dim == 0) {
        throw ContractViolation("encoder config: layers, width, embed_dim must be positive");
    }
    if (kind != EncoderKind::ConvNet && (heads == 0 || width % heads != 0)) {
        throw ContractViolation("encoder config: width must be divisible by heads");
    }
    if (kind == EncoderKind::PatchTransformer || kind == EncoderKind::ConvNet) {
        if (patch_size == 0 || resolution == 0 || resolution % patch_size != 0) {
            throw ContractViolation(
                "encoder config: resolution must be a positive multiple of patch_size");
        }
    }
    if (kind == EncoderKind::TextTransformer) {
        if (vocab_size < 4) {
            throw ContractViolation("encoder config: vocab must hold the special ids");
        }
        if (max_text_length < 2) {
            throw ContractViolation("encoder config: max_text_length must be at least 2");
        }
    }
}

EncoderConfig EncoderConfig::desk_text() {
    EncoderConfig c;
    c.kind = EncoderKind::TextTransformer;
    c.layers = 2;
    c.width = 64;
    c.heads = 4;
    c.vocab_size = 512;
    c.max_text_length = 50;
    c.embed_dim = 32;
    return c;
}

EncoderConfig EncoderConfig::desk_image() {
    EncoderConfig c;
    c.kind = EncoderKind::PatchTransformer;
    c.layers = 2;
    c.width = 64;
    c.heads = 4;
    c.patch_size = 8;
    c.resolution = 32;
    c.embed_dim = 32;
    return c;
}

EncoderConfig EncoderConfig::desk_conv() {
    EncoderConfig c = desk_image();
    c.kind = EncoderKind::ConvNet;
    return c;
}

void ModelConfig::validate() const {
    image.validate();
    text.validate();
    if (image.kind == EncoderKind::TextTransformer) {
        throw ContractViolation("model config: image tower must be an image encoder");
    }
    if (text.kind != EncoderKind::TextTransformer) {
        throw ContractViolation("model config: text tower must be a text encoder");
    }
    if (image.embed_dim != text.embed_dim) {
        throw ContractViolation("model config: towers must share embed_dim");
    }
}

ModelConfig ModelConfig::desk_default() { return ModelConfig{}; }

// ---------------------------------------------------------------------------
// parameter store

void ParamStore::add(std::string name, Tensor value) {
    if (index_.count(name) != 0) {
        throw ContractViolation("duplicate parameter: " + name);
    }
    index_.emplace(name, items_.size());
    items_.push_back({std::move(name), std::move(value)});
}

Tensor& ParamStore::get(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw ContractViolation("unknown parameter: " + name);
    }
    return items_[it->second].value;
}

const Tensor& ParamStore::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) {
        throw ContractViolation("unknown parameter: " + name);
    }
    return items_[it->second].value;
}

std::string parameter_group(std::string_view param_name) {
    if (param_name.starts_with("image.")) {
        return "image_tower";
    }
    if (param_name.starts_with("text.")) {
        return "text_tower";
    }
    return std::string(param_name);
}

ModelPart part_of_parameter(std::string_view param_name) {
    if (param_name.starts_with("image.")) {
        return ModelPart::ImageTower;
    }
    if (param_name.starts_with("text.")) {
        return ModelPart::TextTower;
    }
    if (param_name == "image_projection") {
        return ModelPart::ImageProjection;
    }
    if (param_name == "text_projection") {
        return ModelPart::TextProjection;
    }
    if (param_name == "logit_scale") {
        return ModelPart::LogitScale;
    }
    throw ContractViolation("parameter belongs to no model part: " + std::string(param_name));
}

BatchNormState& TwoTowerModel::bn_state(const std::string& name) {
    for (auto& [n, s] : bn_states) {
        if (n == name) {
            return s;
        }
    }
    throw ContractViolation("unknown batch-norm state: " + name);
}

double initial_logit_scale_log() { return std::log(1.0 / 0.07); }

double max_logit_scale_log() {
    // largest double whose exp does not exceed the temperature cap
    static const double bound = [] {
        double b = std::log(100.0);
        while (std::exp(b) > 100.0) {
            b = std::nextafter(b, 0.0);
        }
        return b;
    }();
    return bound;
}

// ---------------------------------------------------------------------------
// construction

namespace {

Tensor normal_init(std::vector<std::size_t> shape, Rng rng, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.normal(0.0, stddev);
    }
    return t;
}

void add_normal(TwoTowerModel& m, std::uint64_t seed, const std::string& name,
                std::vector<std::size_t> shape, double stddev = 0.02) {
    m.params.add(name, normal_init(std::move(shape), Rng(seed).derive(name), stddev));
}

void add_zeros(TwoTowerModel& m, const std::string& name, std::vector<std::size_t> shape) {
    m.params.add(name, Tensor::zeros(std::move(shape)));
}

void add_ones(TwoTowerModel& m, const std::string& name, std::vector<std::size_t> shape) {
    m.params.add(name, Tensor::full(std::move(shape), 1.0));
}

void add_transformer_blocks(TwoTowerModel& m, std::uint64_t seed, const std::string& prefix,
                            const EncoderConfig& cfg) {
    const std::size_t w = cfg.width;
    const std::size_t hidden = 4 * w;
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        const std::string p = prefix + "blocks." + std::to_string(i) + ".";
        add_ones(m, p + "ln1.gamma", {w});
        add_zeros(m, p + "ln1.beta", {w});
        add_normal(m, seed, p + "attn.wq", {w, w});
        add_zeros(m, p + "attn.bq", {w});
        add_normal(m, seed, p + "attn.wk", {w, w});
        add_zeros(m, p + "attn.bk", {w});
        add_normal(m, seed, p + "attn.wv", {w, w});
        add_zeros(m, p + "attn.bv", {w});
        add_normal(m, seed, p + "attn.wo", {w, w});
        add_zeros(m, p + "attn.bo", {w});
        add_ones(m, p + "ln2.gamma", {w});
        add_zeros(m, p + "ln2.beta", {w});
        add_normal(m, seed, p + "mlp.w1", {w, hidden});
        add_zeros(m, p + "mlp.b1", {hidden});
        add_normal(m, seed, p + "mlp.w2", {hidden, w});
        add_zeros(m, p + "mlp.b2", {w});
    }
}

TwoTowerModel build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    TwoTowerModel m;
    m.config = config;

    const EncoderConfig& t = config.text;
    add_normal(m, seed, "text.token_embedding", {t.vocab_size, t.width});
    add_normal(m, seed, "text.positional_embedding", {t.max_text_length, t.width});
    add_transformer_blocks(m, seed, "text.", t);
    add_ones(m, "text.ln_final.gamma", {t.width});
    add_zeros(m, "text.ln_final.beta", {t.width});

    const EncoderConfig& v = config.image;
    const std::size_t patch_dim = v.patch_size * v.patch_size * 3;
    if (v.kind == EncoderKind::PatchTransformer) {
        const std::size_t gg = v.grid() * v.grid();
        add_normal(m, seed, "image.patch_projection", {patch_dim, v.width});
        add_zeros(m, "image.patch_bias", {v.width});
        // zero class slot: per-row layer norm would otherwise inflate a random
        // class token until it drowns out everything attention gathers
        add_zeros(m, "image.class_embedding", {1, v.width});
        Tensor pos = normal_init({gg + 1, v.width},
                                 Rng(seed).derive("image.positional_embedding"), 0.02);
        for (std::size_t j = 0; j < v.width; ++j) {
            pos.at(0, j) = 0.0;
        }
        m.params.add("image.positional_embedding", std::move(pos));
        add_ones(m, "image.ln_pre.gamma", {v.width});
        add_zeros(m, "image.ln_pre.beta", {v.width});
        add_transformer_blocks(m, seed, "image.", v);
        add_ones(m, "image.ln_post.gamma", {v.width});
        add_zeros(m, "image.ln_post.beta", {v.width});
    } else {
        // fan-in scaling keeps conv activations O(1) even before the running
        // statistics have adapted
        add_normal(m, seed, "image.stem.weight", {patch_dim, v.width},
                   std::sqrt(2.0 / static_cast<double>(patch_dim)));
        add_zeros(m, "image.stem.bias", {v.width});
        add_ones(m, "image.bn1.gamma", {v.width});
        add_zeros(m, "image.bn1.beta", {v.width});
        add_normal(m, seed, "image.stage2.weight", {v.width, v.width},
                   std::sqrt(2.0 / static_cast<double>(v.width)));
        add_zeros(m, "image.stage2.bias", {v.width});
        add_ones(m, "image.bn2.gamma", {v.width});
        add_zeros(m, "image.bn2.beta", {v.width});
        m.bn_states.emplace_back("image.bn1", BatchNormState::identity(v.width));
        m.bn_states.emplace_back("image.bn2", BatchNormState::identity(v.width));
    }

    add_normal(m, seed, "image_projection", {v.width, v.embed_dim});
    add_normal(m, seed, "text_projection", {t.width, t.embed_dim});
    m.params.add("logit_scale", Tensor::scalar(initial_logit_scale_log()));
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// graph binding and forward passes

const Tensor& ModelBinding::node(const std::string& name) const {
    const auto it = nodes.find(name);
    if (it == nodes.end()) {
        throw ContractViolation("parameter not bound: " + name);
    }
    return it->second;
}

ModelBinding bind_model(Graph& g, TwoTowerModel& model,
                        const std::set<std::string>& frozen_groups, bool training) {
    ModelBinding b;
    b.graph = &g;
    b.model = &model;
    b.training = training;
    for (const NamedTensor& p : model.params.items()) {
        const bool frozen = frozen_groups.count(parameter_group(p.name)) != 0;
        b.nodes.emplace(p.name, frozen ? g.constant(p.value) : g.leaf(p.value, true));
    }
    return b;
}

namespace {

// pre-LN residual block with GELU MLP
Tensor transformer_block(ModelBinding& b, const Tensor& x, const std::string& prefix,
                         std::size_t heads, const Tensor* mask_bias) {
    Graph& g = *b.graph;
    const std::size_t width = x.dim(1);
    const std::size_t head_dim = width / heads;
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor h = g.layer_norm(x, b.node(prefix + "ln1.gamma"), b.node(prefix + "ln1.beta"));
    Tensor q = g.rowwise_shift(g.matmul(h, b.node(prefix + "attn.wq")),
                               b.node(prefix + "attn.bq"));
    Tensor k = g.rowwise_shift(g.matmul(h, b.node(prefix + "attn.wk")),
                               b.node(prefix + "attn.bk"));
    Tensor v = g.rowwise_shift(g.matmul(h, b.node(prefix + "attn.wv")),
                               b.node(prefix + "attn.bv"));

    std::vector<Tensor> contexts;
    contexts.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
        const std::size_t off = hd * head_dim;
        Tensor qh = g.slice_cols(q, off, head_dim);
        Tensor kh = g.slice_cols(k, off, head_dim);
        Tensor vh = g.slice_cols(v, off, head_dim);
        Tensor scores = g.scale(g.matmul(qh, g.transpose(kh)), attn_scale);
        if (mask_bias != nullptr) {
            scores = g.add(scores, *mask_bias);
        }
        contexts.push_back(g.matmul(g.softmax(scores), vh));
    }
    Tensor ctx = heads == 1 ? contexts[0] : g.concat_cols(contexts);
    Tensor attn_out = g.rowwise_shift(g.matmul(ctx, b.node(prefix + "attn.wo")),
                                      b.node(prefix + "attn.bo"));
    Tensor out = g.add(x, attn_out);

    Tensor h2 = g.layer_norm(out, b.node(prefix + "ln2.gamma"), b.node(prefix + "ln2.beta"));
    Tensor mlp = g.rowwise_shift(g.matmul(h2, b.node(prefix + "mlp.w1")),
                                 b.node(prefix + "mlp.b1"));
    mlp = g.gelu(mlp);
    mlp = g.rowwise_shift(g.matmul(mlp, b.node(prefix + "mlp.w2")),
                          b.node(prefix + "mlp.b2"));
    return g.add(out, mlp);
}

// flatten one image into [grid*grid, patch*patch*3] raster-ordered patch rows
Tensor patchify(const Image& img, std::size_t patch) {
    const std::size_t grid = img.height / patch;
    const std::size_t patch_dim = patch * patch * 3;
    Tensor out({grid * grid, patch_dim});
    for (std::size_t gy = 0; gy < grid; ++gy) {
        for (std::size_t gx = 0; gx < grid; ++gx) {
            double* row = out.data().data() + (gy * grid + gx) * patch_dim;
            for (std::size_t py = 0; py < patch; ++py) {
                for (std::size_t px = 0; px < patch; ++px) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        row[(py * patch + px) * 3 + c] =
                            static_cast<double>(img.at(gy * patch + py, gx * patch + px, c));
                    }
                }
            }
        }
    }
    return out;
}

void check_image_input(const TwoTowerModel& model, const Image& img) {
    const EncoderConfig& cfg = model.config.image;
    if (!img.valid() || img.height != cfg.resolution || img.width != cfg.resolution) {
        throw ContractViolation("encode_image: expected " + std::to_string(cfg.resolution) +
                                "x" + std::to_string(cfg.resolution) + "x3 pixels, got " +
                                std::to_string(img.height) + "x" + std::to_string(img.width));
    }
}

void check_text_input(const TwoTowerModel& model, const TokenSequence& seq) {
    const EncoderConfig& cfg = model.config.text;
    if (seq.ids.empty() || seq.ids.size() != seq.mask.size()) {
        throw ContractViolation("encode_text: ids and mask must be non-empty and equal length");
    }
    if (seq.ids.size() > cfg.max_text_length) {
        throw ContractViolation("encode_text: sequence of " + std::to_string(seq.ids.size()) +
                                " exceeds max_text_length " +
                                std::to_string(cfg.max_text_length));
    }
    for (const std::size_t id : seq.ids) {
        if (id >= cfg.vocab_size) {
            throw ContractViolation("encode_text: token id " + std::to_string(id) +
                                    " out of range for vocab " +
                                    std::to_string(cfg.vocab_size));
        }
    }
    if (seq.mask[0] == 0) {
        throw ContractViolation("encode_text: first position must not be padding");
    }
}

Tensor attention_mask_bias(Graph& g, const TokenSequence& seq) {
    const std::size_t n = seq.ids.size();
    Tensor bias({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            bias.at(i, j) = seq.mask[j] != 0 ? 0.0 : -1e9;
        }
    }
    return g.constant(std::move(bias));
}

}  // namespace

Tensor encode_text_node(ModelBinding& b, const TokenSequence& seq) {
    check_text_input(*b.model, seq);
    Graph& g = *b.graph;
    const EncoderConfig& cfg = b.model->config.text;
    const std::size_t n = seq.ids.size();

    Tensor x = g.embedding_lookup(b.node("text.token_embedding"), seq.ids);
    Tensor pos = g.slice_rows(b.node("text.positional_embedding"), 0, n);
    x = g.add(x, pos);
    const Tensor mask_bias = attention_mask_bias(g, seq);
    for (std::size_t i = 0; i < cfg.layers; ++i) {
        x = transformer_block(b, x, "text.blocks." + std::to_string(i) + ".", cfg.heads,
                              &mask_bias);
    }
    x = g.layer_norm(x, b.node("text.ln_final.gamma"), b.node("text.ln_final.beta"));
    // first-token pooling, then projection to the shared space
    Tensor pooled = g.slice_rows(x, 0, 1);
    return g.l2_normalize(g.matmul(pooled, b.node("text_projection")));
}

Tensor encode_texts_node(ModelBinding& b, const std::vector<TokenSequence>& seqs) {
    if (seqs.empty()) {
        throw ContractViolation("encode_texts: empty batch");
    }
    std::vector<Tensor> rows;
    rows.reserve(seqs.size());
    for (const TokenSequence& s : seqs) {
        rows.push_back(encode_text_node(b, s));
    }
    return rows.size() == 1 ? rows[0] : b.graph->concat_rows(rows);
}

Tensor encode_images_node(ModelBinding& b, const std::vector<Image>& images) {
    if (images.empty()) {
        throw ContractViolation("encode_images: empty batch");
    }
    for (const Image& img : images) {
        check_image_input(*b.model, img);
    }
    Graph& g = *b.graph;
    const EncoderConfig& cfg = b.model->config.image;
    const std::size_t gg = cfg.grid() * cfg.grid();

    Tensor features;  // [n, width]
    if (cfg.kind == EncoderKind::PatchTransformer) {
        std::vector<Tensor> cls_rows;
        cls_rows.reserve(images.size());
        for (const Image& img : images) {
            Tensor patches = g.constant(patchify(img, cfg.patch_size));
            Tensor x = g.rowwise_shift(g.matmul(patches, b.node("image.patch_projection")),
                                       b.node("image.patch_bias"));
            x = g.concat_rows({b.node("image.class_embedding"), x});
            x = g.add(x, b.node("image.positional_embedding"));
            x = g.layer_norm(x, b.node("image.ln_pre.gamma"), b.node("image.ln_pre.beta"));
            for (std::size_t i = 0; i < cfg.layers; ++i) {
                x = transformer_block(b, x, "image.blocks." + std::to_string(i) + ".",
                                      cfg.heads, nullptr);
            }
            x = g.layer_norm(x, b.node("image.ln_post.gamma"),
                             b.node("image.ln_post.beta"));
            cls_rows.push_back(g.slice_rows(x, 0, 1));
        }
        features = cls_rows.size() == 1 ? cls_rows[0] : g.concat_rows(cls_rows);
    } else {
        // conv path handles the whole batch at once: batch norm couples items
        // through batch statistics
        Tensor patches({images.size() * gg, cfg.patch_size * cfg.patch_size * 3});
        for (std::size_t i = 0; i < images.size(); ++i) {
            const Tensor p = patchify(images[i], cfg.patch_size);
            std::copy(p.data().begin(), p.data().end(),
                      patches.data().begin() + i * gg * p.dim(1));
        }
        Tensor x = g.rowwise_shift(g.matmul(g.constant(std::move(patches)),
                                            b.node("image.stem.weight")),
                                   b.node("image.stem.bias"));
        x = g.batch_norm(x, b.model->bn_state("image.bn1"), b.training);
        x = g.rowwise_shift(g.rowwise_scale(x, b.node("image.bn1.gamma")),
                            b.node("image.bn1.beta"));
        x = g.gelu(x);
        x = g.rowwise_shift(g.matmul(x, b.node("image.stage2.weight")),
                            b.node("image.stage2.bias"));
        x = g.batch_norm(x, b.model->bn_state("image.bn2"), b.training);
        x = g.rowwise_shift(g.rowwise_scale(x, b.node("image.bn2.gamma")),
                            b.node("image.bn2.beta"));
        x = g.gelu(x);
        std::vector<Tensor> pooled;
        pooled.reserve(images.size());
        for (std::size_t i = 0; i < images.size(); ++i) {
            pooled.push_back(g.reshape(g.mean_rows(g.slice_rows(x, i * gg, gg)),
                                       {std::size_t{1}, cfg.width}));
        }
        features = pooled.size() == 1 ? pooled[0] : g.concat_rows(pooled);
    }
    return g.l2_normalize(g.matmul(features, b.node("image_projection")));
}

namespace {

const std::set<std::string> kAllGroups = {"image_tower", "text_tower", "image_projection",
                                          "text_projection", "logit_scale"};

Tensor strip_graph(const Tensor& row) {
    // [1, E] graph node -> plain [E] tensor
    Tensor out({row.dim(1)}, std::vector<double>(row.data().begin(), row.data().end()));
    return out;
}

}  // namespace

Tensor encode_text(const TwoTowerModel& model, const TokenSequence& seq) {
    Graph g;
    // eval path: all parameters constant, batch-norm reads running stats only
    ModelBinding b = bind_model(g, const_cast<TwoTowerModel&>(model), kAllGroups, false);
    return strip_graph(encode_text_node(b, seq));
}

Tensor encode_image(const TwoTowerModel& model, const Image& image) {
    Graph g;
    ModelBinding b = bind_model(g, const_cast<TwoTowerModel&>(model), kAllGroups, false);
    return strip_graph(encode_images_node(b, {image}));
}

// ---------------------------------------------------------------------------
// positional interpolation

Tensor interpolate_positional_embeddings(const Tensor& pos, std::size_t new_grid) {
    if (pos.rank() != 2 || pos.dim(0) < 2) {
        throw ContractViolation("interpolate: expected [g*g+1, width] table");
    }
    if (new_grid == 0) {
        throw ContractViolation("interpolate: new grid must be at least 1");
    }
    const std::size_t rows = pos.dim(0);
    const std::size_t width = pos.dim(1);
    const std::size_t g = static_cast<std::size_t>(std::lround(std::sqrt(
        static_cast<double>(rows - 1))));
    if (g * g + 1 != rows) {
        throw ContractViolation("interpolate: row count " + std::to_string(rows) +
                                " is not a perfect square plus one");
    }
    if (new_grid == g) {
        Tensor copy = pos;  // bitwise identity
        copy.node_id.reset();
        copy.requires_grad = false;
        return copy;
    }

    Tensor out({new_grid * new_grid + 1, width});
    std::copy(pos.data().begin(), pos.data().begin() + width, out.data().begin());

    const auto src_coord = [&](std::size_t o) {
        if (new_grid == 1 || g == 1) {
            return 0.0;
        }
        // corner-aligned: endpoints map to endpoints
        return static_cast<double>(o) * static_cast<double>(g - 1) /
               static_cast<double>(new_grid - 1);
    };

    for (std::size_t oy = 0; oy < new_grid; ++oy) {
        const double fy = src_coord(oy);
        const std::size_t y0 = std::min(static_cast<std::size_t>(fy), g - 1);
        const std::size_t y1 = std::min(y0 + 1, g - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t ox = 0; ox < new_grid; ++ox) {
            const double fx = src_coord(ox);
            const std::size_t x0 = std::min(static_cast<std::size_t>(fx), g - 1);
            const std::size_t x1 = std::min(x0 + 1, g - 1);
            const double tx = fx - static_cast<double>(x0);
            const double* r00 = pos.data().data() + (1 + y0 * g + x0) * width;
            const double* r01 = pos.data().data() + (1 + y0 * g + x1) * width;
            const double* r10 = pos.data().data() + (1 + y1 * g + x0) * width;
            const double* r11 = pos.data().data() + (1 + y1 * g + x1) * width;
            double* dst = out.data().data() + (1 + oy * new_grid + ox) * width;
            if (tx == 0.0 && ty == 0.0) {
                std::copy(r00, r00 + width, dst);  // exact lattice point
                continue;
            }
            for (std::size_t c = 0; c < width; ++c) {
                // lerp in a + t*(b-a) form so constant fields survive exactly
                const double top = r00[c] + tx * (r01[c] - r00[c]);
                const double bot = r10[c] + tx * (r11[c] - r10[c]);
                dst[c] = top + ty * (bot - top);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// initialization

InitSource InitSource::checkpoint(std::string dir) {
    InitSource s;
    s.checkpoint_dir = std::move(dir);
    s.parts = {ModelPart::ImageTower, ModelPart::TextTower, ModelPart::ImageProjection,
               ModelPart::TextProjection, ModelPart::LogitScale};
    return s;
}

InitSource InitSource::checkpoint(std::string dir, std::set<ModelPart> parts) {
    InitSource s;
    s.checkpoint_dir = std::move(dir);
    s.parts = std::move(parts);
    return s;
}

TwoTowerModel init_model(const ModelConfig& config, std::uint64_t seed,
                         const InitSource& source) {
    TwoTowerModel model = build_model(config, seed);
    if (source.checkpoint_dir.has_value()) {
        if (source.parts.empty()) {
            throw ContractViolation("init_model: checkpoint source with no parts selected");
        }
        load_checkpoint_parts(model, *source.checkpoint_dir, source.parts);
    }
    return model;
}

}  // namespace dualtower
