#include "synthetic.hpp"

#include <cmath>
#include <filesystem>

namespace dualtower::testsupport {

const std::vector<std::string> kClassWords = {"crimson", "amber",  "lemon", "jade",
                                              "teal",    "cobalt", "violet", "rose"};
const std::vector<std::string> kShadeWords = {"dark", "bright"};

namespace {

// evenly spaced saturated hues
void hue_to_rgb(double hue, double* r, double* g, double* b) {
    const double h = hue * 6.0;
    const double x = 1.0 - std::fabs(std::fmod(h, 2.0) - 1.0);
    switch (static_cast<int>(h) % 6) {
        case 0: *r = 1; *g = x; *b = 0; break;
        case 1: *r = x; *g = 1; *b = 0; break;
        case 2: *r = 0; *g = 1; *b = x; break;
        case 3: *r = 0; *g = x; *b = 1; break;
        case 4: *r = x; *g = 0; *b = 1; break;
        default: *r = 1; *g = 0; *b = x; break;
    }
}

}  // namespace

std::vector<ImageTextRecord> make_synthetic_corpus(const SyntheticSpec& spec) {
    Rng rng = Rng(spec.seed).derive("synthetic-corpus");
    std::vector<ImageTextRecord> records;
    records.reserve(spec.pairs);
    for (std::size_t i = 0; i < spec.pairs; ++i) {
        const std::size_t cls = i % spec.n_classes;
        const std::size_t shade = (i / spec.n_classes) % spec.n_shades;
        double r, g, b;
        hue_to_rgb(static_cast<double>(cls) / static_cast<double>(spec.n_classes), &r, &g,
                   &b);
        const double level = spec.n_shades == 1
                                 ? 0.8
                                 : 0.35 + 0.55 * static_cast<double>(shade) /
                                              static_cast<double>(spec.n_shades - 1);

        ImageTextRecord rec;
        const std::size_t size = spec.image_size + rng.index(5);  // 0..4 extra pixels
        rec.image = Image::filled(size, size, 0.0f);
        for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
                const double base[3] = {r * level, g * level, b * level};
                for (std::size_t c = 0; c < 3; ++c) {
                    double v = base[c] + rng.uniform(-spec.noise, spec.noise);
                    rec.image.at(y, x, c) =
                        static_cast<float>(std::min(1.0, std::max(0.0, v)));
                }
            }
        }
        rec.caption = kClassWords[cls % kClassWords.size()] + " " +
                      kShadeWords[shade % kShadeWords.size()] + " photo " +
                      std::to_string(i);
        rec.score = 0.9;
        rec.source = "class_" + std::to_string(cls);
        records.push_back(std::move(rec));
    }
    return records;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.text.kind = EncoderKind::TextTransformer;
    cfg.text.layers = 1;
    cfg.text.width = 32;
    cfg.text.heads = 2;
    cfg.text.vocab_size = 512;
    cfg.text.max_text_length = 24;
    cfg.text.embed_dim = 16;
    cfg.image.kind = EncoderKind::PatchTransformer;
    cfg.image.layers = 1;
    cfg.image.width = 32;
    cfg.image.heads = 2;
    cfg.image.patch_size = 8;
    cfg.image.resolution = 16;
    cfg.image.embed_dim = 16;
    return cfg;
}

ModelConfig tiny_conv_config() {
    ModelConfig cfg = tiny_config();
    cfg.image.kind = EncoderKind::ConvNet;
    return cfg;
}

QuickTrainResult quick_train(const ModelConfig& config, std::vector<ImageTextRecord> records,
                             TrainingSchedule schedule, std::uint64_t seed,
                             const std::string& out_dir, std::size_t num_workers) {
    QuickTrainResult result;
    result.model = init_model(config, seed, InitSource::random());
    const ByteVocab vocab{config.text.vocab_size};
    AugmentConfig augment;
    augment.resolution = config.image.resolution;
    BatchStream stream(std::move(records), vocab, augment, config.text.max_text_length,
                       seed);
    OptimizerState optimizer;
    RunStageOptions options;
    options.out_dir = out_dir;
    options.num_workers = num_workers;
    result.stage = run_stage(result.model, stream, schedule, optimizer, options);
    return result;
}

GoldMap identity_gold(std::size_t n) {
    GoldMap gold;
    for (std::size_t i = 0; i < n; ++i) {
        gold[i].insert(i);
    }
    return gold;
}

EmbeddedCorpus embed_records(const TwoTowerModel& model,
                             const std::vector<ImageTextRecord>& records) {
    const ByteVocab vocab{model.config.text.vocab_size};
    const std::size_t dim = model.config.text.embed_dim;
    const std::size_t res = model.config.image.resolution;
    EmbeddedCorpus out;
    out.image = Tensor({records.size(), dim});
    out.text = Tensor({records.size(), dim});
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Image img = records[i].image.height == res && records[i].image.width == res
                              ? records[i].image
                              : resize_bilinear(records[i].image, res, res);
        const Tensor ie = encode_image(model, img);
        const Tensor te = encode_text(
            model, tokenize(records[i].caption, vocab, model.config.text.max_text_length));
        std::copy(ie.data().begin(), ie.data().end(), out.image.data().begin() + i * dim);
        std::copy(te.data().begin(), te.data().end(), out.text.data().begin() + i * dim);
    }
    return out;
}

std::string fresh_temp_dir(const std::string& tag) {
    static std::uint64_t counter = 0;
    const std::string dir = (std::filesystem::temp_directory_path() /
                             ("dualtower_test_" + tag + "_" + std::to_string(counter++)))
                                .string();
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace dualtower::testsupport
