// Generates a small color-class image-text shard for trying out the pipeline.
// Captions lead with the class word; the source tag carries the class name so
// the shard also works with the zeroshot subcommand.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "dualtower/data.hpp"
#include "dualtower/rng.hpp"

using namespace dualtower;

namespace {

const std::vector<std::string> kWords = {"crimson", "amber",  "lemon", "jade",
                                         "teal",    "cobalt", "violet", "rose"};

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

ImageTextRecord make_record(std::size_t index, std::size_t classes, std::size_t image_size,
                            Rng& rng) {
    const std::size_t cls = index % classes;
    const std::size_t shade = (index / classes) % 2;
    double r, g, b;
    hue_to_rgb(static_cast<double>(cls) / static_cast<double>(classes), &r, &g, &b);
    const double level = shade == 0 ? 0.45 : 0.9;

    ImageTextRecord rec;
    const std::size_t size = image_size + rng.index(5);
    rec.image = Image::filled(size, size, 0.0f);
    for (float& v : rec.image.rgb) {
        v = 0.0f;
    }
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double base[3] = {r * level, g * level, b * level};
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = base[c] + rng.uniform(-0.03, 0.03);
                rec.image.at(y, x, c) = static_cast<float>(std::min(1.0, std::max(0.0, v)));
            }
        }
    }
    rec.caption = kWords[cls % kWords.size()] + std::string(shade == 0 ? " dark" : " bright") +
                  " photo " + std::to_string(index);
    rec.score = 0.9;
    rec.source = kWords[cls % kWords.size()];
    return rec;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generate a demo image-text shard"};
    std::string out;
    std::size_t pairs = 256;
    std::size_t classes = 8;
    std::size_t image_size = 24;
    std::uint64_t seed = 0;
    bool dirty = false;
    app.add_option("--out", out, "output shard path")->required();
    app.add_option("--pairs", pairs, "number of clean image-text pairs");
    app.add_option("--classes", classes, "number of color classes (up to 8)")
        ->check(CLI::Range(1, 8));
    app.add_option("--image-size", image_size, "base image side length");
    app.add_option("--seed", seed, "random seed");
    app.add_flag("--dirty", dirty, "append records that violate each curation rule");
    CLI11_PARSE(app, argc, argv);

    Rng rng = Rng(seed).derive("demo-shard");
    std::vector<ImageTextRecord> records;
    records.reserve(pairs + 4);
    for (std::size_t i = 0; i < pairs; ++i) {
        records.push_back(make_record(i, classes, image_size, rng));
    }
    if (dirty) {
        ImageTextRecord short_caption = make_record(pairs, classes, image_size, rng);
        short_caption.caption = "tiny";
        records.push_back(short_caption);
        ImageTextRecord long_caption = make_record(pairs + 1, classes, image_size, rng);
        long_caption.caption = std::string(60, 'z');
        records.push_back(long_caption);
        ImageTextRecord low_score = make_record(pairs + 2, classes, image_size, rng);
        low_score.score = 0.1;
        records.push_back(low_score);
        ImageTextRecord spam = make_record(pairs + 3, classes, image_size, rng);
        spam.caption = "click here buy now best offer";
        records.push_back(spam);
    }

    try {
        write_shard(records, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "make_demo_shard: %s\n", e.what());
        return 1;
    }
    std::printf("wrote %zu records to %s\n", records.size(), out.c_str());
    std::printf("class words:");
    for (std::size_t c = 0; c < classes; ++c) {
        std::printf(" %s", kWords[c].c_str());
    }
    std::printf("\n");
    return 0;
}
