#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dualtower/rng.hpp"

namespace dualtower {

// RGB pixels in [0,1], row-major height x width x 3.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> rgb;

    static Image filled(std::size_t h, std::size_t w, float value);
    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return rgb[(y * width + x) * 3 + c];
    }
    float& at(std::size_t y, std::size_t x, std::size_t c) {
        return rgb[(y * width + x) * 3 + c];
    }
    bool valid() const { return rgb.size() == height * width * 3; }
};

// One raw corpus entry. The pair score, when present, is the externally
// computed image-text quality score the curation threshold applies to.
struct ImageTextRecord {
    Image image;
    std::string caption;
    std::optional<double> score;
    std::string source;
};

enum class RejectReason { TooShort, TooLong, LowScore, Blacklisted };

const char* reject_reason_name(RejectReason r);

struct FilterConfig {
    std::size_t min_chars = 5;
    std::size_t max_chars = 50;
    double score_threshold = 0.26;
    std::vector<std::string> blacklist;
};

// nullopt = keep. Reasons are checked in the order LowScore, Blacklisted,
// TooShort, TooLong and the first hit wins. "Characters" are Unicode scalar
// values; an absent score never counts as low.
std::optional<RejectReason> filter_record(const ImageTextRecord& record,
                                          const FilterConfig& config);

std::size_t utf8_length(std::string_view s);
bool is_valid_utf8(std::string_view s);

// Byte-level vocabulary: four specials then raw bytes. Bytes that fall
// outside a small vocab map to unk.
struct ByteVocab {
    std::size_t size = 512;
    static constexpr std::size_t pad_id = 0;
    static constexpr std::size_t begin_id = 1;
    static constexpr std::size_t end_id = 2;
    static constexpr std::size_t unk_id = 3;

    std::size_t byte_to_id(std::uint8_t b) const {
        const std::size_t id = 4 + static_cast<std::size_t>(b);
        return id < size ? id : unk_id;
    }
};

struct TokenSequence {
    std::vector<std::size_t> ids;
    std::vector<std::uint8_t> mask;  // 1 on non-pad positions, always a prefix

    std::size_t length() const { return ids.size(); }
};

// begin + content bytes + end, truncated and padded to exactly max_length.
TokenSequence tokenize(std::string_view text, const ByteVocab& vocab,
                       std::size_t max_length);

struct AugmentConfig {
    std::size_t resolution = 32;
    double min_area = 0.6;
    double max_area = 1.0;
    double min_aspect = 0.75;
    double max_aspect = 4.0 / 3.0;
    double brightness = 0.2;
    bool enable_secondary = true;  // the flip/brightness draw after the crop
};

Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w);

// Random resized crop to config.resolution, then at most one of
// {horizontal flip, brightness jitter}; result clamped to [0,1].
Image augment_image(const Image& src, const AugmentConfig& config, Rng& rng);

// Shard file: magic "DTSH", u32 LE version, u64 LE record count, then per
// record: caption (u32 len + bytes), score (u8 flag + f64), source
// (u32 len + bytes), u32 height, u32 width, h*w*3 f32 pixels.
std::size_t write_shard(const std::vector<ImageTextRecord>& records,
                        const std::string& path);
std::vector<ImageTextRecord> read_shard(const std::string& path);

// One pattern per line; lines starting with '#' are ignored.
std::vector<std::string> load_blacklist(const std::string& path);

}  // namespace dualtower
