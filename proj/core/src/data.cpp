#include "dualtower/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "dualtower/tensor.hpp"

namespace dualtower {

Image Image::filled(std::size_t h, std::size_t w, float value) {
    Image img;
    img.height = h;
    img.width = w;
    img.rgb.assign(h * w * 3, value);
    return img;
}

const char* reject_reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::TooShort:
            return "TooShort";
        case RejectReason::TooLong:
            return "TooLong";
        case RejectReason::LowScore:
            return "LowScore";
        case RejectReason::Blacklisted:
            return "Blacklisted";
    }
    return "?";
}

std::size_t utf8_length(std::string_view s) {
    std::size_t n = 0;
    for (const char c : s) {
        if ((static_cast<std::uint8_t>(c) & 0xC0) != 0x80) {
            ++n;
        }
    }
    return n;
}

bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        const std::uint8_t b = static_cast<std::uint8_t>(s[i]);
        std::size_t len;
        std::uint32_t cp;
        if (b < 0x80) {
            len = 1;
            cp = b;
        } else if ((b & 0xE0) == 0xC0) {
            len = 2;
            cp = b & 0x1F;
        } else if ((b & 0xF0) == 0xE0) {
            len = 3;
            cp = b & 0x0F;
        } else if ((b & 0xF8) == 0xF0) {
            len = 4;
            cp = b & 0x07;
        } else {
            return false;
        }
        if (i + len > n) {
            return false;
        }
        for (std::size_t k = 1; k < len; ++k) {
            const std::uint8_t cont = static_cast<std::uint8_t>(s[i + k]);
            if ((cont & 0xC0) != 0x80) {
                return false;
            }
            cp = (cp << 6) | (cont & 0x3F);
        }
        // overlong encodings, surrogates, out-of-range
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
            (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
            (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += len;
    }
    return true;
}

std::optional<RejectReason> filter_record(const ImageTextRecord& record,
                                          const FilterConfig& config) {
    if (record.score.has_value() && *record.score < config.score_threshold) {
        return RejectReason::LowScore;
    }
    for (const std::string& pattern : config.blacklist) {
        if (!pattern.empty() && record.caption.find(pattern) != std::string::npos) {
            return RejectReason::Blacklisted;
        }
    }
    const std::size_t chars = utf8_length(record.caption);
    if (chars < config.min_chars) {
        return RejectReason::TooShort;
    }
    if (chars > config.max_chars) {
        return RejectReason::TooLong;
    }
    return std::nullopt;
}

TokenSequence tokenize(std::string_view text, const ByteVocab& vocab,
                       std::size_t max_length) {
    if (max_length < 2) {
        throw ContractViolation("tokenize: max_length must fit begin and end markers");
    }
    if (vocab.size < 4) {
        throw ContractViolation("tokenize: vocab must hold the four special ids");
    }
    TokenSequence seq;
    seq.ids.reserve(max_length);
    seq.ids.push_back(ByteVocab::begin_id);
    const std::size_t content_budget = max_length - 2;
    const std::size_t take = std::min(text.size(), content_budget);
    for (std::size_t i = 0; i < take; ++i) {
        seq.ids.push_back(vocab.byte_to_id(static_cast<std::uint8_t>(text[i])));
    }
    seq.ids.push_back(ByteVocab::end_id);
    seq.mask.assign(seq.ids.size(), 1);
    while (seq.ids.size() < max_length) {
        seq.ids.push_back(ByteVocab::pad_id);
        seq.mask.push_back(0);
    }
    return seq;
}

Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
    if (!src.valid() || src.height == 0 || src.width == 0) {
        throw ContractViolation("resize_bilinear: degenerate source image");
    }
    Image out;
    out.height = out_h;
    out.width = out_w;
    out.rgb.resize(out_h * out_w * 3);
    // half-pixel centers, the usual image-resize convention
    const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
    for (std::size_t y = 0; y < out_h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, static_cast<double>(src.height - 1)));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, src.height - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::max(0.0, std::min(fx, static_cast<double>(src.width - 1)));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, src.width - 1);
            const double tx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1.0 - tx) * src.at(y0, x0, c) + tx * src.at(y0, x1, c);
                const double bot = (1.0 - tx) * src.at(y1, x0, c) + tx * src.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1.0 - ty) * top + ty * bot);
            }
        }
    }
    return out;
}

Image augment_image(const Image& src, const AugmentConfig& config, Rng& rng) {
    if (!src.valid() || src.height < 8 || src.width < 8) {
        throw ContractViolation("augment_image: image must be at least 8x8");
    }
    const double area = static_cast<double>(src.height * src.width);

    std::size_t crop_h = src.height, crop_w = src.width, top = 0, left = 0;
    for (int attempt = 0; attempt < 10; ++attempt) {
        const double target_area = area * rng.uniform(config.min_area, config.max_area);
        // log-uniform aspect, matching the usual random-resized-crop recipe
        const double aspect =
            std::exp(rng.uniform(std::log(config.min_aspect), std::log(config.max_aspect)));
        const double w = std::sqrt(target_area * aspect);
        const double h = std::sqrt(target_area / aspect);
        if (w <= static_cast<double>(src.width) && h <= static_cast<double>(src.height) &&
            w >= 1.0 && h >= 1.0) {
            crop_w = static_cast<std::size_t>(w);
            crop_h = static_cast<std::size_t>(h);
            top = rng.index(src.height - crop_h + 1);
            left = rng.index(src.width - crop_w + 1);
            break;
        }
    }

    Image crop;
    crop.height = crop_h;
    crop.width = crop_w;
    crop.rgb.resize(crop_h * crop_w * 3);
    for (std::size_t y = 0; y < crop_h; ++y) {
        const float* row = src.rgb.data() + ((top + y) * src.width + left) * 3;
        std::copy(row, row + crop_w * 3, crop.rgb.data() + y * crop_w * 3);
    }

    Image out = resize_bilinear(crop, config.resolution, config.resolution);

    // at most one secondary op
    const double pick = config.enable_secondary ? rng.uniform() : 0.0;
    if (pick < 1.0 / 3.0) {
        // none
    } else if (pick < 2.0 / 3.0) {
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width / 2; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    std::swap(out.at(y, x, c), out.at(y, out.width - 1 - x, c));
                }
            }
        }
    } else {
        const float delta =
            static_cast<float>(rng.uniform(-config.brightness, config.brightness));
        for (float& v : out.rgb) {
            v += delta;
        }
    }
    for (float& v : out.rgb) {
        v = std::min(1.0f, std::max(0.0f, v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// shard I/O

namespace {

constexpr char kShardMagic[4] = {'D', 'T', 'S', 'H'};
constexpr std::uint32_t kShardVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put(std::FILE* f, const void* buf, std::size_t n, const std::string& path) {
    if (std::fwrite(buf, 1, n, f) != n) {
        throw std::runtime_error("write failed: " + path);
    }
}

void get(std::FILE* f, void* buf, std::size_t n, const std::string& path) {
    if (std::fread(buf, 1, n, f) != n) {
        throw CorruptFile("truncated shard: " + path);
    }
}

template <typename T>
void put_pod(std::FILE* f, T v, const std::string& path) {
    put(f, &v, sizeof(T), path);
}

template <typename T>
T get_pod(std::FILE* f, const std::string& path) {
    T v;
    get(f, &v, sizeof(T), path);
    return v;
}

}  // namespace

std::size_t write_shard(const std::vector<ImageTextRecord>& records,
                        const std::string& path) {
    for (const ImageTextRecord& r : records) {
        if (!r.image.valid()) {
            throw ContractViolation("write_shard: record image pixel count mismatch");
        }
        if (r.score.has_value() && (*r.score < 0.0 || *r.score > 1.0)) {
            throw ContractViolation("write_shard: score outside [0,1]");
        }
        if (!is_valid_utf8(r.caption)) {
            throw ContractViolation("write_shard: caption is not valid UTF-8");
        }
    }
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    put(f.get(), kShardMagic, 4, path);
    put_pod<std::uint32_t>(f.get(), kShardVersion, path);
    put_pod<std::uint64_t>(f.get(), records.size(), path);
    for (const ImageTextRecord& r : records) {
        put_pod<std::uint32_t>(f.get(), static_cast<std::uint32_t>(r.caption.size()), path);
        put(f.get(), r.caption.data(), r.caption.size(), path);
        put_pod<std::uint8_t>(f.get(), r.score.has_value() ? 1 : 0, path);
        put_pod<double>(f.get(), r.score.value_or(0.0), path);
        put_pod<std::uint32_t>(f.get(), static_cast<std::uint32_t>(r.source.size()), path);
        put(f.get(), r.source.data(), r.source.size(), path);
        put_pod<std::uint32_t>(f.get(), static_cast<std::uint32_t>(r.image.height), path);
        put_pod<std::uint32_t>(f.get(), static_cast<std::uint32_t>(r.image.width), path);
        put(f.get(), r.image.rgb.data(), r.image.rgb.size() * sizeof(float), path);
    }
    if (std::fflush(f.get()) != 0) {
        throw std::runtime_error("write failed: " + path);
    }
    return records.size();
}

std::vector<ImageTextRecord> read_shard(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) {
        throw std::runtime_error("cannot open: " + path);
    }
    char magic[4];
    get(f.get(), magic, 4, path);
    if (std::memcmp(magic, kShardMagic, 4) != 0) {
        throw CorruptFile("bad magic in shard: " + path);
    }
    const auto version = get_pod<std::uint32_t>(f.get(), path);
    if (version != kShardVersion) {
        throw CorruptFile("unsupported shard version " + std::to_string(version) + ": " +
                          path);
    }
    const auto count = get_pod<std::uint64_t>(f.get(), path);
    std::vector<ImageTextRecord> records;
    records.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        ImageTextRecord r;
        const auto cap_len = get_pod<std::uint32_t>(f.get(), path);
        r.caption.resize(cap_len);
        get(f.get(), r.caption.data(), cap_len, path);
        if (!is_valid_utf8(r.caption)) {
            throw CorruptFile("caption is not valid UTF-8 in shard: " + path);
        }
        const auto has_score = get_pod<std::uint8_t>(f.get(), path);
        const auto score = get_pod<double>(f.get(), path);
        if (has_score != 0) {
            if (score < 0.0 || score > 1.0) {
                throw CorruptFile("score outside [0,1] in shard: " + path);
            }
            r.score = score;
        }
        const auto src_len = get_pod<std::uint32_t>(f.get(), path);
        r.source.resize(src_len);
        get(f.get(), r.source.data(), src_len, path);
        r.image.height = get_pod<std::uint32_t>(f.get(), path);
        r.image.width = get_pod<std::uint32_t>(f.get(), path);
        if (r.image.height == 0 || r.image.width == 0 ||
            r.image.height > (1u << 16) || r.image.width > (1u << 16)) {
            throw CorruptFile("implausible image dimensions in shard: " + path);
        }
        r.image.rgb.resize(r.image.height * r.image.width * 3);
        get(f.get(), r.image.rgb.data(), r.image.rgb.size() * sizeof(float), path);
        records.push_back(std::move(r));
    }
    char extra;
    if (std::fread(&extra, 1, 1, f.get()) != 0) {
        throw CorruptFile("trailing bytes in shard: " + path);
    }
    return records;
}

std::vector<std::string> load_blacklist(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open blacklist: " + path);
    }
    std::vector<std::string> patterns;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        patterns.push_back(line);
    }
    return patterns;
}

}  // namespace dualtower
