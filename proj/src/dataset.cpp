#include "vitssp/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vitssp {

namespace {
std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t v = i;
        for (int b = 0; b < 8; ++b) v = (v >> 1) ^ (v & 1 ? 0xEDB88320u : 0u);
        table[i] = v;
    }
    return table;
}
}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    uint32_t crc = ~seed;
    for (size_t i = 0; i < len; ++i) crc = (crc >> 8) ^ table[(crc ^ data[i]) & 0xFF];
    return ~crc;
}

Image ImageDataset::image(int64_t i) const {
    if (i < 0 || i >= n) throw DataError("dataset: image index out of range");
    Image img(c, h, w);
    const uint8_t* src = pixels.data() + i * image_bytes();
    for (size_t j = 0; j < img.px.size(); ++j)
        img.px[j] = static_cast<double>(src[j]) / 255.0;
    return img;
}

int ImageDataset::label(int64_t i) const {
    if (!has_labels) throw DataError("dataset: no labels");
    if (i < 0 || i >= n) throw DataError("dataset: label index out of range");
    return static_cast<int>(labels[static_cast<size_t>(i)]);
}

std::vector<int64_t> ImageDataset::class_counts() const {
    if (!has_labels) throw DataError("dataset: no labels");
    std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
    for (const uint8_t l : labels) counts[l]++;
    return counts;
}

ImageDataset ImageDataset::subset(const std::vector<int64_t>& indices) const {
    ImageDataset out;
    out.n = static_cast<int64_t>(indices.size());
    out.c = c;
    out.h = h;
    out.w = w;
    out.num_classes = num_classes;
    out.has_labels = has_labels;
    out.pixels.resize(static_cast<size_t>(out.n * image_bytes()));
    if (has_labels) out.labels.resize(static_cast<size_t>(out.n));
    for (size_t k = 0; k < indices.size(); ++k) {
        const int64_t i = indices[k];
        if (i < 0 || i >= n) throw DataError("dataset: subset index out of range");
        std::memcpy(out.pixels.data() + static_cast<int64_t>(k) * image_bytes(),
                    pixels.data() + i * image_bytes(),
                    static_cast<size_t>(image_bytes()));
        if (has_labels) out.labels[k] = labels[static_cast<size_t>(i)];
    }
    return out;
}

void ImageDataset::validate() const {
    if (n < 0 || c <= 0 || h <= 0 || w <= 0)
        throw DataError("dataset: non-positive dimensions");
    if (pixels.size() != static_cast<size_t>(n * image_bytes()))
        throw DataError("dataset: pixel buffer size mismatch");
    if (has_labels) {
        if (num_classes <= 0) throw DataError("dataset: labeled set needs classes");
        if (labels.size() != static_cast<size_t>(n))
            throw DataError("dataset: label buffer size mismatch");
        for (const uint8_t l : labels)
            if (l >= num_classes)
                throw DataError("dataset: label " + std::to_string(int(l)) +
                                " out of range for " + std::to_string(num_classes) +
                                " classes");
    }
}

namespace {

constexpr char kMagic[4] = {'O', 'C', 'T', 'B'};
constexpr uint16_t kVersion = 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

struct ByteReader {
    const uint8_t* p;
    size_t len, pos = 0;
    explicit ByteReader(const std::string& s)
        : p(reinterpret_cast<const uint8_t*>(s.data())), len(s.size()) {}
    void need(size_t k, const char* what) const {
        if (pos + k > len) throw DataError(std::string("octb: truncated ") + what);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = static_cast<uint16_t>(p[pos] | (p[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

}  // namespace

void save_octb(const ImageDataset& ds, const std::string& path) {
    ds.validate();
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_u16(out, ds.has_labels ? 1 : 0);
    put_u32(out, static_cast<uint32_t>(ds.n));
    put_u16(out, static_cast<uint16_t>(ds.c));
    put_u16(out, static_cast<uint16_t>(ds.h));
    put_u16(out, static_cast<uint16_t>(ds.w));
    put_u16(out, static_cast<uint16_t>(ds.num_classes));
    out.append(6, '\0');  // reserved
    out.append(reinterpret_cast<const char*>(ds.pixels.data()), ds.pixels.size());
    if (ds.has_labels)
        out.append(reinterpret_cast<const char*>(ds.labels.data()), ds.labels.size());
    const uint32_t crc = crc32(reinterpret_cast<const uint8_t*>(out.data()), out.size());
    put_u32(out, crc);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("octb: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("octb: short write to '" + path + "'");
}

ImageDataset load_octb(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("octb: cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    ByteReader r(buf);
    r.need(4, "magic");
    if (std::memcmp(r.p, kMagic, 4) != 0) throw DataError("octb: bad magic");
    r.pos = 4;
    const uint16_t version = r.u16("version");
    if (version != kVersion)
        throw DataError("octb: unsupported version " + std::to_string(version));
    const uint16_t flags = r.u16("flags");
    ImageDataset ds;
    ds.has_labels = (flags & 1) != 0;
    ds.n = r.u32("count");
    ds.c = r.u16("channels");
    ds.h = r.u16("height");
    ds.w = r.u16("width");
    ds.num_classes = r.u16("classes");
    r.need(6, "reserved");
    r.pos += 6;
    const size_t pixel_bytes = static_cast<size_t>(ds.n * ds.image_bytes());
    const size_t label_bytes = ds.has_labels ? static_cast<size_t>(ds.n) : 0;
    r.need(pixel_bytes + label_bytes + 4, "payload");
    const uint8_t* payload = r.p + r.pos;
    ds.pixels.assign(payload, payload + pixel_bytes);
    if (ds.has_labels)
        ds.labels.assign(payload + pixel_bytes, payload + pixel_bytes + label_bytes);
    r.pos += pixel_bytes + label_bytes;
    const uint32_t stored = r.u32("crc");
    const uint32_t actual = crc32(r.p, r.pos - 4);  // everything before the footer
    if (stored != actual) throw DataError("octb: crc mismatch, file is corrupt");
    if (r.pos != r.len) throw DataError("octb: trailing bytes after footer");
    ds.validate();
    return ds;
}

ImageDataset import_csv(const std::string& path, int64_t c, int64_t h, int64_t w,
                        int64_t num_classes, bool has_labels) {
    std::ifstream f(path);
    if (!f) throw DataError("csv: cannot open '" + path + "'");
    ImageDataset ds;
    ds.c = c;
    ds.h = h;
    ds.w = w;
    ds.num_classes = num_classes;
    ds.has_labels = has_labels;
    const int64_t want = c * h * w + (has_labels ? 1 : 0);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<long> vals;
        vals.reserve(static_cast<size_t>(want));
        while (std::getline(row, cell, ',')) {
            try {
                vals.push_back(std::stol(cell));
            } catch (const std::exception&) {
                throw DataError("csv: line " + std::to_string(lineno) +
                                ": '" + cell + "' is not an integer");
            }
        }
        if (static_cast<int64_t>(vals.size()) != want)
            throw DataError("csv: line " + std::to_string(lineno) + ": expected " +
                            std::to_string(want) + " fields, got " +
                            std::to_string(vals.size()));
        size_t k = 0;
        if (has_labels) {
            const long l = vals[k++];
            if (l < 0 || l >= num_classes)
                throw DataError("csv: line " + std::to_string(lineno) + ": label " +
                                std::to_string(l) + " out of range");
            ds.labels.push_back(static_cast<uint8_t>(l));
        }
        for (; k < vals.size(); ++k) {
            const long v = vals[k];
            if (v < 0 || v > 255)
                throw DataError("csv: line " + std::to_string(lineno) +
                                ": pixel value " + std::to_string(v) + " outside 0..255");
            ds.pixels.push_back(static_cast<uint8_t>(v));
        }
        ds.n++;
    }
    ds.validate();
    return ds;
}

std::vector<int64_t> stratified_subsample_indices(const std::vector<uint8_t>& labels,
                                                  int64_t num_classes, double fraction,
                                                  uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw ConfigError("subsample: fraction must be in (0,1], got " +
                          std::to_string(fraction));
    const int64_t n = static_cast<int64_t>(labels.size());
    std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(num_classes));
    for (int64_t i = 0; i < n; ++i) {
        if (labels[static_cast<size_t>(i)] >= num_classes)
            throw DataError("subsample: label out of range");
        by_class[labels[static_cast<size_t>(i)]].push_back(i);
    }
    const int64_t target = std::llround(fraction * static_cast<double>(n));

    // Floor quotas first, then hand the shortfall to the largest remainders
    // (ties broken by class index) so the totals match exactly.
    std::vector<int64_t> quota(static_cast<size_t>(num_classes));
    std::vector<std::pair<double, int64_t>> remainders;
    int64_t assigned = 0;
    for (int64_t k = 0; k < num_classes; ++k) {
        const double exact =
            fraction * static_cast<double>(by_class[static_cast<size_t>(k)].size());
        quota[static_cast<size_t>(k)] = static_cast<int64_t>(std::floor(exact));
        assigned += quota[static_cast<size_t>(k)];
        remainders.emplace_back(exact - std::floor(exact), k);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int64_t d = 0; d < target - assigned; ++d)
        quota[static_cast<size_t>(remainders[static_cast<size_t>(d)].second)]++;

    std::vector<int64_t> picked;
    picked.reserve(static_cast<size_t>(target));
    for (int64_t k = 0; k < num_classes; ++k) {
        auto& members = by_class[static_cast<size_t>(k)];
        Rng class_rng(Rng::derive(seed, 0x517A7Full + static_cast<uint64_t>(k)));
        class_rng.shuffle(members.begin(), members.end());
        for (int64_t j = 0; j < quota[static_cast<size_t>(k)]; ++j)
            picked.push_back(members[static_cast<size_t>(j)]);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

ImageDataset stratified_subsample(const ImageDataset& ds, double fraction,
                                  uint64_t seed) {
    if (!ds.has_labels) throw DataError("subsample: dataset has no labels");
    return ds.subset(stratified_subsample_indices(ds.labels, ds.num_classes, fraction, seed));
}

ImageDataset synth_generate(const SyntheticSpec& spec, uint64_t seed) {
    if (spec.classes < 1 || spec.classes > 4)
        throw ConfigError("synth: supports 1..4 classes");
    if (spec.per_class <= 0 || spec.image_size <= 0)
        throw ConfigError("synth: non-positive size");
    ImageDataset ds;
    ds.c = 1;
    ds.h = spec.image_size;
    ds.w = spec.image_size;
    ds.num_classes = spec.classes;
    ds.has_labels = true;
    ds.n = spec.per_class * spec.classes;
    ds.pixels.reserve(static_cast<size_t>(ds.n * ds.image_bytes()));
    ds.labels.reserve(static_cast<size_t>(ds.n));
    Rng rng(Rng::derive(seed, 0x5E17Full));
    const int64_t s = spec.image_size;
    const int64_t band = std::max<int64_t>(1, s / 7);
    const double radius = static_cast<double>(s) / 4.0;
    const double cy = static_cast<double>(s - 1) / 2.0;
    for (int64_t cls = 0; cls < spec.classes; ++cls) {
        for (int64_t i = 0; i < spec.per_class; ++i) {
            for (int64_t y = 0; y < s; ++y) {
                for (int64_t x = 0; x < s; ++x) {
                    double v = 0.5;
                    switch (cls) {
                        case 0: v = (y / band) % 2 ? 0.2 : 0.8; break;
                        case 1: v = (x / band) % 2 ? 0.2 : 0.8; break;
                        case 2: {
                            const double dy = static_cast<double>(y) - cy;
                            const double dx = static_cast<double>(x) - cy;
                            v = dy * dy + dx * dx <= radius * radius ? 0.8 : 0.2;
                            break;
                        }
                        case 3: v = 0.5; break;
                    }
                    v = std::clamp(v + rng.normal(0.0, spec.noise), 0.0, 1.0);
                    ds.pixels.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
                }
            }
            ds.labels.push_back(static_cast<uint8_t>(cls));
        }
    }
    return ds;
}

}  // namespace vitssp
