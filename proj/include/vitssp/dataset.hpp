#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitssp/augment.hpp"
#include "vitssp/error.hpp"
#include "vitssp/rng.hpp"

namespace vitssp {

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);

// Images live as raw u8 so container round trips are lossless; `image()`
// rescales to [0,1] doubles on the way out.
struct ImageDataset {
    int64_t n = 0, c = 0, h = 0, w = 0;
    int64_t num_classes = 0;
    bool has_labels = false;
    std::vector<uint8_t> pixels;  // [n, c, h, w]
    std::vector<uint8_t> labels;  // [n] when has_labels

    int64_t image_bytes() const { return c * h * w; }
    Image image(int64_t i) const;
    int label(int64_t i) const;
    std::vector<int64_t> class_counts() const;
    ImageDataset subset(const std::vector<int64_t>& indices) const;
    void validate() const;
};

// Single-file container: fixed little-endian header, raw u8 pixels, raw u8
// labels, crc32 of the payload bytes as the footer.
void save_octb(const ImageDataset& ds, const std::string& path);
ImageDataset load_octb(const std::string& path);

// label,px0,...,pxN rows (or just pixels when has_labels is false).
ImageDataset import_csv(const std::string& path, int64_t c, int64_t h, int64_t w,
                        int64_t num_classes, bool has_labels);

// Largest-remainder per-class quotas for llround(fraction*n) rows total, then
// a seeded shuffle picks the members of each class. Returned indices ascend.
std::vector<int64_t> stratified_subsample_indices(const std::vector<uint8_t>& labels,
                                                  int64_t num_classes, double fraction,
                                                  uint64_t seed);
ImageDataset stratified_subsample(const ImageDataset& ds, double fraction,
                                  uint64_t seed);

// Four geometric families on a noisy background, labels block ordered:
// horizontal bands, vertical bands, centered disk, flat field.
struct SyntheticSpec {
    int64_t per_class = 64;
    int64_t image_size = 28;
    int64_t classes = 4;
    double noise = 0.1;
};

ImageDataset synth_generate(const SyntheticSpec& spec, uint64_t seed);

}  // namespace vitssp
