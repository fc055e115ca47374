#pragma once

#include <utility>
#include <vector>

#include "vitssp/rng.hpp"
#include "vitssp/tensor.hpp"

namespace vitssp {

// Channel-major [c][h][w] pixel grid; values live in [0,1] until normalize.
struct Image {
    int64_t c = 0, h = 0, w = 0;
    std::vector<double> px;

    Image() = default;
    Image(int64_t c_, int64_t h_, int64_t w_)
        : c(c_), h(h_), w(w_), px(static_cast<size_t>(c_ * h_ * w_), 0.0) {}
    double& at(int64_t ch, int64_t y, int64_t x) {
        return px[static_cast<size_t>((ch * h + y) * w + x)];
    }
    double at(int64_t ch, int64_t y, int64_t x) const {
        return px[static_cast<size_t>((ch * h + y) * w + x)];
    }
};

// Stochastic pipeline, applied in declaration order: resize, rotate, flips,
// grayscale, brightness, contrast, clamp, normalize. Each enabled stage
// consumes its random draws in that fixed order, so a given spec always eats
// the same number of draws per image.
struct AugmentSpec {
    int64_t resize_to = 0;      // 0 keeps the input size
    double rotation_deg = 0.0;  // angle drawn uniformly from [-r, r]
    double hflip_prob = 0.0;
    double vflip_prob = 0.0;
    double brightness = 0.0;  // factor drawn from [1-b, 1+b]
    double contrast = 0.0;    // factor drawn from [1-c, 1+c]
    double grayscale_prob = 0.0;
    bool normalize = false;
    double norm_mean = 0.5;
    double norm_std = 0.5;

    static AugmentSpec pretrain();
    static AugmentSpec finetune();
    static AugmentSpec identity();
};

Image resize_bilinear(const Image& img, int64_t out_h, int64_t out_w);
Image rotate_bilinear(const Image& img, double degrees);  // zero padding
Image hflip(const Image& img);
Image vflip(const Image& img);
Image grayscale(const Image& img);

Image apply_augment(const Image& img, const AugmentSpec& spec, Rng& rng);

// Two independently augmented views of one image; view i uses the rng
// substream derive(seed, i) so the pair is reproducible from (seed, spec).
std::pair<Image, Image> dual_view(const Image& img, const AugmentSpec& spec,
                                  uint64_t seed);

Tensor to_tensor(const std::vector<Image>& batch, DType dt = default_dtype());

}  // namespace vitssp
