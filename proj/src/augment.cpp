#include "vitssp/augment.hpp"

#include <algorithm>
#include <cmath>

namespace vitssp {

AugmentSpec AugmentSpec::pretrain() {
    AugmentSpec s;
    s.rotation_deg = 15.0;
    s.hflip_prob = 0.5;
    s.vflip_prob = 0.5;
    s.brightness = 0.2;
    s.contrast = 0.2;
    s.grayscale_prob = 0.2;
    s.normalize = true;
    return s;
}

AugmentSpec AugmentSpec::finetune() {
    AugmentSpec s;
    s.resize_to = 28;
    s.rotation_deg = 15.0;
    s.hflip_prob = 0.5;
    s.vflip_prob = 0.5;
    s.brightness = 0.2;
    s.contrast = 0.2;
    s.normalize = true;
    return s;
}

AugmentSpec AugmentSpec::identity() { return AugmentSpec{}; }

namespace {
double sample_bilinear(const Image& img, int64_t ch, double sy, double sx) {
    // Zero outside the grid.
    const int64_t y0 = static_cast<int64_t>(std::floor(sy));
    const int64_t x0 = static_cast<int64_t>(std::floor(sx));
    const double fy = sy - static_cast<double>(y0);
    const double fx = sx - static_cast<double>(x0);
    auto pix = [&](int64_t y, int64_t x) -> double {
        if (y < 0 || y >= img.h || x < 0 || x >= img.w) return 0.0;
        return img.at(ch, y, x);
    };
    return pix(y0, x0) * (1 - fy) * (1 - fx) + pix(y0, x0 + 1) * (1 - fy) * fx +
           pix(y0 + 1, x0) * fy * (1 - fx) + pix(y0 + 1, x0 + 1) * fy * fx;
}
}  // namespace

Image resize_bilinear(const Image& img, int64_t out_h, int64_t out_w) {
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize: non-positive target size");
    if (out_h == img.h && out_w == img.w) return img;
    Image out(img.c, out_h, out_w);
    const double sy = static_cast<double>(img.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.w) / static_cast<double>(out_w);
    for (int64_t ch = 0; ch < img.c; ++ch) {
        for (int64_t y = 0; y < out_h; ++y) {
            // Half-pixel centers, clamped into the source grid.
            double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
            src_y = std::clamp(src_y, 0.0, static_cast<double>(img.h - 1));
            for (int64_t x = 0; x < out_w; ++x) {
                double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
                src_x = std::clamp(src_x, 0.0, static_cast<double>(img.w - 1));
                out.at(ch, y, x) = sample_bilinear(img, ch, src_y, src_x);
            }
        }
    }
    return out;
}

Image rotate_bilinear(const Image& img, double degrees) {
    if (degrees == 0.0) return img;
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double co = std::cos(rad), si = std::sin(rad);
    const double cy = static_cast<double>(img.h - 1) / 2.0;
    const double cx = static_cast<double>(img.w - 1) / 2.0;
    Image out(img.c, img.h, img.w);
    for (int64_t ch = 0; ch < img.c; ++ch) {
        for (int64_t y = 0; y < img.h; ++y) {
            for (int64_t x = 0; x < img.w; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                const double src_y = -si * dx + co * dy + cy;
                const double src_x = co * dx + si * dy + cx;
                out.at(ch, y, x) = sample_bilinear(img, ch, src_y, src_x);
            }
        }
    }
    return out;
}

Image hflip(const Image& img) {
    Image out(img.c, img.h, img.w);
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x)
                out.at(ch, y, x) = img.at(ch, y, img.w - 1 - x);
    return out;
}

Image vflip(const Image& img) {
    Image out(img.c, img.h, img.w);
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x)
                out.at(ch, y, x) = img.at(ch, img.h - 1 - y, x);
    return out;
}

Image grayscale(const Image& img) {
    if (img.c == 1) return img;
    Image out(img.c, img.h, img.w);
    for (int64_t y = 0; y < img.h; ++y) {
        for (int64_t x = 0; x < img.w; ++x) {
            double acc = 0.0;
            for (int64_t ch = 0; ch < img.c; ++ch) acc += img.at(ch, y, x);
            acc /= static_cast<double>(img.c);
            for (int64_t ch = 0; ch < img.c; ++ch) out.at(ch, y, x) = acc;
        }
    }
    return out;
}

Image apply_augment(const Image& img, const AugmentSpec& spec, Rng& rng) {
    Image out = img;
    if (spec.resize_to > 0) out = resize_bilinear(out, spec.resize_to, spec.resize_to);
    if (spec.rotation_deg > 0.0) {
        const double angle = rng.uniform(-spec.rotation_deg, spec.rotation_deg);
        out = rotate_bilinear(out, angle);
    }
    if (spec.hflip_prob > 0.0 && rng.uniform() < spec.hflip_prob) out = hflip(out);
    if (spec.vflip_prob > 0.0 && rng.uniform() < spec.vflip_prob) out = vflip(out);
    if (spec.grayscale_prob > 0.0 && rng.uniform() < spec.grayscale_prob)
        out = grayscale(out);
    if (spec.brightness > 0.0) {
        const double f = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
        if (f != 1.0)
            for (auto& v : out.px) v *= f;
    }
    if (spec.contrast > 0.0) {
        const double f = rng.uniform(1.0 - spec.contrast, 1.0 + spec.contrast);
        if (f != 1.0) {
            double mean = 0.0;
            for (const double v : out.px) mean += v;
            mean /= static_cast<double>(out.px.size());
            for (auto& v : out.px) v = mean + (v - mean) * f;
        }
    }
    for (auto& v : out.px) v = std::clamp(v, 0.0, 1.0);
    if (spec.normalize)
        for (auto& v : out.px) v = (v - spec.norm_mean) / spec.norm_std;
    return out;
}

std::pair<Image, Image> dual_view(const Image& img, const AugmentSpec& spec,
                                  uint64_t seed) {
    Rng r1(Rng::derive(seed, 1));
    Rng r2(Rng::derive(seed, 2));
    return {apply_augment(img, spec, r1), apply_augment(img, spec, r2)};
}

Tensor to_tensor(const std::vector<Image>& batch, DType dt) {
    if (batch.empty()) throw ContractError("to_tensor: empty batch");
    const int64_t c = batch[0].c, h = batch[0].h, w = batch[0].w;
    Tensor t = Tensor::zeros({static_cast<int64_t>(batch.size()), c, h, w}, dt);
    auto fill = [&](auto& dst) {
        size_t off = 0;
        for (const auto& img : batch) {
            if (img.c != c || img.h != h || img.w != w)
                throw ShapeError("to_tensor: ragged batch");
            for (const double v : img.px)
                dst[off++] = static_cast<std::decay_t<decltype(dst[0])>>(v);
        }
    };
    if (dt == DType::F32)
        fill(t.raw<float>());
    else
        fill(t.raw<double>());
    return t;
}

}  // namespace vitssp
