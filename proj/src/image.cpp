#include "vstain/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "vstain/rng.hpp"

namespace vstain {

ImageTensor::ImageTensor(int height, int width, int channels, TensorRole role, double fill)
    : height_(height), width_(width), channels_(channels), role_(role) {
    if (height <= 0 || width <= 0 || channels <= 0)
        throw std::invalid_argument("ImageTensor: dimensions must be positive");
    values_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

ImageTensor ImageTensor::gaussian(int height, int width, int channels, Rng& rng) {
    ImageTensor t(height, width, channels, TensorRole::noise);
    for (auto& v : t.values_) v = rng.normal();
    return t;
}

bool ImageTensor::finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool ImageTensor::in_range() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return v >= -1.0 && v <= 1.0; });
}

void ImageTensor::validate() const {
    if (values_.size() != static_cast<std::size_t>(height_) * width_ * channels_)
        throw std::logic_error("ImageTensor: value count does not match shape");
    if (!finite()) throw std::domain_error("ImageTensor: non-finite value");
    if (role_ == TensorRole::image && !in_range())
        throw std::domain_error("ImageTensor: image value outside [-1, 1]");
}

void ImageTensor::clamp(double lo, double hi) {
    for (auto& v : values_) v = std::clamp(v, lo, hi);
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

ImageTensor to_tensor(const Image8& img) {
    ImageTensor t(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 127.5 - 1.0;
    return t;
}

Image8 to_image8(const ImageTensor& t) {
    Image8 img(t.width(), t.height(), t.channels());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = std::round((t[i] + 1.0) * 127.5);
        img.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return img;
}

Mask mask_from_gray(const Image8& gray) {
    if (gray.channels != 1) throw std::invalid_argument("mask_from_gray: expected 1 channel");
    Mask m(gray.width, gray.height);
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = gray.pixels[i] ? 1 : 0;
    return m;
}

Image8 mask_to_gray(const Mask& mask) {
    Image8 g(mask.width, mask.height, 1);
    for (std::size_t i = 0; i < mask.bits.size(); ++i) g.pixels[i] = mask.bits[i] ? 255 : 0;
    return g;
}

namespace {

void check_crop(int img_w, int img_h, int x0, int y0, int w, int h) {
    if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > img_w || y0 + h > img_h)
        throw std::out_of_range("crop: window (" + std::to_string(x0) + "," + std::to_string(y0) +
                                ") " + std::to_string(w) + "x" + std::to_string(h) +
                                " outside image");
}

}  // namespace

Image8 crop(const Image8& img, int x0, int y0, int w, int h) {
    check_crop(img.width, img.height, x0, y0, w, h);
    Image8 out(w, h, img.channels);
    for (int y = 0; y < h; ++y)
        std::copy_n(&img.pixels[(static_cast<std::size_t>(y0 + y) * img.width + x0) * img.channels],
                    static_cast<std::size_t>(w) * img.channels,
                    &out.pixels[static_cast<std::size_t>(y) * w * img.channels]);
    return out;
}

Mask crop(const Mask& mask, int x0, int y0, int w, int h) {
    check_crop(mask.width, mask.height, x0, y0, w, h);
    Mask out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = mask.at(y0 + y, x0 + x);
    return out;
}

Image8 downscale_area(const Image8& img, int factor) {
    if (factor < 1 || img.width % factor || img.height % factor)
        throw std::invalid_argument("downscale_area: size not divisible by factor");
    if (factor == 1) return img;
    const int w = img.width / factor, h = img.height / factor;
    Image8 out(w, h, img.channels);
    const double norm = 1.0 / (factor * factor);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c) {
                int sum = 0;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx)
                        sum += img.at(y * factor + dy, x * factor + dx, c);
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(sum * norm));
            }
    return out;
}

Mask downscale_area(const Mask& mask, int factor) {
    if (factor < 1 || mask.width % factor || mask.height % factor)
        throw std::invalid_argument("downscale_area: size not divisible by factor");
    if (factor == 1) return mask;
    const int w = mask.width / factor, h = mask.height / factor;
    Mask out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sum = 0;
            for (int dy = 0; dy < factor; ++dy)
                for (int dx = 0; dx < factor; ++dx) sum += mask.at(y * factor + dy, x * factor + dx);
            out.at(y, x) = 2 * sum > factor * factor ? 1 : 0;
        }
    return out;
}

double intersection_over_union(const Mask& a, const Mask& b) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument("intersection_over_union: size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.bits.size(); ++i) {
        inter += a.bits[i] & b.bits[i];
        uni += a.bits[i] | b.bits[i];
    }
    // Two empty masks agree perfectly.
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace vstain
