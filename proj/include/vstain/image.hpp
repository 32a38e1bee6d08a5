#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace vstain {

class Rng;

enum class TensorRole { image, noise };

/// H x W x C real array, channel-interleaved. Image-role tensors live in
/// [-1, 1]; noise-role tensors are unbounded.
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels, TensorRole role = TensorRole::image,
                double fill = 0.0);

    static ImageTensor gaussian(int height, int width, int channels, Rng& rng);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    TensorRole role() const { return role_; }
    void set_role(TensorRole role) { role_ = role; }

    double& at(int y, int x, int c) { return values_[index(y, x, c)]; }
    double at(int y, int x, int c) const { return values_[index(y, x, c)]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    bool same_shape(const ImageTensor& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    bool finite() const;
    bool in_range() const;
    /// Throws if non-finite, or if an image-role tensor leaves [-1, 1].
    void validate() const;
    void clamp(double lo, double hi);

    bool operator==(const ImageTensor& other) const = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    TensorRole role_ = TensorRole::image;
    std::vector<double> values_;
};

/// 8-bit image, 1 (gray) or 3 (RGB) interleaved channels.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    Image8() = default;
    Image8(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    std::uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool operator==(const Image8&) const = default;
};

/// Binary mask with values in {0, 1}.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {}

    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    bool operator==(const Mask&) const = default;
};

/// 8-bit v -> v / 127.5 - 1.
ImageTensor to_tensor(const Image8& img);
/// Inverse of to_tensor with rounding and saturation.
Image8 to_image8(const ImageTensor& t);

Mask mask_from_gray(const Image8& gray);  // nonzero -> 1
Image8 mask_to_gray(const Mask& mask);     // 1 -> 255

Image8 crop(const Image8& img, int x0, int y0, int w, int h);
Mask crop(const Mask& mask, int x0, int y0, int w, int h);

/// Area-average downscale by an integer factor.
Image8 downscale_area(const Image8& img, int factor);
/// Area-average then majority (> 0.5) threshold.
Mask downscale_area(const Mask& mask, int factor);

double intersection_over_union(const Mask& a, const Mask& b);

}  // namespace vstain
