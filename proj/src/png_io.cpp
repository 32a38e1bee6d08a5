#include "vstain/png_io.hpp"

#include <png.h>

#include <cstring>
#include <stdexcept>

namespace vstain {

namespace {

struct PngImage {
    png_image image;
    PngImage() {
        std::memset(&image, 0, sizeof(image));
        image.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&image); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

}  // namespace

Image8 read_png(const std::filesystem::path& path, bool gray) {
    PngImage png;
    if (!png_image_begin_read_from_file(&png.image, path.c_str()))
        throw std::runtime_error("read_png: " + path.string() + ": " + png.image.message);
    png.image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    Image8 img(static_cast<int>(png.image.width), static_cast<int>(png.image.height), gray ? 1 : 3);
    if (!png_image_finish_read(&png.image, nullptr, img.pixels.data(), 0, nullptr))
        throw std::runtime_error("read_png: " + path.string() + ": " + png.image.message);
    return img;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::invalid_argument("write_png: only gray or RGB images are supported");
    PngImage png;
    png.image.width = static_cast<png_uint_32>(img.width);
    png.image.height = static_cast<png_uint_32>(img.height);
    png.image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png.image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
        throw std::runtime_error("write_png: " + path.string() + ": " + png.image.message);
}

}  // namespace vstain
