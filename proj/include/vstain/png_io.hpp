#pragma once

#include <filesystem>

#include "vstain/image.hpp"

namespace vstain {

/// Reads an 8-bit PNG as RGB, or as gray when `gray` is set. Throws
/// std::runtime_error naming the path on failure.
Image8 read_png(const std::filesystem::path& path, bool gray = false);

/// Writes 8-bit gray or RGB. Output bytes depend only on the pixels.
void write_png(const std::filesystem::path& path, const Image8& img);

}  // namespace vstain
