#pragma once

// Binary tensor container used for checkpoints and resumable train state.
//
//   offset  size  field
//   0       8     magic "VSTNARCH"
//   8       4     u32 format version (1)
//   12      4     u32 payload dtype: 1 = f32, 2 = f64
//   16      8     u64 header length H
//   24      H     UTF-8 JSON header
//   24+H    8     u64 tensor count
//   ...           per tensor: u32 name length, name bytes, u32 rank,
//                 rank x u32 dims, element payload (row-major)
//   end-8   8     u64 FNV-1a 64 over all preceding bytes
//
// All integers and floats are little-endian.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vstain/nn.hpp"

namespace vstain::archive {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class DType : std::uint32_t { f32 = 1, f64 = 2 };

/// Corrupt, truncated or mismatched container.
class IntegrityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    nn::Tensor value;
};

struct Archive {
    nlohmann::json header = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    const nn::Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
};

std::string encode(const Archive& a, DType dtype);
Archive decode(const std::string& bytes);

/// Writes via a temporary file and rename.
void write_file(const std::filesystem::path& path, const Archive& a, DType dtype);
Archive read_file(const std::filesystem::path& path);

}  // namespace vstain::archive
