#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "eta/tensor.hpp"

namespace eta::tensor {

using NamedTensor = std::pair<std::string, Tensor>;

/// Binary tensor archive:
///   magic "ETAT", u32 version, u32 count, then per entry
///   u32 name length, UTF-8 name, u32 rank, u32 dims[rank],
///   float32 values (row-major).
/// All integers and floats are little-endian. Values are narrowed to 32 bits.
inline constexpr char kCheckpointMagic[4] = {'E', 'T', 'A', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace eta::tensor
