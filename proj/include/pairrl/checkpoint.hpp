#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pairrl/tensor.hpp"

namespace pairrl {

// Binary layout, all integers unsigned 32-bit little-endian:
//   "PAIRRL01" | count | { name_len | name (UTF-8) | rank | dims[rank] | f32 payload }*
inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'I', 'R', 'R', 'L', '0', '1'};

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace pairrl
