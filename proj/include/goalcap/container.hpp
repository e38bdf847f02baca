// Self-describing binary tensor container used for checkpoints: fixed magic,
// format version, tensor count, then per-tensor (name, rank, 64-bit
// little-endian extents, row-major 32-bit little-endian floats). Round trips
// are bit-exact.
#pragma once

#include "goalcap/tensor.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace goalcap {

class ContainerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

inline constexpr std::uint32_t kContainerVersion = 1;

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes);

void save_container(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_container(const std::string& path);

}  // namespace goalcap
