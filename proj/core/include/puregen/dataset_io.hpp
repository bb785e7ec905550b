#pragma once

#include <string>
#include <vector>

#include "puregen/dataset.hpp"

namespace puregen::io {

inline constexpr char kDatasetMagic[] = "PGTN";
inline constexpr std::uint32_t kDatasetVersion = 1;

// PGTN layout (little-endian): magic, version, N, C, H, W, class_count as
// u32, then N*C*H*W f32 values, then N label bytes.
std::vector<char> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<char>& bytes, const std::string& context = "dataset");

// CIFAR-10 binary batch: 3073-byte records, label byte then 3x32x32 pixels.
Dataset decode_cifar10(const std::vector<char>& bytes, const std::string& context = "cifar10");

void save_dataset(const Dataset& data, const std::string& path);

// PGTN when the magic matches, otherwise a CIFAR-10 batch when the size is a
// whole number of records. The dataset name is the file stem.
Dataset load_dataset(const std::string& path);

}  // namespace puregen::io
