#pragma once

#include <string>
#include <vector>

#include "puregen/graph.hpp"

namespace puregen {

inline constexpr char kCheckpointMagic[] = "PGCK";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// PGCK layout (little-endian): magic "PGCK", version u32, tensor count u32,
// then per tensor: name length u16, UTF-8 name, rank u32, dims u32 each,
// f32 payload.
std::vector<char> encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(const std::vector<char>& bytes, const std::string& context = "checkpoint");

void save_checkpoint(const ParameterSet& params, const std::string& path);
ParameterSet load_checkpoint(const std::string& path);

// Copies checkpoint values into `graph`. Names and shapes must match exactly.
void assign_parameters(Graph& graph, const ParameterSet& values);

}  // namespace puregen
