#include "puregen/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binary_io.hpp"

namespace puregen {

namespace detail {

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<char>& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace detail

std::vector<char> encode_checkpoint(const ParameterSet& params) {
  detail::ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, value] : params.entries()) {
    if (name.size() > 0xFFFF) throw ConfigError("parameter name too long: " + name);
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(value.rank()));
    for (int d : value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : value.data()) w.f32(v);
  }
  return std::move(w).take();
}

ParameterSet decode_checkpoint(const std::vector<char>& bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw DataError(context + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(context + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  ParameterSet params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint16_t len = r.u16();
    std::string name = r.bytes(len);
    const std::uint32_t rank = r.u32();
    Shape shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0) throw DataError(context + ": zero dimension in " + name);
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    r.need(numel * 4);
    std::vector<float> data(numel);
    for (float& v : data) v = r.f32();
    params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw DataError(context + ": trailing bytes");
  return params;
}

void save_checkpoint(const ParameterSet& params, const std::string& path) {
  detail::write_file(path, encode_checkpoint(params));
}

ParameterSet load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path), path);
}

void assign_parameters(Graph& graph, const ParameterSet& values) {
  ParameterSet& ps = graph.parameters();
  if (ps.size() != values.size()) {
    throw DataError("checkpoint has " + std::to_string(values.size()) + " tensors, model expects " +
                    std::to_string(ps.size()));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps.name(i) != values.name(i) || ps[i].shape() != values[i].shape()) {
      throw DataError("checkpoint tensor " + values.name(i) + shape_to_string(values[i].shape()) +
                      " does not match model tensor " + ps.name(i) + shape_to_string(ps[i].shape()));
    }
  }
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i] = values[i];
}

}  // namespace puregen
