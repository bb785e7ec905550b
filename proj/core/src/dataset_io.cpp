#include "puregen/dataset_io.hpp"

#include <filesystem>
#include <string_view>

#include "binary_io.hpp"

namespace puregen::io {

namespace {

constexpr std::size_t kHeaderBytes = 28;
constexpr std::size_t kCifarRecord = 3073;
constexpr int kCifarSide = 32;

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw ConfigError(std::string("dataset ") + what + " does not fit in u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

std::vector<char> encode_dataset(const Dataset& data) {
  data.validate();
  detail::ByteWriter w;
  w.bytes(std::string_view(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(checked_u32(data.size(), "size"));
  for (int d : data.image_shape) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(data.class_count));
  for (const Tensor& img : data.images) {
    for (float v : img.data()) w.f32(v);
  }
  for (std::uint8_t y : data.labels) w.u8(y);
  return std::move(w).take();
}

Dataset decode_dataset(const std::vector<char>& bytes, const std::string& context) {
  detail::ByteReader r(bytes, context);
  if (r.bytes(4) != std::string_view(kDatasetMagic, 4)) throw DataError(context + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw DataError(context + ": unsupported version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  const std::uint32_t c = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t wd = r.u32();
  const std::uint32_t classes = r.u32();
  if (c == 0 || h == 0 || wd == 0) throw DataError(context + ": zero image dimension");
  if (classes == 0 || classes > 256) throw DataError(context + ": class count must be in [1, 256]");
  const std::size_t numel = std::size_t{c} * h * wd;
  r.need(std::size_t{n} * numel * 4 + n);

  Dataset out;
  out.name = context;
  out.image_shape = {static_cast<int>(c), static_cast<int>(h), static_cast<int>(wd)};
  out.class_count = static_cast<int>(classes);
  out.images.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor img(out.image_shape);
    for (float& v : img.data()) v = r.f32();
    out.images.push_back(std::move(img));
  }
  out.labels.resize(n);
  for (auto& y : out.labels) y = r.u8();
  if (r.remaining() != 0) throw DataError(context + ": trailing bytes");
  out.validate();
  return out;
}

Dataset decode_cifar10(const std::vector<char>& bytes, const std::string& context) {
  if (bytes.empty()) throw DataError(context + ": truncated payload");
  if (bytes.size() % kCifarRecord != 0) throw DataError(context + ": truncated payload");
  const std::size_t n = bytes.size() / kCifarRecord;
  Dataset out;
  out.name = context;
  out.image_shape = {3, kCifarSide, kCifarSide};
  out.class_count = 10;
  out.images.reserve(n);
  out.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + i * kCifarRecord);
    out.labels.push_back(rec[0]);
    Tensor img(out.image_shape);
    auto d = img.data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = static_cast<float>(rec[1 + j]) / 255.0f;
    out.images.push_back(std::move(img));
  }
  out.validate();
  return out;
}

void save_dataset(const Dataset& data, const std::string& path) { detail::write_file(path, encode_dataset(data)); }

Dataset load_dataset(const std::string& path) {
  const std::vector<char> bytes = detail::read_file(path);
  if (bytes.size() < 4) throw DataError(path + ": truncated payload");
  Dataset out;
  if (std::string_view(bytes.data(), 4) == std::string_view(kDatasetMagic, 4)) {
    out = decode_dataset(bytes, path);
  } else if (bytes.size() % kCifarRecord == 0) {
    out = decode_cifar10(bytes, path);
  } else {
    throw DataError(path + ": bad magic");
  }
  out.name = std::filesystem::path(path).stem().string();
  return out;
}

}  // namespace puregen::io
