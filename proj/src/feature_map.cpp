#include "nmpose/feature_map.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "nmpose/error.hpp"
#include "nmpose/io.hpp"

namespace nmpose {

namespace {

constexpr std::array<char, 4> kMagic = {'N', 'M', 'F', 'M'};

}  // namespace

void write_blob(const std::filesystem::path& path, const Blob& blob) {
  const std::size_t n = static_cast<std::size_t>(blob.channels) * blob.height * blob.width;
  if (blob.values.size() != n) throw Error(ErrorCode::kShape, "blob size does not match its header");
  BinaryWriter out(path);
  out.bytes(kMagic.data(), kMagic.size());
  out.u32(static_cast<std::uint32_t>(blob.channels));
  out.u32(static_cast<std::uint32_t>(blob.height));
  out.u32(static_cast<std::uint32_t>(blob.width));
  out.f32s(blob.values);
  out.close();
}

Blob read_blob(const std::filesystem::path& path) {
  BinaryReader in(path);
  std::array<char, 4> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw Error(ErrorCode::kIo, "not an NMFM blob: " + path.string());
  Blob blob;
  blob.channels = static_cast<int>(in.u32());
  blob.height = static_cast<int>(in.u32());
  blob.width = static_cast<int>(in.u32());
  const std::size_t n = static_cast<std::size_t>(blob.channels) * blob.height * blob.width;
  blob.values = in.f32s(n);
  return blob;
}

Blob to_blob(const FeatureMap& map) {
  Blob blob{map.channels, map.height, map.width, {}};
  blob.values.resize(map.data.size());
  const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double* f = map.pixel(x, y);
      for (int c = 0; c < map.channels; ++c) {
        blob.values[c * plane + static_cast<std::size_t>(y) * map.width + x] = static_cast<float>(f[c]);
      }
    }
  }
  return blob;
}

FeatureMap from_blob(const Blob& blob) {
  FeatureMap map(blob.channels, blob.height, blob.width);
  const std::size_t plane = static_cast<std::size_t>(blob.height) * blob.width;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      double* f = map.pixel(x, y);
      for (int c = 0; c < map.channels; ++c) {
        f[c] = blob.values[c * plane + static_cast<std::size_t>(y) * map.width + x];
      }
    }
  }
  return map;
}

}  // namespace nmpose
