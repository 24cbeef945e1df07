#include <cstring>
#include <string>

#include <png.h>

#include "nmpose/error.hpp"
#include "nmpose/image.hpp"
#include "nmpose/io.hpp"

namespace nmpose {

double Mask::coverage() const {
  if (values.empty()) return 0.0;
  std::size_t on = 0;
  for (auto v : values) on += v ? 1 : 0;
  return static_cast<double>(on) / static_cast<double>(values.size());
}

namespace {

void write_png_raw(const std::filesystem::path& path, int w, int h, png_uint_32 format,
                   const std::uint8_t* data) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, data, 0, nullptr)) {
    throw Error(ErrorCode::kIo, "cannot write png " + path.string() + ": " + img.message);
  }
}

std::vector<std::uint8_t> read_png_raw(const std::filesystem::path& path, png_uint_32 format,
                                       int& w, int& h) {
  audit_read(path);
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kMissingFile, "missing " + path.string());
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw Error(ErrorCode::kIo, "cannot read png " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, data.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorCode::kIo, "cannot decode png " + path.string() + ": " + img.message);
  }
  w = static_cast<int>(img.width);
  h = static_cast<int>(img.height);
  return data;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_png_raw(path, image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

void write_png(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> gray(mask.values.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.values[i] ? 255 : 0;
  write_png_raw(path, mask.width, mask.height, PNG_FORMAT_GRAY, gray.data());
}

RgbImage read_png_rgb(const std::filesystem::path& path) {
  RgbImage image;
  image.pixels = read_png_raw(path, PNG_FORMAT_RGB, image.width, image.height);
  return image;
}

Mask read_png_mask(const std::filesystem::path& path) {
  Mask mask;
  mask.values = read_png_raw(path, PNG_FORMAT_GRAY, mask.width, mask.height);
  for (auto& v : mask.values) {
    if (v != 0 && v != 255) throw Error(ErrorCode::kIo, "mask " + path.string() + " is not binary {0,255}");
    v = v ? 1 : 0;
  }
  return mask;
}

}  // namespace nmpose
