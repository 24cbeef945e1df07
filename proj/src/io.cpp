#include "nmpose/io.hpp"

#include <bit>
#include <cstring>
#include <mutex>
#include <sstream>

#include "nmpose/error.hpp"

namespace nmpose {

namespace {

std::mutex& hook_mutex() {
  static std::mutex m;
  return m;
}

ReadAuditHook& hook() {
  static ReadAuditHook h;
  return h;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

}  // namespace

void set_read_audit_hook(ReadAuditHook h) {
  std::lock_guard lock(hook_mutex());
  hook() = std::move(h);
}

void audit_read(const std::filesystem::path& path) {
  std::lock_guard lock(hook_mutex());
  if (hook()) hook()(path);
}

std::string read_text_file(const std::filesystem::path& path) {
  audit_read(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void BinaryWriter::u32(std::uint32_t v) {
  v = to_little(v);
  bytes(&v, sizeof(v));
}

void BinaryWriter::f32s(std::span<const float> values) {
  for (float f : values) u32(std::bit_cast<std::uint32_t>(f));
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) throw Error(ErrorCode::kIo, "write failed for " + path_.string());
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : path_(path) {
  audit_read(path);
  in_.open(path, std::ios::binary);
  if (!in_) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
}

void BinaryReader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in_) throw Error(ErrorCode::kIo, "truncated file " + path_.string());
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v = 0;
  bytes(&v, sizeof(v));
  return to_little(v);
}

std::vector<float> BinaryReader::f32s(std::size_t n) {
  std::vector<float> out(n);
  for (auto& f : out) f = std::bit_cast<float>(u32());
  return out;
}

}  // namespace nmpose
