#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nmpose {

// Every file the library reads goes through audit_read(), so an integration
// harness can observe exactly which paths a pipeline stage touched.
using ReadAuditHook = std::function<void(const std::filesystem::path&)>;
void set_read_audit_hook(ReadAuditHook hook);
void audit_read(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Little-endian binary streams; failures throw Error(kIo).
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);
  void bytes(const void* data, std::size_t n);
  void u32(std::uint32_t v);
  void f32s(std::span<const float> values);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);
  void bytes(void* data, std::size_t n);
  std::uint32_t u32();
  std::vector<float> f32s(std::size_t n);

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace nmpose
