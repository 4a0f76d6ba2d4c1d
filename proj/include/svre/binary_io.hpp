#ifndef SVRE_BINARY_IO_HPP
#define SVRE_BINARY_IO_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace svre {

std::uint32_t crc32(const void* data, std::size_t size);

/// Little-endian record builder for the library's binary containers.
///
/// Every container ends with the CRC32 of all preceding bytes.
class BinaryWriter {
 public:
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64_array(const double* data, std::size_t count);
  void bytes(std::string_view raw);
  /// u32 length prefix followed by the raw bytes.
  void string(std::string_view s);

  /// Appends the CRC32 trailer and writes the whole buffer.
  void write_file(const std::filesystem::path& path) const;

  const std::string& buffer() const { return buffer_; }

 private:
  std::string buffer_;
};

/// Bounds-checked reader over a container read fully into memory.
class BinaryReader {
 public:
  /// Reads the file and checks `magic`. The CRC32 trailer is verified by verify_checksum().
  BinaryReader(const std::filesystem::path& path, std::string_view magic);

  /// Throws ChecksumError if the trailer does not match (truncation included).
  void verify_checksum() const;

  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64_array(double* out, std::size_t count);
  std::string string();

  /// Throws FormatError unless every byte before the trailer was consumed.
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::string path_;
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace svre

#endif  // SVRE_BINARY_IO_HPP
