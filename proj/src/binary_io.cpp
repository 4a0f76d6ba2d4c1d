#include "svre/binary_io.hpp"

#include "svre/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace svre {

std::uint32_t crc32(const void* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

}  // namespace

void BinaryWriter::u16(std::uint16_t v) { put(buffer_, v); }
void BinaryWriter::u32(std::uint32_t v) { put(buffer_, v); }
void BinaryWriter::u64(std::uint64_t v) { put(buffer_, v); }
void BinaryWriter::f64(double v) { put(buffer_, v); }

void BinaryWriter::f64_array(const double* data, std::size_t count) {
  buffer_.append(reinterpret_cast<const char*>(data), count * sizeof(double));
}

void BinaryWriter::bytes(std::string_view raw) { buffer_.append(raw); }

void BinaryWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buffer_.append(s);
}

void BinaryWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  std::string trailer;
  put(trailer, crc32(buffer_.data(), buffer_.size()));
  out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

BinaryReader::BinaryReader(const std::filesystem::path& path, std::string_view magic) : path_(path.string()) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path_ + "'");
  data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (data_.size() < magic.size() || std::memcmp(data_.data(), magic.data(), magic.size()) != 0) {
    throw FormatError("'" + path_ + "' is not a " + std::string(magic.substr(0, magic.find('\0'))) + " container");
  }
  pos_ = magic.size();
}

void BinaryReader::verify_checksum() const {
  if (data_.size() < pos_ + sizeof(std::uint32_t)) throw ChecksumError("'" + path_ + "' is truncated");
  const std::size_t body = data_.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, data_.data() + body, sizeof stored);
  if (stored != crc32(data_.data(), body)) throw ChecksumError("checksum mismatch in '" + path_ + "'");
}

void BinaryReader::need(std::size_t n) const {
  if (pos_ + n + sizeof(std::uint32_t) > data_.size()) throw FormatError("unexpected end of '" + path_ + "'");
}

namespace {

template <typename T>
T take(const std::vector<char>& data, std::size_t& pos) {
  T v;
  std::memcpy(&v, data.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::uint16_t BinaryReader::u16() {
  need(2);
  return take<std::uint16_t>(data_, pos_);
}

std::uint32_t BinaryReader::u32() {
  need(4);
  return take<std::uint32_t>(data_, pos_);
}

std::uint64_t BinaryReader::u64() {
  need(8);
  return take<std::uint64_t>(data_, pos_);
}

double BinaryReader::f64() {
  need(8);
  return take<double>(data_, pos_);
}

void BinaryReader::f64_array(double* out, std::size_t count) {
  if (count > data_.size() / sizeof(double)) throw FormatError("array length exceeds '" + path_ + "'");
  need(count * sizeof(double));
  std::memcpy(out, data_.data() + pos_, count * sizeof(double));
  pos_ += count * sizeof(double);
}

std::string BinaryReader::string() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

void BinaryReader::expect_end() const {
  if (pos_ + sizeof(std::uint32_t) != data_.size()) throw FormatError("trailing bytes in '" + path_ + "'");
}

}  // namespace svre
