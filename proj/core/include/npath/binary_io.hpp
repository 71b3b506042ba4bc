#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "npath/tensor.hpp"

namespace npath {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Little-endian byte sink shared by every on-disk format in the project.
class ByteWriter {
 public:
  void magic(std::string_view four_cc);
  void u8(std::uint8_t v);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void tensor(const Tensor& t);  // rank, dims (u32), values

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Little-endian byte source; every read past the end throws ValidationError("truncated").
class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string origin);
  static ByteReader open(const std::filesystem::path& path);

  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);
  Tensor tensor();

  bool at_end() const { return pos_ == bytes_.size(); }
  void expect_end() const;
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n);
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace npath
