#include "npath/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace npath {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  check(static_cast<bool>(out), "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(static_cast<bool>(out), "write failed: " + path.string());
}

void ByteWriter::magic(std::string_view four_cc) {
  for (char c : four_cc) bytes_.push_back(static_cast<std::uint8_t>(c));
}

void ByteWriter::u8(std::uint8_t v) { bytes_.push_back(v); }

void ByteWriter::u16(std::uint16_t v) {
  for (int i = 0; i < 2; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> values) {
  for (double v : values) f64(v);
}

void ByteWriter::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
  f64s(t.data());
}

void ByteWriter::save(const std::filesystem::path& path) const { write_file(path, bytes_); }

ByteReader::ByteReader(std::vector<std::uint8_t> bytes, std::string origin)
    : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

ByteReader ByteReader::open(const std::filesystem::path& path) { return ByteReader(read_file(path), path.string()); }

void ByteReader::need(std::size_t n) {
  check(bytes_.size() - pos_ >= n, origin_ + ": truncated file (needed " + std::to_string(n) + " bytes at offset " +
                                       std::to_string(pos_) + ")");
}

void ByteReader::expect_magic(std::string_view four_cc) {
  need(four_cc.size());
  check(std::memcmp(bytes_.data() + pos_, four_cc.data(), four_cc.size()) == 0,
        origin_ + ": bad magic bytes, expected \"" + std::string(four_cc) + "\"");
  pos_ += four_cc.size();
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint16_t ByteReader::u16() {
  need(2);
  std::uint16_t v = 0;
  for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::f64s(std::span<double> out) {
  need(out.size() * 8);
  for (double& v : out) v = f64();
}

Tensor ByteReader::tensor() {
  const std::uint32_t rank = u32();
  check(rank > 0 && rank <= 8, origin_ + ": implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = u32();
    check(d > 0, origin_ + ": zero tensor dimension");
    n *= d;
  }
  need(n * 8);
  std::vector<double> data(n);
  f64s(data);
  return Tensor(std::move(shape), std::move(data));
}

void ByteReader::expect_end() const {
  check(pos_ == bytes_.size(), origin_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes");
}

}  // namespace npath
