#include "regavae/binary_io.hpp"

namespace regavae::io {

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw InputError("cannot open '" + path.string() + "' for writing");
}

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw InputError("write failed on '" + path_.string() + "'");
}

void BinaryWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::finish() {
  out_.flush();
  if (!out_) throw InputError("flush failed on '" + path_.string() + "'");
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw InputError("cannot open '" + path.string() + "'");
}

void BinaryReader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in_ || static_cast<std::size_t>(in_.gcount()) != n) {
    throw InputError("'" + path_.string() + "' is truncated");
  }
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}

std::int32_t BinaryReader::i32() {
  std::int32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::vector<double> BinaryReader::f64s(std::size_t n) {
  std::vector<double> v(n);
  bytes(v.data(), n * sizeof(double));
  return v;
}

std::string BinaryReader::str() { return fixed(u32()); }

std::string BinaryReader::fixed(std::size_t n) {
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

bool BinaryReader::at_end() {
  return in_.peek() == std::ifstream::traits_type::eof();
}

}  // namespace regavae::io
