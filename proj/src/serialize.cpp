#include "urpca/serialize.hpp"

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

namespace urpca {

namespace {

constexpr uint32_t kTensorMagic = 0x534E5455;  // "UTNS" little-endian
constexpr uint32_t kTensorVersion = 1;

void put_bytes(std::ostream& os, uint64_t v, int n) {
  char buf[8];
  for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, n);
}

uint64_t get_bytes(std::istream& is, int n) {
  char buf[8];
  is.read(buf, n);
  if (!is) throw IoError("read: unexpected end of stream");
  uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, uint32_t v) {
  put_bytes(os, v, 4);
}
void write_u64(std::ostream& os, uint64_t v) {
  put_bytes(os, v, 8);
}
void write_f64(std::ostream& os, double v) {
  put_bytes(os, std::bit_cast<uint64_t>(v), 8);
}
uint32_t read_u32(std::istream& is) {
  return static_cast<uint32_t>(get_bytes(is, 4));
}
uint64_t read_u64(std::istream& is) {
  return get_bytes(is, 8);
}
double read_f64(std::istream& is) {
  return std::bit_cast<double>(get_bytes(is, 8));
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("read_string: unexpected end of stream");
  return s;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  write_u32(os, kTensorMagic);
  write_u32(os, kTensorVersion);
  write_u32(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) write_u64(os, static_cast<uint64_t>(d));
  for (double v : t.data()) write_f64(os, v);
}

Tensor read_tensor(std::istream& is) {
  if (read_u32(is) != kTensorMagic) throw IoError("read_tensor: bad magic, not a UTNS record");
  const uint32_t version = read_u32(is);
  if (version != kTensorVersion)
    throw IoError("read_tensor: unsupported version " + std::to_string(version));
  const uint32_t rank = read_u32(is);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int64_t>(read_u64(is));
  Tensor t = Tensor::zeros(shape);
  for (double& v : t.data()) v = read_f64(is);
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_tensor: cannot open " + path.string());
  write_tensor(os, t);
  if (!os) throw IoError("save_tensor: write failed on " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_tensor: cannot open " + path.string());
  return read_tensor(is);
}

void write_named_tensors(std::ostream& os, const NamedTensors& entries) {
  write_u64(os, entries.size());
  for (const auto& [name, t] : entries) {
    write_string(os, name);
    write_tensor(os, t);
  }
}

NamedTensors read_named_tensors(std::istream& is) {
  const uint64_t n = read_u64(is);
  NamedTensors entries;
  entries.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(is);
    entries.emplace_back(std::move(name), read_tensor(is));
  }
  return entries;
}

}  // namespace urpca
