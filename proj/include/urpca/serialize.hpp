#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "urpca/tensor.hpp"

namespace urpca {

// Binary scalar helpers, explicitly little-endian regardless of host order.
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f64(std::ostream& os, double v);
uint32_t read_u32(std::istream& is);
uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes
std::string read_string(std::istream& is);

// Tensor container: magic "UTNS", version u32, rank u32, dims u64 list,
// little-endian f64 payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Name -> tensor block list: u64 count, then (string name, UTNS record) pairs.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void write_named_tensors(std::ostream& os, const NamedTensors& entries);
NamedTensors read_named_tensors(std::istream& is);

}  // namespace urpca
