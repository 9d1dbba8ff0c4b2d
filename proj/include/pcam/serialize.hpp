#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "pcam/tensor.hpp"

namespace pcam {

// Byte-level primitives, always little-endian regardless of host order.
void write_u64_le(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64_le(std::istream& in, const char* what);
void write_f64_le(std::ostream& out, double v);
double read_f64_le(std::istream& in, const char* what);

// Tensor container: magic "PCAMT1", rank and extents as unsigned 64-bit,
// then the elements as little-endian 64-bit reals in row-major order.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// Headerless buffers for sample volumes.
void write_raw_f64(const std::filesystem::path& path,
                   const std::vector<double>& values);
std::vector<double> read_raw_f64(const std::filesystem::path& path,
                                 std::size_t expected_count);
void write_raw_u8(const std::filesystem::path& path,
                  const std::vector<std::uint8_t>& values);
std::vector<std::uint8_t> read_raw_u8(const std::filesystem::path& path,
                                      std::size_t expected_count);

}  // namespace pcam
