#include "pcam/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace pcam {

namespace {

constexpr char kTensorMagic[6] = {'P', 'C', 'A', 'M', 'T', '1'};

[[noreturn]] void fail_read(const char* what) {
  throw DataError(std::string("unexpected end of stream while reading ") +
                  what);
}

}  // namespace

void write_u64_le(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint64_t read_u64_le(std::istream& in, const char* what) {
  char b[8];
  if (!in.read(b, 8)) fail_read(what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i]))
         << (8 * i);
  return v;
}

void write_f64_le(std::ostream& out, double v) {
  write_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

double read_f64_le(std::istream& in, const char* what) {
  return std::bit_cast<double>(read_u64_le(in, what));
}

void write_tensor(std::ostream& out, const Tensor& t) {
  if (!t.defined()) throw ContractError("write_tensor: undefined tensor");
  out.write(kTensorMagic, sizeof(kTensorMagic));
  write_u64_le(out, t.rank());
  for (std::size_t a = 0; a < t.rank(); ++a) write_u64_le(out, t.extent(a));
  for (double v : t.values()) write_f64_le(out, v);
  if (!out) throw DataError("write_tensor: stream write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[6];
  if (!in.read(magic, sizeof(magic))) fail_read("tensor magic");
  if (std::memcmp(magic, kTensorMagic, sizeof(magic)) != 0)
    throw DataError("read_tensor: bad magic, not a tensor stream");
  const std::uint64_t rank = read_u64_le(in, "tensor rank");
  if (rank > 8) throw DataError("read_tensor: implausible rank");
  Shape shape(rank);
  for (std::uint64_t a = 0; a < rank; ++a) {
    shape[a] = read_u64_le(in, "tensor extent");
    if (shape[a] == 0) throw DataError("read_tensor: zero extent");
  }
  const std::size_t n = shape_numel(shape);
  if (n > (std::size_t{1} << 30))
    throw DataError("read_tensor: implausible element count");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i)
    values[i] = read_f64_le(in, "tensor data");
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_tensor: cannot open " + path.string());
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_tensor: cannot open " + path.string());
  return read_tensor(in);
}

void write_raw_f64(const std::filesystem::path& path,
                   const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_raw_f64: cannot open " + path.string());
  for (double v : values) write_f64_le(out, v);
  if (!out) throw DataError("write_raw_f64: write failed for " + path.string());
}

std::vector<double> read_raw_f64(const std::filesystem::path& path,
                                 std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_raw_f64: cannot open " + path.string());
  const std::string name = path.string();
  std::vector<double> values(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i)
    values[i] = read_f64_le(in, name.c_str());
  char extra;
  if (in.read(&extra, 1))
    throw DataError("read_raw_f64: trailing bytes in " + path.string());
  return values;
}

void write_raw_u8(const std::filesystem::path& path,
                  const std::vector<std::uint8_t>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_raw_u8: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size()));
  if (!out) throw DataError("write_raw_u8: write failed for " + path.string());
}

std::vector<std::uint8_t> read_raw_u8(const std::filesystem::path& path,
                                      std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("read_raw_u8: cannot open " + path.string());
  std::vector<std::uint8_t> values(expected_count);
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(expected_count)))
    throw DataError("read_raw_u8: short read from " + path.string());
  char extra;
  if (in.read(&extra, 1))
    throw DataError("read_raw_u8: trailing bytes in " + path.string());
  return values;
}

}  // namespace pcam
