#include "pcam/jsonio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace pcam {

std::string fmt_g6(double v) {
  if (!std::isfinite(v))
    throw NumericError("fmt_g6: non-finite value cannot be serialized");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

namespace {

void render(const Json& j, std::string& out) {
  switch (j.type()) {
    case Json::value_t::object: {
      // nlohmann objects already iterate in sorted key order.
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += Json(it.key()).dump();
        out += ':';
        render(it.value(), out);
      }
      out += '}';
      break;
    }
    case Json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& item : j) {
        if (!first) out += ',';
        first = false;
        render(item, out);
      }
      out += ']';
      break;
    }
    case Json::value_t::string:
      out += j.dump();
      break;
    case Json::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      break;
    case Json::value_t::number_integer:
      out += std::to_string(j.get<std::int64_t>());
      break;
    case Json::value_t::number_unsigned:
      out += std::to_string(j.get<std::uint64_t>());
      break;
    case Json::value_t::number_float:
      out += fmt_g6(j.get<double>());
      break;
    case Json::value_t::null:
      out += "null";
      break;
    default:
      throw ContractError("canonical_json: unsupported value type");
  }
}

}  // namespace

std::string canonical_json(const Json& j) {
  std::string out;
  render(j, out);
  return out;
}

Json parse_json(const std::string& text, const std::string& context) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw DataError("invalid JSON in " + context);
  return j;
}

Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_json(text, path.string());
}

void save_canonical_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string());
  out << canonical_json(j) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> columns)
    : out_(out), columns_(columns.size()) {
  if (columns.empty()) throw ContractError("CsvWriter: no columns");
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out_ << ',';
    out_ << columns[i];
  }
  out_ << '\n';
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_)
    throw ContractError("CsvWriter: row width " + std::to_string(cells.size()) +
                        " does not match header width " +
                        std::to_string(columns_));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

}  // namespace pcam
