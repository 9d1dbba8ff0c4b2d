#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcam/errors.hpp"

namespace pcam {

using Json = nlohmann::json;

// Fixed float formatting used by every serialized number: 6 significant
// digits, shortest form ("%.6g").
std::string fmt_g6(double v);

// Deterministic rendering: object keys in sorted order, floats via fmt_g6,
// no whitespace. Non-finite numbers are rejected.
std::string canonical_json(const Json& j);

Json parse_json(const std::string& text, const std::string& context);
Json load_json(const std::filesystem::path& path);
void save_canonical_json(const std::filesystem::path& path, const Json& j);

// Minimal CSV emitter with a fixed column set; numbers go through fmt_g6.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> columns);

  void row(const std::vector<std::string>& cells);

  static std::string num(double v) { return fmt_g6(v); }

 private:
  std::ostream& out_;
  std::size_t columns_;
};

}  // namespace pcam
