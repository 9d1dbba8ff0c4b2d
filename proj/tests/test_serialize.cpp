#include <bit>
#include <cstdint>
#include <filesystem>
#include <sstream>

#include "common/checks.hpp"
#include "doctest.h"
#include "pcam/jsonio.hpp"
#include "pcam/serialize.hpp"

using namespace pcam;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "pcam_serialize_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE_BEGIN("serialize");

TEST_CASE("tensor stream layout is little-endian with a magic header") {
  Tensor t(Shape{2, 1}, std::vector<double>{1.0, -2.5});
  std::ostringstream out;
  write_tensor(out, t);
  const std::string bytes = out.str();
  REQUIRE(bytes.size() == 6 + 8 * 3 + 8 * 2);
  CHECK(bytes.substr(0, 6) == "PCAMT1");

  const auto u64_at = [&](std::size_t pos) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes[pos + i]))
           << (8 * i);
    return v;
  };
  CHECK(u64_at(6) == 2);
  CHECK(u64_at(14) == 2);
  CHECK(u64_at(22) == 1);
  CHECK(u64_at(30) == std::bit_cast<std::uint64_t>(1.0));
  CHECK(u64_at(38) == std::bit_cast<std::uint64_t>(-2.5));
}

TEST_CASE("tensor round trip is bit exact") {
  Rng rng(71);
  for (const Shape& shape :
       {Shape{1}, Shape{5}, Shape{2, 3}, Shape{2, 3, 4, 2}}) {
    Tensor t = checks::random_tensor(rng, shape, -1e6, 1e6, false);
    std::stringstream buf;
    write_tensor(buf, t);
    Tensor back = read_tensor(buf);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());
  }
}

TEST_CASE("tensor reader rejects malformed streams") {
  std::stringstream bad("PCAMX1junk");
  CHECK_THROWS_AS(read_tensor(bad), DataError);

  Tensor t(Shape{4}, std::vector<double>{1, 2, 3, 4});
  std::ostringstream out;
  write_tensor(out, t);
  const std::string full = out.str();
  std::stringstream truncated(full.substr(0, full.size() - 5));
  CHECK_THROWS_AS(read_tensor(truncated), DataError);
}

TEST_CASE("tensor file round trip") {
  const auto dir = temp_dir();
  Rng rng(72);
  Tensor t = checks::random_tensor(rng, Shape{3, 2, 2}, -10, 10, false);
  save_tensor(dir / "t.pcamt", t);
  Tensor back = load_tensor(dir / "t.pcamt");
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == t.values());
  CHECK_THROWS_AS(load_tensor(dir / "missing.pcamt"), DataError);
}

TEST_CASE("raw volume buffers round trip and reject size drift") {
  const auto dir = temp_dir();
  Rng rng(73);
  std::vector<double> image(24);
  for (double& v : image) v = rng.uniform(-3, 3);
  write_raw_f64(dir / "image.raw", image);
  CHECK(read_raw_f64(dir / "image.raw", 24) == image);
  CHECK_THROWS_AS(read_raw_f64(dir / "image.raw", 23), DataError);
  CHECK_THROWS_AS(read_raw_f64(dir / "image.raw", 25), DataError);

  std::vector<std::uint8_t> label(24);
  for (auto& v : label) v = static_cast<std::uint8_t>(rng.below(2));
  write_raw_u8(dir / "label.raw", label);
  CHECK(read_raw_u8(dir / "label.raw", 24) == label);
  CHECK_THROWS_AS(read_raw_u8(dir / "label.raw", 25), DataError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("jsonio");

TEST_CASE("canonical rendering sorts keys and fixes float format") {
  Json j = parse_json(R"({"b":1,"a":{"d":2.5,"c":[1,2.25,"x"]},"e":true,"f":null})",
                      "test");
  CHECK(canonical_json(j) ==
        R"({"a":{"c":[1,2.25,"x"],"d":2.5},"b":1,"e":true,"f":null})");

  CHECK(fmt_g6(0.123456789) == "0.123457");
  CHECK(fmt_g6(1234567.0) == "1.23457e+06");
  CHECK(fmt_g6(0.0000001) == "1e-07");
  CHECK(fmt_g6(2.0) == "2");
  CHECK(fmt_g6(-0.3645) == "-0.3645");

  Json f = 0.30000000000000004;
  CHECK(canonical_json(f) == "0.3");

  CHECK_THROWS_AS(fmt_g6(std::nan("")), NumericError);
}

TEST_CASE("canonical rendering is reparse stable") {
  Json j = parse_json(
      R"({"lr":0.01,"decay":0.95,"extents":[48,48,16],"name":"run \"a\"","k":1e-7})",
      "test");
  const std::string once = canonical_json(j);
  const std::string twice = canonical_json(parse_json(once, "reparse"));
  CHECK(once == twice);
}

TEST_CASE("json file round trip and parse failures") {
  const auto dir = temp_dir();
  Json j{{"seed", 42}, {"spacing", {0.3645, 0.3645, 0.7}}};
  save_canonical_json(dir / "config.json", j);
  Json back = load_json(dir / "config.json");
  CHECK(canonical_json(back) == canonical_json(j));
  CHECK_THROWS_AS(parse_json("{nope", "bad"), DataError);
  CHECK_THROWS_AS(load_json(dir / "missing.json"), DataError);
}

TEST_CASE("csv writer emits fixed columns") {
  std::ostringstream out;
  CsvWriter csv(out, {"volume", "dsc", "assd_mm"});
  csv.row({"0", CsvWriter::num(0.912345678), CsvWriter::num(1.5)});
  csv.row({"1", CsvWriter::num(1.0), ""});
  CHECK(out.str() == "volume,dsc,assd_mm\n0,0.912346,1.5\n1,1,\n");
  CHECK_THROWS_AS(csv.row({"only-one"}), ContractError);
}

TEST_SUITE_END();
