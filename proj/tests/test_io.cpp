// Apache License, Version 2.0, refer to LICENSE.txt

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "effectfuse/io.hpp"

using namespace effectfuse;

namespace {

std::filesystem::path temp_csv(const std::string& text) {
  static int counter = 0;
  const auto path = std::filesystem::temp_directory_path() /
                    ("effectfuse_io_" + std::to_string(++counter) + ".csv");
  write_text_file(path, text);
  return path;
}

}  // namespace

TEST_CASE("csv parser handles quoting, comments and blank lines") {
  const auto path = temp_csv(
      "# a comment line\n"
      "y,label,note\n"
      "\n"
      "1.5,\"a,b\",\"say \"\"hi\"\"\"\n"
      "2.5,plain,\"multi\nline\"\n");
  const CsvTable table = read_csv(path.string());
  REQUIRE(table.header == std::vector<std::string>{"y", "label", "note"});
  REQUIRE(table.rows.size() == 2);
  REQUIRE(table.rows[0] == std::vector<std::string>{"1.5", "a,b", "say \"hi\""});
  REQUIRE(table.rows[1] == std::vector<std::string>{"2.5", "plain", "multi\nline"});
}

TEST_CASE("csv parser strips carriage returns and final missing newline") {
  const auto path = temp_csv("a,b\r\n1,2\r\n3,4");
  const CsvTable table = read_csv(path.string());
  REQUIRE(table.rows.size() == 2);
  REQUIRE(table.rows[1] == std::vector<std::string>{"3", "4"});
}

TEST_CASE("csv parser reports ragged rows with file line numbers") {
  const auto path = temp_csv("a,b\n1,2\n3\n");
  REQUIRE_THROWS_WITH(read_csv(path.string()),
                      Catch::Matchers::ContainsSubstring("row 3"));
}

TEST_CASE("csv parser rejects an unterminated quote") {
  const auto path = temp_csv("a,b\n1,\"oops\n");
  REQUIRE_THROWS_AS(read_csv(path.string()), DataError);
}

TEST_CASE("quoting round trip") {
  REQUIRE(csv_field("plain") == "plain");
  REQUIRE(csv_field("a,b") == "\"a,b\"");
  REQUIRE(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
  REQUIRE(csv_field("multi\nline") == "\"multi\nline\"");
  const auto path = temp_csv("h1,h2\n" + csv_row({"a,b", "say \"hi\""}));
  const CsvTable table = read_csv(path.string());
  REQUIRE(table.rows[0] == std::vector<std::string>{"a,b", "say \"hi\""});
}

TEST_CASE("numeric parsing is strict about trailing junk") {
  REQUIRE(parse_double("1.5e3") == 1500.0);
  REQUIRE(parse_double("-0.25") == -0.25);
  REQUIRE_FALSE(parse_double("1.5x"));
  REQUIRE_FALSE(parse_double(""));
  REQUIRE(parse_integer("42") == 42);
  REQUIRE_FALSE(parse_integer("4.2"));
  REQUIRE(is_missing(""));
  REQUIRE(is_missing("NA"));
  REQUIRE(is_missing("NaN"));
  REQUIRE(!is_missing("0"));
}

TEST_CASE("dataset loading keeps complete cases and counts the rest") {
  const auto path = temp_csv(
      "y,x,z\n"
      "1.0,a,0.5\n"
      "NA,b,0.5\n"
      "2.0,,0.5\n"
      "3.0,b,NA\n"
      "4.0,b,1.5\n");
  DataRequest request;
  request.response = "y";
  request.categorical.push_back({"x", std::nullopt});
  request.continuous.push_back("z");
  const LoadedData loaded = dataset_from_csv(read_csv(path.string()), request);
  REQUIRE(loaded.dropped_records == 3);
  REQUIRE(loaded.data.n() == 2);
  REQUIRE(loaded.data.response[0] == 1.0);
  REQUIRE(loaded.data.continuous[0].values[1] == 1.5);
}

TEST_CASE("level order is numeric when labels are integers") {
  const auto path = temp_csv("y,x\n1,10\n2,9\n3,10\n4,1\n");
  DataRequest request;
  request.response = "y";
  request.categorical.push_back({"x", std::nullopt});
  const LoadedData loaded = dataset_from_csv(read_csv(path.string()), request);
  REQUIRE(loaded.data.categorical[0].levels ==
          std::vector<std::string>{"1", "9", "10"});
}

TEST_CASE("level order is lexicographic otherwise and baseline rotates to front") {
  const auto path = temp_csv("y,x\n1,c\n2,a\n3,b\n");
  DataRequest request;
  request.response = "y";
  request.categorical.push_back({"x", std::string("b")});
  const LoadedData loaded = dataset_from_csv(read_csv(path.string()), request);
  REQUIRE(loaded.data.categorical[0].levels ==
          std::vector<std::string>{"b", "a", "c"});
  REQUIRE(loaded.data.categorical[0].codes == std::vector<int>{2, 1, 0});
}

TEST_CASE("missing baseline level is an error") {
  const auto path = temp_csv("y,x\n1,a\n2,b\n");
  DataRequest request;
  request.response = "y";
  request.categorical.push_back({"x", std::string("z")});
  REQUIRE_THROWS_WITH(dataset_from_csv(read_csv(path.string()), request),
                      Catch::Matchers::ContainsSubstring("baseline"));
}

TEST_CASE("unknown column lists what the file has") {
  const auto path = temp_csv("y,x\n1,a\n");
  DataRequest request;
  request.response = "wrong";
  request.categorical.push_back({"x", std::nullopt});
  REQUIRE_THROWS_WITH(dataset_from_csv(read_csv(path.string()), request),
                      Catch::Matchers::ContainsSubstring("y, x"));
}

TEST_CASE("non-numeric response points at the offending row") {
  const auto path = temp_csv("y,x\n1.0,a\noops,b\n2.0,b\n");
  DataRequest request;
  request.response = "y";
  request.categorical.push_back({"x", std::nullopt});
  REQUIRE_THROWS_WITH(dataset_from_csv(read_csv(path.string()), request),
                      Catch::Matchers::ContainsSubstring("row 3"));
}

TEST_CASE("format_double is locale independent round-trippable text") {
  REQUIRE(format_double(0.5) == "0.5");
  REQUIRE(format_double(-1.25e-8) == "-1.25e-08");
  REQUIRE(format_double(3.0) == "3");
  const double v = 0.1234567890123456;
  REQUIRE(std::stod(format_double(v, 17)) == v);
}
