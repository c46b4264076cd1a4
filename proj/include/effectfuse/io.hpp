// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "effectfuse/common.hpp"
#include "effectfuse/data_model.hpp"

namespace effectfuse {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

// RFC 4180 style: quoted fields may contain commas, doubled quotes and line
// breaks. Lines starting with '#' outside of a record are comments.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  auto end_field = [&] {
    if (!field.empty() && field.back() == '\r') field.pop_back();
    record.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool comment = record.size() == 1 && !record[0].empty() && record[0][0] == '#';
    const bool blank = record.size() == 1 && record[0].empty();
    if (!comment && !blank) records.push_back(record);
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\n') {
      end_record();
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (quoted) throw DataError("unterminated quote in CSV input");
  if (field_started || !record.empty()) end_record();
  return records;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  auto records = detail::parse_csv(buffer.str());
  if (records.empty()) throw DataError("'" + path + "' contains no records");
  CsvTable table;
  table.header = records.front();
  table.rows.assign(records.begin() + 1, records.end());
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    if (table.rows[r].size() != table.header.size())
      throw DataError("'" + path + "' row " + std::to_string(r + 2) + " has " +
                      std::to_string(table.rows[r].size()) + " fields, expected " +
                      std::to_string(table.header.size()));
  return table;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

// Shortest-ish decimal form, deterministic across runs. precision 17
// round-trips doubles exactly; 12 is used for human-facing tables.
inline std::string format_double(double v, int precision = 12) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

inline bool is_missing(const std::string& field) {
  return field.empty() || field == "NA" || field == "NaN" || field == "nan";
}

inline std::optional<double> parse_double(const std::string& field) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(const std::string& field) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const long long v = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0') return std::nullopt;
  return v;
}

struct CovariateRequest {
  std::string name;
  std::optional<std::string> baseline;
};

struct DataRequest {
  std::string response;
  std::vector<CovariateRequest> categorical;
  std::vector<std::string> continuous;
};

struct LoadedData {
  Dataset data;
  long dropped_records = 0;
};

namespace detail {

inline std::size_t find_column(const CsvTable& table, const std::string& name) {
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (table.header[c] == name) return c;
  std::string available;
  for (const auto& h : table.header) available += (available.empty() ? "" : ", ") + h;
  throw DataError("column '" + name + "' not found; file has: " + available);
}

// Level order: numeric when every label parses as an integer, lexicographic
// otherwise. The baseline (first level) may be overridden by label.
inline std::vector<std::string> level_order(std::vector<std::string> labels,
                                            const std::optional<std::string>& baseline,
                                            const std::string& covariate) {
  bool all_integer = true;
  for (const auto& l : labels)
    if (!parse_integer(l)) {
      all_integer = false;
      break;
    }
  if (all_integer)
    std::sort(labels.begin(), labels.end(),
              [](const std::string& a, const std::string& b) {
                return *parse_integer(a) < *parse_integer(b);
              });
  else
    std::sort(labels.begin(), labels.end());
  if (baseline) {
    auto it = std::find(labels.begin(), labels.end(), *baseline);
    if (it == labels.end())
      throw DataError("baseline level '" + *baseline + "' of covariate '" + covariate +
                      "' does not occur in the data");
    std::rotate(labels.begin(), it, it + 1);
  }
  return labels;
}

}  // namespace detail

// Builds a complete-case dataset from a parsed CSV: records with a missing
// value in any used column are dropped and counted.
inline LoadedData dataset_from_csv(const CsvTable& table, const DataRequest& request) {
  if (request.categorical.empty())
    throw DataError("at least one categorical covariate is required");
  const std::size_t y_col = detail::find_column(table, request.response);
  std::vector<std::size_t> cat_cols, cont_cols;
  for (const auto& req : request.categorical)
    cat_cols.push_back(detail::find_column(table, req.name));
  for (const auto& name : request.continuous)
    cont_cols.push_back(detail::find_column(table, name));

  std::vector<std::size_t> kept;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    bool complete = !is_missing(row[y_col]);
    for (std::size_t c : cat_cols) complete = complete && !is_missing(row[c]);
    for (std::size_t c : cont_cols) complete = complete && !is_missing(row[c]);
    if (complete) kept.push_back(r);
  }
  LoadedData out;
  out.dropped_records = static_cast<long>(table.rows.size() - kept.size());
  if (kept.empty()) throw DataError("no complete records in the data");

  out.data.response.resize(kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const auto& field = table.rows[kept[i]][y_col];
    const auto v = parse_double(field);
    if (!v)
      throw DataError("response value '" + field + "' in row " +
                      std::to_string(kept[i] + 2) + " is not numeric");
    out.data.response[i] = *v;
  }
  for (std::size_t j = 0; j < request.categorical.size(); ++j) {
    CategoricalCovariate cov;
    cov.name = request.categorical[j].name;
    std::vector<std::string> labels;
    for (std::size_t i : kept) {
      const auto& field = table.rows[i][cat_cols[j]];
      if (std::find(labels.begin(), labels.end(), field) == labels.end())
        labels.push_back(field);
    }
    cov.levels = detail::level_order(std::move(labels), request.categorical[j].baseline,
                                     cov.name);
    cov.codes.resize(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const auto& field = table.rows[kept[i]][cat_cols[j]];
      cov.codes[i] = static_cast<int>(
          std::find(cov.levels.begin(), cov.levels.end(), field) - cov.levels.begin());
    }
    out.data.categorical.push_back(std::move(cov));
  }
  for (std::size_t j = 0; j < request.continuous.size(); ++j) {
    ContinuousCovariate cov;
    cov.name = request.continuous[j];
    cov.values.resize(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const auto& field = table.rows[kept[i]][cont_cols[j]];
      const auto v = parse_double(field);
      if (!v)
        throw DataError("value '" + field + "' of covariate '" + cov.name + "' in row " +
                        std::to_string(kept[i] + 2) + " is not numeric");
      cov.values[i] = *v;
    }
    out.data.continuous.push_back(std::move(cov));
  }
  out.data.validate();
  return out;
}

// A field that needs quoting per RFC 4180 gets it.
inline std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string quoted = "\"";
  for (char ch : value) {
    if (ch == '"') quoted += '"';
    quoted += ch;
  }
  quoted += '"';
  return quoted;
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string row;
  for (std::size_t i = 0; i < fields.size(); ++i)
    row += (i ? "," : "") + csv_field(fields[i]);
  row += '\n';
  return row;
}

}  // namespace effectfuse
