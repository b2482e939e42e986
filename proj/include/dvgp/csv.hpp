#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvgp/model.hpp"
#include "dvgp/types.hpp"

namespace dvgp {

class CsvParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? std::string()
                                                : field.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline double parse_csv_number(const std::string &field, long line_no, const std::string &column) {
  double value = 0.0;
  const char *begin = field.data();
  const char *end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end)
    throw CsvParseError("line " + std::to_string(line_no) + ", column '" + column +
                        "': cannot parse '" + field + "' as a number");
  return value;
}

}  // namespace detail

/// Reads a rectangular numeric CSV with a header row. Input columns are
/// prefixed x_, output columns y_; the dataset carries X iff any x_ column
/// exists. Ragged rows, unknown columns, and non-numeric cells raise a
/// CsvParseError naming the offending line.
inline Dataset ingest_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in.good()) throw CsvParseError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw CsvParseError("'" + path + "' is empty");
  const auto header = detail::split_csv_line(line);
  std::vector<Index> x_cols, y_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].rfind("x_", 0) == 0)
      x_cols.push_back(static_cast<Index>(c));
    else if (header[c].rfind("y_", 0) == 0)
      y_cols.push_back(static_cast<Index>(c));
    else
      throw CsvParseError("header column '" + header[c] + "' must be prefixed x_ or y_");
  }
  if (y_cols.empty()) throw CsvParseError("'" + path + "' has no y_ output columns");

  std::vector<std::vector<double>> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw CsvParseError("line " + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields, got " +
                          std::to_string(fields.size()));
    std::vector<double> row(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c)
      row[c] = detail::parse_csv_number(fields[c], line_no, header[c]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw CsvParseError("'" + path + "' has no data rows");

  Dataset data;
  const Index n = static_cast<Index>(rows.size());
  data.y.resize(n, static_cast<Index>(y_cols.size()));
  for (Index i = 0; i < n; ++i)
    for (std::size_t c = 0; c < y_cols.size(); ++c)
      data.y(i, static_cast<Index>(c)) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(y_cols[c])];
  if (!x_cols.empty()) {
    Matrix x(n, static_cast<Index>(x_cols.size()));
    for (Index i = 0; i < n; ++i)
      for (std::size_t c = 0; c < x_cols.size(); ++c)
        x(i, static_cast<Index>(c)) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(x_cols[c])];
    data.x = std::move(x);
  }
  data.validate();
  return data;
}

/// Writes a dataset in the same x_/y_ header convention (full precision).
inline void write_csv(const Dataset &data, const std::string &path) {
  std::ofstream out(path);
  require(out.good(), "write_csv: cannot open " + path);
  out.precision(17);
  const Index qx = data.x ? data.x->cols() : 0;
  for (Index c = 0; c < qx; ++c) out << (c ? "," : "") << "x_" << c;
  for (Index c = 0; c < data.y.cols(); ++c) out << (qx + c ? "," : "") << "y_" << c;
  out << "\n";
  for (Index i = 0; i < data.y.rows(); ++i) {
    for (Index c = 0; c < qx; ++c) out << (c ? "," : "") << (*data.x)(i, c);
    for (Index c = 0; c < data.y.cols(); ++c) out << (qx + c ? "," : "") << data.y(i, c);
    out << "\n";
  }
}

}  // namespace dvgp
