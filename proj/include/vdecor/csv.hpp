#pragma once

// Tabular I/O. Training files carry the header loc_1..loc_d,x_1..x_P,y and
// query files loc_1..loc_d,x_1..x_P. The intercept is never stored; it is
// synthesized on read. Values are written with 17 significant digits.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "vdecor/dataset.hpp"
#include "vdecor/error.hpp"
#include "vdecor/geom.hpp"

namespace vdecor {

/// Parsed table in the shared schema. `x` has no intercept column; `y` is
/// empty for query files.
struct CsvTable {
  RowMatrix locs;
  Eigen::MatrixXd features;
  Eigen::VectorXd y;
  bool has_response = false;

  Index rows() const { return locs.rows(); }

  SpatialDataset to_dataset() const {
    detail::require(has_response, "table has no 'y' column");
    detail::require(rows() >= 1, "table has no rows");
    return SpatialDataset{LocationSet(locs), with_intercept(features), y};
  }
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) {
      return out;
    }
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline double parse_cell(std::string_view cell, std::size_t line, std::string_view column) {
  cell = trim(cell);
  double v = 0.0;
  const auto *end = cell.data() + cell.size();
  const auto res = std::from_chars(cell.data(), end, v);
  if (cell.empty() || res.ec != std::errc{} || res.ptr != end || !std::isfinite(v)) {
    throw InvalidArgument("line " + std::to_string(line) + ", column '" + std::string(column) +
                          "': cannot parse '" + std::string(cell) + "' as a finite number");
  }
  return v;
}

} // namespace detail

inline CsvTable read_csv(std::istream &in, bool require_response) {
  std::string line;
  if (!std::getline(in, line)) {
    throw InvalidArgument("empty CSV input: missing header");
  }
  const auto header = detail::split_csv_line(line);
  std::vector<std::string> names;
  for (auto h : header) {
    names.emplace_back(detail::trim(h));
  }
  Index d = 0;
  Index p = 0;
  bool has_y = false;
  for (std::size_t c = 0; c < names.size(); ++c) {
    const std::string &name = names[c];
    if (name == "loc_" + std::to_string(d + 1) && p == 0 && !has_y) {
      ++d;
    } else if (name == "x_" + std::to_string(p + 1) && d > 0 && !has_y) {
      ++p;
    } else if (name == "y" && d > 0 && c + 1 == names.size()) {
      has_y = true;
    } else {
      throw InvalidArgument("unexpected header column '" + name + "' at position " +
                            std::to_string(c + 1) + " (expected loc_1..loc_d, x_1..x_P[, y])");
    }
  }
  detail::require(d >= 1, "header must start with loc_1");
  if (require_response) {
    detail::require(has_y, "training table needs a trailing 'y' column");
  }

  std::vector<double> values;
  std::size_t line_no = 1;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) {
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != names.size()) {
      throw InvalidArgument("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(names.size()) + " cells, found " +
                            std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      values.push_back(detail::parse_cell(cells[c], line_no, names[c]));
    }
    ++rows;
  }

  CsvTable t;
  t.has_response = has_y;
  t.locs.resize(rows, d);
  t.features.resize(rows, p);
  if (has_y) {
    t.y.resize(rows);
  }
  const auto width = static_cast<std::size_t>(names.size());
  for (Index r = 0; r < rows; ++r) {
    const double *row = values.data() + static_cast<std::size_t>(r) * width;
    for (Index k = 0; k < d; ++k) {
      t.locs(r, k) = row[k];
    }
    for (Index j = 0; j < p; ++j) {
      t.features(r, j) = row[d + j];
    }
    if (has_y) {
      t.y(r) = row[d + p];
    }
  }
  return t;
}

inline CsvTable read_csv_file(const std::string &path, bool require_response) {
  std::ifstream in(path);
  if (!in) {
    throw InvalidArgument("cannot open '" + path + "'");
  }
  return read_csv(in, require_response);
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes locations, raw features (no intercept) and, if non-empty, y.
inline void write_csv(std::ostream &out, const RowMatrix &locs,
                      const Eigen::Ref<const Eigen::MatrixXd> &features,
                      const Eigen::Ref<const Eigen::VectorXd> &y) {
  for (Index k = 0; k < locs.cols(); ++k) {
    out << (k ? "," : "") << "loc_" << k + 1;
  }
  for (Index j = 0; j < features.cols(); ++j) {
    out << ",x_" << j + 1;
  }
  const bool with_y = y.size() > 0;
  if (with_y) {
    out << ",y";
  }
  out << '\n';
  for (Index r = 0; r < locs.rows(); ++r) {
    for (Index k = 0; k < locs.cols(); ++k) {
      out << (k ? "," : "") << format_double(locs(r, k));
    }
    for (Index j = 0; j < features.cols(); ++j) {
      out << ',' << format_double(features(r, j));
    }
    if (with_y) {
      out << ',' << format_double(y(r));
    }
    out << '\n';
  }
}

inline void write_dataset_csv(const std::string &path, const SpatialDataset &data) {
  std::ofstream out(path);
  if (!out) {
    throw InvalidArgument("cannot write '" + path + "'");
  }
  write_csv(out, data.locs.coords(), data.x.rightCols(data.x.cols() - 1), data.y);
}

} // namespace vdecor
