#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nettl/errors.hpp"
#include "nettl/types.hpp"

namespace nettl::io {

// Shortest round-trip representation; byte-stable across runs.
inline std::string format_double(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

inline std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  out.reserve(static_cast<std::size_t>(m.size()) * 8);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out.push_back(',');
      out += format_double(m(i, j));
    }
    out.push_back('\n');
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open for writing: " + path);
  f << contents;
  if (!f) fail(ErrorKind::IoError, "write failed: " + path);
}

inline void write_matrix_csv(const std::string& path, const Matrix& m) {
  write_file(path, matrix_to_csv(m));
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline double parse_double(std::string_view tok, const std::string& path, int line) {
  double v = 0.0;
  // skip leading spaces
  std::size_t b = tok.find_first_not_of(" \t\r");
  std::size_t e = tok.find_last_not_of(" \t\r");
  if (b == std::string_view::npos)
    fail(ErrorKind::ParseError, path + ":" + std::to_string(line) + ": empty field");
  tok = tok.substr(b, e - b + 1);
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    fail(ErrorKind::ParseError,
         path + ":" + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  return v;
}

inline Matrix read_matrix_csv(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<std::vector<double>> rows;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::size_t start = 0;
    for (;;) {
      std::size_t comma = line.find(',', start);
      std::string_view tok =
          comma == std::string_view::npos ? line.substr(start) : line.substr(start, comma - start);
      row.push_back(parse_double(tok, path, lineno));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size())
      fail(ErrorKind::ParseError,
           path + ":" + std::to_string(lineno) + ": ragged row (" +
               std::to_string(row.size()) + " vs " + std::to_string(rows.front().size()) + ")");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

// Loads a dense symmetric matrix, rejecting asymmetric input beyond tolerance.
inline Matrix read_symmetric_csv(const std::string& path, double tol = 1e-10) {
  Matrix m = read_matrix_csv(path);
  if (m.rows() != m.cols())
    fail(ErrorKind::IoError, path + ": matrix is " + std::to_string(m.rows()) + "x" +
                                 std::to_string(m.cols()) + ", expected square");
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > tol)
    fail(ErrorKind::IoError, path + ": asymmetric beyond tolerance (" + format_double(asym) + ")");
  return (m + m.transpose()) / 2.0;
}

// Edge-list format: one `i j [weight]` line per edge, 0-based indices.
// Duplicate edges are idempotent; self loops and out-of-range indices reject.
inline Matrix read_edge_list(const std::string& path, Index d) {
  const std::string text = read_file(path);
  Matrix x = Matrix::Zero(d, d);
  std::size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    std::istringstream ss(line);
    long long i = -1, j = -1;
    double w = 1.0;
    if (!(ss >> i)) continue; // blank line
    if (!(ss >> j))
      fail(ErrorKind::ParseError, path + ":" + std::to_string(lineno) + ": expected 'i j [weight]'");
    ss >> w; // optional, presence of the edge is what matters
    std::string rest;
    if (ss >> rest)
      fail(ErrorKind::ParseError, path + ":" + std::to_string(lineno) + ": trailing tokens");
    if (i < 0 || j < 0 || i >= d || j >= d)
      fail(ErrorKind::IndexOutOfRange,
           path + ":" + std::to_string(lineno) + ": index out of [0," + std::to_string(d) + ")");
    if (i == j)
      fail(ErrorKind::ParseError, path + ":" + std::to_string(lineno) + ": self loop");
    x(i, j) = 1.0;
    x(j, i) = 1.0;
  }
  return x;
}

inline std::string edge_list_to_string(const Matrix& x) {
  std::string out;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.cols(); ++j)
      if (x(i, j) != 0.0) {
        out += std::to_string(i);
        out.push_back(' ');
        out += std::to_string(j);
        out.push_back('\n');
      }
  return out;
}

} // namespace nettl::io
