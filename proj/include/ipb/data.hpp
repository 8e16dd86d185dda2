#pragma once

// Observational data (response, treatment, covariates), train/calibration
// splitting, and the `y,t,x1,...,xp` CSV format.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ipb/rng.hpp"

namespace ipb {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// n rows of (y, t, x[0..p)). Covariates are stored row-major.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<double> y, std::vector<double> t, std::vector<double> x, std::size_t p)
      : y_(std::move(y)), t_(std::move(t)), x_(std::move(x)), p_(p) {
    if (t_.size() != y_.size()) throw DataError("Dataset: y and t lengths differ");
    if (x_.size() != y_.size() * p_) throw DataError("Dataset: covariate matrix has wrong size");
    for (double v : y_)
      if (!std::isfinite(v)) throw DataError("Dataset: non-finite response");
    for (double v : t_)
      if (!std::isfinite(v)) throw DataError("Dataset: non-finite treatment");
    for (double v : x_)
      if (!std::isfinite(v)) throw DataError("Dataset: non-finite covariate");
  }

  std::size_t size() const noexcept { return y_.size(); }
  std::size_t n() const noexcept { return y_.size(); }
  std::size_t p() const noexcept { return p_; }

  double y(std::size_t i) const { return y_[i]; }
  double t(std::size_t i) const { return t_[i]; }
  std::span<const double> x(std::size_t i) const { return {x_.data() + i * p_, p_}; }

  std::span<const double> ys() const noexcept { return y_; }
  std::span<const double> ts() const noexcept { return t_; }
  std::span<const double> xs() const noexcept { return x_; }

  /// Rows in the given order (duplicates allowed, as in a bootstrap resample).
  Dataset subset(std::span<const std::size_t> rows) const {
    std::vector<double> y;
    std::vector<double> t;
    std::vector<double> xs;
    y.reserve(rows.size());
    t.reserve(rows.size());
    xs.reserve(rows.size() * p_);
    for (std::size_t r : rows) {
      if (r >= size()) throw DataError("Dataset::subset: row index out of range");
      y.push_back(y_[r]);
      t.push_back(t_[r]);
      auto xr = x(r);
      xs.insert(xs.end(), xr.begin(), xr.end());
    }
    return Dataset(std::move(y), std::move(t), std::move(xs), p_);
  }

 private:
  std::vector<double> y_;
  std::vector<double> t_;
  std::vector<double> x_;
  std::size_t p_ = 0;
};

/// Incremental row-wise construction.
class DatasetBuilder {
 public:
  explicit DatasetBuilder(std::size_t p) : p_(p) {}

  void add(double y, double t, std::span<const double> x) {
    if (x.size() != p_) throw DataError("DatasetBuilder: covariate row has wrong length");
    y_.push_back(y);
    t_.push_back(t);
    x_.insert(x_.end(), x.begin(), x.end());
  }

  void reserve(std::size_t n) {
    y_.reserve(n);
    t_.reserve(n);
    x_.reserve(n * p_);
  }

  Dataset build() && { return Dataset(std::move(y_), std::move(t_), std::move(x_), p_); }

 private:
  std::size_t p_;
  std::vector<double> y_;
  std::vector<double> t_;
  std::vector<double> x_;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> cal;
};

/// Random partition with |train| = floor(fraction * n); both index lists are sorted.
inline SplitIndices split(std::size_t n, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0, 1)");
  if (n < 4) throw std::invalid_argument("split: need at least 4 rows");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  const auto n_train = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.cal.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.cal.begin(), out.cal.end());
  return out;
}

inline SplitIndices split(const Dataset& data, double fraction, Rng& rng) { return split(data.size(), fraction, rng); }

/// First n_train rows train, remainder calibrate. For data already in random order.
inline SplitIndices split_in_order(std::size_t n, std::size_t n_train) {
  if (n_train > n) throw std::invalid_argument("split_in_order: n_train exceeds n");
  SplitIndices out;
  out.train.resize(n_train);
  out.cal.resize(n - n_train);
  std::iota(out.train.begin(), out.train.end(), std::size_t{0});
  std::iota(out.cal.begin(), out.cal.end(), n_train);
  return out;
}

// --- CSV --------------------------------------------------------------------

/// Shortest text that round-trips a double; infinities as `inf` / `-inf`.
inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Parses a full cell as a double; accepts `inf`, `-inf`.
inline bool parse_double(std::string_view cell, double& out) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
  if (cell.empty()) return false;
  if (cell == "inf" || cell == "+inf") {
    out = INFINITY;
    return true;
  }
  if (cell == "-inf") {
    out = -INFINITY;
    return true;
  }
  if (cell.front() == '+') cell.remove_prefix(1);
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), out);
  return res.ec == std::errc() && res.ptr == cell.data() + cell.size();
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

inline Dataset read_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "y" || header[1] != "t")
    throw DataError(source + ": schema error: header must be y,t,x1,...,xp");
  for (std::size_t j = 2; j < header.size(); ++j) {
    if (header[j] != "x" + std::to_string(j - 1))
      throw DataError(source + ": schema error: column " + std::to_string(j + 1) + " must be named x" +
                      std::to_string(j - 1));
  }
  const std::size_t p = header.size() - 2;
  DatasetBuilder builder(p);
  std::vector<double> row(p);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(source + ": line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    double y = 0.0;
    double t = 0.0;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      double v = 0.0;
      if (!parse_double(cells[j], v) || !std::isfinite(v))
        throw DataError(source + ": line " + std::to_string(line_no) + ": column " + std::to_string(j + 1) +
                        ": not a finite number: '" + std::string(cells[j]) + "'");
      if (j == 0)
        y = v;
      else if (j == 1)
        t = v;
      else
        row[j - 2] = v;
    }
    builder.add(y, t, row);
  }
  return std::move(builder).build();
}

inline Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  return read_csv(in, path);
}

inline void write_csv(std::ostream& out, const Dataset& data) {
  out << "y,t";
  for (std::size_t j = 1; j <= data.p(); ++j) out << ",x" << j;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << format_double(data.y(i)) << ',' << format_double(data.t(i));
    for (double v : data.x(i)) out << ',' << format_double(v);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open for writing");
  write_csv(out, data);
}

}  // namespace ipb
