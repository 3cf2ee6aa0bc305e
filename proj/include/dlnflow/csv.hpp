#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dlnflow/model.hpp"
#include "dlnflow/rng.hpp"

namespace dlnflow {

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, std::size_t row, std::size_t col) {
  s = trim(s);
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty())
    throw std::runtime_error("malformed CSV value at row " + std::to_string(row) + ", column " +
                             std::to_string(col));
  return v;
}

inline std::vector<std::size_t> choose_sorted(std::size_t total, std::size_t k, CounterRng& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace detail

// Whole numeric CSV into a matrix (rows = samples).
inline Mat read_csv_matrix(const std::string& path, bool header = false) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  if (header) std::getline(in, line), ++lineno;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    std::vector<double> row;
    row.reserve(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c)
      row.push_back(detail::parse_double(fields[c], lineno, c + 1));
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("ragged CSV at row " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty CSV: " + path);
  Mat m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return m;
}

inline void write_csv_matrix(const std::string& path, const Mat& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
}

struct IngestOptions {
  bool normalize = true;
  bool header = false;
  Eigen::Index n_sub = 0;  // 0 keeps every row
  Eigen::Index d_sub = 0;  // 0 keeps every column
  std::uint64_t seed = 0;
};

// Externally supplied design; labels are synthesized with `label`.
struct IngestedDesign {
  Mat X;

  [[nodiscard]] Dataset label(const ModelConfig& cfg, std::uint64_t seed) const {
    cfg.validate();
    Dataset ds;
    ds.design = Design::external;
    ds.X = X;
    attach_labels(ds, cfg, seed);
    return ds;
  }
};

// Each column gets empirical mean 0 and empirical (1/n) variance 1/d.
// Constant columns are left at zero.
inline void normalize_columns(Mat& X) {
  const double n = static_cast<double>(X.rows());
  const double target = 1.0 / static_cast<double>(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    auto col = X.col(j);
    col.array() -= col.mean();
    const double var = col.squaredNorm() / n;
    if (var > 0.0) col *= std::sqrt(target / var);
  }
}

// Reads the file twice: once for its shape, once for the selected entries only,
// so wide matrices never have to be held in memory.
inline IngestedDesign ingest_design(const std::string& path, const IngestOptions& opt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (opt.header) std::getline(in, line);
  std::size_t n_rows = 0, n_cols = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (n_rows == 0) n_cols = cols;
    else if (cols != n_cols) throw std::runtime_error("ragged CSV at data row " + std::to_string(n_rows + 1));
    ++n_rows;
  }
  if (n_rows == 0) throw std::runtime_error("empty CSV: " + path);
  const auto n_sub = static_cast<std::size_t>(opt.n_sub > 0 ? opt.n_sub : static_cast<Eigen::Index>(n_rows));
  const auto d_sub = static_cast<std::size_t>(opt.d_sub > 0 ? opt.d_sub : static_cast<Eigen::Index>(n_cols));
  if (n_sub > n_rows || d_sub > n_cols)
    throw std::runtime_error("CSV has " + std::to_string(n_rows) + "x" + std::to_string(n_cols) +
                             " entries, fewer than requested " + std::to_string(n_sub) + "x" +
                             std::to_string(d_sub));

  CounterRng rng_r = CounterRng(opt.seed).split(streams::subsample);
  CounterRng rng_c = rng_r.split(1);
  const auto rows = detail::choose_sorted(n_rows, n_sub, rng_r);
  const auto cols = detail::choose_sorted(n_cols, d_sub, rng_c);

  in.clear();
  in.seekg(0);
  if (opt.header) std::getline(in, line);
  IngestedDesign out;
  out.X.resize(static_cast<Eigen::Index>(n_sub), static_cast<Eigen::Index>(d_sub));
  std::size_t data_row = 0, next = 0;
  while (next < rows.size() && std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    if (data_row == rows[next]) {
      const auto fields = detail::split_fields(line);
      for (std::size_t c = 0; c < cols.size(); ++c)
        out.X(static_cast<Eigen::Index>(next), static_cast<Eigen::Index>(c)) =
            detail::parse_double(fields[cols[c]], data_row + 1, cols[c] + 1);
      ++next;
    }
    ++data_row;
  }
  if (opt.normalize) normalize_columns(out.X);
  return out;
}

}  // namespace dlnflow
