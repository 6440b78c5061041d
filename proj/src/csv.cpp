#include "timepfn/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace timepfn {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_real(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r'))
    --end;
  if (begin == end) return false;
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

SplitSpec SplitSpec::named(const std::string& dataset) {
  if (dataset == "etth" || dataset == "etth1" || dataset == "etth2")
    return with_counts(8545, 2881, 2881);
  if (dataset == "ettm" || dataset == "ettm1" || dataset == "ettm2")
    return with_counts(34465, 11521, 11521);
  if (dataset == "ecl" || dataset == "electricity") return with_counts(18317, 2633, 5261);
  if (dataset == "exchange") return with_counts(5120, 665, 1422);
  if (dataset == "traffic") return with_counts(12185, 1757, 3509);
  if (dataset == "weather") return with_counts(36792, 5271, 10540);
  if (dataset == "solar") return with_counts(36601, 5161, 10417);
  throw ParseError("unknown split preset: " + dataset);
}

SplitSpec SplitSpec::parse(const std::string& text) {
  if (text.find(',') == std::string::npos) return named(text);
  std::vector<double> vals;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v;
    if (!parse_real(item, v)) throw ParseError("bad split value: " + item);
    vals.push_back(v);
  }
  if (vals.size() != 3) throw ParseError("split needs 3 values: " + text);
  bool fractional = vals[0] < 1.0 && vals[1] < 1.0 && vals[2] < 1.0;
  if (fractional) return with_fractions(vals[0], vals[1], vals[2]);
  return with_counts(static_cast<Index>(vals[0]), static_cast<Index>(vals[1]),
                     static_cast<Index>(vals[2]));
}

Matrix<double> load_csv_values(const std::string& path,
                               std::vector<std::string>* columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CSV: " + path);

  std::vector<std::vector<double>> rows;
  std::string line;
  Index width = -1;
  int lineno = 0;
  bool first_data_row = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() < 2)
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": expected a timestamp column plus variates");
    if (first_data_row) {
      double probe;
      if (!parse_real(cells[1], probe)) {  // header row
        if (columns) {
          columns->assign(cells.begin() + 1, cells.end());
          for (auto& c : *columns)
            while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
        }
        continue;
      }
      first_data_row = false;
    }
    std::vector<double> row(cells.size() - 1);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      if (!parse_real(cells[j], row[j - 1]))
        throw ParseError(path + ":" + std::to_string(lineno) + ": column " +
                         std::to_string(j + 1) + ": non-numeric cell '" + cells[j] +
                         "'");
    }
    if (width < 0) width = static_cast<Index>(row.size());
    if (static_cast<Index>(row.size()) != width)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(width) + " variates, found " +
                       std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError(path + ": no data rows");

  Matrix<double> values(static_cast<Index>(rows.size()), width);
  for (Index i = 0; i < values.rows(); ++i)
    for (Index j = 0; j < width; ++j) values(i, j) = rows[i][j];
  return values;
}

BenchmarkSplits load_benchmark_csv(const std::string& path, const SplitSpec& spec,
                                   bool standardize) {
  BenchmarkSplits out;
  Matrix<double> values = load_csv_values(path, &out.columns);
  const Index total = values.rows();

  Index n_train, n_val, n_test;
  if (!spec.counts.empty()) {
    n_train = spec.counts[0];
    n_val = spec.counts[1];
    n_test = spec.counts[2];
    if (n_train + n_val + n_test > total)
      throw ParseError(path + ": split " + std::to_string(n_train) + "/" +
                       std::to_string(n_val) + "/" + std::to_string(n_test) +
                       " exceeds " + std::to_string(total) + " rows");
  } else {
    double ft = 0.7, fv = 0.1, fe = 0.2;
    if (!spec.fractions.empty()) {
      ft = spec.fractions[0];
      fv = spec.fractions[1];
      fe = spec.fractions[2];
    }
    if (ft <= 0 || fv < 0 || fe <= 0 || ft + fv + fe > 1.0 + 1e-9)
      throw ParseError("split fractions must be positive and sum to <= 1");
    n_train = static_cast<Index>(ft * total);
    n_val = static_cast<Index>(fv * total);
    n_test = static_cast<Index>(fe * total);
  }
  if (n_train < 1 || n_test < 1) throw ParseError(path + ": empty train or test split");

  out.train = values.topRows(n_train);
  out.val = values.middleRows(n_train, n_val);
  out.test = values.middleRows(n_train + n_val, n_test);

  if (standardize) {
    out.scale_mean = out.train.colwise().mean();
    Vector<double> var =
        (out.train.rowwise() - out.scale_mean.transpose()).array().square().colwise().mean();
    out.scale_std = var.array().sqrt().max(1e-8);
    auto apply = [&](Matrix<double>& m) {
      if (m.rows() == 0) return;
      m = (m.rowwise() - out.scale_mean.transpose()).array().rowwise() /
          out.scale_std.transpose().array();
    };
    apply(out.train);
    apply(out.val);
    apply(out.test);
    out.standardized = true;
  }
  return out;
}

void write_csv(const std::string& path, const Matrix<double>& values,
               const std::vector<std::string>& columns) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  if (!columns.empty()) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) out << ',';
      out << columns[i];
    }
    out << '\n';
  }
  out.precision(10);
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      if (c) out << ',';
      out << values(r, c);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace timepfn
