#pragma once

#include <string>
#include <vector>

#include "timepfn/common.hpp"

namespace timepfn {

// Chronological train/val/test split sizes: either explicit row counts or
// fractions of the file. Named presets carry the row counts of the usual
// forecasting benchmarks.
struct SplitSpec {
  std::vector<Index> counts;      // empty unless explicit
  std::vector<double> fractions;  // empty unless fractional

  static SplitSpec with_counts(Index train, Index val, Index test) {
    SplitSpec s;
    s.counts = {train, val, test};
    return s;
  }
  static SplitSpec with_fractions(double train, double val, double test) {
    SplitSpec s;
    s.fractions = {train, val, test};
    return s;
  }
  static SplitSpec named(const std::string& dataset);
  // "8545,2881,2881" or "0.7,0.1,0.2" or a preset name.
  static SplitSpec parse(const std::string& text);
};

struct BenchmarkSplits {
  Matrix<double> train, val, test;  // rows are time steps, cols variates
  std::vector<std::string> columns;
  bool standardized = false;
  Vector<double> scale_mean, scale_std;  // train-split statistics
};

// Values of a timestamp-led CSV: the first column is dropped, the rest must
// be numeric. A non-numeric first row is treated as a header.
Matrix<double> load_csv_values(const std::string& path,
                               std::vector<std::string>* columns = nullptr);

// Chronological split; when standardize is set, per-variate statistics come
// from the training split only and are applied to all three splits.
BenchmarkSplits load_benchmark_csv(const std::string& path, const SplitSpec& spec,
                                   bool standardize);

void write_csv(const std::string& path, const Matrix<double>& values,
               const std::vector<std::string>& columns);

}  // namespace timepfn
