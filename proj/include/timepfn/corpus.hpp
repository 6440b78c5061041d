#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "timepfn/common.hpp"
#include "timepfn/lmc.hpp"
#include "timepfn/rng.hpp"

namespace timepfn {

// On-disk corpus layout (all little-endian):
//   magic "LMCS" | u32 version | u32 series_count | u32 channels | u32 length
//   then per series: u8 mode | u16 num_latents | f32 values, row-major
//   (time-major: length rows of channels floats).
// Declared sizes must match the byte length exactly.
inline constexpr char kCorpusMagic[4] = {'L', 'M', 'C', 'S'};
inline constexpr std::uint32_t kCorpusVersion = 1;

struct CorpusSummary {
  std::int64_t series_count = 0;
  std::int64_t channels = 0;
  std::int64_t length = 0;
  std::uint64_t bytes = 0;
  std::uint32_t checksum = 0;  // CRC-32 of the whole file
};

// Streams series records to disk. The caller declares the series count up
// front so header bytes (and the file checksum) are fixed before the first
// record, which keeps output byte-identical across worker counts.
class CorpusWriter {
 public:
  CorpusWriter(const std::string& path, std::int64_t series_count,
               std::int64_t channels, std::int64_t length);
  ~CorpusWriter();
  CorpusWriter(const CorpusWriter&) = delete;
  CorpusWriter& operator=(const CorpusWriter&) = delete;

  void add(SeriesMode mode, int num_latents, const Matrix<float>& values);

  template <typename Scalar>
  void add(const SeriesBlock<Scalar>& block) {
    add(block.mode, block.num_latents, block.values.template cast<float>());
  }

  CorpusSummary finalize();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Memory-mapped read-only view of a corpus file. Safe to share across
// threads. Values are exposed as unaligned row-major float maps.
class CorpusReader {
 public:
  explicit CorpusReader(const std::string& path);
  ~CorpusReader();
  CorpusReader(CorpusReader&&) noexcept;
  CorpusReader& operator=(CorpusReader&&) noexcept;

  std::int64_t series_count() const { return series_count_; }
  std::int64_t channels() const { return channels_; }
  std::int64_t length() const { return length_; }

  SeriesMode mode(std::int64_t series) const;
  int num_latents(std::int64_t series) const;
  Eigen::Map<const RowMajorMatrix<float>, Eigen::Unaligned> values(
      std::int64_t series) const;

  std::string describe() const;

 private:
  const unsigned char* record(std::int64_t series) const;

  std::int64_t series_count_ = 0;
  std::int64_t channels_ = 0;
  std::int64_t length_ = 0;
  const unsigned char* data_ = nullptr;
  std::uint64_t bytes_ = 0;
  int fd_ = -1;
};

// Writes a full in-memory corpus; convenience over CorpusWriter.
template <typename Scalar>
CorpusSummary write_corpus(const std::vector<SeriesBlock<Scalar>>& blocks,
                           const std::string& path) {
  const std::int64_t channels = blocks.empty() ? 0 : blocks[0].values.cols();
  const std::int64_t length = blocks.empty() ? 0 : blocks[0].values.rows();
  CorpusWriter writer(path, static_cast<std::int64_t>(blocks.size()), channels, length);
  for (const auto& b : blocks) writer.add(b);
  return writer.finalize();
}

std::vector<SeriesBlock<float>> read_corpus(const std::string& path);

// A (context, target) pair: adjacent non-overlapping slices of one series.
template <typename Scalar>
struct WindowSample {
  Matrix<Scalar> context;  // context_len x N
  Matrix<Scalar> target;   // horizon x N
  std::int64_t series = 0;
  Index offset = 0;
};

inline Index window_count(Index length, Index context_len, Index horizon,
                          Index stride) {
  if (stride < 1) throw Error("window_count: stride must be >= 1");
  if (context_len + horizon > length)
    throw WindowTooLong("window " + std::to_string(context_len) + "+" +
                        std::to_string(horizon) + " exceeds series length " +
                        std::to_string(length));
  return (length - context_len - horizon) / stride + 1;
}

template <typename Scalar, typename Derived>
WindowSample<Scalar> cut_window(const Eigen::MatrixBase<Derived>& series_values,
                                Index offset, Index context_len, Index horizon,
                                std::int64_t series_index = 0) {
  WindowSample<Scalar> w;
  w.context = series_values.middleRows(offset, context_len).template cast<Scalar>();
  w.target =
      series_values.middleRows(offset + context_len, horizon).template cast<Scalar>();
  w.series = series_index;
  w.offset = offset;
  return w;
}

template <typename Scalar>
std::vector<WindowSample<Scalar>> extract_windows(const SeriesBlock<Scalar>& block,
                                                  Index context_len, Index horizon,
                                                  Index stride) {
  const Index count = window_count(block.values.rows(), context_len, horizon, stride);
  std::vector<WindowSample<Scalar>> out;
  out.reserve(count);
  for (Index k = 0; k < count; ++k)
    out.push_back(cut_window<Scalar>(block.values, k * stride, context_len, horizon,
                                     block.series_index));
  return out;
}

// Multiplies every entry (context then target, row-major order) by an
// independent Normal(1, sigma^2) factor.
template <typename Scalar>
void augment_multiplicative_noise(WindowSample<Scalar>& sample, double sigma,
                                  RngStream& rng) {
  if (sigma < 0) throw Error("augment_multiplicative_noise: sigma must be >= 0");
  if (sigma == 0) return;
  auto apply = [&](Matrix<Scalar>& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c)
        m(r, c) *= static_cast<Scalar>(rng.normal(1.0, sigma));
  };
  apply(sample.context);
  apply(sample.target);
}

// One epoch's worth of training windows over a corpus. With curriculum on,
// windows of independent-mode series come first (shuffled within the
// phase), then correlated-mode windows; otherwise one global shuffle.
// Every window appears exactly once per epoch.
template <typename Scalar>
class BatchIterator {
 public:
  BatchIterator(const CorpusReader& corpus, Index context_len, Index horizon,
                Index stride, bool curriculum, Index batch_size, RngStream rng)
      : corpus_(corpus),
        context_len_(context_len),
        horizon_(horizon),
        curriculum_(curriculum),
        batch_size_(batch_size),
        rng_(rng) {
    if (batch_size < 1) throw Error("BatchIterator: batch_size must be >= 1");
    const Index per_series =
        window_count(corpus.length(), context_len, horizon, stride);
    for (std::int64_t s = 0; s < corpus.series_count(); ++s) {
      auto& bucket =
          corpus.mode(s) == SeriesMode::Independent ? independent_ : correlated_;
      for (Index k = 0; k < per_series; ++k) bucket.push_back({s, k * stride});
    }
    start_epoch();
  }

  Index windows_per_epoch() const {
    return static_cast<Index>(independent_.size() + correlated_.size());
  }

  // Reshuffles and rewinds; called once per epoch.
  void start_epoch() {
    order_.clear();
    if (curriculum_) {
      auto ind = independent_;
      auto corr = correlated_;
      rng_.shuffle(ind);
      rng_.shuffle(corr);
      order_.insert(order_.end(), ind.begin(), ind.end());
      order_.insert(order_.end(), corr.begin(), corr.end());
    } else {
      order_.insert(order_.end(), independent_.begin(), independent_.end());
      order_.insert(order_.end(), correlated_.begin(), correlated_.end());
      rng_.shuffle(order_);
    }
    cursor_ = 0;
  }

  // Fills the next batch; returns false when the epoch is exhausted. The
  // final batch of an epoch may be short.
  bool next(std::vector<WindowSample<Scalar>>& batch) {
    batch.clear();
    if (cursor_ >= order_.size()) return false;
    while (cursor_ < order_.size() &&
           batch.size() < static_cast<std::size_t>(batch_size_)) {
      const auto [series, offset] = order_[cursor_++];
      batch.push_back(cut_window<Scalar>(corpus_.values(series), offset,
                                         context_len_, horizon_, series));
    }
    return true;
  }

  SeriesMode mode_of(std::int64_t series) const { return corpus_.mode(series); }

 private:
  using Entry = std::pair<std::int64_t, Index>;  // (series, offset)

  const CorpusReader& corpus_;
  Index context_len_, horizon_;
  bool curriculum_;
  Index batch_size_;
  RngStream rng_;
  std::vector<Entry> independent_, correlated_, order_;
  std::size_t cursor_ = 0;
};

}  // namespace timepfn
