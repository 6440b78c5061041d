#include "timepfn/corpus.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "timepfn/io_util.hpp"

namespace timepfn {

namespace {

constexpr std::int64_t kHeaderBytes = 20;

std::int64_t record_bytes(std::int64_t channels, std::int64_t length) {
  return 3 + 4 * channels * length;
}

}  // namespace

struct CorpusWriter::Impl {
  std::ofstream out;
  std::string path;
  std::int64_t expected = 0, written = 0;
  std::int64_t channels = 0, length = 0;
  Crc32 crc;
  bool finalized = false;

  void emit(const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    crc.update(data, n);
  }
};

CorpusWriter::CorpusWriter(const std::string& path, std::int64_t series_count,
                           std::int64_t channels, std::int64_t length)
    : impl_(std::make_unique<Impl>()) {
  if (series_count < 0) throw Error("CorpusWriter: negative series count");
  impl_->path = path;
  impl_->expected = series_count;
  impl_->channels = channels;
  impl_->length = length;
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw IoError("cannot open for writing: " + path);

  impl_->emit(kCorpusMagic, 4);
  unsigned char header[16];
  auto put_u32 = [&](int at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) header[at + i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  };
  put_u32(0, kCorpusVersion);
  put_u32(4, static_cast<std::uint32_t>(series_count));
  put_u32(8, static_cast<std::uint32_t>(channels));
  put_u32(12, static_cast<std::uint32_t>(length));
  impl_->emit(header, 16);
}

CorpusWriter::~CorpusWriter() = default;

void CorpusWriter::add(SeriesMode mode, int num_latents,
                       const Matrix<float>& values) {
  if (impl_->finalized) throw Error("CorpusWriter: add after finalize");
  if (impl_->written >= impl_->expected)
    throw Error("CorpusWriter: more series than declared");
  if (values.rows() != impl_->length || values.cols() != impl_->channels)
    throw ShapeMismatch("CorpusWriter: series is " + std::to_string(values.rows()) +
                        "x" + std::to_string(values.cols()) + ", corpus is " +
                        std::to_string(impl_->length) + "x" +
                        std::to_string(impl_->channels));
  unsigned char head[3];
  head[0] = static_cast<unsigned char>(mode);
  head[1] = static_cast<unsigned char>(num_latents & 0xff);
  head[2] = static_cast<unsigned char>((num_latents >> 8) & 0xff);
  impl_->emit(head, 3);

  // Row-major (time-major) f32, little-endian. Host is little-endian; the
  // payload is staged through a row-major copy so bytes go out in order.
  RowMajorMatrix<float> rm = values;
  impl_->emit(rm.data(), sizeof(float) * static_cast<std::size_t>(rm.size()));
  ++impl_->written;
}

CorpusSummary CorpusWriter::finalize() {
  if (impl_->finalized) throw Error("CorpusWriter: finalize twice");
  if (impl_->written != impl_->expected)
    throw Error("CorpusWriter: declared " + std::to_string(impl_->expected) +
                " series, wrote " + std::to_string(impl_->written));
  impl_->out.flush();
  if (!impl_->out) throw IoError("write failed: " + impl_->path);
  impl_->out.close();
  impl_->finalized = true;

  CorpusSummary summary;
  summary.series_count = impl_->written;
  summary.channels = impl_->channels;
  summary.length = impl_->length;
  summary.bytes = static_cast<std::uint64_t>(
      kHeaderBytes + impl_->written * record_bytes(impl_->channels, impl_->length));
  summary.checksum = impl_->crc.value();
  return summary;
}

CorpusReader::CorpusReader(const std::string& path) {
  fd_ = ::open(path.c_str(), O_RDONLY);
  if (fd_ < 0) throw IoError("cannot open corpus: " + path);
  struct stat st{};
  if (::fstat(fd_, &st) != 0) {
    ::close(fd_);
    throw IoError("cannot stat corpus: " + path);
  }
  bytes_ = static_cast<std::uint64_t>(st.st_size);
  if (bytes_ < static_cast<std::uint64_t>(kHeaderBytes)) {
    ::close(fd_);
    throw ParseError("corpus file too short for header: " + path);
  }
  void* map = ::mmap(nullptr, bytes_, PROT_READ, MAP_PRIVATE, fd_, 0);
  if (map == MAP_FAILED) {
    ::close(fd_);
    throw IoError("mmap failed: " + path);
  }
  data_ = static_cast<const unsigned char*>(map);

  if (std::memcmp(data_, kCorpusMagic, 4) != 0)
    throw ParseError("bad corpus magic in " + path);
  auto get_u32 = [&](int at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | data_[at + i];
    return v;
  };
  const std::uint32_t version = get_u32(4);
  if (version != kCorpusVersion)
    throw ParseError("unsupported corpus version " + std::to_string(version));
  series_count_ = get_u32(8);
  channels_ = get_u32(12);
  length_ = get_u32(16);

  const std::uint64_t expect =
      static_cast<std::uint64_t>(kHeaderBytes) +
      static_cast<std::uint64_t>(series_count_) *
          static_cast<std::uint64_t>(record_bytes(channels_, length_));
  if (bytes_ != expect)
    throw ParseError("corpus size mismatch: declared " + std::to_string(expect) +
                     " bytes, file has " + std::to_string(bytes_));
}

CorpusReader::~CorpusReader() {
  if (data_) ::munmap(const_cast<unsigned char*>(data_), bytes_);
  if (fd_ >= 0) ::close(fd_);
}

CorpusReader::CorpusReader(CorpusReader&& other) noexcept { *this = std::move(other); }

CorpusReader& CorpusReader::operator=(CorpusReader&& other) noexcept {
  std::swap(series_count_, other.series_count_);
  std::swap(channels_, other.channels_);
  std::swap(length_, other.length_);
  std::swap(data_, other.data_);
  std::swap(bytes_, other.bytes_);
  std::swap(fd_, other.fd_);
  return *this;
}

const unsigned char* CorpusReader::record(std::int64_t series) const {
  if (series < 0 || series >= series_count_)
    throw Error("CorpusReader: series index " + std::to_string(series) +
                " out of range [0," + std::to_string(series_count_) + ")");
  return data_ + kHeaderBytes + series * record_bytes(channels_, length_);
}

SeriesMode CorpusReader::mode(std::int64_t series) const {
  const unsigned char m = record(series)[0];
  if (m > 1) throw ParseError("corpus: bad mode byte " + std::to_string(m));
  return static_cast<SeriesMode>(m);
}

int CorpusReader::num_latents(std::int64_t series) const {
  const unsigned char* r = record(series);
  return r[1] | (r[2] << 8);
}

Eigen::Map<const RowMajorMatrix<float>, Eigen::Unaligned> CorpusReader::values(
    std::int64_t series) const {
  const auto* ptr = reinterpret_cast<const float*>(record(series) + 3);
  return {ptr, length_, channels_};
}

std::string CorpusReader::describe() const {
  std::ostringstream os;
  os << "corpus: version=" << kCorpusVersion << " series_count=" << series_count_
     << " channels=" << channels_ << " length=" << length_ << " bytes=" << bytes_;
  std::int64_t independent = 0;
  for (std::int64_t s = 0; s < series_count_; ++s)
    if (mode(s) == SeriesMode::Independent) ++independent;
  os << " correlated=" << (series_count_ - independent)
     << " independent=" << independent;
  return os.str();
}

std::vector<SeriesBlock<float>> read_corpus(const std::string& path) {
  CorpusReader reader(path);
  std::vector<SeriesBlock<float>> blocks(reader.series_count());
  for (std::int64_t s = 0; s < reader.series_count(); ++s) {
    blocks[s].values = reader.values(s);
    blocks[s].mode = reader.mode(s);
    blocks[s].num_latents = reader.num_latents(s);
    blocks[s].series_index = s;
  }
  return blocks;
}

}  // namespace timepfn
