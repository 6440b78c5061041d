#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <ostream>
#include <string>

namespace timepfn {

// CRC-32 (IEEE 802.3), bitwise-reflected form.
class Crc32 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = ~state_;
    for (std::size_t i = 0; i < n; ++i) {
      c ^= p[i];
      for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xedb88320u & (~(c & 1u) + 1u));
    }
    state_ = ~c;
  }
  std::uint32_t value() const { return state_; }

  static std::uint32_t of(const void* data, std::size_t n) {
    Crc32 c;
    c.update(data, n);
    return c.value();
  }

 private:
  std::uint32_t state_ = 0;
};

// Little-endian binary IO. All on-disk formats in this project are
// little-endian regardless of host order.
inline void write_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}
inline void write_u16(std::ostream& out, std::uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}
inline void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}
inline void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}
inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

inline std::uint8_t read_u8(std::istream& in) {
  return static_cast<std::uint8_t>(in.get());
}
inline std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}
inline float read_f32(std::istream& in) {
  std::uint32_t bits = read_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
inline double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

// Runs fn(i) for i in [0, count) on up to `workers` threads. Blocks until
// done. fn must be safe to call concurrently for distinct i.
void parallel_for(std::size_t count, int workers,
                  const std::function<void(std::size_t)>& fn);

// Order-independent pairwise reduction: sums v[lo..hi) by recursive
// halving, so the result does not depend on how work was scheduled.
double pairwise_sum(const double* v, std::size_t n);

}  // namespace timepfn
