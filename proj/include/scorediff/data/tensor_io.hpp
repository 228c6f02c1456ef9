#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "scorediff/core/error.hpp"
#include "scorediff/core/io.hpp"
#include "scorediff/core/tensor.hpp"

namespace scorediff::data {

inline constexpr char kTensorMagic[4] = {'H', 'P', 'M', 'T'};
inline constexpr std::uint32_t kTensorVersion = 1;

namespace detail_io {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

/// Bounds-checked little-endian reader over a byte buffer.
class Reader {
 public:
  explicit Reader(std::string_view buf, std::string what = "buffer") : buf_(buf), what_(std::move(what)) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

  std::string_view bytes(std::size_t n) {
    if (n > buf_.size() - pos_) throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_));
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(b[std::size_t(i)]);
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | std::uint8_t(b[std::size_t(i)]);
    return v;
  }
  std::string str() {
    const auto n = u32();
    return std::string(bytes(n));
  }

 private:
  std::string_view buf_;
  std::string what_;
  std::size_t pos_ = 0;
};
}  // namespace detail_io

/// "HPMT", u32 version, u32 rank, u32 dims[rank], then row-major f32
/// values, all little-endian.
template <class T>
void append_tensor(std::string& out, const Tensor<T>& t) {
  out.append(kTensorMagic, 4);
  detail_io::put_u32(out, kTensorVersion);
  detail_io::put_u32(out, std::uint32_t(t.rank()));
  for (auto d : t.shape()) {
    detail::require(d <= 0xffffffffu, "tensor dimension too large for the file format");
    detail_io::put_u32(out, std::uint32_t(d));
  }
  for (std::size_t i = 0; i < t.size(); ++i) detail_io::put_u32(out, std::bit_cast<std::uint32_t>(float(t[i])));
}

template <class T = float>
Tensor<T> read_tensor_from(detail_io::Reader& r) {
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kTensorMagic, 4) != 0) throw FormatError("not a tensor record (bad magic)");
  const auto version = r.u32();
  if (version != kTensorVersion) throw FormatError("unsupported tensor format version " + std::to_string(version));
  const auto rank = r.u32();
  if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d != 0 && n > (std::size_t(1) << 40) / d) throw FormatError("tensor too large");
    n *= d;
  }
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = T(std::bit_cast<float>(r.u32()));
  return t;
}

template <class T>
std::string encode_tensor(const Tensor<T>& t) {
  std::string out;
  append_tensor(out, t);
  return out;
}

template <class T = float>
Tensor<T> decode_tensor(std::string_view bytes) {
  detail_io::Reader r(bytes, "tensor file");
  auto t = read_tensor_from<T>(r);
  if (!r.done()) throw FormatError("trailing bytes after tensor record");
  return t;
}

template <class T>
void write_tensor(const std::string& path, const Tensor<T>& t) {
  write_file_atomic(path, encode_tensor(t));
}

template <class T = float>
Tensor<T> read_tensor(const std::string& path) {
  return decode_tensor<T>(read_file(path));
}

}  // namespace scorediff::data
