#pragma once

// Self-describing binary container for Parameters.
//
//   magic        8 bytes  "FEDTTAP1"
//   version      u32      1
//   input_dim    u32
//   n_hidden     u32, followed by n_hidden u32 widths
//   n_arrays     u32
//   per array:   u32 name length, name bytes, u8 kind, u64 rows, u64 cols,
//                rows*cols IEEE-754 binary64 values
//   checksum     u64      FNV-1a over every preceding byte
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedtta/nn.hpp"

namespace fedtta {

inline constexpr char kParamsMagic[8] = {'F', 'E', 'D', 'T', 'T', 'A', 'P', '1'};
inline constexpr std::uint32_t kParamsVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw std::runtime_error("parameter file truncated");
  }
  template <typename U>
  U uint() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_parameters(const Parameters& params) {
  detail::ByteWriter w;
  w.raw(kParamsMagic, sizeof kParamsMagic);
  w.uint<std::uint32_t>(kParamsVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.spec.input_dim));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.spec.hidden_dims.size()));
  for (auto h : params.spec.hidden_dims) w.uint<std::uint32_t>(static_cast<std::uint32_t>(h));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.arrays.size()));
  for (const auto& a : params.arrays) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(a.name.size()));
    w.raw(a.name.data(), a.name.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(a.kind));
    w.uint<std::uint64_t>(a.rows);
    w.uint<std::uint64_t>(a.cols);
    for (double v : a.values) w.f64(v);
  }
  const auto sum = detail::fnv1a(detail::kFnvOffset, w.bytes().data(), w.bytes().size());
  w.uint<std::uint64_t>(sum);
  return std::move(w.bytes());
}

inline Parameters decode_parameters(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kParamsMagic + 8 || std::memcmp(bytes.data(), kParamsMagic, sizeof kParamsMagic) != 0) {
    throw std::runtime_error("not a parameter file (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  detail::ByteReader tail(bytes.data() + body, 8);
  if (tail.uint<std::uint64_t>() != detail::fnv1a(detail::kFnvOffset, bytes.data(), body)) {
    throw std::runtime_error("parameter file checksum mismatch");
  }

  detail::ByteReader r(bytes.data() + sizeof kParamsMagic, body - sizeof kParamsMagic);
  if (const auto v = r.uint<std::uint32_t>(); v != kParamsVersion) {
    throw std::runtime_error("unsupported parameter file version " + std::to_string(v));
  }
  NetworkSpec spec;
  spec.input_dim = r.uint<std::uint32_t>();
  const auto n_hidden = r.uint<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_hidden; ++i) spec.hidden_dims.push_back(r.uint<std::uint32_t>());
  spec.validate();

  // Layout must be exactly what init_network builds for this spec.
  Parameters params = init_network(spec, 0);
  if (r.uint<std::uint32_t>() != params.arrays.size()) throw std::runtime_error("parameter file: wrong array count");
  for (auto& a : params.arrays) {
    const auto name = r.str(r.uint<std::uint32_t>());
    const auto kind = r.uint<std::uint8_t>();
    const auto rows = r.uint<std::uint64_t>();
    const auto cols = r.uint<std::uint64_t>();
    if (name != a.name || kind != static_cast<std::uint8_t>(a.kind) || rows != a.rows || cols != a.cols) {
      throw std::runtime_error("parameter file: array '" + name + "' does not match the declared network");
    }
    for (auto& v : a.values) v = r.f64();
    if (a.kind == ArrayKind::BnRunningVar) {
      for (double v : a.values) {
        if (!(v > 0.0)) throw std::runtime_error("parameter file: non-positive running variance in " + name);
      }
    }
  }
  if (r.remaining() != 0) throw std::runtime_error("parameter file: trailing bytes");
  return params;
}

inline void save_parameters(const std::string& path, const Parameters& params) {
  const auto bytes = encode_parameters(params);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Parameters load_parameters(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_parameters(bytes);
}

}  // namespace fedtta
