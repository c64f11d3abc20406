#pragma once

// "FBT1" tensor container:
//   magic "FBT1" | u8 dtype (0=f32, 1=f64) | u8 rank | rank x u64 dims |
//   little-endian row-major payload | u64 FNV-1a of all preceding bytes

#include <filesystem>

#include "fusionbert/binary_io.hpp"
#include "fusionbert/tensor.hpp"

namespace fusionbert::io {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

template <typename T>
void put_tensor_body(ByteWriter& w, const Tensor<T>& t) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.dims()) w.put<std::uint64_t>(d);
  w.put_array(t.data().data(), t.size());
}

// Reads dtype/rank/dims/payload and converts to T.
template <typename T>
Tensor<T> get_tensor_body(ByteReader& r) {
  const auto dtype = r.get<std::uint8_t>();
  const auto rank = r.get<std::uint8_t>();
  if (dtype > 1) throw DataError(r.what() + ": unknown dtype " + std::to_string(dtype));
  if (rank < 1 || rank > 3) throw DataError(r.what() + ": bad rank " + std::to_string(rank));
  Dims dims(rank);
  for (auto& d : dims) {
    d = r.get<std::uint64_t>();
    if (d == 0 || d > (std::uint64_t{1} << 32)) throw DataError(r.what() + ": bad extent");
  }
  const std::size_t n = dims_numel(dims);
  std::vector<T> data(n);
  if (dtype == 0) {
    std::vector<float> raw(n);
    r.get_array(raw.data(), n);
    std::copy(raw.begin(), raw.end(), data.begin());
  } else {
    std::vector<double> raw(n);
    r.get_array(raw.data(), n);
    std::copy(raw.begin(), raw.end(), data.begin());
  }
  return Tensor<T>(std::move(dims), std::move(data));
}

template <typename T>
std::vector<unsigned char> encode_tensor(const Tensor<T>& t) {
  ByteWriter w;
  w.magic("FBT1");
  put_tensor_body(w, t);
  w.seal();
  return w.bytes();
}

template <typename T>
Tensor<T> decode_tensor(const std::vector<unsigned char>& bytes, const std::string& what = "FBT1") {
  ByteReader r(bytes, what);
  r.verify_seal();
  r.expect_magic("FBT1");
  auto t = get_tensor_body<T>(r);
  r.expect_end();
  return t;
}

template <typename T>
void save_tensor(const std::filesystem::path& p, const Tensor<T>& t) {
  write_file(p, encode_tensor(t));
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& p) {
  return decode_tensor<T>(read_file(p), p.string());
}

}  // namespace fusionbert::io
