#pragma once

// "FBCK" checkpoint:
//   magic "FBCK" | u32 version | u64 count |
//   per parameter: u32 name length, UTF-8 name, u8 dtype, u8 rank,
//                  rank x u64 dims, little-endian row-major payload |
//   u64 FNV-1a of all preceding bytes

#include <filesystem>

#include "fusionbert/params.hpp"
#include "fusionbert/tensor_file.hpp"

namespace fusionbert {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::vector<unsigned char> encode_checkpoint(const ParamStore<T>& store) {
  io::ByteWriter w;
  w.magic("FBCK");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(store.size());
  for (const auto& p : store) {
    w.put_string(p.name);
    io::put_tensor_body(w, p.value);
  }
  w.seal();
  return w.bytes();
}

// Parameters come back in file order, all trainable.
template <typename T>
ParamStore<T> decode_checkpoint(const std::vector<unsigned char>& bytes,
                                const std::string& what = "FBCK") {
  io::ByteReader r(bytes, what);
  r.verify_seal();
  r.expect_magic("FBCK");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError(what + ": unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint64_t>();
  ParamStore<T> store;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.get_string();
    store.add(name, io::get_tensor_body<T>(r));
  }
  r.expect_end();
  return store;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& p, const ParamStore<T>& store) {
  io::write_file(p, encode_checkpoint(store));
}

template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& p) {
  return decode_checkpoint<T>(io::read_file(p), p.string());
}

// Overwrites every parameter of `dst` from `src`; all names must be present.
template <typename To, typename From>
void restore_values(ParamStore<To>& dst, const ParamStore<From>& src) {
  for (auto& p : dst)
    if (!src.contains(p.name)) throw DataError("checkpoint: missing parameter " + p.name);
  copy_values(dst, src);
}

}  // namespace fusionbert
