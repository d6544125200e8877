#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "consis/error.hpp"

namespace consis {

// FNV-1a 64-bit. Used for run manifests and reproducibility checks, not for
// anything security sensitive.
class Fnv1a64 {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ull;
    }
  }

  void update_string(const std::string& s) { update(s.data(), s.size()); }

  template <typename T>
  void update_pod(const T& v) {
    update(&v, sizeof(T));
  }

  std::uint64_t value() const { return state_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(state_));
    return std::string(buf);
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  Fnv1a64 h;
  h.update(data, n);
  return h.value();
}

inline std::string hash_bytes_hex(const void* data, std::size_t n) {
  Fnv1a64 h;
  h.update(data, n);
  return h.hex();
}

inline std::string hash_string_hex(const std::string& s) {
  return hash_bytes_hex(s.data(), s.size());
}

inline std::string hash_file_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::io_error, "cannot open " + path);
  Fnv1a64 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

// Cheap integer mixer for deriving per-stage seeds from a run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace consis
