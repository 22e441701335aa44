#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>

namespace scanrl {

// FNV-1a 64-bit, used for provenance digests of configs, meshes and policies.
class Digest {
 public:
  Digest& update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
    return *this;
  }

  Digest& update(const std::string& s) { return update(s.data(), s.size()); }

  template <typename T>
  Digest& update_pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    return update(&v, sizeof(T));
  }

  std::uint64_t value() const { return hash_; }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_));
    return buf;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::string digest_hex(const std::string& payload) {
  return Digest().update(payload).hex();
}

}  // namespace scanrl
