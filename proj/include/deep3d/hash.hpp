#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace deep3d {

/// 64-bit FNV-1a, used for cache keys and dataset fingerprints (not security).
class Fnv1a {
public:
  Fnv1a& update(std::string_view s) {
    for (unsigned char c : s) {
      h_ ^= c;
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xff;
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  std::uint64_t value() const noexcept { return h_; }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
  }

private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a_hex(std::string_view s) { return Fnv1a().update(s).hex(); }

}  // namespace deep3d
