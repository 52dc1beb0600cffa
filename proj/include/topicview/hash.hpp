#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace topicview {

// 64-bit FNV-1a. Used for artifact fingerprints and mock image seeds, never
// for anything security related.
class Fnv1a {
 public:
  void update(std::string_view bytes) noexcept {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view bytes) noexcept {
  Fnv1a h;
  h.update(bytes);
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Fingerprint of an ordered token list; two artifacts built over the same
// vocabulary (same tokens, same id order) share it.
inline std::string token_list_hash(std::span<const std::string> tokens) {
  Fnv1a h;
  for (const auto& t : tokens) {
    h.update(t);
    h.update("\n");
  }
  return hex64(h.digest());
}

}  // namespace topicview
