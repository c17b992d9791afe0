/**
 * @file util.hpp
 * @brief Seed mixing, stable hashing, and small file helpers.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace maestro {

/// splitmix64 step. Used to derive independent rng streams from one seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Combine a seed with one or more salts into a new, well-mixed seed.
template <typename... Salts>
uint64_t mix_seed(uint64_t seed, Salts... salts) {
  ((seed = splitmix64(seed ^ static_cast<uint64_t>(salts))), ...);
  return splitmix64(seed);
}

/// FNV-1a over bytes; stable across platforms and runs.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);
std::string read_file_text(const std::filesystem::path& path);
void write_file_text(const std::filesystem::path& path, std::string_view text);

}  // namespace maestro
