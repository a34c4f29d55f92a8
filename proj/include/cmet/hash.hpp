#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cmet {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a_file(const std::string& path);
/// 16 lower-case hex digits.
std::string hex64(std::uint64_t v);

}  // namespace cmet
