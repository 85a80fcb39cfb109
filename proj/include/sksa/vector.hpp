#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sksa {

/// Embedding coordinates. Stored vectors are unit-normalized float32.
using Vector = std::vector<float>;
using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint32_t kDefaultDim = 512;
inline constexpr double kNormTolerance = 1e-5;

double l2_norm(std::span<const float> v);

/// Throws NonFinite on NaN/Inf and ZeroVector when the norm is below 1e-12.
Vector normalize(std::span<const float> v);

/// dot(a,b) / (|a||b|) accumulated in double, clamped to [-1, 1].
double cosine_similarity(std::span<const float> a, std::span<const float> b);

void require_finite(std::span<const float> v);

/// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

/// Advances `state` and returns the next splitmix64 output.
std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// FNV-1a over the little-endian float32 bytes of `v`.
std::uint64_t vector_digest(std::span<const float> v) noexcept;

std::string hex64(std::uint64_t value);
std::uint64_t parse_hex64(std::string_view text);

}  // namespace sksa
