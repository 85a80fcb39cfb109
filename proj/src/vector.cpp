#include "sksa/vector.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "sksa/error.hpp"

namespace sksa {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

}  // namespace

void require_finite(std::span<const float> v) {
    for (float x : v) {
        if (!std::isfinite(x)) throw Error(ErrorCode::NonFinite, "vector has a NaN or infinite component");
    }
}

double l2_norm(std::span<const float> v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sum);
}

Vector normalize(std::span<const float> v) {
    require_finite(v);
    const double norm = l2_norm(v);
    if (norm < 1e-12) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(static_cast<double>(v[i]) / norm);
    return out;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "dimensions differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    require_finite(a);
    require_finite(b);
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na < 1e-12 || nb < 1e-12) throw Error(ErrorCode::ZeroVector, "cosine similarity of a zero vector");
    return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
    std::uint64_t h = kFnvOffset;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= kFnvPrime;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
    return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t vector_digest(std::span<const float> v) noexcept {
    std::uint64_t h = kFnvOffset;
    for (float x : v) {
        std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
        for (int i = 0; i < 4; ++i) {
            h ^= (bits >> (8 * i)) & 0xffU;
            h *= kFnvPrime;
        }
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kDigits[value & 0xfU];
        value >>= 4;
    }
    return out;
}

std::uint64_t parse_hex64(std::string_view text) {
    if (text.empty() || text.size() > 16) throw Error(ErrorCode::InvalidArgument, "bad hex digest");
    std::uint64_t v = 0;
    for (char c : text) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') v |= static_cast<std::uint64_t>(c - 'A' + 10);
        else throw Error(ErrorCode::InvalidArgument, "bad hex digest");
    }
    return v;
}

}  // namespace sksa
