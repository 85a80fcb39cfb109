#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sksa/vector.hpp"

namespace sksa {

struct ProductRecord {
    std::string id;
    std::string title;
    std::vector<std::string> tags;
    std::string image_ref;

    bool operator==(const ProductRecord&) const = default;
};

struct RankedEntry {
    std::string product_id;
    double score = 0.0;

    bool operator==(const RankedEntry&) const = default;
};

/// Catalog items ordered by descending similarity; ties by ascending id.
struct RankedList {
    std::vector<RankedEntry> entries;
    std::uint64_t query_digest = 0;

    bool empty() const noexcept { return entries.empty(); }
    bool operator==(const RankedList&) const = default;
};

/// Strict weak order used everywhere a ranked list is produced.
inline bool ranks_before(double score_a, const std::string& id_a, double score_b, const std::string& id_b) {
    if (score_a != score_b) return score_a > score_b;
    return id_a < id_b;
}

/// Exact brute-force cosine index over unit-normalized float32 vectors.
///
/// Vectors are normalized on insert so scoring is a dot product, accumulated
/// in double. The index is safe for concurrent `top_k` calls once no more
/// inserts happen.
class EmbeddingIndex {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    /// `dim == 0` leaves the dimension unset until the first insert.
    explicit EmbeddingIndex(std::uint32_t dim = 0) : dim_(dim) {}

    void insert(const std::string& id, std::span<const float> embedding, ProductRecord meta);

    /// Inserts a vector that is already unit-normalized, bit-for-bit.
    void insert_normalized(const std::string& id, std::span<const float> embedding, ProductRecord meta);

    /// Returns min(k, size()) entries. `shards > 1` splits the scan across
    /// threads; the result does not depend on the shard count.
    RankedList top_k(std::span<const float> query, std::size_t k, unsigned shards = 1) const;

    std::size_t size() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }
    std::uint32_t dim() const noexcept { return dim_; }

    const std::string& id_at(std::size_t slot) const { return ids_.at(slot); }
    const ProductRecord& record_at(std::size_t slot) const { return records_.at(slot); }
    std::span<const float> vector_at(std::size_t slot) const;

    /// nullptr when the id is absent.
    const ProductRecord* find(const std::string& id) const;

    std::vector<std::uint8_t> serialize() const;
    static EmbeddingIndex deserialize(std::span<const std::uint8_t> bytes);

    void save(const std::filesystem::path& path) const;
    static EmbeddingIndex load(const std::filesystem::path& path);

private:
    void check_dim(std::size_t got);

    std::uint32_t dim_;
    std::vector<std::string> ids_;
    std::vector<ProductRecord> records_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> slots_;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) noexcept;

}  // namespace sksa
