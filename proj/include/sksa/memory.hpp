#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "sksa/gateway.hpp"
#include "sksa/index.hpp"

namespace sksa {

struct MemoryEntry {
    std::uint64_t entry_id = 0;
    std::string session_id;
    int turn = 0;
    std::string document;
    Vector embedding;
    std::int64_t created_at_ms = 0;
};

struct MemoryHit {
    MemoryEntry entry;
    double score = 0.0;
};

using CatalogLookup = std::function<const ProductRecord*(const std::string&)>;

/// "feedback: <F>\nresults: <id> (<title>); ..." over at most the top 5 entries.
/// Throws EmptyUpdate when both inputs are empty.
std::string compose_document(const std::string& feedback, const RankedList& ranked, const CatalogLookup& lookup);

inline constexpr std::size_t kDocumentResultCap = 5;

/// Append-only embedded memory. Entries are kept in memory and, when a file
/// is configured, mirrored to a JSON-lines file one entry per line.
class MemoryStore {
public:
    explicit MemoryStore(std::shared_ptr<Embedder> embedder, std::size_t soft_cap = 10000);

    /// Loads every entry from `path` (if it exists) and appends future entries to it.
    static std::unique_ptr<MemoryStore> open(std::shared_ptr<Embedder> embedder, const std::filesystem::path& path,
                                             std::size_t soft_cap = 10000);

    /// Appends compose_document(feedback, ranked). Returns the new size.
    std::size_t update(const std::string& session_id, int turn, const std::string& feedback, const RankedList& ranked,
                       const CatalogLookup& lookup);

    /// Appends a free-form document (e.g. an agent-written note). Returns the new size.
    std::size_t append(const std::string& session_id, int turn, const std::string& document);

    /// One entry per text with turn 0. Returns the number appended.
    std::size_t preload(const std::string& session_id, const std::vector<std::string>& preferences);

    /// Top-m by cosine similarity; ties go to the larger entry_id.
    std::vector<MemoryHit> query(const std::string& text, std::size_t m,
                                 const std::optional<std::string>& session_filter = std::nullopt) const;

    std::size_t size() const;
    std::vector<MemoryEntry> snapshot() const;

    std::size_t reads() const noexcept { return reads_.load(); }
    std::size_t writes() const noexcept { return writes_.load(); }

private:
    std::size_t append_entry(const std::string& session_id, int turn, const std::string& document);

    std::shared_ptr<Embedder> embedder_;
    std::size_t soft_cap_;
    mutable std::shared_mutex mu_;
    std::vector<MemoryEntry> entries_;
    std::uint64_t next_id_ = 1;
    std::optional<std::filesystem::path> path_;
    std::ofstream file_;
    bool cap_warned_ = false;
    mutable std::atomic<std::size_t> reads_{0};
    std::atomic<std::size_t> writes_{0};
};

}  // namespace sksa
