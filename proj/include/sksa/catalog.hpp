#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sksa/gateway.hpp"
#include "sksa/index.hpp"

namespace sksa {

struct CatalogRecord {
    ProductRecord product;
    /// Precomputed embedding carried by the record; skips the embed call.
    std::optional<Vector> embedding;
    std::size_t line = 0;
};

struct Catalog {
    /// Image paths resolve relative to this directory.
    std::filesystem::path base_dir;
    std::vector<CatalogRecord> records;

    std::size_t size() const noexcept { return records.size(); }
    std::filesystem::path image_path(const CatalogRecord& r) const { return base_dir / r.product.image_ref; }
    /// FNV-1a over ids and image paths in order; ties checkpoints to a catalog.
    std::uint64_t digest() const;
};

/// JSON lines of {id, title, tags, image_path[, embedding]}.
/// Throws ParseError / DuplicateId / MissingField citing the line number.
Catalog load_catalog(const std::filesystem::path& path);

/// Return false to stop the build after the current checkpoint.
using ProgressSink = std::function<bool(std::size_t done, std::size_t total)>;

struct BuildOptions {
    std::uint32_t dim = kDefaultDim;
    bool strict_images = false;
    std::size_t checkpoint_every = 500;
    unsigned parallelism = 8;
    ProgressSink progress;
};

/// Embeds every record in catalog order. No checkpointing.
EmbeddingIndex build_index(const Catalog& catalog, Embedder& embedder, const BuildOptions& options = {});

/// Builds into `out`, writing `out.partial` + `out.cursor` every
/// `checkpoint_every` records and resuming from them when present.
/// Throws BuildInterrupted when the progress sink asks to stop.
EmbeddingIndex build_index_file(const Catalog& catalog, Embedder& embedder, const std::filesystem::path& out,
                                const BuildOptions& options = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& out);
std::filesystem::path cursor_path(const std::filesystem::path& out);

struct VerifyReport {
    struct Check {
        std::string name;
        bool passed = false;
        std::string detail;
    };
    std::vector<Check> checks;
    std::size_t index_count = 0;
    std::size_t catalog_count = 0;

    bool ok() const;
    std::string render() const;
};

VerifyReport verify_index(const EmbeddingIndex& index, const Catalog& catalog,
                          std::optional<std::uint32_t> expected_dim = std::nullopt);

}  // namespace sksa
