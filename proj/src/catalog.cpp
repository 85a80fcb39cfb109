#include "sksa/catalog.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "sksa/error.hpp"

namespace sksa {

namespace {

using json = nlohmann::json;

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

Bytes read_image(const Catalog& catalog, const CatalogRecord& r, bool strict) {
    const auto path = catalog.image_path(r);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ImageReadError, "product '" + r.product.id + "': cannot read " + path.string());
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) throw Error(ErrorCode::ImageReadError, "product '" + r.product.id + "': image file is empty");
    if (strict && (bytes.size() < 8 || !std::equal(std::begin(kPngSignature), std::end(kPngSignature), bytes.begin()))) {
        throw Error(ErrorCode::ImageReadError, "product '" + r.product.id + "': not a PNG file");
    }
    return bytes;
}

/// Embeds records [begin, end) with bounded parallelism; output in catalog order.
std::vector<Vector> embed_range(const Catalog& catalog, Embedder& embedder, const BuildOptions& opt,
                                std::size_t begin, std::size_t end) {
    std::vector<Vector> out(end - begin);
    std::vector<std::exception_ptr> errors(end - begin);
    std::atomic<std::size_t> next{begin};
    auto work = [&] {
        for (std::size_t i = next++; i < end; i = next++) {
            const auto& r = catalog.records[i];
            try {
                if (r.embedding) {
                    if (r.embedding->size() != opt.dim) {
                        throw Error(ErrorCode::DimensionMismatch, "product '" + r.product.id + "': embedding has d=" +
                                                                      std::to_string(r.embedding->size()));
                    }
                    out[i - begin] = normalize(*r.embedding);
                } else {
                    const Bytes img = read_image(catalog, r, opt.strict_images);
                    try {
                        out[i - begin] = embedder.embed_image(img);
                    } catch (const Error& e) {
                        throw Error(e.code(), "product '" + r.product.id + "': " + e.what());
                    }
                }
            } catch (...) {
                errors[i - begin] = std::current_exception();
            }
        }
    };
    const unsigned workers = std::max(1U, std::min<unsigned>(opt.parallelism, static_cast<unsigned>(end - begin)));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

void check_inputs(const Catalog& catalog, Embedder& embedder, const BuildOptions& opt) {
    if (catalog.records.empty()) throw Error(ErrorCode::EmptyCatalog, "catalog has no records");
    if (opt.dim == 0) throw Error(ErrorCode::InvalidArgument, "dim must be positive");
    if (embedder.dim() != opt.dim) {
        throw Error(ErrorCode::DimensionMismatch,
                    "embedder has d=" + std::to_string(embedder.dim()) + ", build wants d=" + std::to_string(opt.dim));
    }
    if (opt.checkpoint_every == 0) throw Error(ErrorCode::InvalidArgument, "checkpoint_every must be positive");
}

void append_range(EmbeddingIndex& index, const Catalog& catalog, std::size_t begin, const std::vector<Vector>& vectors) {
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        const auto& r = catalog.records[begin + i];
        index.insert_normalized(r.product.id, vectors[i], r.product);
    }
}

}  // namespace

std::uint64_t Catalog::digest() const {
    std::string canon;
    for (const auto& r : records) {
        canon += r.product.id;
        canon += '\x1f';
        canon += r.product.image_ref;
        canon += '\x1e';
    }
    return fnv1a64(canon);
}

Catalog load_catalog(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open catalog " + path.string());
    Catalog catalog;
    catalog.base_dir = path.parent_path();
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    auto where = [&] { return path.filename().string() + " line " + std::to_string(line_no); };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, where() + ": " + e.what());
        }
        if (!j.is_object()) throw Error(ErrorCode::ParseError, where() + ": record is not a JSON object");
        for (const char* field : {"id", "image_path"}) {
            if (!j.contains(field) || !j[field].is_string() || j[field].get<std::string>().empty()) {
                throw Error(ErrorCode::MissingField, where() + ": missing field '" + field + "'");
            }
        }
        CatalogRecord r;
        r.line = line_no;
        try {
            r.product.id = j["id"].get<std::string>();
            r.product.title = j.value("title", "");
            r.product.tags = j.value("tags", std::vector<std::string>{});
            r.product.image_ref = j["image_path"].get<std::string>();
            if (j.contains("embedding") && !j["embedding"].is_null()) r.embedding = j["embedding"].get<Vector>();
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, where() + ": " + e.what());
        }
        if (!seen.insert(r.product.id).second) {
            throw Error(ErrorCode::DuplicateId, where() + ": duplicate id '" + r.product.id + "'");
        }
        catalog.records.push_back(std::move(r));
    }
    return catalog;
}

EmbeddingIndex build_index(const Catalog& catalog, Embedder& embedder, const BuildOptions& options) {
    check_inputs(catalog, embedder, options);
    EmbeddingIndex index(options.dim);
    const std::size_t n = catalog.size();
    for (std::size_t begin = 0; begin < n; begin += options.checkpoint_every) {
        const std::size_t end = std::min(n, begin + options.checkpoint_every);
        append_range(index, catalog, begin, embed_range(catalog, embedder, options, begin, end));
        if (options.progress && !options.progress(end, n) && end < n) {
            throw Error(ErrorCode::BuildInterrupted, "stopped at " + std::to_string(end) + " of " + std::to_string(n));
        }
    }
    return index;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& out) { return out.string() + ".partial"; }
std::filesystem::path cursor_path(const std::filesystem::path& out) { return out.string() + ".cursor"; }

EmbeddingIndex build_index_file(const Catalog& catalog, Embedder& embedder, const std::filesystem::path& out,
                                const BuildOptions& options) {
    check_inputs(catalog, embedder, options);
    const auto partial = checkpoint_path(out);
    const auto cursor = cursor_path(out);
    const std::size_t n = catalog.size();

    EmbeddingIndex index(options.dim);
    std::size_t start = 0;
    if (std::filesystem::exists(partial) && std::filesystem::exists(cursor)) {
        std::ifstream in(cursor);
        json c;
        try {
            c = json::parse(in);
        } catch (const json::exception&) {
            c = json::object();
        }
        if (c.value("catalog_digest", "") == hex64(catalog.digest()) && c.value("dim", 0U) == options.dim) {
            EmbeddingIndex resumed = EmbeddingIndex::load(partial);
            const std::size_t next = c.value("next", std::size_t{0});
            bool prefix_ok = resumed.size() == next && next <= n;
            for (std::size_t i = 0; prefix_ok && i < next; ++i) {
                prefix_ok = resumed.id_at(i) == catalog.records[i].product.id;
            }
            if (prefix_ok) {
                index = std::move(resumed);
                start = next;
            }
        }
    }

    for (std::size_t begin = start; begin < n; begin += options.checkpoint_every) {
        const std::size_t end = std::min(n, begin + options.checkpoint_every);
        append_range(index, catalog, begin, embed_range(catalog, embedder, options, begin, end));
        if (end < n) {
            index.save(partial);
            std::ofstream c(cursor, std::ios::trunc);
            c << json{{"next", end}, {"catalog_digest", hex64(catalog.digest())}, {"dim", options.dim}}.dump() << '\n';
            if (!c) throw Error(ErrorCode::IoFailure, "cannot write " + cursor.string());
        }
        if (options.progress && !options.progress(end, n) && end < n) {
            throw Error(ErrorCode::BuildInterrupted, "stopped at " + std::to_string(end) + " of " + std::to_string(n) +
                                                         "; rerun to resume from the checkpoint");
        }
    }
    index.save(out);
    std::error_code ec;
    std::filesystem::remove(partial, ec);
    std::filesystem::remove(cursor, ec);
    return index;
}

// ---------------------------------------------------------------------------

bool VerifyReport::ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::string VerifyReport::render() const {
    std::string out;
    for (const auto& c : checks) {
        out += std::string(c.passed ? "PASS" : "FAIL") + "  " + c.name;
        if (!c.detail.empty()) out += "  " + c.detail;
        out += '\n';
    }
    out += std::string("result: ") + (ok() ? "ok" : "FAILED") + " (index " + std::to_string(index_count) +
           ", catalog " + std::to_string(catalog_count) + ")\n";
    return out;
}

VerifyReport verify_index(const EmbeddingIndex& index, const Catalog& catalog, std::optional<std::uint32_t> expected_dim) {
    VerifyReport report;
    report.index_count = index.size();
    report.catalog_count = catalog.size();

    report.checks.push_back({"count", index.size() == catalog.size(),
                             "index=" + std::to_string(index.size()) + " catalog=" + std::to_string(catalog.size())});

    std::set<std::string> index_ids;
    for (std::size_t i = 0; i < index.size(); ++i) index_ids.insert(index.id_at(i));
    std::set<std::string> catalog_ids;
    for (const auto& r : catalog.records) catalog_ids.insert(r.product.id);
    std::vector<std::string> missing, extra;
    std::set_difference(catalog_ids.begin(), catalog_ids.end(), index_ids.begin(), index_ids.end(),
                        std::back_inserter(missing));
    std::set_difference(index_ids.begin(), index_ids.end(), catalog_ids.begin(), catalog_ids.end(),
                        std::back_inserter(extra));
    std::string id_detail;
    if (!missing.empty()) id_detail += "missing from index: " + missing.front() + (missing.size() > 1 ? " (+" + std::to_string(missing.size() - 1) + ")" : "");
    if (!extra.empty()) {
        if (!id_detail.empty()) id_detail += "; ";
        id_detail += "not in catalog: " + extra.front() + (extra.size() > 1 ? " (+" + std::to_string(extra.size() - 1) + ")" : "");
    }
    report.checks.push_back({"id_set", missing.empty() && extra.empty(), id_detail});

    std::size_t bad_norms = 0;
    std::string first_bad;
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto v = index.vector_at(i);
        bool finite = std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
        if (!finite || std::abs(l2_norm(v) - 1.0) > kNormTolerance) {
            if (bad_norms++ == 0) first_bad = index.id_at(i);
        }
    }
    report.checks.push_back({"unit_norm", bad_norms == 0,
                             bad_norms == 0 ? "" : std::to_string(bad_norms) + " vectors off unit norm, first " + first_bad});

    bool dim_ok = index.dim() > 0;
    std::string dim_detail = "d=" + std::to_string(index.dim());
    if (expected_dim && index.dim() != *expected_dim) {
        dim_ok = false;
        dim_detail += " expected " + std::to_string(*expected_dim);
    }
    for (const auto& r : catalog.records) {
        if (r.embedding && r.embedding->size() != index.dim()) {
            dim_ok = false;
            dim_detail += "; catalog embedding for " + r.product.id + " has d=" + std::to_string(r.embedding->size());
            break;
        }
    }
    report.checks.push_back({"dimension", dim_ok, dim_detail});
    return report;
}

}  // namespace sksa
