#include "sksa/memory.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <mutex>

#include <nlohmann/json.hpp>

#include "sksa/error.hpp"

namespace sksa {

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

nlohmann::json entry_to_json(const MemoryEntry& e) {
    return {{"entry_id", e.entry_id}, {"session_id", e.session_id}, {"turn", e.turn},
            {"document", e.document}, {"embedding", e.embedding},   {"created_at", e.created_at_ms}};
}

}  // namespace

std::string compose_document(const std::string& feedback, const RankedList& ranked, const CatalogLookup& lookup) {
    if (feedback.empty() && ranked.empty()) throw Error(ErrorCode::EmptyUpdate, "no feedback and no results");
    std::string doc = "feedback: " + feedback + "\nresults:";
    const std::size_t n = std::min(ranked.entries.size(), kDocumentResultCap);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& id = ranked.entries[i].product_id;
        const ProductRecord* rec = lookup ? lookup(id) : nullptr;
        doc += i == 0 ? " " : "; ";
        doc += id + " (" + (rec ? rec->title : std::string()) + ")";
    }
    return doc;
}

MemoryStore::MemoryStore(std::shared_ptr<Embedder> embedder, std::size_t soft_cap)
    : embedder_(std::move(embedder)), soft_cap_(soft_cap) {
    if (!embedder_) throw Error(ErrorCode::InvalidArgument, "memory store needs an embedder");
}

std::unique_ptr<MemoryStore> MemoryStore::open(std::shared_ptr<Embedder> embedder, const std::filesystem::path& path,
                                               std::size_t soft_cap) {
    auto store = std::make_unique<MemoryStore>(std::move(embedder), soft_cap);
    if (std::filesystem::exists(path)) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::IoFailure, "cannot read memory file " + path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const auto j = nlohmann::json::parse(line);
                MemoryEntry e;
                e.entry_id = j.at("entry_id").get<std::uint64_t>();
                e.session_id = j.at("session_id").get<std::string>();
                e.turn = j.at("turn").get<int>();
                e.document = j.at("document").get<std::string>();
                e.embedding = j.at("embedding").get<Vector>();
                e.created_at_ms = j.at("created_at").get<std::int64_t>();
                if (!store->entries_.empty() && e.entry_id <= store->entries_.back().entry_id) {
                    throw Error(ErrorCode::ParseError, "entry_id not increasing");
                }
                if (e.embedding.size() != store->embedder_->dim()) {
                    throw Error(ErrorCode::DimensionMismatch, "memory embedding has d=" + std::to_string(e.embedding.size()));
                }
                store->next_id_ = e.entry_id + 1;
                store->entries_.push_back(std::move(e));
            } catch (const nlohmann::json::exception& ex) {
                throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
            }
        }
    }
    store->path_ = path;
    store->file_.open(path, std::ios::app);
    if (!store->file_) throw Error(ErrorCode::IoFailure, "cannot open memory file " + path.string() + " for append");
    return store;
}

std::size_t MemoryStore::append_entry(const std::string& session_id, int turn, const std::string& document) {
    if (document.empty()) throw Error(ErrorCode::EmptyUpdate, "memory document is empty");
    // Embed outside the lock; the append itself is atomic with respect to readers.
    Vector embedding = embedder_->embed_text(document);
    std::unique_lock lock(mu_);
    MemoryEntry e;
    e.entry_id = next_id_++;
    e.session_id = session_id;
    e.turn = turn;
    e.document = document;
    e.embedding = std::move(embedding);
    e.created_at_ms = now_ms();
    if (file_.is_open()) {
        file_ << entry_to_json(e).dump() << '\n';
        file_.flush();
        if (!file_) throw Error(ErrorCode::IoFailure, "memory file write failed");
    }
    entries_.push_back(std::move(e));
    ++writes_;
    if (entries_.size() > soft_cap_ && !cap_warned_) {
        cap_warned_ = true;
        std::cerr << "sksa: memory store exceeded soft cap of " << soft_cap_ << " entries\n";
    }
    return entries_.size();
}

std::size_t MemoryStore::update(const std::string& session_id, int turn, const std::string& feedback,
                                const RankedList& ranked, const CatalogLookup& lookup) {
    return append_entry(session_id, turn, compose_document(feedback, ranked, lookup));
}

std::size_t MemoryStore::append(const std::string& session_id, int turn, const std::string& document) {
    return append_entry(session_id, turn, document);
}

std::size_t MemoryStore::preload(const std::string& session_id, const std::vector<std::string>& preferences) {
    std::size_t n = 0;
    for (const auto& p : preferences) {
        append_entry(session_id, 0, p);
        ++n;
    }
    return n;
}

std::vector<MemoryHit> MemoryStore::query(const std::string& text, std::size_t m,
                                          const std::optional<std::string>& session_filter) const {
    ++reads_;
    {
        std::shared_lock lock(mu_);
        if (entries_.empty()) return {};
    }
    if (m == 0) return {};
    const Vector q = embedder_->embed_text(text);
    std::vector<MemoryHit> hits;
    {
        std::shared_lock lock(mu_);
        for (const auto& e : entries_) {
            if (session_filter && e.session_id != *session_filter) continue;
            hits.push_back({e, cosine_similarity(q, e.embedding)});
        }
    }
    std::sort(hits.begin(), hits.end(), [](const MemoryHit& a, const MemoryHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.entry.entry_id > b.entry.entry_id;
    });
    if (hits.size() > m) hits.resize(m);
    return hits;
}

std::size_t MemoryStore::size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
}

std::vector<MemoryEntry> MemoryStore::snapshot() const {
    std::shared_lock lock(mu_);
    return entries_;
}

}  // namespace sksa
