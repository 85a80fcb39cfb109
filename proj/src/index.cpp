#include "sksa/index.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <thread>

#include <nlohmann/json.hpp>

#include "sksa/error.hpp"

namespace sksa {

namespace {

constexpr char kMagic[4] = {'S', 'K', 'S', 'A'};

struct Scored {
    double score;
    std::size_t slot;
};

class Writer {
public:
    void put_u16(std::uint16_t v) { put_le(v, 2); }
    void put_u32(std::uint32_t v) { put_le(v, 4); }
    void put_u64(std::uint64_t v) { put_le(v, 8); }
    void put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }
    void put_bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t>& bytes() { return out_; }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffU));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw Error(ErrorCode::TruncatedFile, "index file ends mid-record");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

nlohmann::json record_to_json(const ProductRecord& r) {
    return {{"id", r.id}, {"title", r.title}, {"tags", r.tags}, {"image_ref", r.image_ref}};
}

ProductRecord record_from_json(const nlohmann::json& j) {
    ProductRecord r;
    r.id = j.at("id").get<std::string>();
    r.title = j.value("title", "");
    r.tags = j.value("tags", std::vector<std::string>{});
    r.image_ref = j.at("image_ref").get<std::string>();
    return r;
}

void keep_best(std::vector<Scored>& heap, std::size_t k, const std::vector<std::string>& ids, Scored cand) {
    auto worse = [&ids](const Scored& a, const Scored& b) {
        return ranks_before(a.score, ids[a.slot], b.score, ids[b.slot]);
    };
    // `heap` is a max-heap on "worseness": front() is the weakest kept entry.
    if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), worse);
        return;
    }
    const Scored& weakest = heap.front();
    if (ranks_before(cand.score, ids[cand.slot], weakest.score, ids[weakest.slot])) {
        std::pop_heap(heap.begin(), heap.end(), worse);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), worse);
    }
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) noexcept {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1U << 30));
        crc = crc32(crc, bytes.data() + pos, chunk);
        pos += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void EmbeddingIndex::check_dim(std::size_t got) {
    if (dim_ == 0) {
        if (got == 0) throw Error(ErrorCode::DimensionMismatch, "embedding has zero length");
        dim_ = static_cast<std::uint32_t>(got);
    } else if (got != dim_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "expected d=" + std::to_string(dim_) + ", got " + std::to_string(got));
    }
}

void EmbeddingIndex::insert(const std::string& id, std::span<const float> embedding, ProductRecord meta) {
    const Vector unit = normalize(embedding);
    insert_normalized(id, unit, std::move(meta));
}

void EmbeddingIndex::insert_normalized(const std::string& id, std::span<const float> embedding, ProductRecord meta) {
    if (id.empty()) throw Error(ErrorCode::InvalidArgument, "product id must be non-empty");
    if (id.size() > 0xffff) throw Error(ErrorCode::InvalidArgument, "product id longer than 65535 bytes");
    if (slots_.contains(id)) throw Error(ErrorCode::DuplicateId, "duplicate product id '" + id + "'");
    require_finite(embedding);
    check_dim(embedding.size());
    if (meta.id.empty()) meta.id = id;
    slots_.emplace(id, ids_.size());
    ids_.push_back(id);
    records_.push_back(std::move(meta));
    data_.insert(data_.end(), embedding.begin(), embedding.end());
}

std::span<const float> EmbeddingIndex::vector_at(std::size_t slot) const {
    if (slot >= ids_.size()) throw Error(ErrorCode::InvalidArgument, "slot out of range");
    return std::span<const float>(data_).subspan(slot * dim_, dim_);
}

const ProductRecord* EmbeddingIndex::find(const std::string& id) const {
    auto it = slots_.find(id);
    return it == slots_.end() ? nullptr : &records_[it->second];
}

RankedList EmbeddingIndex::top_k(std::span<const float> query, std::size_t k, unsigned shards) const {
    if (ids_.empty()) throw Error(ErrorCode::EmptyIndex, "top_k on an empty index");
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
    if (query.size() != dim_) {
        throw Error(ErrorCode::DimensionMismatch,
                    "query has d=" + std::to_string(query.size()) + ", index has d=" + std::to_string(dim_));
    }
    const Vector q = normalize(query);
    std::vector<double> qd(q.begin(), q.end());

    const std::size_t n = ids_.size();
    const std::size_t keep = std::min(k, n);
    shards = std::max(1U, std::min<unsigned>(shards, static_cast<unsigned>(n)));

    auto scan = [&](std::size_t begin, std::size_t end, std::vector<Scored>& heap) {
        heap.reserve(keep + 1);
        for (std::size_t slot = begin; slot < end; ++slot) {
            const float* v = data_.data() + slot * dim_;
            double dot = 0.0;
            for (std::size_t i = 0; i < dim_; ++i) dot += qd[i] * static_cast<double>(v[i]);
            keep_best(heap, keep, ids_, Scored{std::clamp(dot, -1.0, 1.0), slot});
        }
    };

    std::vector<std::vector<Scored>> partial(shards);
    if (shards == 1) {
        scan(0, n, partial[0]);
    } else {
        std::vector<std::thread> workers;
        const std::size_t step = (n + shards - 1) / shards;
        for (unsigned s = 0; s < shards; ++s) {
            const std::size_t begin = std::min(n, s * step);
            const std::size_t end = std::min(n, begin + step);
            workers.emplace_back([&, s, begin, end] { scan(begin, end, partial[s]); });
        }
        for (auto& w : workers) w.join();
    }

    std::vector<Scored> merged;
    for (auto& p : partial) merged.insert(merged.end(), p.begin(), p.end());
    std::sort(merged.begin(), merged.end(), [this](const Scored& a, const Scored& b) {
        return ranks_before(a.score, ids_[a.slot], b.score, ids_[b.slot]);
    });
    merged.resize(std::min(merged.size(), keep));

    RankedList out;
    out.query_digest = vector_digest(q);
    out.entries.reserve(merged.size());
    for (const auto& s : merged) out.entries.push_back({ids_[s.slot], s.score});
    return out;
}

std::vector<std::uint8_t> EmbeddingIndex::serialize() const {
    Writer w;
    w.put_bytes(std::string_view(kMagic, 4));
    w.put_u32(kFormatVersion);
    w.put_u32(dim_);
    w.put_u64(ids_.size());
    for (std::size_t slot = 0; slot < ids_.size(); ++slot) {
        w.put_u16(static_cast<std::uint16_t>(ids_[slot].size()));
        w.put_bytes(ids_[slot]);
        for (float x : vector_at(slot)) w.put_f32(x);
        const std::string meta = record_to_json(records_[slot]).dump();
        w.put_u32(static_cast<std::uint32_t>(meta.size()));
        w.put_bytes(meta);
    }
    w.put_u32(crc32_of(w.bytes()));
    return std::move(w.bytes());
}

EmbeddingIndex EmbeddingIndex::deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::BadMagic, "not an index file");
    }
    if (bytes.size() < 24) throw Error(ErrorCode::TruncatedFile, "index header incomplete");
    Reader header(bytes.subspan(4));
    const std::uint32_t version = header.u32();
    if (version != kFormatVersion) {
        throw Error(ErrorCode::UnsupportedVersion, "index format version " + std::to_string(version));
    }
    const auto body = bytes.first(bytes.size() - 4);
    Reader tail(bytes.last(4));
    if (crc32_of(body) != tail.u32()) throw Error(ErrorCode::TruncatedFile, "index checksum mismatch");

    Reader r(body.subspan(8));
    const std::uint32_t dim = r.u32();
    const std::uint64_t count = r.u64();
    EmbeddingIndex index(dim);
    Vector v(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string id = r.str(r.u16());
        for (auto& x : v) x = r.f32();
        const std::string meta = r.str(r.u32());
        ProductRecord rec;
        try {
            rec = record_from_json(nlohmann::json::parse(meta));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::TruncatedFile, std::string("bad record metadata: ") + e.what());
        }
        index.insert_normalized(id, v, std::move(rec));
    }
    if (r.remaining() != 0) throw Error(ErrorCode::TruncatedFile, "trailing bytes after last record");
    return index;
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot move index into place: " + ec.message());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace sksa
