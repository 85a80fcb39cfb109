#include <gtest/gtest.h>

#include <atomic>
#include <cstring>

#include <zlib.h>

#include "sksa/catalog.hpp"
#include "sksa/error.hpp"
#include "support.hpp"

using namespace sksa;
using namespace testing_support;

namespace {

ErrorCode code_of(const std::function<void()>& fn, std::string* message = nullptr) {
    try {
        fn();
    } catch (const Error& e) {
        if (message) *message = e.what();
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::Ok;
}

void write_text(const std::filesystem::path& p, const std::string& s) { write_bytes(p, {s.begin(), s.end()}); }

// n items whose images are a PNG signature followed by the item number.
std::filesystem::path make_catalog(const std::filesystem::path& dir, std::size_t n) {
    std::filesystem::create_directories(dir / "img");
    std::string lines;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "p" + std::to_string(i);
        std::vector<std::uint8_t> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
        const std::string body = "item-" + std::to_string(i);
        png.insert(png.end(), body.begin(), body.end());
        write_bytes(dir / "img" / (id + ".png"), png);
        lines += "{\"id\": \"" + id + "\", \"title\": \"Item " + std::to_string(i) + "\", \"tags\": [\"t\"], " +
                 "\"image_path\": \"img/" + id + ".png\"}\n";
    }
    write_text(dir / "catalog.jsonl", lines);
    return dir / "catalog.jsonl";
}

class CountingEmbedder final : public Embedder {
public:
    explicit CountingEmbedder(std::uint32_t d) : inner_(d) {}
    Vector embed_image(std::span<const std::uint8_t> image) override {
        ++images;
        return inner_.embed_image(image);
    }
    Vector embed_text(std::string_view text) override { return inner_.embed_text(text); }
    std::uint32_t dim() const override { return inner_.dim(); }
    std::string kind() const override { return "mock"; }
    std::atomic<std::size_t> images{0};

private:
    HashEmbedder inner_;
};

}  // namespace

TEST(LoadCatalog, ParsesInOrder) {
    TempDir tmp;
    write_text(tmp.path() / "c.jsonl",
               "{\"id\": \"a\", \"title\": \"A\", \"tags\": [\"x\", \"y\"], \"image_path\": \"a.png\"}\n"
               "\n"
               "{\"id\": \"b\", \"image_path\": \"sub/b.png\"}\n"
               "{\"id\": \"c\", \"title\": \"C\", \"tags\": [], \"image_path\": \"c.png\"}\n");
    const auto cat = load_catalog(tmp.path() / "c.jsonl");
    ASSERT_EQ(cat.size(), 3u);
    EXPECT_EQ(cat.records[0].product.id, "a");
    EXPECT_EQ(cat.records[0].product.tags, (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(cat.records[1].product.id, "b");
    EXPECT_EQ(cat.records[1].line, 3u);
    EXPECT_EQ(cat.records[2].product.title, "C");
    EXPECT_EQ(cat.image_path(cat.records[1]), tmp.path() / "sub/b.png");
}

TEST(LoadCatalog, ErrorsCiteLine) {
    TempDir tmp;
    std::string msg;
    write_text(tmp.path() / "dup.jsonl",
               "{\"id\": \"a\", \"image_path\": \"a.png\"}\n{\"id\": \"a\", \"image_path\": \"b.png\"}\n");
    EXPECT_EQ(code_of([&] { load_catalog(tmp.path() / "dup.jsonl"); }, &msg), ErrorCode::DuplicateId);
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;

    write_text(tmp.path() / "missing.jsonl", "{\"id\": \"a\", \"title\": \"no image\"}\n");
    EXPECT_EQ(code_of([&] { load_catalog(tmp.path() / "missing.jsonl"); }, &msg), ErrorCode::MissingField);
    EXPECT_NE(msg.find("image_path"), std::string::npos) << msg;

    write_text(tmp.path() / "bad.jsonl", "{\"id\": \"a\", \"image_path\": \"a.png\"}\n{\"id\": \"b\",\n");
    EXPECT_EQ(code_of([&] { load_catalog(tmp.path() / "bad.jsonl"); }, &msg), ErrorCode::ParseError);
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;

    EXPECT_EQ(code_of([&] { load_catalog(tmp.path() / "absent.jsonl"); }), ErrorCode::IoFailure);
}

TEST(BuildIndex, EachEmbeddingComesFromItsImage) {
    TempDir tmp;
    const auto cat = load_catalog(make_catalog(tmp.path(), 10));
    HashEmbedder e(64);
    BuildOptions opt;
    opt.dim = 64;
    const auto index = build_index(cat, e, opt);
    ASSERT_EQ(index.size(), 10u);
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(index.id_at(i), cat.records[i].product.id);
        const auto want = e.embed_image(read_bytes(cat.image_path(cat.records[i])));
        const auto got = index.vector_at(i);
        ASSERT_EQ(got.size(), want.size());
        EXPECT_EQ(std::memcmp(got.data(), want.data(), want.size() * sizeof(float)), 0) << i;
    }
    const auto v7 = index.vector_at(7);
    const auto top = index.top_k(std::vector<float>(v7.begin(), v7.end()), 3);
    EXPECT_EQ(top.entries.front().product_id, "p7");
    EXPECT_NEAR(top.entries.front().score, 1.0, 1e-6);
}

TEST(BuildIndex, OrderIndependentOfParallelism) {
    TempDir tmp;
    const auto cat = load_catalog(make_catalog(tmp.path(), 57));
    HashEmbedder e(32);
    BuildOptions a, b;
    a.dim = b.dim = 32;
    a.parallelism = 1;
    b.parallelism = 8;
    b.checkpoint_every = 10;
    EXPECT_EQ(build_index(cat, e, a).serialize(), build_index(cat, e, b).serialize());
}

TEST(BuildIndex, Failures) {
    TempDir tmp;
    HashEmbedder e(16);
    BuildOptions opt;
    opt.dim = 16;

    write_text(tmp.path() / "empty.jsonl", "\n");
    EXPECT_EQ(code_of([&] { build_index(load_catalog(tmp.path() / "empty.jsonl"), e, opt); }), ErrorCode::EmptyCatalog);

    write_text(tmp.path() / "gone.jsonl", "{\"id\": \"ghost\", \"image_path\": \"nope.png\"}\n");
    std::string msg;
    EXPECT_EQ(code_of([&] { build_index(load_catalog(tmp.path() / "gone.jsonl"), e, opt); }, &msg),
              ErrorCode::ImageReadError);
    EXPECT_NE(msg.find("ghost"), std::string::npos);

    write_text(tmp.path() / "txt.png", "not a png");
    write_text(tmp.path() / "strict.jsonl", "{\"id\": \"t\", \"image_path\": \"txt.png\"}\n");
    const auto strict_cat = load_catalog(tmp.path() / "strict.jsonl");
    EXPECT_EQ(build_index(strict_cat, e, opt).size(), 1u);
    opt.strict_images = true;
    EXPECT_EQ(code_of([&] { build_index(strict_cat, e, opt); }), ErrorCode::ImageReadError);

    BuildOptions wrong;
    wrong.dim = 8;
    EXPECT_EQ(code_of([&] { build_index(strict_cat, e, wrong); }), ErrorCode::DimensionMismatch);
}

TEST(BuildIndex, PrecomputedEmbeddingSkipsEmbedder) {
    TempDir tmp;
    write_text(tmp.path() / "c.jsonl",
               "{\"id\": \"e\", \"image_path\": \"absent.png\", \"embedding\": [3, 0, 4, 0]}\n");
    CountingEmbedder e(4);
    BuildOptions opt;
    opt.dim = 4;
    const auto index = build_index(load_catalog(tmp.path() / "c.jsonl"), e, opt);
    EXPECT_EQ(e.images.load(), 0u);
    const auto v = index.vector_at(0);
    EXPECT_FLOAT_EQ(v[0], 0.6f);
    EXPECT_FLOAT_EQ(v[2], 0.8f);

    write_text(tmp.path() / "bad.jsonl", "{\"id\": \"e\", \"image_path\": \"x.png\", \"embedding\": [1, 2]}\n");
    EXPECT_EQ(code_of([&] { build_index(load_catalog(tmp.path() / "bad.jsonl"), e, opt); }),
              ErrorCode::DimensionMismatch);
}

TEST(BuildIndexFile, InterruptAndResumeIsByteIdentical) {
    TempDir tmp;
    const auto cat = load_catalog(make_catalog(tmp.path() / "cat", 1234));
    BuildOptions opt;
    opt.dim = 48;

    CountingEmbedder straight(48);
    build_index_file(cat, straight, tmp.path() / "straight.idx", opt);
    EXPECT_EQ(straight.images.load(), 1234u);

    const auto out = tmp.path() / "resumed.idx";
    CountingEmbedder first(48);
    BuildOptions stop = opt;
    stop.progress = [](std::size_t done, std::size_t) { return done < 1000; };
    EXPECT_EQ(code_of([&] { build_index_file(cat, first, out, stop); }), ErrorCode::BuildInterrupted);
    EXPECT_EQ(first.images.load(), 1000u);
    EXPECT_FALSE(std::filesystem::exists(out));
    EXPECT_TRUE(std::filesystem::exists(checkpoint_path(out)));
    EXPECT_EQ(EmbeddingIndex::load(checkpoint_path(out)).size(), 1000u);

    CountingEmbedder second(48);
    build_index_file(cat, second, out, opt);
    EXPECT_EQ(second.images.load(), 234u);
    EXPECT_EQ(read_bytes(out), read_bytes(tmp.path() / "straight.idx"));
    EXPECT_FALSE(std::filesystem::exists(checkpoint_path(out)));
    EXPECT_FALSE(std::filesystem::exists(cursor_path(out)));
}

TEST(BuildIndexFile, StaleCheckpointIsIgnored) {
    TempDir tmp;
    const auto cat_a = load_catalog(make_catalog(tmp.path() / "a", 600));
    const auto cat_b = load_catalog(make_catalog(tmp.path() / "b", 700));
    BuildOptions opt;
    opt.dim = 16;
    BuildOptions stop = opt;
    stop.progress = [](std::size_t, std::size_t) { return false; };
    const auto out = tmp.path() / "x.idx";
    HashEmbedder e(16);
    EXPECT_EQ(code_of([&] { build_index_file(cat_a, e, out, stop); }), ErrorCode::BuildInterrupted);
    CountingEmbedder c(16);
    const auto built = build_index_file(cat_b, c, out, opt);
    EXPECT_EQ(c.images.load(), 700u);
    EXPECT_EQ(built.size(), 700u);
}

TEST(BuildIndexFile, RebuildIsDeterministic) {
    TempDir tmp;
    const auto cat = load_catalog(fixtures() / "catalog" / "catalog.jsonl");
    HashEmbedder e(512);
    build_index_file(cat, e, tmp.path() / "1.idx");
    build_index_file(cat, e, tmp.path() / "2.idx");
    EXPECT_EQ(read_bytes(tmp.path() / "1.idx"), read_bytes(tmp.path() / "2.idx"));
}

TEST(VerifyIndex, FreshPairPasses) {
    const auto cat = load_catalog(fixtures() / "catalog" / "catalog.jsonl");
    HashEmbedder e(512);
    const auto report = verify_index(build_index(cat, e), cat, 512u);
    EXPECT_TRUE(report.ok()) << report.render();
    EXPECT_EQ(report.index_count, cat.size());
    EXPECT_EQ(report.catalog_count, cat.size());
    EXPECT_EQ(report.checks.size(), 4u);
    EXPECT_NE(report.render().find("result: ok"), std::string::npos);
}

TEST(VerifyIndex, MissingIdReported) {
    const auto cat = load_catalog(fixtures() / "catalog" / "catalog.jsonl");
    HashEmbedder e(512);
    const auto full = build_index(cat, e);
    EmbeddingIndex partial(512);
    for (std::size_t i = 1; i < full.size(); ++i) partial.insert_normalized(full.id_at(i), full.vector_at(i), full.record_at(i));
    const auto report = verify_index(partial, cat);
    EXPECT_FALSE(report.ok());
    for (const auto& c : report.checks) {
        if (c.name == "id_set") {
            EXPECT_FALSE(c.passed);
            EXPECT_NE(c.detail.find(cat.records[0].product.id), std::string::npos) << c.detail;
        }
        if (c.name == "count") EXPECT_FALSE(c.passed);
        if (c.name == "unit_norm") EXPECT_TRUE(c.passed);
    }
}

TEST(VerifyIndex, ScaledVectorFailsNormCheck) {
    const auto cat = load_catalog(fixtures() / "catalog" / "catalog.jsonl");
    HashEmbedder e(512);
    auto bytes = build_index(cat, e).serialize();

    // Header is magic, version, d, N (20 bytes); the first record starts with its id length.
    std::uint16_t idlen = 0;
    std::memcpy(&idlen, bytes.data() + 20, 2);
    const std::size_t vec_at = 22 + idlen;
    for (std::size_t j = 0; j < 512; ++j) {
        float x;
        std::memcpy(&x, bytes.data() + vec_at + 4 * j, 4);
        x *= 2.0f;
        std::memcpy(bytes.data() + vec_at + 4 * j, &x, 4);
    }
    const auto crc = static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
    std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);

    const auto tampered = EmbeddingIndex::deserialize(bytes);
    const auto report = verify_index(tampered, cat);
    EXPECT_FALSE(report.ok());
    for (const auto& c : report.checks) {
        if (c.name == "unit_norm") {
            EXPECT_FALSE(c.passed);
            EXPECT_NE(c.detail.find(cat.records[0].product.id), std::string::npos);
        } else {
            EXPECT_TRUE(c.passed) << c.name;
        }
    }
}

TEST(VerifyIndex, DimensionMismatch) {
    const auto cat = load_catalog(fixtures() / "catalog" / "catalog.jsonl");
    HashEmbedder e(512);
    EXPECT_FALSE(verify_index(build_index(cat, e), cat, 256u).ok());
}
