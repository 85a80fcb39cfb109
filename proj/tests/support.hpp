#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

namespace testing_support {

inline std::filesystem::path fixtures() { return SKSA_FIXTURES; }

class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("sksa_test_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::vector<float> gaussian(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::vector<float> v(d);
    for (auto& x : v) x = nd(rng);
    return v;
}

struct OracleHit {
    std::string id;
    double score;
};

// Independent full-sort reference: normalize both sides in long double, score, sort everything.
inline std::vector<OracleHit> brute_force(const std::vector<std::string>& ids, const std::vector<std::vector<float>>& stored,
                                          const std::vector<float>& query, std::size_t k) {
    auto unit = [](const std::vector<float>& v) {
        long double n = 0;
        for (float x : v) n += static_cast<long double>(x) * x;
        n = std::sqrt(n);
        std::vector<long double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
        return out;
    };
    const auto q = unit(query);
    std::vector<OracleHit> all;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto s = unit(stored[i]);
        long double dot = 0;
        for (std::size_t j = 0; j < s.size(); ++j) dot += s[j] * q[j];
        all.push_back({ids[i], static_cast<double>(dot)});
    }
    std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

}  // namespace testing_support
