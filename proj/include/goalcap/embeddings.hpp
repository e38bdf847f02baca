// Token vectors and the intelligibility lexicon. In-table tokens return their
// stored vector; everything else falls back to deterministic subword hashing:
// FNV-1a over byte n-grams into seeded bucket vectors, averaged and
// L2-normalized. A practical stand-in for multi-gigabyte pretrained vectors.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace goalcap {

class EmbedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string lowercase_ascii(std::string_view s);

class Lexicon {
public:
    Lexicon() = default;
    static Lexicon from_words(const std::vector<std::string>& words);
    static Lexicon load(const std::string& path);  // word-per-line UTF-8
    void save(const std::string& path) const;

    // case-insensitive membership
    bool contains(std::string_view token) const;
    std::size_t size() const { return words_.size(); }
    const std::unordered_set<std::string>& words() const { return words_; }

private:
    std::unordered_set<std::string> words_;  // stored lowercased
};

struct SubwordHasher {
    int ngram_min = 3;
    int ngram_max = 6;
    std::uint64_t bucket_count = 4096;
    std::uint64_t seed = 0x5eedf00d;

    // deterministic uniform [-0.5, 0.5]^dim vector for one bucket
    std::vector<double> bucket_vector(std::uint64_t bucket, int dim) const;
    // byte n-grams of the token; a token shorter than ngram_min contributes
    // itself as a single gram so no token ever hashes to nothing
    std::vector<std::string> ngrams(std::string_view token) const;
};

struct VectorTable {
    int dim = 0;
    std::unordered_map<std::string, std::vector<double>> entries;

    static VectorTable load(const std::string& path);
    void save(const std::string& path) const;
};

// Stored vector for in-table tokens, hashed subword average otherwise.
// Always returns exactly table.dim finite components.
std::vector<double> embed_token(const std::string& token, const VectorTable& table,
                                const SubwordHasher& hasher);

inline bool is_intelligible(std::string_view token, const Lexicon& lexicon) {
    return lexicon.contains(token);
}

}  // namespace goalcap
