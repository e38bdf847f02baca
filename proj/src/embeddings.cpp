#include "goalcap/embeddings.hpp"

#include "goalcap/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace goalcap {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string lowercase_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

Lexicon Lexicon::from_words(const std::vector<std::string>& words) {
    Lexicon lex;
    for (const auto& w : words) {
        if (!w.empty()) lex.words_.insert(lowercase_ascii(w));
    }
    return lex;
}

Lexicon Lexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EmbedError("lexicon: cannot open '" + path + "'");
    Lexicon lex;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lex.words_.insert(lowercase_ascii(line));
    }
    return lex;
}

void Lexicon::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EmbedError("lexicon: cannot open '" + path + "' for writing");
    std::vector<std::string> sorted(words_.begin(), words_.end());
    std::sort(sorted.begin(), sorted.end());
    for (const auto& w : sorted) out << w << '\n';
    if (!out) throw EmbedError("lexicon: write failed for '" + path + "'");
}

bool Lexicon::contains(std::string_view token) const {
    return words_.count(lowercase_ascii(token)) > 0;
}

std::vector<std::string> SubwordHasher::ngrams(std::string_view token) const {
    std::vector<std::string> grams;
    const int len = static_cast<int>(token.size());
    for (int n = ngram_min; n <= ngram_max; ++n) {
        for (int i = 0; i + n <= len; ++i) grams.emplace_back(token.substr(i, n));
    }
    if (grams.empty()) grams.emplace_back(token);
    return grams;
}

std::vector<double> SubwordHasher::bucket_vector(std::uint64_t bucket, int dim) const {
    auto rng = make_rng(seed, bucket);
    std::vector<double> v(dim);
    for (auto& x : v) x = uniform01(rng) - 0.5;
    return v;
}

std::vector<double> embed_token(const std::string& token, const VectorTable& table,
                                const SubwordHasher& hasher) {
    std::string_view sv(token);
    while (!sv.empty() && std::isspace(static_cast<unsigned char>(sv.front()))) sv.remove_prefix(1);
    while (!sv.empty() && std::isspace(static_cast<unsigned char>(sv.back()))) sv.remove_suffix(1);
    if (sv.empty()) throw EmbedError("embed_token: empty token");

    if (auto it = table.entries.find(std::string(sv)); it != table.entries.end()) return it->second;

    const auto grams = hasher.ngrams(sv);
    std::vector<double> acc(table.dim, 0.0);
    for (const auto& g : grams) {
        const std::uint64_t bucket = fnv1a64(g) % hasher.bucket_count;
        const auto bv = hasher.bucket_vector(bucket, table.dim);
        for (int i = 0; i < table.dim; ++i) acc[i] += bv[i];
    }
    for (auto& x : acc) x /= static_cast<double>(grams.size());
    double norm = 0.0;
    for (double x : acc) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (auto& x : acc) x /= norm;
    }
    return acc;
}

VectorTable VectorTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EmbedError("vector table: cannot open '" + path + "'");
    std::string header;
    if (!std::getline(in, header)) throw EmbedError("vector table: missing header");
    std::istringstream hs(header);
    std::string tag;
    VectorTable table;
    if (!(hs >> tag >> table.dim) || tag != "dim" || table.dim <= 0)
        throw EmbedError("vector table: header must be 'dim N'");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        std::vector<double> vec(table.dim);
        for (auto& x : vec) {
            if (!(ls >> x)) throw EmbedError("vector table: short row for '" + word + "'");
        }
        table.entries[word] = std::move(vec);
    }
    return table;
}

void VectorTable::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EmbedError("vector table: cannot open '" + path + "' for writing");
    out << "dim " << dim << '\n';
    std::vector<std::string> keys;
    keys.reserve(entries.size());
    for (const auto& [k, v] : entries) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    out.precision(17);
    for (const auto& k : keys) {
        out << k;
        for (double x : entries.at(k)) out << ' ' << x;
        out << '\n';
    }
    if (!out) throw EmbedError("vector table: write failed for '" + path + "'");
}

}  // namespace goalcap
