#include "goalcap/vocab.hpp"

#include "goalcap/embeddings.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace goalcap {

TokenizerVocab::TokenizerVocab() {
    id_to_token_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    for (std::int32_t i = 0; i < static_cast<std::int32_t>(id_to_token_.size()); ++i)
        token_to_id_[id_to_token_[i]] = i;
}

TokenizerVocab TokenizerVocab::from_tokens(const std::vector<std::string>& tokens) {
    TokenizerVocab v;
    for (const auto& t : tokens) {
        if (t.empty()) throw VocabError("vocab: empty token");
        if (v.token_to_id_.count(t)) throw VocabError("vocab: duplicate token '" + t + "'");
        v.token_to_id_[t] = v.size();
        v.id_to_token_.push_back(t);
    }
    return v;
}

TokenizerVocab TokenizerVocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw VocabError("vocab: cannot open '" + path + "'");
    std::vector<std::string> tokens;
    std::string line;
    std::size_t specials_seen = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        // the four specials open the file; everything after is appended
        if (specials_seen < 4) {
            static const std::vector<std::string> kSpecials{"<pad>", "<bos>", "<eos>", "<unk>"};
            if (line != kSpecials[specials_seen])
                throw VocabError("vocab: file must start with <pad>, <bos>, <eos>, <unk>");
            ++specials_seen;
            continue;
        }
        tokens.push_back(line);
    }
    if (specials_seen < 4) throw VocabError("vocab: missing special tokens in '" + path + "'");
    return from_tokens(tokens);
}

void TokenizerVocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw VocabError("vocab: cannot open '" + path + "' for writing");
    for (const auto& t : id_to_token_) out << t << '\n';
    if (!out) throw VocabError("vocab: write failed for '" + path + "'");
}

std::int32_t TokenizerVocab::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& TokenizerVocab::token(std::int32_t id) const {
    if (id < 0 || id >= size()) throw VocabError("vocab: id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t TokenizerVocab::content_hash() const {
    std::string joined;
    for (const auto& t : id_to_token_) {
        joined += t;
        joined += '\n';
    }
    return fnv1a64(joined);
}

std::vector<std::string> clean_caption(const std::string& raw) {
    std::string cleaned;
    cleaned.reserve(raw.size());
    for (unsigned char c : raw) {
        if (c < 0x20 || c == 0x7f) {
            cleaned += ' ';  // control characters separate words
        } else if (std::ispunct(c)) {
            // punctuation is dropped entirely
        } else if (c >= 'A' && c <= 'Z') {
            cleaned += static_cast<char>(c - 'A' + 'a');
        } else {
            cleaned += static_cast<char>(c);
        }
    }
    std::vector<std::string> words;
    std::istringstream in(cleaned);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

std::vector<std::string> wordpiece(const std::string& word, const TokenizerVocab& vocab) {
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < word.size()) {
        std::size_t end = word.size();
        std::string found;
        while (end > start) {
            std::string piece = word.substr(start, end - start);
            if (start > 0) piece = "##" + piece;
            if (vocab.id(piece) >= 0) {
                found = std::move(piece);
                break;
            }
            --end;
        }
        if (found.empty()) return {"<unk>"};
        pieces.push_back(std::move(found));
        start = end;
    }
    if (pieces.empty()) return {"<unk>"};
    return pieces;
}

std::vector<std::string> preprocess_caption(const std::string& raw, const TokenizerVocab& vocab) {
    std::vector<std::string> out;
    for (const auto& w : clean_caption(raw)) {
        auto pieces = wordpiece(w, vocab);
        out.insert(out.end(), pieces.begin(), pieces.end());
    }
    return out;
}

TokenizerVocab build_vocab(const std::vector<std::string>& captions, int min_freq,
                           const std::unordered_set<std::string>* exclude) {
    if (captions.empty()) throw VocabError("build_vocab: empty corpus");
    std::map<std::string, std::int64_t> freq;  // ordered map fixes the tie order
    for (const auto& c : captions) {
        for (const auto& w : clean_caption(c)) ++freq[w];
    }
    std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens;
    for (const auto& [word, count] : items) {
        if (count < min_freq) continue;
        if (exclude && exclude->count(word)) continue;
        tokens.push_back(word);
    }
    return TokenizerVocab::from_tokens(tokens);
}

}  // namespace goalcap
