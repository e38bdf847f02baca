// Caption preprocessing and the tokenizer vocabulary: control characters and
// punctuation stripped, lowercased, whitespace-split, then greedy
// longest-match WordPiece segmentation. Continuation pieces carry the "##"
// prefix; words with no segmentation become <unk>.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace goalcap {

class VocabError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TokenizerVocab {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kBos = 1;
    static constexpr std::int32_t kEos = 2;
    static constexpr std::int32_t kUnk = 3;

    TokenizerVocab();  // specials only
    static TokenizerVocab from_tokens(const std::vector<std::string>& tokens);  // appended after specials
    static TokenizerVocab load(const std::string& path);
    void save(const std::string& path) const;

    std::int32_t id(const std::string& token) const;  // -1 when absent
    const std::string& token(std::int32_t id) const;
    std::int32_t size() const { return static_cast<std::int32_t>(id_to_token_.size()); }
    const std::vector<std::string>& tokens() const { return id_to_token_; }
    std::uint64_t content_hash() const;

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, std::int32_t> token_to_id_;
};

// Control characters and punctuation removed, lowercased, whitespace-split.
std::vector<std::string> clean_caption(const std::string& raw);

// Greedy longest-match segmentation of one cleaned word; {"<unk>"} when no
// segmentation exists.
std::vector<std::string> wordpiece(const std::string& word, const TokenizerVocab& vocab);

// clean_caption followed by per-word WordPiece.
std::vector<std::string> preprocess_caption(const std::string& raw, const TokenizerVocab& vocab);

// Whole cleaned words with frequency >= min_freq, ordered by descending
// frequency then alphabetical, after the special tokens. `exclude` drops
// designated surface forms (used to plant out-of-vocabulary tokens).
TokenizerVocab build_vocab(const std::vector<std::string>& captions, int min_freq = 1,
                           const std::unordered_set<std::string>* exclude = nullptr);

}  // namespace goalcap
