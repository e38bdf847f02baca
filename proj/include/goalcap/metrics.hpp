// Caption metrics over pre-tokenized text: sentence and corpus BLEU-4 (no
// smoothing), ROUGE-L (LCS F-measure, beta = 1.2), CIDEr-D (clipped TF-IDF
// cosine with Gaussian length penalty, sigma = 6, scaled to [0, 10]) and
// METEOR-lite (exact unigram alignment, no synonym or stem matching).
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace goalcap {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Tokens = std::vector<std::string>;

// Sentence BLEU-4. Orders with no candidate n-gram are skipped so an exact
// match always scores 1 even for captions shorter than four tokens; a present
// order with zero matches still annihilates the geometric mean.
double bleu4(const Tokens& cand, const std::vector<Tokens>& refs);

// Corpus BLEU-4 with pooled match counts and the standard corpus-level
// brevity penalty.
double corpus_bleu4(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs);

// LCS F-measure, taking the max precision and max recall over references
// separately before combining.
double rouge_l(const Tokens& cand, const std::vector<Tokens>& refs, double beta = 1.2);

// Document frequencies over a reference corpus; the document is the set of
// one image's references. idf = log(corpus_size) - log(df).
struct CorpusIDF {
    std::int64_t corpus_size = 0;
    std::unordered_map<std::string, std::int64_t> df;  // key: n-gram tokens joined by '\x1f'

    double idf(const std::string& key) const;
};

std::string ngram_key(const Tokens& tokens, std::size_t start, std::size_t n);
CorpusIDF build_idf(const std::vector<std::vector<Tokens>>& refs_per_image);

// CIDEr-D for one image against its references under a fixed corpus IDF.
double cider_d(const Tokens& cand, const std::vector<Tokens>& refs, const CorpusIDF& idf,
               double sigma = 6.0);

struct CiderResult {
    std::vector<double> per_image;
    double mean = 0.0;
};

// Builds the IDF from the provided references, then scores every image.
CiderResult cider(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs,
                  double sigma = 6.0);

// Exact-match unigram alignment maximizing matches then minimizing chunks;
// F = 10PR/(R+9P) discounted by 0.5*(chunks/matches)^3; max over references.
double meteor_lite(const Tokens& cand, const std::vector<Tokens>& refs);

}  // namespace goalcap
