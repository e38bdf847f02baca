// Caption post-processing: piece detokenization and reranking of decoded
// candidates (self-consensus and detected-text coverage).
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "goalcap/embeddings.hpp"
#include "goalcap/model.hpp"

namespace goalcap {

class PostprocessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Joins wordpieces into a plain caption: "##" continuations merge into the
// preceding word, "<eos>" terminates the caption, other special tokens are
// skipped. Words are space-separated.
std::string detokenize(const std::vector<std::string>& pieces);

// Maps extended-vocabulary ids to their surfaces and joins them. Invalid ids
// throw (via DynamicVocabulary::surface).
std::string detokenize(const std::vector<std::int64_t>& ids,
                       const DynamicVocabulary& dyn);

// A pool of candidate captions for one image, optionally labeled with the
// producing system (e.g. which checkpoint or decode mode). Duplicates are
// legal and count as ordinary members.
struct CandidateSet {
  std::vector<std::string> captions;
  std::vector<std::string> sources;  // empty, or one label per caption

  void validate() const;
};

// Caption-pair similarity in [0, 1]; must be symmetric with sim(x, x) == 1.
using SimilarityProvider =
    std::function<double(const std::string&, const std::string&)>;

// Cosine similarity between mean token embeddings of the two captions, using
// the table (with hashed-subword fallback) for lookup. Clamped to [0, 1];
// identical strings score exactly 1, and an empty caption scores 0 against
// anything non-empty.
SimilarityProvider embedding_similarity(const VectorTable& table,
                                        const SubwordHasher& hasher = {});

// Index of the caption with the highest mean similarity to all the others;
// ties break toward the lowest index. A single-candidate set returns 0.
std::size_t select_by_self_consensus(const CandidateSet& set,
                                     const SimilarityProvider& sim);

// Index of the caption sharing the most distinct lowercased words with the
// detected-text tokens. Ties fall back to self-consensus order when a
// provider is given, then to the lowest index.
std::size_t select_by_ocr_max(const CandidateSet& set,
                              const std::vector<std::string>& ocr_tokens,
                              const SimilarityProvider* sim = nullptr);

enum class RerankStrategy {
  kConsensusOnly,
  kOcrMaxOnly,
  kOcrMaxThenConsensus,
};

RerankStrategy parse_strategy(const std::string& name);
std::string strategy_name(RerankStrategy strategy);

// Applies the chosen strategy; the default pipeline is detected-text overlap
// with self-consensus as tiebreaker.
std::size_t select_caption(const CandidateSet& set,
                           const std::vector<std::string>& ocr_tokens,
                           const SimilarityProvider& sim,
                           RerankStrategy strategy =
                               RerankStrategy::kOcrMaxThenConsensus);

// One reranking work item, serialized as a JSON object per line:
// {"image_id": ..., "candidates": [...], "ocr": [...]} with an optional
// "sources" array parallel to the candidates.
struct RerankRequest {
  std::string image_id;
  CandidateSet set;
  std::vector<std::string> ocr_tokens;
};

RerankRequest parse_rerank_request(const std::string& json_text);
std::string rerank_request_json(const RerankRequest& request);
std::string rerank_response_json(const std::string& image_id,
                                 const std::string& caption);

}  // namespace goalcap
