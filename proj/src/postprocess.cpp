#include "goalcap/postprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

namespace goalcap {
namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

// Mean pairwise similarity of each caption to all the others. Similarities
// are computed once per unordered pair; a singleton set gets a zero mean.
std::vector<double> consensus_means(const CandidateSet& set,
                                    const SimilarityProvider& sim) {
    const std::size_t n = set.captions.size();
    std::vector<double> total(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = sim(set.captions[i], set.captions[j]);
            if (!std::isfinite(s) || s < 0.0 || s > 1.0)
                throw PostprocessError("similarity out of [0,1]: " + std::to_string(s));
            total[i] += s;
            total[j] += s;
        }
    }
    if (n > 1)
        for (auto& t : total) t /= static_cast<double>(n - 1);
    return total;
}

}  // namespace

std::string detokenize(const std::vector<std::string>& pieces) {
    std::vector<std::string> words;
    for (const auto& p : pieces) {
        if (p == "<eos>") break;
        if (p == "<pad>" || p == "<bos>") continue;
        if (p.size() > 2 && p.compare(0, 2, "##") == 0 && !words.empty()) {
            words.back() += p.substr(2);
        } else {
            words.push_back(p);
        }
    }
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

std::string detokenize(const std::vector<std::int64_t>& ids,
                       const DynamicVocabulary& dyn) {
    std::vector<std::string> pieces;
    pieces.reserve(ids.size());
    for (auto id : ids) pieces.push_back(dyn.surface(id));
    return detokenize(pieces);
}

void CandidateSet::validate() const {
    if (captions.empty()) throw PostprocessError("candidate set is empty");
    if (!sources.empty() && sources.size() != captions.size())
        throw PostprocessError("source labels do not match candidate count");
}

SimilarityProvider embedding_similarity(const VectorTable& table,
                                        const SubwordHasher& hasher) {
    if (table.dim <= 0)
        throw PostprocessError("embedding similarity needs a positive dimension");
    return [table, hasher](const std::string& a, const std::string& b) {
        if (a == b) return 1.0;
        auto mean_vec = [&](const std::string& text) {
            std::vector<double> acc(static_cast<std::size_t>(table.dim), 0.0);
            const auto words = split_words(text);
            for (const auto& w : words) {
                const auto v = embed_token(w, table, hasher);
                for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
            }
            if (!words.empty())
                for (auto& x : acc) x /= static_cast<double>(words.size());
            return acc;
        };
        const auto va = mean_vec(a);
        const auto vb = mean_vec(b);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < va.size(); ++k) {
            dot += va[k] * vb[k];
            na += va[k] * va[k];
            nb += vb[k] * vb[k];
        }
        if (na == 0.0 || nb == 0.0) return 0.0;
        return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
    };
}

std::size_t select_by_self_consensus(const CandidateSet& set,
                                     const SimilarityProvider& sim) {
    set.validate();
    const auto means = consensus_means(set, sim);
    std::size_t best = 0;
    for (std::size_t i = 1; i < means.size(); ++i)
        if (means[i] > means[best]) best = i;
    return best;
}

std::size_t select_by_ocr_max(const CandidateSet& set,
                              const std::vector<std::string>& ocr_tokens,
                              const SimilarityProvider* sim) {
    set.validate();
    std::unordered_set<std::string> ocr;
    for (const auto& t : ocr_tokens) ocr.insert(lowercase_ascii(t));

    std::vector<std::size_t> overlap(set.captions.size(), 0);
    for (std::size_t i = 0; i < set.captions.size(); ++i) {
        std::unordered_set<std::string> seen;
        for (const auto& w : split_words(set.captions[i])) {
            const auto lw = lowercase_ascii(w);
            if (ocr.count(lw) && seen.insert(lw).second) ++overlap[i];
        }
    }

    const auto top = *std::max_element(overlap.begin(), overlap.end());
    if (sim != nullptr) {
        const auto means = consensus_means(set, *sim);
        std::size_t best = set.captions.size();
        for (std::size_t i = 0; i < set.captions.size(); ++i) {
            if (overlap[i] != top) continue;
            if (best == set.captions.size() || means[i] > means[best]) best = i;
        }
        return best;
    }
    for (std::size_t i = 0; i < overlap.size(); ++i)
        if (overlap[i] == top) return i;
    return 0;  // unreachable: overlap is non-empty
}

RerankStrategy parse_strategy(const std::string& name) {
    if (name == "consensus") return RerankStrategy::kConsensusOnly;
    if (name == "ocr-max") return RerankStrategy::kOcrMaxOnly;
    if (name == "ocr-max-consensus") return RerankStrategy::kOcrMaxThenConsensus;
    throw PostprocessError("unknown rerank strategy: " + name);
}

std::string strategy_name(RerankStrategy strategy) {
    switch (strategy) {
        case RerankStrategy::kConsensusOnly: return "consensus";
        case RerankStrategy::kOcrMaxOnly: return "ocr-max";
        case RerankStrategy::kOcrMaxThenConsensus: return "ocr-max-consensus";
    }
    throw PostprocessError("unknown rerank strategy value");
}

std::size_t select_caption(const CandidateSet& set,
                           const std::vector<std::string>& ocr_tokens,
                           const SimilarityProvider& sim,
                           RerankStrategy strategy) {
    switch (strategy) {
        case RerankStrategy::kConsensusOnly:
            return select_by_self_consensus(set, sim);
        case RerankStrategy::kOcrMaxOnly:
            return select_by_ocr_max(set, ocr_tokens, nullptr);
        case RerankStrategy::kOcrMaxThenConsensus:
            return select_by_ocr_max(set, ocr_tokens, &sim);
    }
    throw PostprocessError("unknown rerank strategy value");
}

RerankRequest parse_rerank_request(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw PostprocessError(std::string("bad rerank request: ") + e.what());
    }
    if (!j.is_object() || !j.contains("image_id") || !j.contains("candidates"))
        throw PostprocessError("rerank request needs image_id and candidates");
    RerankRequest req;
    try {
        req.image_id = j.at("image_id").get<std::string>();
        req.set.captions = j.at("candidates").get<std::vector<std::string>>();
        if (j.contains("sources"))
            req.set.sources = j.at("sources").get<std::vector<std::string>>();
        if (j.contains("ocr"))
            req.ocr_tokens = j.at("ocr").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw PostprocessError(std::string("bad rerank request: ") + e.what());
    }
    req.set.validate();
    return req;
}

std::string rerank_request_json(const RerankRequest& request) {
    nlohmann::json j;
    j["image_id"] = request.image_id;
    j["candidates"] = request.set.captions;
    if (!request.set.sources.empty()) j["sources"] = request.set.sources;
    j["ocr"] = request.ocr_tokens;
    return j.dump();
}

std::string rerank_response_json(const std::string& image_id,
                                 const std::string& caption) {
    nlohmann::json j;
    j["image_id"] = image_id;
    j["caption"] = caption;
    return j.dump();
}

}  // namespace goalcap
