#include "goalcap/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_set>

namespace goalcap {
namespace {

constexpr std::size_t kMaxOrder = 4;

void require_refs(const std::vector<Tokens>& refs, const char* op) {
    for (const auto& r : refs) {
        if (!r.empty()) return;
    }
    throw MetricError(std::string(op) + ": at least one non-empty reference required");
}

std::unordered_map<std::string, std::int64_t> ngram_counts(const Tokens& toks, std::size_t n) {
    std::unordered_map<std::string, std::int64_t> counts;
    if (toks.size() >= n) {
        for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[ngram_key(toks, i, n)];
    }
    return counts;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

std::string ngram_key(const Tokens& tokens, std::size_t start, std::size_t n) {
    std::string key;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) key += '\x1f';
        key += tokens[start + i];
    }
    return key;
}

double bleu4(const Tokens& cand, const std::vector<Tokens>& refs) {
    require_refs(refs, "bleu4");
    if (cand.empty()) return 0.0;

    double log_sum = 0.0;
    std::size_t orders_used = 0;
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
        if (cand.size() < n) continue;
        const auto cand_counts = ngram_counts(cand, n);
        std::unordered_map<std::string, std::int64_t> max_ref;
        for (const auto& r : refs) {
            for (const auto& [k, c] : ngram_counts(r, n)) max_ref[k] = std::max(max_ref[k], c);
        }
        std::int64_t matched = 0, total = 0;
        for (const auto& [k, c] : cand_counts) {
            total += c;
            auto it = max_ref.find(k);
            if (it != max_ref.end()) matched += std::min(c, it->second);
        }
        if (matched == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(total));
        ++orders_used;
    }

    // closest reference length; ties go to the shorter reference
    std::size_t r_len = refs[0].size();
    for (const auto& r : refs) {
        const auto d_new = std::llabs(static_cast<long long>(r.size()) - static_cast<long long>(cand.size()));
        const auto d_old = std::llabs(static_cast<long long>(r_len) - static_cast<long long>(cand.size()));
        if (d_new < d_old || (d_new == d_old && r.size() < r_len)) r_len = r.size();
    }
    const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(cand.size())));
    return bp * std::exp(log_sum / static_cast<double>(orders_used));
}

double corpus_bleu4(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
    if (cands.size() != refs.size()) throw MetricError("corpus_bleu4: candidate/reference count mismatch");
    if (cands.empty()) throw MetricError("corpus_bleu4: empty corpus");

    std::array<std::int64_t, kMaxOrder> matched{}, total{};
    std::size_t c_total = 0, r_total = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        require_refs(refs[i], "corpus_bleu4");
        const auto& cand = cands[i];
        c_total += cand.size();
        std::size_t r_len = refs[i][0].size();
        for (const auto& r : refs[i]) {
            const auto d_new = std::llabs(static_cast<long long>(r.size()) - static_cast<long long>(cand.size()));
            const auto d_old = std::llabs(static_cast<long long>(r_len) - static_cast<long long>(cand.size()));
            if (d_new < d_old || (d_new == d_old && r.size() < r_len)) r_len = r.size();
        }
        r_total += r_len;
        for (std::size_t n = 1; n <= kMaxOrder; ++n) {
            const auto cand_counts = ngram_counts(cand, n);
            std::unordered_map<std::string, std::int64_t> max_ref;
            for (const auto& r : refs[i]) {
                for (const auto& [k, c] : ngram_counts(r, n)) max_ref[k] = std::max(max_ref[k], c);
            }
            for (const auto& [k, c] : cand_counts) {
                total[n - 1] += c;
                auto it = max_ref.find(k);
                if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
            }
        }
    }
    if (c_total == 0) return 0.0;
    double log_sum = 0.0;
    std::size_t orders_used = 0;
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
        if (total[n] == 0) continue;
        if (matched[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
        ++orders_used;
    }
    const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r_total) / static_cast<double>(c_total)));
    return bp * std::exp(log_sum / static_cast<double>(orders_used));
}

double rouge_l(const Tokens& cand, const std::vector<Tokens>& refs, double beta) {
    require_refs(refs, "rouge_l");
    if (cand.empty()) return 0.0;
    double p_max = 0.0, r_max = 0.0;
    for (const auto& r : refs) {
        if (r.empty()) continue;
        const auto lcs = static_cast<double>(lcs_length(cand, r));
        p_max = std::max(p_max, lcs / static_cast<double>(cand.size()));
        r_max = std::max(r_max, lcs / static_cast<double>(r.size()));
    }
    if (p_max == 0.0 || r_max == 0.0) return 0.0;
    const double b2 = beta * beta;
    return (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max);
}

double CorpusIDF::idf(const std::string& key) const {
    auto it = df.find(key);
    if (it == df.end() || corpus_size <= 0) return 0.0;
    return std::log(static_cast<double>(corpus_size)) - std::log(static_cast<double>(it->second));
}

CorpusIDF build_idf(const std::vector<std::vector<Tokens>>& refs_per_image) {
    if (refs_per_image.empty()) throw MetricError("build_idf: empty corpus");
    CorpusIDF out;
    out.corpus_size = static_cast<std::int64_t>(refs_per_image.size());
    for (const auto& refs : refs_per_image) {
        std::unordered_set<std::string> seen;
        for (const auto& r : refs) {
            for (std::size_t n = 1; n <= kMaxOrder; ++n) {
                if (r.size() < n) continue;
                for (std::size_t i = 0; i + n <= r.size(); ++i) seen.insert(ngram_key(r, i, n));
            }
        }
        for (const auto& k : seen) ++out.df[k];
    }
    return out;
}

double cider_d(const Tokens& cand, const std::vector<Tokens>& refs, const CorpusIDF& idf,
               double sigma) {
    require_refs(refs, "cider_d");
    if (idf.corpus_size <= 0) throw MetricError("cider_d: empty corpus IDF");

    // per-order tf-idf vector of the candidate
    std::array<std::unordered_map<std::string, double>, kMaxOrder> cand_vec;
    std::array<double, kMaxOrder> cand_norm{};
    for (std::size_t n = 1; n <= kMaxOrder; ++n) {
        for (const auto& [k, c] : ngram_counts(cand, n)) {
            const double w = static_cast<double>(c) * idf.idf(k);
            cand_vec[n - 1][k] = w;
            cand_norm[n - 1] += w * w;
        }
        cand_norm[n - 1] = std::sqrt(cand_norm[n - 1]);
    }

    double total = 0.0;
    for (const auto& r : refs) {
        std::array<double, kMaxOrder> score{};
        const double delta = static_cast<double>(cand.size()) - static_cast<double>(r.size());
        const double length_penalty = std::exp(-delta * delta / (2.0 * sigma * sigma));
        for (std::size_t n = 1; n <= kMaxOrder; ++n) {
            std::unordered_map<std::string, double> ref_vec;
            double ref_norm = 0.0;
            for (const auto& [k, c] : ngram_counts(r, n)) {
                const double w = static_cast<double>(c) * idf.idf(k);
                ref_vec[k] = w;
                ref_norm += w * w;
            }
            ref_norm = std::sqrt(ref_norm);
            double dot = 0.0;
            for (const auto& [k, w] : cand_vec[n - 1]) {
                auto it = ref_vec.find(k);
                // asymmetric clipping keeps a candidate from being rewarded
                // for repeating an n-gram more often than the reference
                if (it != ref_vec.end()) dot += std::min(w, it->second) * it->second;
            }
            if (cand_norm[n - 1] > 0.0 && ref_norm > 0.0) {
                score[n - 1] = dot / (cand_norm[n - 1] * ref_norm) * length_penalty;
            }
        }
        double mean_over_n = 0.0;
        for (double s : score) mean_over_n += s;
        total += mean_over_n / static_cast<double>(kMaxOrder);
    }
    return 10.0 * total / static_cast<double>(refs.size());
}

CiderResult cider(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs,
                  double sigma) {
    if (cands.size() != refs.size()) throw MetricError("cider: candidate/reference count mismatch");
    if (cands.empty()) throw MetricError("cider: empty corpus");
    const auto idf = build_idf(refs);
    CiderResult out;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        out.per_image.push_back(cider_d(cands[i], refs[i], idf, sigma));
        out.mean += out.per_image.back();
    }
    out.mean /= static_cast<double>(cands.size());
    return out;
}

namespace {

// Exact search for the minimum chunk count among alignments of maximum size.
// Candidate positions are processed left to right; matched positions choose an
// unused reference slot of the same surface form. Branch and bound keeps this
// cheap at caption lengths.
struct MeteorAligner {
    const Tokens& cand;
    const Tokens& ref;
    std::size_t target_matches;
    std::vector<std::vector<std::size_t>> slots;  // per cand position: candidate ref positions
    std::vector<std::int64_t> ref_avail_by_type;  // indexed by type id
    std::vector<std::int64_t> cand_suffix_by_type;
    std::unordered_map<std::string, std::size_t> type_of;
    std::vector<std::size_t> cand_type, ref_type;
    std::vector<bool> ref_used;
    std::size_t best_chunks = SIZE_MAX;
    // node budget: the first full descent always completes one maximum
    // alignment, so hitting the cap still leaves a valid result
    std::size_t budget = 2'000'000;

    MeteorAligner(const Tokens& c, const Tokens& r) : cand(c), ref(r) {
        for (const auto& t : c) {
            if (!type_of.count(t)) {
                const auto id = type_of.size();
                type_of[t] = id;
            }
        }
        for (const auto& t : r) {
            if (!type_of.count(t)) {
                const auto id = type_of.size();
                type_of[t] = id;
            }
        }
        cand_type.reserve(c.size());
        for (const auto& t : c) cand_type.push_back(type_of[t]);
        ref_type.reserve(r.size());
        for (const auto& t : r) ref_type.push_back(type_of[t]);

        std::vector<std::int64_t> cc(type_of.size(), 0), cr(type_of.size(), 0);
        for (auto t : cand_type) ++cc[t];
        for (auto t : ref_type) ++cr[t];
        target_matches = 0;
        for (std::size_t t = 0; t < type_of.size(); ++t)
            target_matches += static_cast<std::size_t>(std::min(cc[t], cr[t]));

        slots.resize(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) {
            for (std::size_t j = 0; j < r.size(); ++j) {
                if (cand_type[i] == ref_type[j]) slots[i].push_back(j);
            }
        }
        ref_avail_by_type = cr;
        cand_suffix_by_type = cc;
        ref_used.assign(r.size(), false);
    }

    std::size_t upper_bound_remaining() const {
        std::size_t ub = 0;
        for (std::size_t t = 0; t < ref_avail_by_type.size(); ++t)
            ub += static_cast<std::size_t>(std::min(cand_suffix_by_type[t], ref_avail_by_type[t]));
        return ub;
    }

    // prev_ref: reference position matched at candidate position i-1, or
    // SIZE_MAX when i-1 was unmatched / i == 0
    void dfs(std::size_t i, std::size_t matched, std::size_t chunks, std::size_t prev_ref) {
        if (budget == 0 || chunks >= best_chunks) return;
        --budget;
        if (matched + upper_bound_remaining() < target_matches) return;
        if (i == cand.size()) {
            if (matched == target_matches) best_chunks = std::min(best_chunks, chunks);
            return;
        }
        const auto t = cand_type[i];
        --cand_suffix_by_type[t];
        for (auto j : slots[i]) {
            if (ref_used[j]) continue;
            const bool continues = prev_ref != SIZE_MAX && j == prev_ref + 1;
            ref_used[j] = true;
            --ref_avail_by_type[t];
            dfs(i + 1, matched + 1, continues ? chunks : chunks + 1, j);
            ++ref_avail_by_type[t];
            ref_used[j] = false;
        }
        dfs(i + 1, matched, chunks, SIZE_MAX);
        ++cand_suffix_by_type[t];
    }

    // returns (matches, min chunks)
    std::pair<std::size_t, std::size_t> run() {
        if (target_matches == 0) return {0, 0};
        dfs(0, 0, 0, SIZE_MAX);
        return {target_matches, best_chunks};
    }
};

}  // namespace

double meteor_lite(const Tokens& cand, const std::vector<Tokens>& refs) {
    require_refs(refs, "meteor_lite");
    if (cand.empty()) return 0.0;
    double best = 0.0;
    for (const auto& r : refs) {
        if (r.empty()) continue;
        MeteorAligner aligner(cand, r);
        const auto [matches, chunks] = aligner.run();
        if (matches == 0) continue;
        const double m = static_cast<double>(matches);
        const double p = m / static_cast<double>(cand.size());
        const double rec = m / static_cast<double>(r.size());
        const double f = 10.0 * p * rec / (rec + 9.0 * p);
        const double frag = static_cast<double>(chunks) / m;
        const double penalty = 0.5 * frag * frag * frag;
        best = std::max(best, f * (1.0 - penalty));
    }
    return best;
}

}  // namespace goalcap
