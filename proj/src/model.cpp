#include "goalcap/model.hpp"

#include "goalcap/embeddings.hpp"
#include "goalcap/postprocess.hpp"
#include "goalcap/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace goalcap {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// config

void ModelConfig::validate() const {
    if (d < 1) throw ModelError("config: d must be positive");
    if (heads < 1) throw ModelError("config: heads must be positive");
    if (d % heads != 0) throw ModelError("config: d must be divisible by heads");
    if (img_dim < 1 || txt_dim < 1) throw ModelError("config: feature widths must be positive");
    if (n_pixel < 1) throw ModelError("config: n_pixel must be positive");
    if (encoder_layers < 1 || decoder_layers < 1)
        throw ModelError("config: layer counts must be positive");
    if (ffn_mult < 1) throw ModelError("config: ffn_mult must be positive");
    if (max_ocr < 1 || max_obj < 1) throw ModelError("config: channel limits must be positive");
    if (max_decode_len < 1) throw ModelError("config: max_decode_len must be positive");
}

// ---------------------------------------------------------------------------
// dynamic vocabulary

DynamicVocabulary::DynamicVocabulary(const TokenizerVocab& base, std::vector<std::string> ocr_tokens,
                                     std::vector<std::string> obj_tokens, std::int64_t max_ocr,
                                     std::int64_t max_obj)
    : base_(&base), max_ocr_(max_ocr), max_obj_(max_obj) {
    if (max_ocr < 1 || max_obj < 1) throw ModelError("dynamic vocabulary: slot limits must be positive");
    if (static_cast<std::int64_t>(ocr_tokens.size()) > max_ocr)
        throw ModelError("dynamic vocabulary: more OCR tokens than slots");
    if (static_cast<std::int64_t>(obj_tokens.size()) > max_obj)
        throw ModelError("dynamic vocabulary: more object tokens than slots");
    ocr_.reserve(ocr_tokens.size());
    for (auto& t : ocr_tokens) {
        if (t.empty()) throw ModelError("dynamic vocabulary: empty OCR token");
        ocr_.push_back(lowercase_ascii(t));
    }
    obj_.reserve(obj_tokens.size());
    for (auto& t : obj_tokens) {
        if (t.empty()) throw ModelError("dynamic vocabulary: empty object token");
        obj_.push_back(lowercase_ascii(t));
    }

    group_index_.assign(static_cast<std::size_t>(extended_size()), -1);
    for (std::int64_t id = 0; id < extended_size(); ++id) {
        if (!is_occupied(id) || group_index_[static_cast<std::size_t>(id)] >= 0) continue;
        const auto members32 = group_ids_for(surface(id));
        std::vector<std::int64_t> members(members32.begin(), members32.end());
        const auto idx = static_cast<std::int32_t>(groups_.size());
        for (auto m : members) group_index_[static_cast<std::size_t>(m)] = idx;
        groups_.push_back(std::move(members));
    }
}

bool DynamicVocabulary::is_occupied(std::int64_t id) const {
    if (id < 0 || id >= extended_size()) return false;
    if (id < base_size()) return true;
    if (id < base_size() + max_ocr_) return id - base_size() < ocr_count();
    return id - base_size() - max_ocr_ < obj_count();
}

std::string DynamicVocabulary::surface(std::int64_t id) const {
    if (!is_occupied(id)) throw ModelError("dynamic vocabulary: id is not an occupied slot");
    if (id < base_size()) return base_->token(static_cast<std::int32_t>(id));
    if (id < base_size() + max_ocr_) return ocr_[static_cast<std::size_t>(id - base_size())];
    return obj_[static_cast<std::size_t>(id - base_size() - max_ocr_)];
}

std::vector<std::int32_t> DynamicVocabulary::group_ids_for(const std::string& surface) const {
    const auto lc = lowercase_ascii(surface);
    std::vector<std::int32_t> ids;
    if (const auto bid = base_->id(lc); bid >= 0) ids.push_back(bid);
    for (std::size_t j = 0; j < ocr_.size(); ++j) {
        if (ocr_[j] == lc) ids.push_back(static_cast<std::int32_t>(ocr_slot_id(j)));
    }
    for (std::size_t j = 0; j < obj_.size(); ++j) {
        if (obj_[j] == lc) ids.push_back(static_cast<std::int32_t>(obj_slot_id(j)));
    }
    return ids;
}

const std::vector<std::int64_t>& DynamicVocabulary::group_of(std::int64_t id) const {
    if (!is_occupied(id)) throw ModelError("dynamic vocabulary: id is not an occupied slot");
    return groups_[static_cast<std::size_t>(group_index_[static_cast<std::size_t>(id)])];
}

std::vector<std::uint8_t> DynamicVocabulary::occupancy_mask(bool copy_enabled) const {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(extended_size()), 0);
    for (std::int64_t id = 0; id < base_size(); ++id) mask[static_cast<std::size_t>(id)] = 1;
    if (copy_enabled) {
        for (std::int64_t j = 0; j < ocr_count(); ++j)
            mask[static_cast<std::size_t>(ocr_slot_id(j))] = 1;
        for (std::int64_t j = 0; j < obj_count(); ++j)
            mask[static_cast<std::size_t>(obj_slot_id(j))] = 1;
    }
    return mask;
}

// ---------------------------------------------------------------------------
// fused distribution

std::vector<double> fused_distribution(const std::vector<double>& base_logits,
                                       const std::vector<double>& ocr_logits,
                                       const std::vector<double>& obj_logits,
                                       const DynamicVocabulary& dyn, bool copy_enabled) {
    if (static_cast<std::int64_t>(base_logits.size()) != dyn.base_size())
        throw ModelError("fused distribution: base logit count mismatch");
    if (static_cast<std::int64_t>(ocr_logits.size()) != dyn.ocr_count())
        throw ModelError("fused distribution: OCR logit count mismatch");
    if (static_cast<std::int64_t>(obj_logits.size()) != dyn.obj_count())
        throw ModelError("fused distribution: object logit count mismatch");
    for (const auto* v : {&base_logits, &ocr_logits, &obj_logits}) {
        for (double x : *v) {
            if (!std::isfinite(x)) throw ModelError("fused distribution: non-finite logit");
        }
    }

    const auto E = static_cast<std::size_t>(dyn.extended_size());
    std::vector<double> out(E, 0.0);
    std::vector<std::pair<std::size_t, double>> active;
    active.reserve(base_logits.size() + ocr_logits.size() + obj_logits.size());
    for (std::size_t i = 0; i < base_logits.size(); ++i) active.emplace_back(i, base_logits[i]);
    if (copy_enabled) {
        for (std::int64_t j = 0; j < dyn.ocr_count(); ++j)
            active.emplace_back(static_cast<std::size_t>(dyn.ocr_slot_id(j)),
                                ocr_logits[static_cast<std::size_t>(j)]);
        for (std::int64_t j = 0; j < dyn.obj_count(); ++j)
            active.emplace_back(static_cast<std::size_t>(dyn.obj_slot_id(j)),
                                obj_logits[static_cast<std::size_t>(j)]);
    }
    if (active.empty()) throw ModelError("fused distribution: all channels masked");

    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& a : active) mx = std::max(mx, a.second);
    double z = 0.0;
    for (const auto& a : active) {
        const double e = std::exp(a.second - mx);
        out[a.first] = e;
        z += e;
    }
    for (const auto& a : active) out[a.first] /= z;
    return out;
}

double merged_probability(const std::vector<double>& probs, const DynamicVocabulary& dyn,
                          const std::string& surface) {
    if (static_cast<std::int64_t>(probs.size()) != dyn.extended_size())
        throw ModelError("merged probability: distribution size mismatch");
    double p = 0.0;
    for (auto id : dyn.group_ids_for(surface)) p += probs[static_cast<std::size_t>(id)];
    return p;
}

std::pair<std::int64_t, double> merged_argmax(const std::vector<double>& probs,
                                              const DynamicVocabulary& dyn) {
    if (static_cast<std::int64_t>(probs.size()) != dyn.extended_size())
        throw ModelError("merged argmax: distribution size mismatch");
    std::int64_t best_id = -1;
    double best_p = -1.0;
    for (const auto& group : dyn.groups()) {
        double p = 0.0;
        for (auto id : group) p += probs[static_cast<std::size_t>(id)];
        if (p > best_p) {  // strict: groups are ordered by representative, so ties keep the lowest id
            best_p = p;
            best_id = group.front();
        }
    }
    if (best_id < 0) throw ModelError("merged argmax: no occupied ids");
    return {best_id, best_p};
}

std::pair<std::int64_t, double> sample_merged(const std::vector<double>& probs,
                                              const DynamicVocabulary& dyn, std::mt19937_64& rng) {
    if (static_cast<std::int64_t>(probs.size()) != dyn.extended_size())
        throw ModelError("sample: distribution size mismatch");
    if (dyn.groups().empty()) throw ModelError("sample: no occupied ids");
    const double u = uniform01(rng);
    double cum = 0.0;
    for (const auto& group : dyn.groups()) {
        double p = 0.0;
        for (auto id : group) p += probs[static_cast<std::size_t>(id)];
        cum += p;
        if (u < cum) return {group.front(), p};
    }
    // rounding left u past the accumulated mass: take the last group
    const auto& last = dyn.groups().back();
    double p = 0.0;
    for (auto id : last) p += probs[static_cast<std::size_t>(id)];
    return {last.front(), p};
}

std::vector<double> ensemble_average(const std::vector<std::vector<double>>& dists) {
    if (dists.empty()) throw ModelError("ensemble average: no distributions");
    const std::size_t n = dists[0].size();
    for (const auto& d : dists) {
        if (d.size() != n) throw ModelError("ensemble average: distribution sizes differ");
    }
    // mean written as p0 + sum((p_i - p0)/k): bit-exact p0 when all members agree
    std::vector<double> out = dists[0];
    const double k = static_cast<double>(dists.size());
    for (std::size_t i = 1; i < dists.size(); ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j] += (dists[i][j] - dists[0][j]) / k;
    }
    return out;
}

std::vector<double> copy_scores(const std::vector<double>& state,
                                const std::vector<std::vector<double>>& projected_slots,
                                double bias) {
    const std::size_t d = state.size();
    if (d == 0) throw ModelError("copy scores: empty state");
    std::vector<double> phi(projected_slots.size());
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t j = 0; j < projected_slots.size(); ++j) {
        if (projected_slots[j].size() != d) throw ModelError("copy scores: slot width mismatch");
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += state[i] * projected_slots[j][i];
        phi[j] = dot * inv_sqrt_d + bias;
    }
    return phi;
}

// ---------------------------------------------------------------------------
// model construction

template <typename T>
Tensor<T> CaptionModelT<T>::reg(const std::string& name, Shape shape) {
    auto t = Tensor<T>::zeros(std::move(shape));
    if (name.ends_with("_g")) {
        for (auto& v : t.data()) v = T(1);
    } else if (!name.ends_with("_b")) {
        auto rng = make_rng(seed_, fnv1a64(name));
        for (auto& v : t.data()) v = static_cast<T>(normal01(rng) * 0.02);
    }
    t.set_requires_grad(true);
    registry_.emplace_back(name, t);
    return t;
}

template <typename T>
typename CaptionModelT<T>::LayerNormP CaptionModelT<T>::reg_ln(const std::string& prefix) {
    return {reg(prefix + "_g", {cfg_.d}), reg(prefix + "_b", {cfg_.d})};
}

template <typename T>
typename CaptionModelT<T>::AttentionP CaptionModelT<T>::reg_attn(const std::string& prefix) {
    const auto d = cfg_.d;
    return {reg(prefix + "_q_w", {d, d}), reg(prefix + "_q_b", {d}),
            reg(prefix + "_k_w", {d, d}), reg(prefix + "_k_b", {d}),
            reg(prefix + "_v_w", {d, d}), reg(prefix + "_v_b", {d}),
            reg(prefix + "_o_w", {d, d}), reg(prefix + "_o_b", {d})};
}

template <typename T>
typename CaptionModelT<T>::FfnP CaptionModelT<T>::reg_ffn(const std::string& prefix) {
    const auto d = cfg_.d, h = cfg_.d * cfg_.ffn_mult;
    return {reg(prefix + "1_w", {d, h}), reg(prefix + "1_b", {h}),
            reg(prefix + "2_w", {h, d}), reg(prefix + "2_b", {d})};
}

template <typename T>
CaptionModelT<T>::CaptionModelT(ModelConfig cfg, TokenizerVocab vocab, std::uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)), seed_(seed) {
    cfg_.validate();
    const auto d = cfg_.d;

    proj_img_w_ = reg("proj_img_w", {cfg_.img_dim, d});
    proj_img_b_ = reg("proj_img_b", {d});
    proj_ocr_w_ = reg("proj_ocr_w", {cfg_.txt_dim, d});
    proj_ocr_b_ = reg("proj_ocr_b", {d});
    proj_obj_w_ = reg("proj_obj_w", {cfg_.txt_dim, d});
    proj_obj_b_ = reg("proj_obj_b", {d});
    pos_img_e_ = reg("pos_img_e", {cfg_.n_pixel, d});
    rank_ocr_e_ = reg("rank_ocr_e", {cfg_.max_ocr, d});
    rank_obj_e_ = reg("rank_obj_e", {cfg_.max_obj, d});
    type_e_ = reg("type_e", {3, d});

    for (std::int64_t i = 0; i < cfg_.encoder_layers; ++i) {
        const auto p = "enc" + std::to_string(i);
        enc_layers_.push_back({reg_ln(p + "_ln1"), reg_attn(p + "_attn"), reg_ln(p + "_ln2"),
                               reg_ffn(p + "_ffn")});
    }
    enc_ln_ = reg_ln("enc_ln");

    tok_e_ = reg("tok_e", {vocab_.size(), d});
    dec_pos_e_ = reg("dec_pos_e", {cfg_.max_decode_len + 1, d});
    for (std::int64_t i = 0; i < cfg_.decoder_layers; ++i) {
        const auto p = "dec" + std::to_string(i);
        dec_layers_.push_back({reg_ln(p + "_ln1"), reg_attn(p + "_self"), reg_ln(p + "_ln2"),
                               reg_attn(p + "_cross"), reg_ln(p + "_ln3"), reg_ffn(p + "_ffn")});
    }
    dec_ln_ = reg_ln("dec_ln");
    out_w_ = reg("out_w", {d, vocab_.size()});
    out_b_ = reg("out_b", {vocab_.size()});
    copy_ocr_w_ = reg("copy_ocr_w", {cfg_.txt_dim, d});
    copy_ocr_b_ = reg("copy_ocr_b", {1, 1});
    copy_obj_w_ = reg("copy_obj_w", {cfg_.txt_dim, d});
    copy_obj_b_ = reg("copy_obj_b", {1, 1});
}

template <typename T>
std::vector<Tensor<T>> CaptionModelT<T>::parameters() const {
    std::vector<Tensor<T>> out;
    out.reserve(registry_.size());
    for (const auto& [name, t] : registry_) out.push_back(t);
    return out;
}

template <typename T>
Tensor<T> CaptionModelT<T>::parameter(const std::string& name) const {
    for (const auto& [n, t] : registry_) {
        if (n == name) return t;
    }
    throw ModelError("unknown parameter: " + name);
}

template <typename T>
std::vector<NamedTensor> CaptionModelT<T>::export_tensors() const {
    std::vector<NamedTensor> out;
    out.reserve(registry_.size());
    for (const auto& [name, t] : registry_) {
        NamedTensor nt;
        nt.name = name;
        nt.shape = t.shape();
        nt.data.assign(t.data().begin(), t.data().end());
        out.push_back(std::move(nt));
    }
    return out;
}

template <typename T>
void CaptionModelT<T>::import_tensors(const std::vector<NamedTensor>& tensors) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) {
        if (!by_name.emplace(t.name, &t).second)
            throw ModelError("checkpoint has duplicate tensor: " + t.name);
    }
    if (by_name.size() != registry_.size())
        throw ModelError("checkpoint tensor count does not match the model");
    for (auto& [name, t] : registry_) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw ModelError("checkpoint missing tensor: " + name);
        if (it->second->shape != t.shape())
            throw ModelError("checkpoint tensor has wrong shape: " + name);
        auto dst = t.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->data[i]);
    }
}

// ---------------------------------------------------------------------------
// forward building blocks

template <typename T>
Tensor<T> CaptionModelT<T>::norm(const LayerNormP& p, const Tensor<T>& x) const {
    return layer_norm(x, p.g, p.b);
}

template <typename T>
Tensor<T> CaptionModelT<T>::feed_forward(const FfnP& p, const Tensor<T>& x) const {
    return add_bias(matmul(gelu(add_bias(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

template <typename T>
Tensor<T> CaptionModelT<T>::broadcast_scalar(const Tensor<T>& s, std::int64_t m,
                                             std::int64_t n) const {
    const auto col = matmul(Tensor<T>::full({m, 1}, T(1)), s);     // [m x 1]
    return matmul(col, Tensor<T>::full({1, n}, T(1)));             // [m x n]
}

template <typename T>
Tensor<T> CaptionModelT<T>::attention(const AttentionP& p, const Tensor<T>& q_in,
                                      const Tensor<T>& kv_in,
                                      const std::vector<std::uint8_t>& mask) const {
    const auto hd = cfg_.d / cfg_.heads;
    const auto q = add_bias(matmul(q_in, p.q_w), p.q_b);
    const auto k = add_bias(matmul(kv_in, p.k_w), p.k_b);
    const auto v = add_bias(matmul(kv_in, p.v_w), p.v_b);
    std::vector<Tensor<T>> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.heads));
    const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));
    for (std::int64_t h = 0; h < cfg_.heads; ++h) {
        const auto qh = slice_cols(q, h * hd, (h + 1) * hd);
        const auto kh = slice_cols(k, h * hd, (h + 1) * hd);
        const auto vh = slice_cols(v, h * hd, (h + 1) * hd);
        const auto weights = masked_softmax(scale(matmul_nt(qh, kh), inv_sqrt_hd), mask);
        heads.push_back(matmul(weights, vh));
    }
    const auto merged = concat_cols(std::span<const Tensor<T>>(heads));
    return add_bias(matmul(merged, p.o_w), p.o_b);
}

template <typename T>
EncodedSequenceT<T> CaptionModelT<T>::project_and_concat(const ModalityBundleT<T>& bundle,
                                                         std::int64_t pad_ocr_to,
                                                         std::int64_t pad_obj_to) const {
    if (!bundle.img.defined() || bundle.img.rank() != 2 || bundle.img.rows() != cfg_.n_pixel ||
        bundle.img.cols() != cfg_.img_dim)
        throw ModelError("bundle: image features must be [n_pixel x img_dim]");
    const auto n_ocr = static_cast<std::int64_t>(bundle.ocr_tokens.size());
    const auto n_obj = static_cast<std::int64_t>(bundle.obj_tokens.size());
    if (n_ocr > cfg_.max_ocr) throw ModelError("bundle: too many OCR tokens");
    if (n_obj > cfg_.max_obj) throw ModelError("bundle: too many object tokens");
    auto check_emb = [&](const Tensor<T>& e, std::int64_t count, const char* what) {
        if (count == 0) return;
        if (!e.defined() || e.rank() != 2 || e.rows() != count || e.cols() != cfg_.txt_dim)
            throw ModelError(std::string("bundle: ") + what + " embeddings must be [count x txt_dim]");
    };
    check_emb(bundle.ocr_embeddings, n_ocr, "OCR");
    check_emb(bundle.obj_embeddings, n_obj, "object");
    if (pad_ocr_to < 0) pad_ocr_to = n_ocr;
    if (pad_obj_to < 0) pad_obj_to = n_obj;
    if (pad_ocr_to < n_ocr || pad_ocr_to > cfg_.max_ocr || pad_obj_to < n_obj ||
        pad_obj_to > cfg_.max_obj)
        throw ModelError("bundle: padding target out of range");

    auto ranks = [](std::int64_t k) {
        std::vector<std::int32_t> ids(static_cast<std::size_t>(k));
        for (std::int64_t j = 0; j < k; ++j) ids[static_cast<std::size_t>(j)] = static_cast<std::int32_t>(j);
        return ids;
    };
    auto type_ids = [](std::int64_t k, std::int32_t t) {
        return std::vector<std::int32_t>(static_cast<std::size_t>(k), t);
    };

    std::vector<Tensor<T>> parts;
    EncodedSequenceT<T> seq;
    auto push = [&](Segment s, std::int64_t count, bool is_valid) {
        for (std::int64_t i = 0; i < count; ++i) {
            seq.segments.push_back(s);
            seq.valid.push_back(is_valid ? 1 : 0);
        }
    };

    parts.push_back(add(add(add_bias(matmul(bundle.img, proj_img_w_), proj_img_b_), pos_img_e_),
                        embedding(type_e_, type_ids(cfg_.n_pixel, 0))));
    push(Segment::Img, cfg_.n_pixel, true);

    if (n_ocr > 0) {
        parts.push_back(add(add(add_bias(matmul(bundle.ocr_embeddings, proj_ocr_w_), proj_ocr_b_),
                                embedding(rank_ocr_e_, ranks(n_ocr))),
                            embedding(type_e_, type_ids(n_ocr, 1))));
        push(Segment::Ocr, n_ocr, true);
    }
    if (pad_ocr_to > n_ocr) {
        parts.push_back(Tensor<T>::zeros({pad_ocr_to - n_ocr, cfg_.d}));
        push(Segment::Ocr, pad_ocr_to - n_ocr, false);
    }
    if (n_obj > 0) {
        parts.push_back(add(add(add_bias(matmul(bundle.obj_embeddings, proj_obj_w_), proj_obj_b_),
                                embedding(rank_obj_e_, ranks(n_obj))),
                            embedding(type_e_, type_ids(n_obj, 2))));
        push(Segment::Obj, n_obj, true);
    }
    if (pad_obj_to > n_obj) {
        parts.push_back(Tensor<T>::zeros({pad_obj_to - n_obj, cfg_.d}));
        push(Segment::Obj, pad_obj_to - n_obj, false);
    }

    seq.rows = concat_rows(std::span<const Tensor<T>>(parts));
    return seq;
}

template <typename T>
Tensor<T> CaptionModelT<T>::encode(const Tensor<T>& rows,
                                   const std::vector<std::uint8_t>& valid) const {
    if (!rows.defined() || rows.rank() != 2 || rows.cols() != cfg_.d)
        throw ModelError("encode: rows must be [n x d]");
    if (static_cast<std::int64_t>(valid.size()) != rows.rows())
        throw ModelError("encode: one validity byte per row required");
    if (std::count_if(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; }) == 0)
        throw ModelError("encode: no valid rows");
    auto x = rows;
    for (const auto& layer : enc_layers_) {
        const auto a = norm(layer.ln1, x);
        x = add(x, attention(layer.attn, a, a, valid));
        x = add(x, feed_forward(layer.ffn, norm(layer.ln2, x)));
    }
    return norm(enc_ln_, x);
}

template <typename T>
typename CaptionModelT<T>::EncoderState CaptionModelT<T>::encode_bundle(
    const ModalityBundleT<T>& bundle) const {
    auto seq = project_and_concat(bundle);
    EncoderState state;
    state.memory = encode(seq.rows, seq.valid);
    state.valid = std::move(seq.valid);
    if (!bundle.ocr_tokens.empty()) {
        state.ocr_input_proj = add_bias(matmul(bundle.ocr_embeddings, proj_ocr_w_), proj_ocr_b_);
        if (cfg_.copy_enabled) state.ocr_copy_proj = matmul(bundle.ocr_embeddings, copy_ocr_w_);
    }
    if (!bundle.obj_tokens.empty()) {
        state.obj_input_proj = add_bias(matmul(bundle.obj_embeddings, proj_obj_w_), proj_obj_b_);
        if (cfg_.copy_enabled) state.obj_copy_proj = matmul(bundle.obj_embeddings, copy_obj_w_);
    }
    return state;
}

template <typename T>
Tensor<T> CaptionModelT<T>::decoder_input_rows(const EncoderState& enc,
                                               const DynamicVocabulary& dyn,
                                               const std::vector<std::int64_t>& input_ids) const {
    std::vector<Tensor<T>> rows;
    rows.reserve(input_ids.size());
    for (auto id : input_ids) {
        if (!dyn.is_occupied(id)) throw ModelError("decoder input id is not an occupied slot");
        if (id < dyn.base_size()) {
            rows.push_back(embedding(tok_e_, {static_cast<std::int32_t>(id)}));
        } else if (id < dyn.base_size() + dyn.max_ocr()) {
            const auto j = id - dyn.base_size();
            rows.push_back(slice_rows(enc.ocr_input_proj, j, j + 1));
        } else {
            const auto j = id - dyn.base_size() - dyn.max_ocr();
            rows.push_back(slice_rows(enc.obj_input_proj, j, j + 1));
        }
    }
    return concat_rows(std::span<const Tensor<T>>(rows));
}

template <typename T>
typename CaptionModelT<T>::ChannelLogits CaptionModelT<T>::decode_logits(
    const EncoderState& enc, const DynamicVocabulary& dyn,
    const std::vector<std::int64_t>& input_ids) const {
    if (dyn.base().content_hash() != vocab_.content_hash())
        throw ModelError("dynamic vocabulary does not match the model vocabulary");
    if (dyn.max_ocr() != cfg_.max_ocr || dyn.max_obj() != cfg_.max_obj)
        throw ModelError("dynamic vocabulary slot limits do not match the model config");
    const auto L = static_cast<std::int64_t>(input_ids.size());
    if (L < 1 || L > cfg_.max_decode_len + 1)
        throw ModelError("decoder input length out of range");
    if (!enc.memory.defined()) throw ModelError("decoder needs an encoded bundle");
    if (dyn.ocr_count() > 0 &&
        (!enc.ocr_input_proj.defined() || enc.ocr_input_proj.rows() != dyn.ocr_count()))
        throw ModelError("encoder state does not cover the OCR slots");
    if (dyn.obj_count() > 0 &&
        (!enc.obj_input_proj.defined() || enc.obj_input_proj.rows() != dyn.obj_count()))
        throw ModelError("encoder state does not cover the object slots");

    std::vector<std::int32_t> positions(static_cast<std::size_t>(L));
    for (std::int64_t i = 0; i < L; ++i) positions[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
    auto x = add(decoder_input_rows(enc, dyn, input_ids), embedding(dec_pos_e_, positions));

    std::vector<std::uint8_t> causal(static_cast<std::size_t>(L * L), 0);
    for (std::int64_t i = 0; i < L; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) causal[static_cast<std::size_t>(i * L + j)] = 1;
    }
    for (const auto& layer : dec_layers_) {
        const auto a = norm(layer.ln1, x);
        x = add(x, attention(layer.self_attn, a, a, causal));
        x = add(x, attention(layer.cross_attn, norm(layer.ln2, x), enc.memory, enc.valid));
        x = add(x, feed_forward(layer.ffn, norm(layer.ln3, x)));
    }
    const auto h = norm(dec_ln_, x);

    ChannelLogits out;
    out.base = add_bias(matmul(h, out_w_), out_b_);
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(cfg_.d));
    auto copy_channel = [&](const Tensor<T>& copy_proj, const Tensor<T>& bias, std::int64_t count,
                            std::int64_t width) {
        if (!cfg_.copy_enabled || count == 0) return Tensor<T>::zeros({L, width});
        if (!copy_proj.defined() || copy_proj.rows() != count)
            throw ModelError("encoder state does not carry copy projections for this vocabulary");
        auto phi = add(scale(matmul_nt(h, copy_proj), inv_sqrt_d), broadcast_scalar(bias, L, count));
        if (count == width) return phi;
        return concat_cols({phi, Tensor<T>::zeros({L, width - count})});
    };
    out.ocr = copy_channel(enc.ocr_copy_proj, copy_ocr_b_, dyn.ocr_count(), cfg_.max_ocr);
    out.obj = copy_channel(enc.obj_copy_proj, copy_obj_b_, dyn.obj_count(), cfg_.max_obj);
    return out;
}

template <typename T>
Tensor<T> CaptionModelT<T>::fused_step_probabilities(const ChannelLogits& logits,
                                                     const DynamicVocabulary& dyn) const {
    const auto ext = concat_cols({logits.base, logits.ocr, logits.obj});
    return masked_softmax(ext, dyn.occupancy_mask(cfg_.copy_enabled));
}

template <typename T>
std::vector<double> CaptionModelT<T>::step_distribution(const ChannelLogits& logits,
                                                        const DynamicVocabulary& dyn,
                                                        std::int64_t row) const {
    if (row < 0 || row >= logits.base.rows()) throw ModelError("step distribution: row out of range");
    auto row_of = [row](const Tensor<T>& t, std::int64_t count) {
        std::vector<double> out(static_cast<std::size_t>(count));
        const auto* p = t.data().data() + row * t.cols();
        for (std::int64_t j = 0; j < count; ++j) out[static_cast<std::size_t>(j)] = static_cast<double>(p[j]);
        return out;
    };
    return fused_distribution(row_of(logits.base, logits.base.cols()),
                              row_of(logits.ocr, dyn.ocr_count()),
                              row_of(logits.obj, dyn.obj_count()), dyn, cfg_.copy_enabled);
}

// ---------------------------------------------------------------------------
// decoding

namespace {

void finalize_hypothesis(CaptionHypothesis& hyp, const DynamicVocabulary& dyn) {
    std::vector<std::string> pieces;
    pieces.reserve(hyp.token_ids.size());
    for (auto id : hyp.token_ids) pieces.push_back(dyn.surface(id));
    hyp.surface = detokenize(pieces);
    std::istringstream in(hyp.surface);
    std::string w;
    hyp.surface_tokens.clear();
    while (in >> w) hyp.surface_tokens.push_back(w);
}

std::int64_t clamp_decode_len(std::int64_t requested, std::int64_t cap) {
    if (requested < 0) return cap;
    if (requested < 1) throw ModelError("decode: max_len must be at least 1");
    return std::min(requested, cap);
}

}  // namespace

template <typename T>
CaptionHypothesis greedy_decode(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                                const DynamicVocabulary& dyn, std::int64_t max_len) {
    NoGradGuard ng;
    const auto cap = clamp_decode_len(max_len, model.config().max_decode_len);
    const auto enc = model.encode_bundle(bundle);
    std::vector<std::int64_t> ids{TokenizerVocab::kBos};
    CaptionHypothesis hyp;
    for (std::int64_t t = 0; t < cap; ++t) {
        const auto logits = model.decode_logits(enc, dyn, ids);
        const auto probs =
            model.step_distribution(logits, dyn, static_cast<std::int64_t>(ids.size()) - 1);
        const auto [id, p] = merged_argmax(probs, dyn);
        ids.push_back(id);
        hyp.token_ids.push_back(id);
        hyp.step_probs.push_back(p);
        if (id == TokenizerVocab::kEos) break;
    }
    finalize_hypothesis(hyp, dyn);
    return hyp;
}

template <typename T>
CaptionHypothesis sample_decode(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                                const DynamicVocabulary& dyn, std::uint64_t seed,
                                std::int64_t max_len) {
    NoGradGuard ng;
    const auto cap = clamp_decode_len(max_len, model.config().max_decode_len);
    const auto enc = model.encode_bundle(bundle);
    auto rng = make_rng(seed, 0xdec0de5aULL);
    std::vector<std::int64_t> ids{TokenizerVocab::kBos};
    CaptionHypothesis hyp;
    for (std::int64_t t = 0; t < cap; ++t) {
        const auto logits = model.decode_logits(enc, dyn, ids);
        const auto probs =
            model.step_distribution(logits, dyn, static_cast<std::int64_t>(ids.size()) - 1);
        const auto [id, p] = sample_merged(probs, dyn, rng);
        ids.push_back(id);
        hyp.token_ids.push_back(id);
        hyp.step_probs.push_back(p);
        if (id == TokenizerVocab::kEos) break;
    }
    finalize_hypothesis(hyp, dyn);
    return hyp;
}

template <typename T>
CaptionHypothesis ensemble_decode(const std::vector<const CaptionModelT<T>*>& models,
                                  const ModalityBundleT<T>& bundle, const DynamicVocabulary& dyn,
                                  std::int64_t max_len) {
    if (models.empty()) throw ModelError("ensemble: no models");
    for (const auto* m : models) {
        if (m == nullptr) throw ModelError("ensemble: null model");
        if (!same_extended_layout(*models[0], *m))
            throw ModelError("ensemble: models disagree on vocabulary or extension layout");
    }
    NoGradGuard ng;
    const auto cap = clamp_decode_len(max_len, models[0]->config().max_decode_len);
    std::vector<typename CaptionModelT<T>::EncoderState> states;
    states.reserve(models.size());
    for (const auto* m : models) states.push_back(m->encode_bundle(bundle));
    std::vector<std::int64_t> ids{TokenizerVocab::kBos};
    CaptionHypothesis hyp;
    for (std::int64_t t = 0; t < cap; ++t) {
        std::vector<std::vector<double>> dists;
        dists.reserve(models.size());
        for (std::size_t i = 0; i < models.size(); ++i) {
            const auto logits = models[i]->decode_logits(states[i], dyn, ids);
            dists.push_back(models[i]->step_distribution(
                logits, dyn, static_cast<std::int64_t>(ids.size()) - 1));
        }
        const auto avg = ensemble_average(dists);
        const auto [id, p] = merged_argmax(avg, dyn);
        ids.push_back(id);
        hyp.token_ids.push_back(id);
        hyp.step_probs.push_back(p);
        if (id == TokenizerVocab::kEos) break;
    }
    finalize_hypothesis(hyp, dyn);
    return hyp;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"d", c.d},
                {"img_dim", c.img_dim},
                {"txt_dim", c.txt_dim},
                {"n_pixel", c.n_pixel},
                {"encoder_layers", c.encoder_layers},
                {"decoder_layers", c.decoder_layers},
                {"heads", c.heads},
                {"ffn_mult", c.ffn_mult},
                {"max_ocr", c.max_ocr},
                {"max_obj", c.max_obj},
                {"max_decode_len", c.max_decode_len},
                {"copy_enabled", c.copy_enabled}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d = j.at("d").get<std::int64_t>();
    c.img_dim = j.at("img_dim").get<std::int64_t>();
    c.txt_dim = j.at("txt_dim").get<std::int64_t>();
    c.n_pixel = j.at("n_pixel").get<std::int64_t>();
    c.encoder_layers = j.at("encoder_layers").get<std::int64_t>();
    c.decoder_layers = j.at("decoder_layers").get<std::int64_t>();
    c.heads = j.at("heads").get<std::int64_t>();
    c.ffn_mult = j.at("ffn_mult").get<std::int64_t>();
    c.max_ocr = j.at("max_ocr").get<std::int64_t>();
    c.max_obj = j.at("max_obj").get<std::int64_t>();
    c.max_decode_len = j.at("max_decode_len").get<std::int64_t>();
    c.copy_enabled = j.at("copy_enabled").get<bool>();
    return c;
}

std::string hash_hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void save_checkpoint(const CaptionModel& model, const std::string& path,
                     const CheckpointMeta& meta) {
    save_container(path, model.export_tensors());
    json j;
    j["format"] = "goalcap-checkpoint";
    j["version"] = 1;
    j["config"] = config_to_json(model.config());
    j["vocab_hash"] = hash_hex(model.vocab().content_hash());
    j["vocab_tokens"] = model.vocab().tokens();
    j["train_steps"] = meta.train_steps;
    j["stage"] = meta.stage;
    j["seed"] = meta.seed;
    std::ofstream out(path + ".json");
    if (!out) throw ModelError("cannot write checkpoint manifest: " + path + ".json");
    out << j.dump(2) << "\n";
    if (!out) throw ModelError("failed writing checkpoint manifest: " + path + ".json");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) throw ModelError("cannot open checkpoint manifest: " + path + ".json");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ModelError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != "goalcap-checkpoint")
            throw ModelError("not a checkpoint manifest: " + path + ".json");
        if (j.at("version").get<int>() != 1)
            throw ModelError("unsupported checkpoint version");
        const auto cfg = config_from_json(j.at("config"));
        const auto tokens = j.at("vocab_tokens").get<std::vector<std::string>>();
        if (tokens.size() < 4 || tokens[0] != "<pad>" || tokens[1] != "<bos>" ||
            tokens[2] != "<eos>" || tokens[3] != "<unk>")
            throw ModelError("checkpoint vocabulary is missing the special tokens");
        auto vocab = TokenizerVocab::from_tokens({tokens.begin() + 4, tokens.end()});
        if (hash_hex(vocab.content_hash()) != j.at("vocab_hash").get<std::string>())
            throw ModelError("checkpoint vocabulary hash mismatch");
        CheckpointMeta meta;
        meta.config = cfg;
        meta.vocab_hash = vocab.content_hash();
        meta.train_steps = j.at("train_steps").get<std::uint64_t>();
        meta.stage = j.at("stage").get<std::string>();
        meta.seed = j.at("seed").get<std::uint64_t>();
        CaptionModel model(cfg, std::move(vocab), meta.seed);
        model.import_tensors(load_container(path));
        return {std::move(model), std::move(meta)};
    } catch (const json::exception& e) {
        throw ModelError(std::string("checkpoint manifest is malformed: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

template class CaptionModelT<float>;
template class CaptionModelT<double>;

template CaptionHypothesis greedy_decode<float>(const CaptionModelT<float>&,
                                                const ModalityBundleT<float>&,
                                                const DynamicVocabulary&, std::int64_t);
template CaptionHypothesis greedy_decode<double>(const CaptionModelT<double>&,
                                                 const ModalityBundleT<double>&,
                                                 const DynamicVocabulary&, std::int64_t);
template CaptionHypothesis sample_decode<float>(const CaptionModelT<float>&,
                                                const ModalityBundleT<float>&,
                                                const DynamicVocabulary&, std::uint64_t,
                                                std::int64_t);
template CaptionHypothesis sample_decode<double>(const CaptionModelT<double>&,
                                                 const ModalityBundleT<double>&,
                                                 const DynamicVocabulary&, std::uint64_t,
                                                 std::int64_t);
template CaptionHypothesis ensemble_decode<float>(const std::vector<const CaptionModelT<float>*>&,
                                                  const ModalityBundleT<float>&,
                                                  const DynamicVocabulary&, std::int64_t);
template CaptionHypothesis ensemble_decode<double>(const std::vector<const CaptionModelT<double>*>&,
                                                   const ModalityBundleT<double>&,
                                                   const DynamicVocabulary&, std::int64_t);

}  // namespace goalcap
