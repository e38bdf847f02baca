// The captioning model: image features and detected OCR/object tokens are
// projected into one joint space, concatenated and encoded by a pre-norm
// transformer; a causal decoder with cross-attention produces per-step logits
// over the caption vocabulary plus one copy logit per detection slot. The
// three logit channels are fused by a single softmax over the extended id
// space, with probability mass of a surface form that appears in several
// slots merged on read-out. Greedy, sampled and ensemble decoding share that
// fused distribution.
#pragma once

#include "goalcap/container.hpp"
#include "goalcap/tensor.hpp"
#include "goalcap/vocab.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace goalcap {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    std::int64_t d = 64;              // joint space width
    std::int64_t img_dim = 64;        // image feature width per pixel row
    std::int64_t txt_dim = 32;        // detection embedding width
    std::int64_t n_pixel = 16;        // image rows after flattening
    std::int64_t encoder_layers = 2;
    std::int64_t decoder_layers = 2;
    std::int64_t heads = 4;
    std::int64_t ffn_mult = 4;
    std::int64_t max_ocr = 20;        // OCR extension slots
    std::int64_t max_obj = 10;        // object extension slots
    std::int64_t max_decode_len = 20;
    bool copy_enabled = true;

    void validate() const;  // throws ModelError
    // true when two configs produce the same extended id layout
    bool same_layout(const ModelConfig& o) const {
        return max_ocr == o.max_ocr && max_obj == o.max_obj && copy_enabled == o.copy_enabled;
    }
    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct ModalityBundleT {
    Tensor<T> img;                          // [n_pixel x img_dim]
    std::vector<std::string> ocr_tokens;    // ranked, <= max_ocr
    Tensor<T> ocr_embeddings;               // [n_ocr x txt_dim]; undefined when no OCR
    std::vector<std::string> obj_tokens;    // ranked, <= max_obj
    Tensor<T> obj_embeddings;               // [n_obj x txt_dim]; undefined when no objects
};
using ModalityBundle = ModalityBundleT<float>;

enum class Segment : std::uint8_t { Img = 0, Ocr = 1, Obj = 2 };

template <typename T>
struct EncodedSequenceT {
    Tensor<T> rows;                      // [n x d]
    std::vector<Segment> segments;       // per row
    std::vector<std::uint8_t> valid;     // nonzero = occupied slot, zero = padding
};

// Per-example id space: base vocabulary ids first, then max_ocr OCR slots,
// then max_obj object slots. Slots beyond the detected token count stay
// permanently masked. Extension tokens are lowercased on construction; ids
// sharing a lowercased surface form (across channels, or with a base token)
// belong to one merge group whose representative is the lowest id.
class DynamicVocabulary {
public:
    DynamicVocabulary(const TokenizerVocab& base, std::vector<std::string> ocr_tokens,
                      std::vector<std::string> obj_tokens, std::int64_t max_ocr,
                      std::int64_t max_obj);

    const TokenizerVocab& base() const { return *base_; }
    std::int64_t base_size() const { return base_->size(); }
    std::int64_t extended_size() const { return base_size() + max_ocr_ + max_obj_; }
    std::int64_t max_ocr() const { return max_ocr_; }
    std::int64_t max_obj() const { return max_obj_; }
    std::int64_t ocr_count() const { return static_cast<std::int64_t>(ocr_.size()); }
    std::int64_t obj_count() const { return static_cast<std::int64_t>(obj_.size()); }
    const std::vector<std::string>& ocr_tokens() const { return ocr_; }
    const std::vector<std::string>& obj_tokens() const { return obj_; }

    std::int64_t ocr_slot_id(std::int64_t j) const { return base_size() + j; }
    std::int64_t obj_slot_id(std::int64_t j) const { return base_size() + max_ocr_ + j; }

    bool is_occupied(std::int64_t id) const;
    // surface form of an occupied id (lowercased for extension slots)
    std::string surface(std::int64_t id) const;

    // all occupied ids sharing the surface form, ascending; empty when unknown
    std::vector<std::int32_t> group_ids_for(const std::string& surface) const;
    // merge group containing an occupied id
    const std::vector<std::int64_t>& group_of(std::int64_t id) const;
    // all merge groups, ordered by ascending representative (= first member)
    const std::vector<std::vector<std::int64_t>>& groups() const { return groups_; }

    // one byte per extended id; zero on unoccupied slots, and on every
    // extension slot when the copy mechanism is disabled
    std::vector<std::uint8_t> occupancy_mask(bool copy_enabled) const;

private:
    const TokenizerVocab* base_;  // borrowed; outlives this per-example view
    std::vector<std::string> ocr_, obj_;
    std::int64_t max_ocr_, max_obj_;
    std::vector<std::vector<std::int64_t>> groups_;
    std::vector<std::int32_t> group_index_;  // per extended id; -1 for unoccupied
};

struct CaptionHypothesis {
    std::vector<std::int64_t> token_ids;       // extended ids as emitted (EOS included)
    std::vector<double> step_probs;            // merged probability of each chosen token
    std::vector<std::string> surface_tokens;   // whole words after piece merging
    std::string surface;                       // space-joined surface_tokens
};

// ---------------------------------------------------------------------------
// fused distribution over the extended id space (double precision, no graph)

// p(id) = exp(logit_id) / Z over all occupied ids. Unoccupied slots carry
// exactly zero probability; with copy disabled every extension slot does.
// ocr/obj logits cover the occupied slots only (sizes == dyn counts).
std::vector<double> fused_distribution(const std::vector<double>& base_logits,
                                       const std::vector<double>& ocr_logits,
                                       const std::vector<double>& obj_logits,
                                       const DynamicVocabulary& dyn, bool copy_enabled);

// total probability of a surface form (sum over its merge group)
double merged_probability(const std::vector<double>& probs, const DynamicVocabulary& dyn,
                          const std::string& surface);

// argmax over merged surface probabilities; ties resolve to the lowest
// representative id. Returns (representative id, merged probability).
std::pair<std::int64_t, double> merged_argmax(const std::vector<double>& probs,
                                              const DynamicVocabulary& dyn);

// draw a merge group from its merged probabilities
std::pair<std::int64_t, double> sample_merged(const std::vector<double>& probs,
                                              const DynamicVocabulary& dyn, std::mt19937_64& rng);

// p0 + sum_i (p_i - p0)/k: the arithmetic mean, exact when all members equal
std::vector<double> ensemble_average(const std::vector<std::vector<double>>& dists);

// copy logits: dot(state, slot_j)/sqrt(d) + bias for projected slot embeddings
std::vector<double> copy_scores(const std::vector<double>& state,
                                const std::vector<std::vector<double>>& projected_slots,
                                double bias);

// ---------------------------------------------------------------------------

template <typename T>
class CaptionModelT {
public:
    CaptionModelT(ModelConfig cfg, TokenizerVocab vocab, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const TokenizerVocab& vocab() const { return vocab_; }
    std::uint64_t init_seed() const { return seed_; }

    const std::vector<std::pair<std::string, Tensor<T>>>& named_parameters() const {
        return registry_;
    }
    std::vector<Tensor<T>> parameters() const;
    Tensor<T> parameter(const std::string& name) const;  // throws when absent

    std::vector<NamedTensor> export_tensors() const;
    void import_tensors(const std::vector<NamedTensor>& tensors);

    // per-modality projection + learned position/rank/type offsets, then row
    // concatenation. pad_*_to = -1 keeps the actual counts; larger values
    // append zero rows flagged invalid.
    EncodedSequenceT<T> project_and_concat(const ModalityBundleT<T>& bundle,
                                           std::int64_t pad_ocr_to = -1,
                                           std::int64_t pad_obj_to = -1) const;

    // pre-norm transformer encoder; invalid rows never feed valid outputs
    Tensor<T> encode(const Tensor<T>& rows, const std::vector<std::uint8_t>& valid) const;

    struct EncoderState {
        Tensor<T> memory;              // [n x d]
        std::vector<std::uint8_t> valid;
        Tensor<T> ocr_input_proj;      // [n_ocr x d] decoder-input rows for OCR slots
        Tensor<T> obj_input_proj;
        Tensor<T> ocr_copy_proj;       // [n_ocr x d] copy-scorer keys
        Tensor<T> obj_copy_proj;
    };
    EncoderState encode_bundle(const ModalityBundleT<T>& bundle) const;

    struct ChannelLogits {
        Tensor<T> base;  // [L x |base|]
        Tensor<T> ocr;   // [L x max_ocr]; unoccupied columns are masked later
        Tensor<T> obj;   // [L x max_obj]
    };
    // teacher-forced logits for decoder inputs (extended ids, BOS first)
    ChannelLogits decode_logits(const EncoderState& enc, const DynamicVocabulary& dyn,
                                const std::vector<std::int64_t>& input_ids) const;

    // [L x extended] fused probabilities via one masked softmax (differentiable)
    Tensor<T> fused_step_probabilities(const ChannelLogits& logits,
                                       const DynamicVocabulary& dyn) const;

    // fused distribution of one logit row, double precision
    std::vector<double> step_distribution(const ChannelLogits& logits,
                                          const DynamicVocabulary& dyn, std::int64_t row) const;

private:
    struct LayerNormP {
        Tensor<T> g, b;
    };
    struct AttentionP {
        Tensor<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    };
    struct FfnP {
        Tensor<T> w1, b1, w2, b2;
    };
    struct EncLayer {
        LayerNormP ln1;
        AttentionP attn;
        LayerNormP ln2;
        FfnP ffn;
    };
    struct DecLayer {
        LayerNormP ln1;
        AttentionP self_attn;
        LayerNormP ln2;
        AttentionP cross_attn;
        LayerNormP ln3;
        FfnP ffn;
    };

    Tensor<T> reg(const std::string& name, Shape shape);
    LayerNormP reg_ln(const std::string& prefix);
    AttentionP reg_attn(const std::string& prefix);
    FfnP reg_ffn(const std::string& prefix);

    Tensor<T> attention(const AttentionP& p, const Tensor<T>& q_in, const Tensor<T>& kv_in,
                        const std::vector<std::uint8_t>& mask) const;
    Tensor<T> feed_forward(const FfnP& p, const Tensor<T>& x) const;
    Tensor<T> norm(const LayerNormP& p, const Tensor<T>& x) const;
    Tensor<T> broadcast_scalar(const Tensor<T>& s, std::int64_t m, std::int64_t n) const;
    Tensor<T> decoder_input_rows(const EncoderState& enc, const DynamicVocabulary& dyn,
                                 const std::vector<std::int64_t>& input_ids) const;

    ModelConfig cfg_;
    TokenizerVocab vocab_;
    std::uint64_t seed_;
    std::vector<std::pair<std::string, Tensor<T>>> registry_;

    Tensor<T> proj_img_w_, proj_img_b_;
    Tensor<T> proj_ocr_w_, proj_ocr_b_;
    Tensor<T> proj_obj_w_, proj_obj_b_;
    Tensor<T> pos_img_e_, rank_ocr_e_, rank_obj_e_, type_e_;
    std::vector<EncLayer> enc_layers_;
    LayerNormP enc_ln_;
    Tensor<T> tok_e_, dec_pos_e_;
    std::vector<DecLayer> dec_layers_;
    LayerNormP dec_ln_;
    Tensor<T> out_w_, out_b_;
    Tensor<T> copy_ocr_w_, copy_ocr_b_, copy_obj_w_, copy_obj_b_;
};

using CaptionModel = CaptionModelT<float>;

// shared base vocabulary and extension layout (checked before ensembling)
template <typename T>
bool same_extended_layout(const CaptionModelT<T>& a, const CaptionModelT<T>& b) {
    return a.vocab().content_hash() == b.vocab().content_hash() &&
           a.config().same_layout(b.config());
}

// ---------------------------------------------------------------------------
// decoding (graph-free)

template <typename T>
CaptionHypothesis greedy_decode(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                                const DynamicVocabulary& dyn, std::int64_t max_len = -1);

template <typename T>
CaptionHypothesis sample_decode(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                                const DynamicVocabulary& dyn, std::uint64_t seed,
                                std::int64_t max_len = -1);

template <typename T>
CaptionHypothesis ensemble_decode(const std::vector<const CaptionModelT<T>*>& models,
                                  const ModalityBundleT<T>& bundle, const DynamicVocabulary& dyn,
                                  std::int64_t max_len = -1);

// ---------------------------------------------------------------------------
// checkpoints: weight container + JSON manifest at <path>.json

struct CheckpointMeta {
    ModelConfig config;
    std::uint64_t vocab_hash = 0;
    std::uint64_t train_steps = 0;
    std::string stage = "init";  // init | ce | scst
    std::uint64_t seed = 0;
};

void save_checkpoint(const CaptionModel& model, const std::string& path,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    CaptionModel model;
    CheckpointMeta meta;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace goalcap
