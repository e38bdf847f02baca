// Teacher-forced cross-entropy training, self-critical fine-tuning with a
// greedy baseline, and the pipeline glue that turns dataset records into
// model inputs: recognizer sweep over the four rotations, orientation
// selection, OCR ranking, object filtering, hashed token embeddings.
#pragma once

#include "goalcap/data.hpp"
#include "goalcap/embeddings.hpp"
#include "goalcap/metrics.hpp"
#include "goalcap/model.hpp"
#include "goalcap/optim.hpp"
#include "goalcap/perception.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace goalcap {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::int64_t ce_epochs = 10;
    std::int64_t batch_size = 16;
    std::int64_t scst_epochs = 15;
    std::uint64_t seed = 0;
    std::string reward = "cider";  // cider | bleu4 | rouge | meteor
    AdamConfig adam{2e-3, 0.9, 0.98, 1e-8, 50};

    void validate() const;  // throws TrainError
};

// How a dataset record becomes model input.
struct BundleOptions {
    SubwordHasher hasher{};           // detection-token embedding hash
    double confusion_rate = 0.0;      // recognizer noise off the true angle
    std::uint64_t recognizer_seed = 0;
    bool use_ocr = true;              // channel ablations
    bool use_obj = true;
    bool use_true_rotation = false;   // bypass the four-angle sweep
};

// A record assembled for one model layout. The dynamic vocabulary borrows the
// TokenizerVocab passed to assemble_example; keep it alive alongside.
struct TrainExample {
    std::string image_id;
    ModalityBundle bundle;
    DynamicVocabulary dyn;
    std::vector<std::string> references;
    std::vector<Tokens> reference_tokens;  // cleaned, for metrics
    int selected_angle = 0;
    int true_rotation = 0;
};

TrainExample assemble_example(const DatasetRecord& rec, const Lexicon& lexicon,
                              const TokenizerVocab& vocab, const ModelConfig& cfg,
                              const BundleOptions& opts);

std::vector<TrainExample> prepare_examples(const std::vector<DatasetRecord>& records,
                                           const Lexicon& lexicon, const TokenizerVocab& vocab,
                                           const ModelConfig& cfg, const BundleOptions& opts);

// ---------------------------------------------------------------------------
// caption -> training targets

// One step per emitted token: the merged-group target plus the representative
// id fed back as the next decoder input. A final step targets <eos>. Words
// are resolved caption-vocabulary-or-extension first, then WordPiece, then
// <unk>; the token list is truncated to max_len before the <eos> step. With
// the copy mechanism off, extension slots carry zero mass, so extension-only
// words fall through to WordPiece / <unk>.
struct TargetSequence {
    std::vector<std::int64_t> input_ids;                    // BOS first; |targets| entries
    std::vector<std::vector<std::int32_t>> target_groups;   // merged ids per step
};

TargetSequence map_caption_targets(const std::string& caption, const DynamicVocabulary& dyn,
                                   std::int64_t max_len, bool copy_enabled = true);

// Sum over steps of -log merged target mass, as a differentiable scalar.
template <typename T>
Tensor<T> sequence_nll(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                       const DynamicVocabulary& dyn, const TargetSequence& targets);

// Sum over steps of log p(merged group of each sampled id), teacher-forced on
// the sample itself; the SCST surrogate treats rewards as constants.
template <typename T>
Tensor<T> sampled_logprob_sum(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                              const DynamicVocabulary& dyn,
                              const std::vector<std::int64_t>& sampled_ids);

// ---------------------------------------------------------------------------
// rewards and evaluation

// (candidate tokens, per-image references, frozen corpus IDF) -> score.
// Only "cider" reads the IDF; it is frozen once so rewards stay stationary.
using RewardFn = std::function<double(const Tokens&, const std::vector<Tokens>&, const CorpusIDF&)>;
RewardFn reward_metric(const std::string& name);  // throws TrainError on unknown

// Hypothesis words with the special markers removed, ready for scoring.
Tokens scoring_tokens(const CaptionHypothesis& hyp);

struct EvalReport {
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider = 0.0;
    double meteor_lite = 0.0;
    std::vector<double> per_image;  // CIDEr-D per image
};

EvalReport evaluate_captions(const std::vector<Tokens>& cands,
                             const std::vector<std::vector<Tokens>>& refs);

// Greedy-decode every example and score against its references.
EvalReport evaluate_model(const CaptionModel& model, const std::vector<TrainExample>& examples);

// ---------------------------------------------------------------------------
// training loops; per-step JSON lines go to `log` when non-null

// One pass over all (example, reference) pairs in a seeded shuffle. Returns
// the epoch mean loss in nats per token.
double ce_epoch(CaptionModel& model, const std::vector<TrainExample>& examples, Adam<float>& opt,
                const TrainConfig& cfg, std::int64_t epoch, std::ostream* log);

struct ScstStepSummary {
    double loss = 0.0;
    double mean_advantage = 0.0;
    double reward_mean = 0.0;    // sampled captions
    double baseline_mean = 0.0;  // greedy captions
};

// reward_override replaces the configured metric when non-null (tests inject
// degenerate rewards through it).
ScstStepSummary scst_step(CaptionModel& model, const std::vector<const TrainExample*>& batch,
                          Adam<float>& opt, const TrainConfig& cfg, const CorpusIDF& idf,
                          std::uint64_t step_seed, std::ostream* log,
                          const RewardFn* reward_override = nullptr);

// One pass over all examples; returns the mean sampled reward.
double scst_epoch(CaptionModel& model, const std::vector<TrainExample>& examples, Adam<float>& opt,
                  const TrainConfig& cfg, const CorpusIDF& idf, std::int64_t epoch,
                  std::ostream* log);

// Offset applied when fine-tuning resumes the schedule: the effective step
// continues from fifty thousand past the last first-stage step.
inline constexpr std::int64_t kScstScheduleOffset = 50000;

// ---------------------------------------------------------------------------
// optimizer persistence (moments + counters sidecar next to a checkpoint)

void save_optimizer(Adam<float>& opt, const CaptionModel& model, const std::string& path);
// Restores moments and counters into a fresh optimizer built over the same
// model; the Adam hyperparameters come from the sidecar.
Adam<float> load_optimizer(const CaptionModel& model, const std::string& path);

// ---------------------------------------------------------------------------
// full pipeline: CE then SCST per grid variation

struct PipelineConfig {
    ModelConfig model;   // layout template; n_pixel/img_dim must match the data
    TrainConfig train;
    BundleOptions bundle;
    std::string out_dir;
    // cartesian variation grid; empty axes fall back to the template value
    std::vector<std::int64_t> grid_layers;
    std::vector<std::int64_t> grid_dims;
    std::vector<std::uint64_t> grid_seeds;
    std::vector<int> grid_copy;  // 0 / 1
    // pick the SCST initializer at random from the final third of CE epochs
    // instead of always the last
    bool scst_pick_final_third = false;
    bool save_optimizer_state = true;
};

struct PipelineResult {
    std::vector<std::string> ce_paths;
    std::vector<std::string> scst_paths;
};

PipelineResult run_pipeline(const SynthDataset& ds, const PipelineConfig& cfg, std::ostream* log);

}  // namespace goalcap
