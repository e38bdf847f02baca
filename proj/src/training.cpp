#include "goalcap/training.hpp"

#include "goalcap/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <unordered_map>

namespace goalcap {
namespace {

using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ tag);
}

Tensor<float> embed_rows(const std::vector<std::string>& tokens, std::int64_t dim,
                         const SubwordHasher& hasher) {
    if (tokens.empty()) return {};
    VectorTable table;
    table.dim = static_cast<int>(dim);
    std::vector<float> rows;
    rows.reserve(tokens.size() * static_cast<std::size_t>(dim));
    for (const auto& tok : tokens) {
        for (double v : embed_token(tok, table, hasher)) rows.push_back(static_cast<float>(v));
    }
    return Tensor<float>::from({static_cast<std::int64_t>(tokens.size()), dim}, std::move(rows));
}

void emit(std::ostream* log, const json& j) {
    if (log) (*log) << j.dump() << '\n';
}

}  // namespace

void TrainConfig::validate() const {
    if (ce_epochs < 1) throw TrainError("ce_epochs must be >= 1");
    if (scst_epochs < 1) throw TrainError("scst_epochs must be >= 1");
    if (batch_size < 1) throw TrainError("batch_size must be >= 1");
    if (!(adam.base_lr > 0)) throw TrainError("base_lr must be positive");
    if (adam.warmup_steps < 0) throw TrainError("warmup_steps must be >= 0");
    reward_metric(reward);  // throws on unknown
}

TrainExample assemble_example(const DatasetRecord& rec, const Lexicon& lexicon,
                              const TokenizerVocab& vocab, const ModelConfig& cfg,
                              const BundleOptions& opts) {
    const auto want = static_cast<std::size_t>(cfg.n_pixel * cfg.img_dim);
    if (rec.features.size() != want) {
        throw TrainError("features of " + rec.image_id + " do not match the model layout");
    }

    ChannelLimits limits;
    limits.max_ocr = static_cast<int>(cfg.max_ocr);
    limits.max_obj = static_cast<int>(cfg.max_obj);

    ModalityBundle bundle;
    bundle.img = Tensor<float>::from({cfg.n_pixel, cfg.img_dim}, rec.features);
    int selected_angle = 0;

    if (opts.use_ocr) {
        if (opts.use_true_rotation) {
            selected_angle = rec.true_rotation;
            for (const auto& t : rank_ocr(rec.planted_text, limits)) {
                bundle.ocr_tokens.push_back(t.token);
            }
        } else {
            std::vector<RotationResult> sweep;
            sweep.reserve(4);
            for (const int angle : {0, 90, 180, 270}) {
                sweep.push_back(simulated_recognizer(rec, angle, lexicon, opts.confusion_rate,
                                                     opts.recognizer_seed));
            }
            auto [angle, ranked] = select_orientation(sweep, lexicon, limits);
            selected_angle = angle;
            for (const auto& t : ranked) bundle.ocr_tokens.push_back(t.token);
        }
        bundle.ocr_embeddings = embed_rows(bundle.ocr_tokens, cfg.txt_dim, opts.hasher);
    }

    if (opts.use_obj) {
        for (const auto& o : filter_objects(rec.planted_objects, limits)) {
            bundle.obj_tokens.push_back(o.label);
        }
        bundle.obj_embeddings = embed_rows(bundle.obj_tokens, cfg.txt_dim, opts.hasher);
    }

    DynamicVocabulary dyn(vocab, bundle.ocr_tokens, bundle.obj_tokens, cfg.max_ocr, cfg.max_obj);
    std::vector<Tokens> ref_tokens;
    ref_tokens.reserve(rec.references.size());
    for (const auto& r : rec.references) ref_tokens.push_back(clean_caption(r));
    return TrainExample{rec.image_id,           std::move(bundle), std::move(dyn),
                        rec.references,         std::move(ref_tokens), selected_angle,
                        rec.true_rotation};
}

std::vector<TrainExample> prepare_examples(const std::vector<DatasetRecord>& records,
                                           const Lexicon& lexicon, const TokenizerVocab& vocab,
                                           const ModelConfig& cfg, const BundleOptions& opts) {
    std::vector<TrainExample> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        out.push_back(assemble_example(rec, lexicon, vocab, cfg, opts));
    }
    return out;
}

TargetSequence map_caption_targets(const std::string& caption, const DynamicVocabulary& dyn,
                                   std::int64_t max_len, bool copy_enabled) {
    if (max_len < 1) throw TrainError("map_caption_targets: max_len must be >= 1");
    const auto base_size = dyn.base_size();

    auto usable = [&](std::vector<std::int32_t> g) -> std::vector<std::int32_t> {
        if (!copy_enabled) {
            g.erase(std::remove_if(g.begin(), g.end(),
                                   [&](std::int32_t id) { return id >= base_size; }),
                    g.end());
        }
        return g;
    };
    const auto unk_group = usable(dyn.group_ids_for("<unk>"));

    std::vector<std::vector<std::int32_t>> groups;
    for (const auto& word : clean_caption(caption)) {
        auto g = usable(dyn.group_ids_for(word));
        if (!g.empty()) {
            groups.push_back(std::move(g));
            continue;
        }
        for (const auto& piece : wordpiece(word, dyn.base())) {
            auto pg = usable(dyn.group_ids_for(piece));
            groups.push_back(pg.empty() ? unk_group : std::move(pg));
        }
    }
    if (static_cast<std::int64_t>(groups.size()) > max_len) {
        groups.resize(static_cast<std::size_t>(max_len));
    }

    // inputs [BOS, rep_1 .. rep_T]; targets [g_1 .. g_T, {EOS}]
    TargetSequence out;
    out.input_ids.push_back(TokenizerVocab::kBos);
    for (auto& g : groups) {
        out.input_ids.push_back(g.front());
        out.target_groups.push_back(std::move(g));
    }
    out.target_groups.push_back({TokenizerVocab::kEos});
    return out;
}

template <typename T>
Tensor<T> sequence_nll(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                       const DynamicVocabulary& dyn, const TargetSequence& targets) {
    if (targets.input_ids.empty() || targets.target_groups.size() != targets.input_ids.size()) {
        throw TrainError("sequence_nll: malformed target sequence");
    }
    const auto enc = model.encode_bundle(bundle);
    const auto logits = model.decode_logits(enc, dyn, targets.input_ids);
    const auto probs = model.fused_step_probabilities(logits, dyn);
    const auto mass = gather_cols_sum(probs, targets.target_groups);
    return scale(sum(log(mass)), T(-1));
}

template <typename T>
Tensor<T> sampled_logprob_sum(const CaptionModelT<T>& model, const ModalityBundleT<T>& bundle,
                              const DynamicVocabulary& dyn,
                              const std::vector<std::int64_t>& sampled_ids) {
    if (sampled_ids.empty()) throw TrainError("sampled_logprob_sum: empty sample");
    TargetSequence seq;
    seq.input_ids.push_back(TokenizerVocab::kBos);
    for (std::size_t t = 0; t + 1 < sampled_ids.size(); ++t) {
        seq.input_ids.push_back(sampled_ids[t]);
    }
    for (auto id : sampled_ids) {
        const auto& g = dyn.group_of(id);
        seq.target_groups.emplace_back(g.begin(), g.end());
    }
    const auto enc = model.encode_bundle(bundle);
    const auto logits = model.decode_logits(enc, dyn, seq.input_ids);
    const auto probs = model.fused_step_probabilities(logits, dyn);
    const auto mass = gather_cols_sum(probs, seq.target_groups);
    return sum(log(mass));
}

template Tensor<float> sequence_nll(const CaptionModelT<float>&, const ModalityBundleT<float>&,
                                    const DynamicVocabulary&, const TargetSequence&);
template Tensor<double> sequence_nll(const CaptionModelT<double>&, const ModalityBundleT<double>&,
                                     const DynamicVocabulary&, const TargetSequence&);
template Tensor<float> sampled_logprob_sum(const CaptionModelT<float>&,
                                           const ModalityBundleT<float>&, const DynamicVocabulary&,
                                           const std::vector<std::int64_t>&);
template Tensor<double> sampled_logprob_sum(const CaptionModelT<double>&,
                                            const ModalityBundleT<double>&,
                                            const DynamicVocabulary&,
                                            const std::vector<std::int64_t>&);

RewardFn reward_metric(const std::string& name) {
    if (name == "cider") {
        return [](const Tokens& c, const std::vector<Tokens>& r, const CorpusIDF& idf) {
            return cider_d(c, r, idf);
        };
    }
    if (name == "bleu4") {
        return [](const Tokens& c, const std::vector<Tokens>& r, const CorpusIDF&) {
            return bleu4(c, r);
        };
    }
    if (name == "rouge") {
        return [](const Tokens& c, const std::vector<Tokens>& r, const CorpusIDF&) {
            return rouge_l(c, r);
        };
    }
    if (name == "meteor") {
        return [](const Tokens& c, const std::vector<Tokens>& r, const CorpusIDF&) {
            return meteor_lite(c, r);
        };
    }
    throw TrainError("unknown reward metric: " + name);
}

Tokens scoring_tokens(const CaptionHypothesis& hyp) {
    Tokens out;
    for (const auto& w : hyp.surface_tokens) {
        if (w == "<pad>" || w == "<bos>" || w == "<eos>" || w == "<unk>") continue;
        out.push_back(w);
    }
    return out;
}

EvalReport evaluate_captions(const std::vector<Tokens>& cands,
                             const std::vector<std::vector<Tokens>>& refs) {
    if (cands.empty() || cands.size() != refs.size()) {
        throw TrainError("evaluate_captions: need one candidate per reference set");
    }
    EvalReport rep;
    rep.bleu4 = corpus_bleu4(cands, refs);
    double rouge_sum = 0.0, meteor_sum = 0.0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
        rouge_sum += rouge_l(cands[i], refs[i]);
        meteor_sum += meteor_lite(cands[i], refs[i]);
    }
    rep.rouge_l = rouge_sum / static_cast<double>(cands.size());
    rep.meteor_lite = meteor_sum / static_cast<double>(cands.size());
    const auto cd = cider(cands, refs);
    rep.cider = cd.mean;
    rep.per_image = cd.per_image;
    return rep;
}

EvalReport evaluate_model(const CaptionModel& model, const std::vector<TrainExample>& examples) {
    std::vector<Tokens> cands;
    std::vector<std::vector<Tokens>> refs;
    cands.reserve(examples.size());
    refs.reserve(examples.size());
    for (const auto& ex : examples) {
        cands.push_back(scoring_tokens(greedy_decode(model, ex.bundle, ex.dyn)));
        refs.push_back(ex.reference_tokens);
    }
    return evaluate_captions(cands, refs);
}

double ce_epoch(CaptionModel& model, const std::vector<TrainExample>& examples, Adam<float>& opt,
                const TrainConfig& cfg, std::int64_t epoch, std::ostream* log) {
    if (examples.empty()) throw TrainError("ce_epoch: no examples");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        for (std::size_t r = 0; r < examples[i].references.size(); ++r) pairs.push_back({i, r});
    }
    auto rng = make_rng(cfg.seed, 0xCE000000ULL + static_cast<std::uint64_t>(epoch));
    shuffle(pairs, rng);

    const bool copy_on = model.config().copy_enabled;
    const auto max_len = model.config().max_decode_len;
    double total_nats = 0.0;
    std::int64_t total_tokens = 0;
    for (std::size_t start = 0; start < pairs.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
        const auto end = std::min(pairs.size(), start + static_cast<std::size_t>(cfg.batch_size));
        opt.zero_grad();
        std::vector<Tensor<float>> nlls;
        std::int64_t batch_tokens = 0;
        for (std::size_t k = start; k < end; ++k) {
            const auto& ex = examples[pairs[k].first];
            const auto& caption = ex.references[pairs[k].second];
            const auto targets = map_caption_targets(caption, ex.dyn, max_len, copy_on);
            nlls.push_back(sequence_nll(model, ex.bundle, ex.dyn, targets));
            batch_tokens += static_cast<std::int64_t>(targets.target_groups.size());
        }
        auto loss = scale(sum_of(std::span<const Tensor<float>>(nlls)),
                          1.0f / static_cast<float>(batch_tokens));
        backward(loss);
        opt.step();
        const double batch_loss = static_cast<double>(loss.data()[0]);
        total_nats += batch_loss * static_cast<double>(batch_tokens);
        total_tokens += batch_tokens;
        emit(log, json{{"stage", "ce"},
                       {"step", opt.schedule().step},
                       {"effective_step", opt.schedule().effective()},
                       {"lr", opt.current_lr()},
                       {"loss", batch_loss}});
    }
    if (log) log->flush();
    return total_nats / static_cast<double>(std::max<std::int64_t>(1, total_tokens));
}

ScstStepSummary scst_step(CaptionModel& model, const std::vector<const TrainExample*>& batch,
                          Adam<float>& opt, const TrainConfig& cfg, const CorpusIDF& idf,
                          std::uint64_t step_seed, std::ostream* log,
                          const RewardFn* reward_override) {
    if (batch.empty()) throw TrainError("scst_step: empty batch");
    const auto reward = reward_override ? *reward_override : reward_metric(cfg.reward);

    opt.zero_grad();
    std::vector<Tensor<float>> terms;
    ScstStepSummary summary;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const auto& ex = *batch[k];
        const auto sample =
            sample_decode(model, ex.bundle, ex.dyn, splitmix64(splitmix64(step_seed) + k));
        const auto baseline = greedy_decode(model, ex.bundle, ex.dyn);
        const double r_sample = reward(scoring_tokens(sample), ex.reference_tokens, idf);
        const double r_base = reward(scoring_tokens(baseline), ex.reference_tokens, idf);
        if (!std::isfinite(r_sample) || !std::isfinite(r_base)) {
            throw TrainError("non-finite reward for " + ex.image_id);
        }
        const double advantage = r_sample - r_base;
        summary.mean_advantage += advantage;
        summary.reward_mean += r_sample;
        summary.baseline_mean += r_base;
        if (advantage != 0.0 && !sample.token_ids.empty()) {
            auto lp = sampled_logprob_sum(model, ex.bundle, ex.dyn, sample.token_ids);
            terms.push_back(scale(lp, static_cast<float>(-advantage)));
        }
    }
    const auto n = static_cast<double>(batch.size());
    summary.mean_advantage /= n;
    summary.reward_mean /= n;
    summary.baseline_mean /= n;
    if (!terms.empty()) {
        auto loss =
            scale(sum_of(std::span<const Tensor<float>>(terms)), 1.0f / static_cast<float>(n));
        backward(loss);
        summary.loss = static_cast<double>(loss.data()[0]);
    }
    opt.step();  // zero-gradient steps still decay the moments
    emit(log, json{{"stage", "scst"},
                   {"step", opt.schedule().step},
                   {"effective_step", opt.schedule().effective()},
                   {"lr", opt.current_lr()},
                   {"mean_advantage", summary.mean_advantage},
                   {"reward_mean", summary.reward_mean}});
    return summary;
}

double scst_epoch(CaptionModel& model, const std::vector<TrainExample>& examples, Adam<float>& opt,
                  const TrainConfig& cfg, const CorpusIDF& idf, std::int64_t epoch,
                  std::ostream* log) {
    if (examples.empty()) throw TrainError("scst_epoch: no examples");
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto rng = make_rng(cfg.seed, 0x5C570000ULL + static_cast<std::uint64_t>(epoch));
    shuffle(order, rng);

    double reward_sum = 0.0;
    std::int64_t steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
        const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<const TrainExample*> batch;
        for (std::size_t k = start; k < end; ++k) batch.push_back(&examples[order[k]]);
        const auto step_seed =
            mix_seed(cfg.seed, 0x5C57BA5EULL + static_cast<std::uint64_t>(opt.schedule().step));
        const auto summary = scst_step(model, batch, opt, cfg, idf, step_seed, log);
        reward_sum += summary.reward_mean;
        ++steps;
    }
    if (log) log->flush();
    return reward_sum / static_cast<double>(std::max<std::int64_t>(1, steps));
}

// ---------------------------------------------------------------------------
// optimizer sidecar

void save_optimizer(Adam<float>& opt, const CaptionModel& model, const std::string& path) {
    const auto& named = model.named_parameters();
    auto& m = opt.moment1();
    auto& v = opt.moment2();
    if (m.size() != named.size()) {
        throw TrainError("optimizer does not cover the model parameters");
    }
    std::vector<NamedTensor> tensors;
    tensors.reserve(named.size() * 2);
    for (std::size_t i = 0; i < named.size(); ++i) {
        tensors.push_back({"m:" + named[i].first, named[i].second.shape(), m[i]});
        tensors.push_back({"v:" + named[i].first, named[i].second.shape(), v[i]});
    }
    save_container(path, tensors);

    const auto& cfg = opt.config();
    json meta{{"format", "goalcap-optimizer"},
              {"version", 1},
              {"base_lr", cfg.base_lr},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"eps", cfg.eps},
              {"warmup_steps", cfg.warmup_steps},
              {"step", opt.schedule().step},
              {"offset", opt.schedule().offset},
              {"updates", opt.update_count()}};
    std::ofstream out(path + ".json", std::ios::trunc);
    if (!out) throw TrainError("cannot write " + path + ".json");
    out << meta.dump(2) << '\n';
    if (!out) throw TrainError("write failed: " + path + ".json");
}

Adam<float> load_optimizer(const CaptionModel& model, const std::string& path) {
    std::ifstream in(path + ".json");
    if (!in) throw TrainError("cannot open " + path + ".json");
    json meta;
    try {
        in >> meta;
        if (meta.at("format").get<std::string>() != "goalcap-optimizer") {
            throw TrainError("not an optimizer sidecar: " + path);
        }
        if (meta.at("version").get<int>() != 1) {
            throw TrainError("unsupported optimizer sidecar version");
        }
        AdamConfig cfg;
        cfg.base_lr = meta.at("base_lr").get<double>();
        cfg.beta1 = meta.at("beta1").get<double>();
        cfg.beta2 = meta.at("beta2").get<double>();
        cfg.eps = meta.at("eps").get<double>();
        cfg.warmup_steps = meta.at("warmup_steps").get<std::int64_t>();

        Adam<float> opt(cfg, model.parameters());
        opt.schedule().step = meta.at("step").get<std::int64_t>();
        opt.schedule().offset = meta.at("offset").get<std::int64_t>();
        opt.update_count() = meta.at("updates").get<std::int64_t>();

        std::unordered_map<std::string, NamedTensor*> index;
        auto tensors = load_container(path);
        for (auto& t : tensors) index[t.name] = &t;
        const auto& named = model.named_parameters();
        for (std::size_t i = 0; i < named.size(); ++i) {
            for (const char* prefix : {"m:", "v:"}) {
                const auto it = index.find(prefix + named[i].first);
                if (it == index.end()) {
                    throw TrainError("optimizer sidecar misses " + named[i].first);
                }
                auto& dst = prefix[0] == 'm' ? opt.moment1()[i] : opt.moment2()[i];
                if (it->second->data.size() != dst.size()) {
                    throw TrainError("optimizer moment size mismatch for " + named[i].first);
                }
                dst = it->second->data;
            }
        }
        return opt;
    } catch (const json::exception& e) {
        throw TrainError(std::string("optimizer sidecar: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// pipeline

PipelineResult run_pipeline(const SynthDataset& ds, const PipelineConfig& cfg, std::ostream* log) {
    cfg.model.validate();
    cfg.train.validate();
    if (cfg.model.n_pixel != ds.spec.n_pixel || cfg.model.img_dim != ds.spec.img_dim) {
        throw TrainError("model feature layout does not match the dataset");
    }
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw TrainError("cannot create " + cfg.out_dir + ": " + ec.message());

    const auto examples =
        prepare_examples(ds.records, ds.lexicon, ds.vocab, cfg.model, cfg.bundle);
    std::vector<std::vector<Tokens>> all_refs;
    for (const auto& ex : examples) all_refs.push_back(ex.reference_tokens);
    const auto idf = build_idf(all_refs);

    const auto layers_axis =
        cfg.grid_layers.empty() ? std::vector<std::int64_t>{cfg.model.encoder_layers}
                                : cfg.grid_layers;
    const auto dims_axis =
        cfg.grid_dims.empty() ? std::vector<std::int64_t>{cfg.model.d} : cfg.grid_dims;
    const auto seeds_axis =
        cfg.grid_seeds.empty() ? std::vector<std::uint64_t>{cfg.train.seed} : cfg.grid_seeds;
    const auto copy_axis = cfg.grid_copy.empty()
                               ? std::vector<int>{cfg.model.copy_enabled ? 1 : 0}
                               : cfg.grid_copy;

    PipelineResult result;
    for (const auto layers : layers_axis) {
        for (const auto dim : dims_axis) {
            for (const auto copy_flag : copy_axis) {
                for (const auto seed : seeds_axis) {
                    ModelConfig mc = cfg.model;
                    mc.encoder_layers = layers;
                    mc.decoder_layers = layers;
                    mc.d = dim;
                    mc.copy_enabled = copy_flag != 0;
                    mc.validate();
                    TrainConfig tc = cfg.train;
                    tc.seed = seed;

                    const std::string name = "L" + std::to_string(layers) + "_d" +
                                             std::to_string(dim) + "_c" +
                                             std::to_string(copy_flag) + "_s" +
                                             std::to_string(seed);

                    CaptionModel model(mc, ds.vocab, seed);
                    Adam<float> opt(tc.adam, model.parameters());

                    // CE stage; optionally snapshot the final third for the
                    // fine-tune initializer draw
                    const auto third_start = tc.ce_epochs - tc.ce_epochs / 3;
                    std::vector<std::vector<NamedTensor>> snaps;
                    for (std::int64_t e = 0; e < tc.ce_epochs; ++e) {
                        ce_epoch(model, examples, opt, tc, e, log);
                        if (cfg.scst_pick_final_third && e >= third_start) {
                            snaps.push_back(model.export_tensors());
                        }
                    }

                    CheckpointMeta meta;
                    meta.config = mc;
                    meta.vocab_hash = model.vocab().content_hash();
                    meta.train_steps = static_cast<std::uint64_t>(opt.schedule().step);
                    meta.stage = "ce";
                    meta.seed = seed;
                    const auto ce_path = cfg.out_dir + "/ce_" + name + ".bin";
                    save_checkpoint(model, ce_path, meta);
                    if (cfg.save_optimizer_state) save_optimizer(opt, model, ce_path + ".opt");
                    result.ce_paths.push_back(ce_path);

                    if (cfg.scst_pick_final_third && snaps.size() > 1) {
                        auto rng = make_rng(seed, 0xF19A1);
                        const auto pick = uniform_index(rng, snaps.size());
                        if (pick + 1 != snaps.size()) {
                            model.import_tensors(snaps[pick]);
                            // moments belong to the final epoch; restart them
                            // for the non-final initializer
                            auto fresh = Adam<float>(tc.adam, model.parameters());
                            fresh.schedule() = opt.schedule();
                            opt = std::move(fresh);
                        }
                    }

                    // fine-tune stage: effective step jumps deep into decay
                    opt.schedule().offset = kScstScheduleOffset;
                    for (std::int64_t e = 0; e < tc.scst_epochs; ++e) {
                        scst_epoch(model, examples, opt, tc, idf, e, log);
                    }

                    meta.train_steps = static_cast<std::uint64_t>(opt.schedule().step);
                    meta.stage = "scst";
                    const auto scst_path = cfg.out_dir + "/scst_" + name + ".bin";
                    save_checkpoint(model, scst_path, meta);
                    result.scst_paths.push_back(scst_path);
                }
            }
        }
    }
    return result;
}

}  // namespace goalcap
