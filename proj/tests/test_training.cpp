#include "doctest.h"

#include "goalcap/data.hpp"
#include "goalcap/rng.hpp"
#include "goalcap/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace goalcap;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.d = 8;
    cfg.img_dim = 5;
    cfg.txt_dim = 4;
    cfg.n_pixel = 3;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.max_ocr = 3;
    cfg.max_obj = 2;
    cfg.max_decode_len = 8;
    return cfg;
}

template <typename T>
ModalityBundleT<T> random_bundle(const ModelConfig& cfg, std::vector<std::string> ocr,
                                 std::vector<std::string> obj, std::uint64_t seed) {
    auto rng = make_rng(seed, 0xB0D1);
    auto rand_tensor = [&](Shape s) {
        std::vector<T> v(static_cast<std::size_t>(shape_numel(s)));
        for (auto& x : v) x = static_cast<T>(0.4 * normal01(rng));
        return Tensor<T>::from(std::move(s), std::move(v));
    };
    ModalityBundleT<T> b;
    b.img = rand_tensor({cfg.n_pixel, cfg.img_dim});
    b.ocr_tokens = std::move(ocr);
    if (!b.ocr_tokens.empty()) {
        b.ocr_embeddings = rand_tensor({static_cast<std::int64_t>(b.ocr_tokens.size()), cfg.txt_dim});
    }
    b.obj_tokens = std::move(obj);
    if (!b.obj_tokens.empty()) {
        b.obj_embeddings = rand_tensor({static_cast<std::int64_t>(b.obj_tokens.size()), cfg.txt_dim});
    }
    return b;
}

// max relative error between autodiff grads and central differences over a
// random sample of parameter components
template <typename LossFn>
double fd_max_rel_err(CaptionModelT<double>& model, LossFn make_loss, int per_param,
                      std::uint64_t seed) {
    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();
    auto loss = make_loss();
    backward(loss);

    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (auto& p : params) {
        grads.emplace_back(p.grad().begin(), p.grad().end());
    }

    auto rng = make_rng(seed, 0xFD);
    double worst = 0.0;
    int checked = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].data();
        for (int s = 0; s < per_param; ++s) {
            const auto idx = uniform_index(rng, data.size());
            const double w0 = data[idx];
            const double h = 1e-5 * std::max(1.0, std::abs(w0));
            double lp, lm;
            {
                NoGradGuard ng;
                data[idx] = w0 + h;
                lp = make_loss().item();
                data[idx] = w0 - h;
                lm = make_loss().item();
                data[idx] = w0;
            }
            const double fd = (lp - lm) / (2 * h);
            const double ad = grads[pi].empty() ? 0.0 : grads[pi][idx];
            const double denom = std::max({1e-6, std::abs(fd), std::abs(ad)});
            worst = std::max(worst, std::abs(fd - ad) / denom);
            ++checked;
        }
    }
    CHECK(checked >= 40);
    return worst;
}

SynthSpec corpus_spec(std::int64_t n, std::uint64_t seed) {
    SynthSpec s;
    s.n_images = n;
    s.n_pixel = 6;
    s.img_dim = 10;
    s.n_object_words = 6;
    s.n_brand_words = 5;
    s.n_oov_brand_words = 2;
    s.text_fraction = 1.0;
    s.rotation_fraction = 0.3;
    s.oov_plant_fraction = 0.2;
    s.seed = seed;
    return s;
}

ModelConfig corpus_model(const SynthSpec& s) {
    ModelConfig cfg;
    cfg.d = 32;
    cfg.img_dim = s.img_dim;
    cfg.txt_dim = 16;
    cfg.n_pixel = s.n_pixel;
    cfg.encoder_layers = 1;
    cfg.decoder_layers = 1;
    cfg.heads = 4;
    cfg.ffn_mult = 2;
    cfg.max_ocr = 4;
    cfg.max_obj = 4;
    cfg.max_decode_len = 12;
    return cfg;
}

}  // namespace

TEST_CASE("training config validation") {
    CHECK_NOTHROW(TrainConfig{}.validate());
    auto bad = [](auto&& mutate) {
        TrainConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), TrainError);
    };
    bad([](TrainConfig& c) { c.ce_epochs = 0; });
    bad([](TrainConfig& c) { c.scst_epochs = 0; });
    bad([](TrainConfig& c) { c.batch_size = 0; });
    bad([](TrainConfig& c) { c.reward = "accuracy"; });
    bad([](TrainConfig& c) { c.adam.base_lr = 0.0; });
    CHECK_THROWS_AS(reward_metric("nope"), TrainError);
    for (const char* name : {"cider", "bleu4", "rouge", "meteor"}) {
        CHECK_NOTHROW(reward_metric(name));
    }
}

TEST_CASE("caption to target mapping") {
    const auto base = TokenizerVocab::from_tokens({"a", "bottle", "of", "ketchup"});
    // ids: specials 0..3, a=4 bottle=5 of=6 ketchup=7
    DynamicVocabulary dyn(base, {"heinz", "ketchup"}, {"bottle"}, 3, 2);
    // extension ids: heinz=8, ketchup=9, bottle=8+3+0=11

    SUBCASE("copy enabled merges base and extension ids") {
        const auto ts = map_caption_targets("A bottle of Heinz ketchup!", dyn, 10, true);
        CHECK(ts.input_ids == std::vector<std::int64_t>{1, 4, 5, 6, 8, 7});
        REQUIRE(ts.target_groups.size() == 6);
        CHECK(ts.target_groups[0] == std::vector<std::int32_t>{4});
        CHECK(ts.target_groups[1] == std::vector<std::int32_t>{5, 11});
        CHECK(ts.target_groups[2] == std::vector<std::int32_t>{6});
        CHECK(ts.target_groups[3] == std::vector<std::int32_t>{8});
        CHECK(ts.target_groups[4] == std::vector<std::int32_t>{7, 9});
        CHECK(ts.target_groups[5] == std::vector<std::int32_t>{2});
    }

    SUBCASE("copy disabled falls back to base-only groups") {
        const auto ts = map_caption_targets("a bottle of heinz ketchup", dyn, 10, false);
        CHECK(ts.input_ids == std::vector<std::int64_t>{1, 4, 5, 6, 3, 7});
        REQUIRE(ts.target_groups.size() == 6);
        CHECK(ts.target_groups[1] == std::vector<std::int32_t>{5});
        CHECK(ts.target_groups[3] == std::vector<std::int32_t>{3});  // heinz -> <unk>
        CHECK(ts.target_groups[4] == std::vector<std::int32_t>{7});
    }

    SUBCASE("unknown words map to unk, truncation keeps the eos step") {
        const auto ts = map_caption_targets("a zzz", dyn, 10, true);
        CHECK(ts.input_ids == std::vector<std::int64_t>{1, 4, 3});
        CHECK(ts.target_groups.back() == std::vector<std::int32_t>{2});

        const auto cut = map_caption_targets("a bottle of heinz ketchup", dyn, 2, true);
        CHECK(cut.input_ids == std::vector<std::int64_t>{1, 4, 5});
        REQUIRE(cut.target_groups.size() == 3);
        CHECK(cut.target_groups[2] == std::vector<std::int32_t>{2});

        const auto empty = map_caption_targets("...", dyn, 5, true);
        CHECK(empty.input_ids == std::vector<std::int64_t>{1});
        REQUIRE(empty.target_groups.size() == 1);
        CHECK(empty.target_groups[0] == std::vector<std::int32_t>{2});
    }
}

TEST_CASE("uniform output head gives ln V per token") {
    auto cfg = tiny_model();
    cfg.copy_enabled = false;
    const auto base = TokenizerVocab::from_tokens({"a", "bottle", "of", "ketchup"});
    CaptionModelT<float> model(cfg, base, 3);
    for (const char* name : {"out_w", "out_b"}) {
        auto p = model.parameter(name);
        std::fill(p.data().begin(), p.data().end(), 0.0f);
    }
    const auto bundle = random_bundle<float>(cfg, {"heinz"}, {"bottle"}, 4);
    DynamicVocabulary dyn(model.vocab(), {"heinz"}, {"bottle"}, cfg.max_ocr, cfg.max_obj);
    const auto ts = map_caption_targets("a bottle of ketchup", dyn, cfg.max_decode_len, false);
    const auto nll = sequence_nll(model, bundle, dyn, ts);
    const double expect = static_cast<double>(ts.target_groups.size()) *
                          std::log(static_cast<double>(model.vocab().size()));
    CHECK(nll.item() == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("cross-entropy loss gradient matches finite differences") {
    auto cfg = tiny_model();
    const auto base = TokenizerVocab::from_tokens({"a", "bottle", "of", "ketchup"});
    CaptionModelT<double> model(cfg, base, 7);
    const auto bundle = random_bundle<double>(cfg, {"heinz", "ketchup"}, {"bottle"}, 8);
    DynamicVocabulary dyn(model.vocab(), {"heinz", "ketchup"}, {"bottle"}, cfg.max_ocr,
                          cfg.max_obj);
    const auto ts = map_caption_targets("a bottle of heinz ketchup", dyn, cfg.max_decode_len, true);
    const auto err = fd_max_rel_err(
        model, [&] { return sequence_nll(model, bundle, dyn, ts); }, 2, 99);
    CHECK(err <= 1e-4);
}

TEST_CASE("scst surrogate gradient matches finite differences with frozen samples") {
    auto cfg = tiny_model();
    const auto base = TokenizerVocab::from_tokens({"a", "bottle", "of", "ketchup"});
    CaptionModelT<double> model(cfg, base, 17);
    const auto bundle = random_bundle<double>(cfg, {"heinz"}, {"bottle"}, 18);
    DynamicVocabulary dyn(model.vocab(), {"heinz"}, {"bottle"}, cfg.max_ocr, cfg.max_obj);

    // two frozen samples with frozen advantages, one of them through a slot id
    const std::vector<std::int64_t> s1{4, 8, 2};   // a heinz <eos>
    const std::vector<std::int64_t> s2{5, 6, 7};   // no eos (length-capped sample)
    const double a1 = 0.7, a2 = -0.4;
    auto loss_fn = [&] {
        auto l1 = scale(sampled_logprob_sum(model, bundle, dyn, s1), -a1);
        auto l2 = scale(sampled_logprob_sum(model, bundle, dyn, s2), -a2);
        return scale(sum_of({l1, l2}), 0.5);
    };
    const auto err = fd_max_rel_err(model, loss_fn, 2, 123);
    CHECK(err <= 1e-4);

    // positive advantage: an infinitesimal descent step raises the sampled
    // log-likelihood
    auto params = model.parameters();
    for (auto& p : params) p.zero_grad();
    const double s_before = sampled_logprob_sum(model, bundle, dyn, s1).item();
    auto loss = scale(sampled_logprob_sum(model, bundle, dyn, s1), -a1);
    backward(loss);
    const double eps = 1e-4;
    for (auto& p : params) {
        auto d = p.data();
        auto g = p.grad();
        if (g.empty()) continue;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= eps * g[i];
    }
    NoGradGuard ng;
    const double s_after = sampled_logprob_sum(model, bundle, dyn, s1).item();
    CHECK(s_after > s_before);
}

TEST_CASE("example assembly wires the perception pipeline") {
    const auto spec = corpus_spec(14, 42);
    const auto ds = synth_generate(spec);
    const auto cfg = corpus_model(spec);
    BundleOptions opts;

    const auto examples = prepare_examples(ds.records, ds.lexicon, ds.vocab, cfg, opts);
    REQUIRE(examples.size() == ds.records.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        const auto& rec = ds.records[i];
        CHECK(ex.image_id == rec.image_id);
        CHECK(ex.selected_angle == rec.true_rotation);  // confusion 0: sweep recovers it
        REQUIRE(ex.bundle.ocr_tokens.size() ==
                std::min(rec.planted_text.size(), static_cast<std::size_t>(cfg.max_ocr)));
        for (std::size_t k = 0; k < ex.bundle.ocr_tokens.size(); ++k) {
            CHECK(ex.bundle.ocr_tokens[k] == rec.planted_text[k].token);
        }
        const auto kept = filter_objects(rec.planted_objects,
                                         {static_cast<int>(cfg.max_ocr),
                                          static_cast<int>(cfg.max_obj), 0.25, true, false, false});
        REQUIRE(ex.bundle.obj_tokens.size() == kept.size());
        for (std::size_t k = 0; k < kept.size(); ++k) {
            CHECK(ex.bundle.obj_tokens[k] == kept[k].label);
        }
        CHECK(ex.bundle.img.rows() == cfg.n_pixel);
        CHECK(ex.bundle.img.cols() == cfg.img_dim);
        if (!ex.bundle.ocr_tokens.empty()) {
            CHECK(ex.bundle.ocr_embeddings.rows() ==
                  static_cast<std::int64_t>(ex.bundle.ocr_tokens.size()));
            CHECK(ex.bundle.ocr_embeddings.cols() == cfg.txt_dim);
        }
        CHECK(ex.dyn.ocr_count() == static_cast<std::int64_t>(ex.bundle.ocr_tokens.size()));
        CHECK(ex.reference_tokens.size() == rec.references.size());
    }

    SUBCASE("channel ablations drop the corresponding tokens") {
        BundleOptions no_ocr = opts;
        no_ocr.use_ocr = false;
        const auto ex = assemble_example(ds.records[0], ds.lexicon, ds.vocab, cfg, no_ocr);
        CHECK(ex.bundle.ocr_tokens.empty());
        CHECK(!ex.bundle.ocr_embeddings.defined());
        CHECK(ex.dyn.ocr_count() == 0);

        BundleOptions no_obj = opts;
        no_obj.use_obj = false;
        const auto ex2 = assemble_example(ds.records[0], ds.lexicon, ds.vocab, cfg, no_obj);
        CHECK(ex2.bundle.obj_tokens.empty());
    }

    SUBCASE("true-rotation bypass matches the sweep under a clean recognizer") {
        BundleOptions direct = opts;
        direct.use_true_rotation = true;
        const auto ex = assemble_example(ds.records[0], ds.lexicon, ds.vocab, cfg, direct);
        const auto swept = assemble_example(ds.records[0], ds.lexicon, ds.vocab, cfg, opts);
        CHECK(ex.bundle.ocr_tokens == swept.bundle.ocr_tokens);
    }

    SUBCASE("feature layout mismatch is rejected") {
        auto wrong = cfg;
        wrong.img_dim = cfg.img_dim + 1;
        CHECK_THROWS_AS(assemble_example(ds.records[0], ds.lexicon, ds.vocab, wrong, opts),
                        TrainError);
    }
}

TEST_CASE("cross-entropy overfits a small corpus") {
    const auto spec = corpus_spec(50, 7);
    const auto ds = synth_generate(spec);
    const auto cfg = corpus_model(spec);
    TrainConfig tc;
    tc.ce_epochs = 58;
    tc.batch_size = 16;
    tc.seed = 5;
    tc.adam.base_lr = 5e-3;
    tc.adam.warmup_steps = 20;

    // one deterministic caption per image: the classic overfit setup
    auto examples = prepare_examples(ds.records, ds.lexicon, ds.vocab, cfg, {});
    for (auto& ex : examples) {
        ex.references.resize(1);
        ex.reference_tokens.resize(1);
    }
    CaptionModel model(cfg, ds.vocab, tc.seed);
    Adam<float> opt(tc.adam, model.parameters());

    std::ostringstream log;
    std::vector<double> epoch_means;
    for (std::int64_t e = 0; e < tc.ce_epochs; ++e) {
        epoch_means.push_back(ce_epoch(model, examples, opt, tc, e, &log));
    }

    // monotone decrease once the warmup steps are consumed
    const auto steps_per_epoch = opt.schedule().step / tc.ce_epochs;
    const auto warm_epoch =
        static_cast<std::size_t>(tc.adam.warmup_steps / std::max<std::int64_t>(1, steps_per_epoch) + 1);
    REQUIRE(warm_epoch + 2 < epoch_means.size());
    for (std::size_t e = warm_epoch; e + 1 < epoch_means.size(); ++e) {
        CHECK(epoch_means[e + 1] < epoch_means[e]);
    }
    CHECK(epoch_means.back() < 0.1);

    // step log: parseable JSON lines with increasing steps
    std::istringstream lines(log.str());
    std::string line;
    std::int64_t last_step = 0, n_lines = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("stage") == "ce");
        CHECK(j.at("step").get<std::int64_t>() == last_step + 1);
        CHECK(j.at("effective_step").get<std::int64_t>() == j.at("step").get<std::int64_t>());
        CHECK(j.at("lr").get<double>() > 0.0);
        CHECK(std::isfinite(j.at("loss").get<double>()));
        last_step = j.at("step").get<std::int64_t>();
        ++n_lines;
    }
    CHECK(n_lines == opt.schedule().step);
}

TEST_CASE("constant reward leaves a fresh optimizer's parameters untouched") {
    const auto spec = corpus_spec(6, 19);
    const auto ds = synth_generate(spec);
    const auto cfg = corpus_model(spec);
    const auto examples = prepare_examples(ds.records, ds.lexicon, ds.vocab, cfg, {});
    CaptionModel model(cfg, ds.vocab, 3);
    TrainConfig tc;
    Adam<float> opt(tc.adam, model.parameters());

    std::vector<std::vector<float>> before;
    for (const auto& [name, p] : model.named_parameters()) {
        before.emplace_back(p.data().begin(), p.data().end());
    }

    std::vector<const TrainExample*> batch;
    for (const auto& ex : examples) batch.push_back(&ex);
    const RewardFn constant = [](const Tokens&, const std::vector<Tokens>&, const CorpusIDF&) {
        return 3.7;
    };
    CorpusIDF idf;  // unused by the constant reward
    std::ostringstream log;
    const auto summary = scst_step(model, batch, opt, tc, idf, 11, &log, &constant);
    CHECK(summary.mean_advantage == 0.0);
    CHECK(summary.loss == 0.0);
    CHECK(summary.reward_mean == doctest::Approx(3.7));

    std::size_t i = 0;
    for (const auto& [name, p] : model.named_parameters()) {
        const std::vector<float> after(p.data().begin(), p.data().end());
        CHECK_MESSAGE(after == before[i], name);
        ++i;
    }

    const auto j = nlohmann::json::parse(log.str());
    CHECK(j.at("stage") == "scst");
    CHECK(j.at("mean_advantage").get<double>() == 0.0);
    CHECK(j.at("reward_mean").get<double>() == doctest::Approx(3.7));
}

TEST_CASE("scst epoch runs with the schedule offset applied") {
    const auto spec = corpus_spec(8, 23);
    const auto ds = synth_generate(spec);
    const auto cfg = corpus_model(spec);
    const auto examples = prepare_examples(ds.records, ds.lexicon, ds.vocab, cfg, {});
    std::vector<std::vector<Tokens>> refs;
    for (const auto& ex : examples) refs.push_back(ex.reference_tokens);
    const auto idf = build_idf(refs);

    CaptionModel model(cfg, ds.vocab, 1);
    TrainConfig tc;
    tc.batch_size = 4;
    Adam<float> opt(tc.adam, model.parameters());
    opt.schedule().offset = kScstScheduleOffset;

    std::ostringstream log;
    const double reward = scst_epoch(model, examples, opt, tc, idf, 0, &log);
    CHECK(std::isfinite(reward));
    CHECK(reward >= 0.0);

    std::istringstream lines(log.str());
    std::string line;
    std::int64_t n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("stage") == "scst");
        CHECK(j.at("effective_step").get<std::int64_t>() ==
              j.at("step").get<std::int64_t>() + kScstScheduleOffset);
        CHECK(std::isfinite(j.at("mean_advantage").get<double>()));
        CHECK(std::isfinite(j.at("reward_mean").get<double>()));
        ++n;
    }
    CHECK(n == opt.schedule().step);
}

TEST_CASE("optimizer sidecar restores training exactly") {
    const auto spec = corpus_spec(10, 29);
    const auto ds = synth_generate(spec);
    const auto cfg = corpus_model(spec);
    const auto examples = prepare_examples(ds.records, ds.lexicon, ds.vocab, cfg, {});
    TrainConfig tc;
    tc.batch_size = 8;
    tc.adam.warmup_steps = 5;

    CaptionModel model(cfg, ds.vocab, 9);
    Adam<float> opt(tc.adam, model.parameters());
    ce_epoch(model, examples, opt, tc, 0, nullptr);

    const auto dir = fs::temp_directory_path() / "goalcap_opt_sidecar";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto path = (dir / "ck.opt").string();
    save_optimizer(opt, model, path);

    // a clone resumed from the sidecar must take bit-identical further steps
    CaptionModel clone(cfg, ds.vocab, 9);
    clone.import_tensors(model.export_tensors());
    auto restored = load_optimizer(clone, path);
    CHECK(restored.schedule().step == opt.schedule().step);
    CHECK(restored.schedule().offset == opt.schedule().offset);
    CHECK(restored.update_count() == opt.update_count());
    CHECK(restored.config().base_lr == opt.config().base_lr);
    for (std::size_t i = 0; i < opt.moment1().size(); ++i) {
        CHECK(restored.moment1()[i] == opt.moment1()[i]);
        CHECK(restored.moment2()[i] == opt.moment2()[i]);
    }

    ce_epoch(model, examples, opt, tc, 1, nullptr);
    ce_epoch(clone, examples, restored, tc, 1, nullptr);
    const auto a = model.export_tensors();
    const auto b = clone.export_tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK_MESSAGE(a[i].data == b[i].data, a[i].name);
    }

    CHECK_THROWS_AS(load_optimizer(clone, (dir / "missing.opt").string()), TrainError);
    fs::remove_all(dir);
}

TEST_CASE("evaluation and scoring helpers") {
    CaptionHypothesis hyp;
    hyp.surface_tokens = {"a", "<unk>", "red", "bottle", "<eos>"};
    CHECK(scoring_tokens(hyp) == Tokens{"a", "red", "bottle"});

    const std::vector<Tokens> cands = {{"a", "red", "bottle", "here"},
                                       {"the", "green", "box", "there"}};
    const std::vector<std::vector<Tokens>> refs = {{cands[0]}, {cands[1]}};
    const auto rep = evaluate_captions(cands, refs);
    CHECK(rep.bleu4 == doctest::Approx(1.0));
    CHECK(rep.rouge_l == doctest::Approx(1.0));
    // exact match still pays the one-chunk fragmentation penalty
    CHECK(rep.meteor_lite == doctest::Approx(1.0 - 0.5 / 64.0));
    REQUIRE(rep.per_image.size() == 2);
    CHECK(rep.cider == doctest::Approx(10.0));

    CHECK_THROWS_AS(evaluate_captions({}, {}), TrainError);
    CHECK_THROWS_AS(evaluate_captions(cands, {refs[0]}), TrainError);
}

TEST_CASE("pipeline grid emits reproducible checkpoints") {
    SynthSpec spec = corpus_spec(8, 77);
    const auto ds = synth_generate(spec);

    PipelineConfig pc;
    pc.model = corpus_model(spec);
    pc.model.d = 16;
    pc.model.heads = 2;
    pc.train.ce_epochs = 1;
    pc.train.scst_epochs = 1;
    pc.train.batch_size = 8;
    pc.train.adam.warmup_steps = 5;
    pc.grid_layers = {1, 2};
    pc.grid_seeds = {0, 1};

    const auto dir_a = fs::temp_directory_path() / "goalcap_pipe_a";
    const auto dir_b = fs::temp_directory_path() / "goalcap_pipe_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    pc.out_dir = dir_a.string();
    const auto ra = run_pipeline(ds, pc, nullptr);
    pc.out_dir = dir_b.string();
    const auto rb = run_pipeline(ds, pc, nullptr);

    REQUIRE(ra.ce_paths.size() == 4);
    REQUIRE(ra.scst_paths.size() == 4);

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        REQUIRE_MESSAGE(in.good(), p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    for (std::size_t i = 0; i < ra.scst_paths.size(); ++i) {
        const auto rel_ce = fs::path(ra.ce_paths[i]).filename();
        const auto rel_sc = fs::path(ra.scst_paths[i]).filename();
        CHECK(slurp(dir_a / rel_ce) == slurp(dir_b / rel_ce));
        CHECK(slurp(dir_a / rel_sc) == slurp(dir_b / rel_sc));
        CHECK(slurp(dir_a / (rel_ce.string() + ".json")) == slurp(dir_b / (rel_ce.string() + ".json")));
        CHECK(slurp(dir_a / (rel_ce.string() + ".opt")) == slurp(dir_b / (rel_ce.string() + ".opt")));
    }

    const auto loaded = load_checkpoint(ra.scst_paths[0]);
    CHECK(loaded.meta.stage == "scst");
    CHECK(loaded.meta.config.encoder_layers == 1);
    CHECK(loaded.meta.seed == 0);
    CHECK(loaded.meta.train_steps > 0);
    const auto ce_loaded = load_checkpoint(ra.ce_paths[0]);
    CHECK(ce_loaded.meta.stage == "ce");

    // the model actually captions after this tiny pipeline
    const auto examples = prepare_examples(ds.records, ds.lexicon, ds.vocab, loaded.meta.config,
                                           pc.bundle);
    const auto rep = evaluate_model(loaded.model, examples);
    CHECK(rep.per_image.size() == examples.size());
    CHECK(std::isfinite(rep.cider));

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}
