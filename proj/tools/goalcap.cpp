// Command-line front end for the goal-oriented captioning pipeline: synthetic
// data generation, cross-entropy and self-critical training, decoding,
// reranking, orientation recovery, evaluation, and the channel ablation grid.
//
// Conventions shared by every subcommand:
//   - progress goes to stderr, data to stdout or --out files
//   - errors print one JSON object on stderr; exit 1 = usage, 2 = validation,
//     3 = runtime
//   - every run writes a manifest (run_manifest.json next to directory
//     outputs, <file>.manifest.json next to file outputs) with git-style blob
//     hashes of all inputs so a run can be replayed exactly
//   - outputs are append-only: an existing artifact is an error unless
//     --force is given
//   - "goalcap --config FILE <subcommand> ..." reads key=value lines from an
//     INI file ([subcommand] sections or dotted subcommand.key names);
//     command-line flags win over config values

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "goalcap/data.hpp"
#include "goalcap/embeddings.hpp"
#include "goalcap/metrics.hpp"
#include "goalcap/model.hpp"
#include "goalcap/perception.hpp"
#include "goalcap/postprocess.hpp"
#include "goalcap/rng.hpp"
#include "goalcap/training.hpp"
#include "goalcap/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace goalcap;

namespace {

// validation failures raised by the CLI itself (bad pairings, stale outputs)
class CliError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// git-style content hashes (SHA-1 over "blob <size>\0<bytes>")

class Sha1 {
public:
    void update(const unsigned char* data, std::size_t len) {
        for (std::size_t i = 0; i < len; ++i) {
            buf_[len_ % 64] = data[i];
            if (++len_ % 64 == 0) block();
        }
    }

    std::string hex() {
        const std::uint64_t bits = len_ * 8;
        unsigned char pad = 0x80;
        update(&pad, 1);
        const unsigned char zero = 0;
        while (len_ % 64 != 56) update(&zero, 1);
        for (int i = 7; i >= 0; --i) {
            const unsigned char b = static_cast<unsigned char>(bits >> (8 * i));
            buf_[len_ % 64] = b;
            if (++len_ % 64 == 0) block();
        }
        char out[41];
        for (int i = 0; i < 5; ++i) std::snprintf(out + 8 * i, 9, "%08x", h_[i]);
        return std::string(out, 40);
    }

private:
    void block() {
        std::uint32_t w[80];
        for (int t = 0; t < 16; ++t) {
            w[t] = (std::uint32_t(buf_[4 * t]) << 24) | (std::uint32_t(buf_[4 * t + 1]) << 16) |
                   (std::uint32_t(buf_[4 * t + 2]) << 8) | std::uint32_t(buf_[4 * t + 3]);
        }
        auto rol = [](std::uint32_t x, int n) { return (x << n) | (x >> (32 - n)); };
        for (int t = 16; t < 80; ++t)
            w[t] = rol(w[t - 3] ^ w[t - 8] ^ w[t - 14] ^ w[t - 16], 1);
        std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
        for (int t = 0; t < 80; ++t) {
            std::uint32_t f, k;
            if (t < 20) {
                f = (b & c) | (~b & d);
                k = 0x5a827999;
            } else if (t < 40) {
                f = b ^ c ^ d;
                k = 0x6ed9eba1;
            } else if (t < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8f1bbcdc;
            } else {
                f = b ^ c ^ d;
                k = 0xca62c1d6;
            }
            const std::uint32_t tmp = rol(a, 5) + f + e + k + w[t];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = tmp;
        }
        h_[0] += a;
        h_[1] += b;
        h_[2] += c;
        h_[3] += d;
        h_[4] += e;
    }

    std::array<std::uint32_t, 5> h_ = {0x67452301, 0xefcdab89, 0x98badcfe, 0x10325476,
                                       0xc3d2e1f0};
    unsigned char buf_[64] = {};
    std::uint64_t len_ = 0;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError("cannot read " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string git_blob_hash(const std::string& path) {
    const auto body = slurp(path);
    const auto header = "blob " + std::to_string(body.size()) + '\0';
    Sha1 h;
    h.update(reinterpret_cast<const unsigned char*>(header.data()), header.size());
    h.update(reinterpret_cast<const unsigned char*>(body.data()), body.size());
    return h.hex();
}

// ---------------------------------------------------------------------------
// run manifests and append-only outputs

const std::vector<std::string> kDatasetFiles = {"manifest.json", "detections.jsonl",
                                                "features.bin", "lexicon.txt", "vocab.txt"};

struct RunManifest {
    json j;

    RunManifest(const std::string& subcommand, const std::string& config_path,
                std::uint64_t seed) {
        j["subcommand"] = subcommand;
        j["config"] = config_path;
        j["seed"] = seed;
        j["inputs"] = json::object();
        j["outputs"] = json::array();
        j["options"] = json::object();
    }

    void input(const std::string& path) { j["inputs"][path] = git_blob_hash(path); }
    void input_dataset(const std::string& dir) {
        for (const auto& f : kDatasetFiles) input(dir + "/" + f);
    }
    void output(const std::string& path) { j["outputs"].push_back(path); }
    json& options() { return j["options"]; }

    void write(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw CliError("cannot write " + path);
        out << j.dump(2) << '\n';
    }
};

void ensure_fresh(const std::string& path, bool force) {
    if (!force && fs::exists(path))
        throw CliError("refusing to overwrite existing " + path + " (pass --force)");
}

void make_parent_dirs(const std::string& file_path) {
    const auto parent = fs::path(file_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::ofstream open_out(const std::string& path) {
    make_parent_dirs(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CliError("cannot write " + path);
    return out;
}

// ---------------------------------------------------------------------------
// shared flag bundles

struct CommonOpts {
    std::string config;  // populated by CLI11's config machinery, recorded only
    std::uint64_t seed = 0;
    bool force = false;
};

void add_common(CLI::App* sub, CommonOpts& c) {
    sub->add_option("--seed", c.seed, "master random seed");
    sub->add_flag("--force", c.force, "allow overwriting existing outputs");
}

std::string config_path_of(const CLI::App& app) {
    const auto* opt = app.get_config_ptr();
    return (opt != nullptr && opt->count() > 0) ? opt->as<std::string>() : std::string();
}

struct ChannelFlags {
    bool no_ocr = false;
    bool no_obj = false;
    bool true_rotation = false;
    double confusion = 0.0;
    std::uint64_t recognizer_seed = 0;
};

void add_channel_flags(CLI::App* sub, ChannelFlags& f) {
    sub->add_flag("--no-ocr", f.no_ocr, "drop the detected-text channel");
    sub->add_flag("--no-obj", f.no_obj, "drop the object-label channel");
    sub->add_flag("--true-rotation", f.true_rotation,
                  "bypass the four-angle sweep with the ground-truth angle");
    sub->add_option("--confusion", f.confusion,
                    "recognizer confusion rate off the true angle");
    sub->add_option("--recognizer-seed", f.recognizer_seed, "recognizer noise seed");
}

BundleOptions bundle_of(const ChannelFlags& f) {
    BundleOptions b;
    b.confusion_rate = f.confusion;
    b.recognizer_seed = f.recognizer_seed;
    b.use_ocr = !f.no_ocr;
    b.use_obj = !f.no_obj;
    b.use_true_rotation = f.true_rotation;
    return b;
}

void record_channels(json& options, const ChannelFlags& f) {
    options["use_ocr"] = !f.no_ocr;
    options["use_obj"] = !f.no_obj;
    options["true_rotation"] = f.true_rotation;
    options["confusion"] = f.confusion;
    options["recognizer_seed"] = f.recognizer_seed;
}

struct ModelFlags {
    std::int64_t dim = 64;
    std::int64_t txt_dim = 32;
    std::int64_t heads = 4;
    std::int64_t enc_layers = 2;
    std::int64_t dec_layers = 2;
    std::int64_t ffn_mult = 4;
    std::int64_t max_ocr = 8;
    std::int64_t max_obj = 6;
    std::int64_t max_len = 20;
    bool no_copy = false;
};

void add_model_flags(CLI::App* sub, ModelFlags& f) {
    sub->add_option("--dim", f.dim, "joint model width");
    sub->add_option("--txt-dim", f.txt_dim, "detection embedding width");
    sub->add_option("--heads", f.heads, "attention heads");
    sub->add_option("--enc-layers", f.enc_layers, "encoder layers");
    sub->add_option("--dec-layers", f.dec_layers, "decoder layers");
    sub->add_option("--ffn-mult", f.ffn_mult, "feed-forward width multiple");
    sub->add_option("--max-ocr", f.max_ocr, "detected-text slots");
    sub->add_option("--max-obj", f.max_obj, "object-label slots");
    sub->add_option("--max-len", f.max_len, "decode length cap");
    sub->add_flag("--no-copy", f.no_copy, "disable the copy mechanism");
}

ModelConfig model_of(const ModelFlags& f, const SynthSpec& spec) {
    ModelConfig m;
    m.d = f.dim;
    m.img_dim = spec.img_dim;
    m.txt_dim = f.txt_dim;
    m.n_pixel = spec.n_pixel;
    m.encoder_layers = f.enc_layers;
    m.decoder_layers = f.dec_layers;
    m.heads = f.heads;
    m.ffn_mult = f.ffn_mult;
    m.max_ocr = f.max_ocr;
    m.max_obj = f.max_obj;
    m.max_decode_len = f.max_len;
    m.copy_enabled = !f.no_copy;
    m.validate();
    return m;
}

void record_model(json& options, const ModelConfig& m) {
    options["dim"] = m.d;
    options["txt_dim"] = m.txt_dim;
    options["heads"] = m.heads;
    options["enc_layers"] = m.encoder_layers;
    options["dec_layers"] = m.decoder_layers;
    options["ffn_mult"] = m.ffn_mult;
    options["max_ocr"] = m.max_ocr;
    options["max_obj"] = m.max_obj;
    options["max_len"] = m.max_decode_len;
    options["copy"] = m.copy_enabled;
}

struct TrainFlags {
    std::int64_t epochs = -1;  // -1 = stage default
    std::int64_t batch = 16;
    double lr = 2e-3;
    std::int64_t warmup = 50;
};

void add_train_flags(CLI::App* sub, TrainFlags& f) {
    sub->add_option("--epochs", f.epochs, "training epochs");
    sub->add_option("--batch", f.batch, "batch size");
    sub->add_option("--lr", f.lr, "base learning rate");
    sub->add_option("--warmup", f.warmup, "linear warmup steps");
}

TrainConfig train_of(const TrainFlags& f, std::uint64_t seed) {
    TrainConfig t;
    t.batch_size = f.batch;
    t.seed = seed;
    t.adam.base_lr = f.lr;
    t.adam.warmup_steps = f.warmup;
    return t;
}

void record_train(json& options, const TrainConfig& t, std::int64_t epochs) {
    options["epochs"] = epochs;
    options["batch"] = t.batch_size;
    options["lr"] = t.adam.base_lr;
    options["warmup"] = t.adam.warmup_steps;
    options["reward"] = t.reward;
}

// ---------------------------------------------------------------------------
// caption-file parsing shared by evaluate

// Each JSONL line carries {"image_id": ..., "caption": "..."} or
// {"image_id": ..., "captions": [...]}; both spellings are accepted so decode
// output and reference files share one schema.
std::vector<std::pair<std::string, std::vector<std::string>>> read_caption_file(
    const std::string& path) {
    std::istringstream in(slurp(path));
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            std::vector<std::string> caps;
            if (j.contains("captions"))
                caps = j.at("captions").get<std::vector<std::string>>();
            else
                caps.push_back(j.at("caption").get<std::string>());
            out.emplace_back(j.at("image_id").get<std::string>(), std::move(caps));
        } catch (const json::exception& e) {
            throw CliError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (out.back().second.empty())
            throw CliError(path + ":" + std::to_string(lineno) + ": no captions");
    }
    if (out.empty()) throw CliError(path + ": no caption records");
    return out;
}

// ---------------------------------------------------------------------------
// subcommand runners

struct GenDataOpts {
    CommonOpts common;
    std::string out;
    SynthSpec spec;
};

int run_gen_data(const GenDataOpts& o, const std::string& config_path) {
    SynthSpec spec = o.spec;
    spec.seed = o.common.seed;
    const auto ds = synth_generate(spec);

    fs::create_directories(o.out);
    for (const auto& f : kDatasetFiles) ensure_fresh(o.out + "/" + f, o.common.force);
    const auto manifest_path = o.out + "/run_manifest.json";
    ensure_fresh(manifest_path, o.common.force);
    save_dataset(ds, o.out);

    RunManifest m("gen-data", config_path, spec.seed);
    for (const auto& f : kDatasetFiles) m.output(o.out + "/" + f);
    auto& opt = m.options();
    opt["images"] = spec.n_images;
    opt["grid"] = spec.n_pixel;
    opt["feature_dim"] = spec.img_dim;
    opt["object_words"] = spec.n_object_words;
    opt["brand_words"] = spec.n_brand_words;
    opt["oov_words"] = spec.n_oov_brand_words;
    opt["text_fraction"] = spec.text_fraction;
    opt["rotation_fraction"] = spec.rotation_fraction;
    opt["oov_fraction"] = spec.oov_plant_fraction;
    opt["confusion"] = spec.confusion_rate;
    m.write(manifest_path);

    json summary;
    summary["out"] = o.out;
    summary["images"] = ds.records.size();
    summary["vocab_size"] = ds.vocab.size();
    summary["lexicon_words"] = ds.lexicon.size();
    summary["oov_tokens"] = ds.oov_tokens;
    std::cout << summary.dump() << '\n';
    return 0;
}

struct OrientOpts {
    CommonOpts common;
    std::string data;
    std::string out;
    double confusion = 0.0;
};

int run_orient(const OrientOpts& o, const std::string& config_path) {
    const auto ds = load_dataset(o.data);
    ensure_fresh(o.out, o.common.force);
    ensure_fresh(o.out + ".manifest.json", o.common.force);

    auto out = open_out(o.out);
    std::size_t correct = 0;
    for (const auto& rec : ds.records) {
        std::vector<RotationResult> sweep;
        for (int angle : {0, 90, 180, 270})
            sweep.push_back(
                simulated_recognizer(rec, angle, ds.lexicon, o.confusion, o.common.seed));
        const auto [angle, ranked] = select_orientation(sweep, ds.lexicon);
        if (angle == rec.true_rotation) ++correct;
        json line;
        line["image_id"] = rec.image_id;
        line["angle"] = angle;
        line["true_rotation"] = rec.true_rotation;
        json toks = json::array();
        for (const auto& t : ranked) toks.push_back(t.token);
        line["ocr"] = std::move(toks);
        out << line.dump() << '\n';
    }

    RunManifest m("orient", config_path, o.common.seed);
    m.input_dataset(o.data);
    m.output(o.out);
    m.options()["confusion"] = o.confusion;
    m.write(o.out + ".manifest.json");

    json summary;
    summary["images"] = ds.records.size();
    summary["correct"] = correct;
    summary["accuracy"] =
        ds.records.empty() ? 0.0 : double(correct) / double(ds.records.size());
    std::cout << summary.dump() << '\n';
    return 0;
}

struct DecodeOpts {
    CommonOpts common;
    std::string data;
    std::vector<std::string> checkpoints;
    std::string out;
    std::string mode = "greedy";
    std::uint64_t sample_seed = 0;
    std::int64_t limit = 0;
    ChannelFlags channels;
};

int run_decode(const DecodeOpts& o, const std::string& config_path) {
    if (o.mode != "greedy" && o.mode != "sample")
        throw CliError("unknown decode mode: " + o.mode);
    if (o.mode == "sample" && o.checkpoints.size() > 1)
        throw CliError("sampling decodes a single checkpoint");

    const auto ds = load_dataset(o.data);
    std::vector<LoadedCheckpoint> loaded;
    for (const auto& p : o.checkpoints) loaded.push_back(load_checkpoint(p));

    ensure_fresh(o.out, o.common.force);
    ensure_fresh(o.out + ".manifest.json", o.common.force);
    auto out = open_out(o.out);

    const auto& lead = loaded.front();
    std::vector<const CaptionModel*> members;
    for (const auto& lc : loaded) members.push_back(&lc.model);

    const auto bopts = bundle_of(o.channels);
    std::size_t n = 0;
    for (const auto& rec : ds.records) {
        if (o.limit > 0 && n >= std::size_t(o.limit)) break;
        const auto ex =
            assemble_example(rec, ds.lexicon, lead.model.vocab(), lead.meta.config, bopts);
        CaptionHypothesis hyp;
        if (members.size() > 1)
            hyp = ensemble_decode(members, ex.bundle, ex.dyn);
        else if (o.mode == "sample")
            hyp = sample_decode(lead.model, ex.bundle, ex.dyn,
                                splitmix64(o.sample_seed) ^ fnv1a64(rec.image_id));
        else
            hyp = greedy_decode(lead.model, ex.bundle, ex.dyn);
        json line;
        line["image_id"] = rec.image_id;
        line["caption"] = hyp.surface;
        out << line.dump() << '\n';
        ++n;
    }

    RunManifest m("decode", config_path, o.sample_seed);
    m.input_dataset(o.data);
    for (const auto& p : o.checkpoints) {
        m.input(p);
        m.input(p + ".json");
    }
    m.output(o.out);
    auto& opt = m.options();
    opt["mode"] = o.mode;
    opt["ensemble_size"] = o.checkpoints.size();
    opt["limit"] = o.limit;
    record_channels(opt, o.channels);
    m.write(o.out + ".manifest.json");

    json summary;
    summary["out"] = o.out;
    summary["images"] = n;
    std::cout << summary.dump() << '\n';
    return 0;
}

struct EvaluateOpts {
    CommonOpts common;
    std::string candidates;
    std::string refs;
    std::string out;  // optional report file
};

int run_evaluate(const EvaluateOpts& o, const std::string& config_path) {
    const auto cand_records = read_caption_file(o.candidates);

    std::map<std::string, std::vector<std::string>> ref_map;
    const bool refs_is_dataset = fs::is_directory(o.refs);
    if (refs_is_dataset) {
        const auto ds = load_dataset(o.refs);
        for (const auto& rec : ds.records) ref_map[rec.image_id] = rec.references;
    } else {
        for (auto& [id, caps] : read_caption_file(o.refs)) {
            if (!ref_map.emplace(id, std::move(caps)).second)
                throw CliError(o.refs + ": duplicate reference image id " + id);
        }
    }

    std::vector<Tokens> cands;
    std::vector<std::vector<Tokens>> refs;
    json per_image = json::object();
    std::vector<std::string> ids;
    for (const auto& [id, caps] : cand_records) {
        if (caps.size() != 1)
            throw CliError("candidate file has " + std::to_string(caps.size()) +
                           " captions for " + id);
        const auto it = ref_map.find(id);
        if (it == ref_map.end()) throw CliError("no references for " + id);
        cands.push_back(clean_caption(caps.front()));
        std::vector<Tokens> r;
        for (const auto& c : it->second) r.push_back(clean_caption(c));
        refs.push_back(std::move(r));
        ids.push_back(id);
    }

    const auto report = evaluate_captions(cands, refs);
    for (std::size_t i = 0; i < ids.size(); ++i) per_image[ids[i]] = report.per_image[i];

    json out;
    out["BLEU4"] = report.bleu4;
    out["ROUGE_L"] = report.rouge_l;
    out["CIDEr"] = report.cider;
    out["METEOR_lite"] = report.meteor_lite;
    out["images"] = ids.size();
    out["per_image"] = std::move(per_image);
    std::cout << out.dump(2) << '\n';

    if (!o.out.empty()) {
        ensure_fresh(o.out, o.common.force);
        ensure_fresh(o.out + ".manifest.json", o.common.force);
        open_out(o.out) << out.dump(2) << '\n';
        RunManifest m("evaluate", config_path, o.common.seed);
        m.input(o.candidates);
        if (refs_is_dataset)
            m.input_dataset(o.refs);
        else
            m.input(o.refs);
        m.output(o.out);
        m.write(o.out + ".manifest.json");
    }
    return 0;
}

struct RerankOpts {
    CommonOpts common;
    std::string input;
    std::string out;
    std::string strategy = "ocr-max-consensus";
    std::string vectors;  // optional stored embedding table
    std::int64_t sim_dim = 64;
};

int run_rerank(const RerankOpts& o, const std::string& config_path) {
    const auto strategy = parse_strategy(o.strategy);
    VectorTable table;
    if (!o.vectors.empty()) {
        table = VectorTable::load(o.vectors);
    } else {
        table.dim = static_cast<int>(o.sim_dim);
    }
    const auto sim = embedding_similarity(table);

    ensure_fresh(o.out, o.common.force);
    ensure_fresh(o.out + ".manifest.json", o.common.force);
    auto out = open_out(o.out);

    std::istringstream in(slurp(o.input));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto req = parse_rerank_request(line);
        const auto pick = select_caption(req.set, req.ocr_tokens, sim, strategy);
        out << rerank_response_json(req.image_id, req.set.captions[pick]) << '\n';
        ++n;
    }
    if (n == 0) throw CliError(o.input + ": no rerank requests");

    RunManifest m("rerank", config_path, o.common.seed);
    m.input(o.input);
    if (!o.vectors.empty()) m.input(o.vectors);
    m.output(o.out);
    auto& opt = m.options();
    opt["strategy"] = strategy_name(strategy);
    opt["sim_dim"] = table.dim;
    m.write(o.out + ".manifest.json");

    json summary;
    summary["out"] = o.out;
    summary["images"] = n;
    std::cout << summary.dump() << '\n';
    return 0;
}

struct TrainCeOpts {
    CommonOpts common;
    std::string data;
    std::string out;
    ModelFlags model;
    TrainFlags train;
    ChannelFlags channels;
};

int run_train_ce(const TrainCeOpts& o, const std::string& config_path) {
    const auto ds = load_dataset(o.data);
    const auto mc = model_of(o.model, ds.spec);
    auto tc = train_of(o.train, o.common.seed);
    tc.ce_epochs = o.train.epochs < 0 ? 10 : o.train.epochs;
    tc.validate();

    fs::create_directories(o.out);
    const auto ckpt = o.out + "/ce_final.bin";
    const auto log_path = o.out + "/ce_log.jsonl";
    for (const auto& p : {ckpt, ckpt + ".json", ckpt + ".opt", log_path,
                          o.out + "/run_manifest.json"})
        ensure_fresh(p, o.common.force);

    const auto examples =
        prepare_examples(ds.records, ds.lexicon, ds.vocab, mc, bundle_of(o.channels));
    CaptionModel model(mc, ds.vocab, o.common.seed);
    Adam<float> opt(tc.adam, model.parameters());

    auto log = open_out(log_path);
    double last = 0.0;
    for (std::int64_t e = 0; e < tc.ce_epochs; ++e) {
        last = ce_epoch(model, examples, opt, tc, e, &log);
        std::cerr << "epoch " << e << " mean loss " << last << " nats/token\n";
    }

    CheckpointMeta meta;
    meta.config = mc;
    meta.vocab_hash = ds.vocab.content_hash();
    meta.train_steps = static_cast<std::uint64_t>(opt.schedule().step);
    meta.stage = "ce";
    meta.seed = o.common.seed;
    save_checkpoint(model, ckpt, meta);
    save_optimizer(opt, model, ckpt + ".opt");

    RunManifest m("train-ce", config_path, o.common.seed);
    m.input_dataset(o.data);
    for (const auto& p : {ckpt, ckpt + ".json", ckpt + ".opt", log_path}) m.output(p);
    auto& mo = m.options();
    record_model(mo, mc);
    record_train(mo, tc, tc.ce_epochs);
    record_channels(mo, o.channels);
    m.write(o.out + "/run_manifest.json");

    json summary;
    summary["checkpoint"] = ckpt;
    summary["epochs"] = tc.ce_epochs;
    summary["steps"] = meta.train_steps;
    summary["final_loss"] = last;
    std::cout << summary.dump() << '\n';
    return 0;
}

struct TrainScstOpts {
    CommonOpts common;
    std::string data;
    std::string init;
    std::string out;
    TrainFlags train;
    ChannelFlags channels;
    std::string reward = "cider";
    bool resume_optimizer = false;
};

int run_train_scst(const TrainScstOpts& o, const std::string& config_path) {
    const auto ds = load_dataset(o.data);
    auto lc = load_checkpoint(o.init);
    auto tc = train_of(o.train, o.common.seed);
    tc.scst_epochs = o.train.epochs < 0 ? 15 : o.train.epochs;
    tc.reward = o.reward;
    tc.validate();

    fs::create_directories(o.out);
    const auto ckpt = o.out + "/scst_final.bin";
    const auto log_path = o.out + "/scst_log.jsonl";
    for (const auto& p : {ckpt, ckpt + ".json", ckpt + ".opt", log_path,
                          o.out + "/run_manifest.json"})
        ensure_fresh(p, o.common.force);

    const auto examples = prepare_examples(ds.records, ds.lexicon, lc.model.vocab(),
                                           lc.meta.config, bundle_of(o.channels));
    std::vector<std::vector<Tokens>> all_refs;
    for (const auto& ex : examples) all_refs.push_back(ex.reference_tokens);
    const auto idf = build_idf(all_refs);

    Adam<float> opt = o.resume_optimizer ? load_optimizer(lc.model, o.init + ".opt")
                                         : Adam<float>(tc.adam, lc.model.parameters());
    opt.schedule().offset = kScstScheduleOffset;

    auto log = open_out(log_path);
    double last = 0.0;
    for (std::int64_t e = 0; e < tc.scst_epochs; ++e) {
        last = scst_epoch(lc.model, examples, opt, tc, idf, e, &log);
        std::cerr << "epoch " << e << " mean sampled reward " << last << '\n';
    }

    CheckpointMeta meta = lc.meta;
    meta.train_steps = static_cast<std::uint64_t>(opt.schedule().step);
    meta.stage = "scst";
    meta.seed = o.common.seed;
    save_checkpoint(lc.model, ckpt, meta);
    save_optimizer(opt, lc.model, ckpt + ".opt");

    RunManifest m("train-scst", config_path, o.common.seed);
    m.input_dataset(o.data);
    m.input(o.init);
    m.input(o.init + ".json");
    if (o.resume_optimizer) m.input(o.init + ".opt");
    for (const auto& p : {ckpt, ckpt + ".json", ckpt + ".opt", log_path}) m.output(p);
    auto& mo = m.options();
    record_train(mo, tc, tc.scst_epochs);
    record_channels(mo, o.channels);
    mo["init"] = o.init;
    mo["resume_optimizer"] = o.resume_optimizer;
    m.write(o.out + "/run_manifest.json");

    json summary;
    summary["checkpoint"] = ckpt;
    summary["epochs"] = tc.scst_epochs;
    summary["mean_reward"] = last;
    std::cout << summary.dump() << '\n';
    return 0;
}

struct AblateOpts {
    CommonOpts common;
    std::string data;
    std::string out;
    ModelFlags model;
    TrainFlags train;
    std::int64_t scst_epochs = 0;
    std::string reward = "cider";
};

int run_ablate(const AblateOpts& o, const std::string& config_path) {
    const auto ds = load_dataset(o.data);
    const auto mc = model_of(o.model, ds.spec);
    auto tc = train_of(o.train, o.common.seed);
    tc.ce_epochs = o.train.epochs < 0 ? 10 : o.train.epochs;
    tc.scst_epochs = o.scst_epochs > 0 ? o.scst_epochs : 1;
    tc.reward = o.reward;
    tc.validate();

    fs::create_directories(o.out);
    const auto report_path = o.out + "/ablation.json";
    ensure_fresh(report_path, o.common.force);
    ensure_fresh(o.out + "/run_manifest.json", o.common.force);

    struct Row {
        std::string name;
        bool use_ocr;
        bool use_obj;
    };
    const std::vector<Row> rows = {{"IMG", false, false},
                                   {"IMG+OCR", true, false},
                                   {"IMG+OBJ", false, true}};

    json report;
    report["rows"] = json::array();
    std::vector<std::string> ckpts;
    for (const auto& row : rows) {
        BundleOptions bo;
        bo.use_ocr = row.use_ocr;
        bo.use_obj = row.use_obj;
        const auto examples = prepare_examples(ds.records, ds.lexicon, ds.vocab, mc, bo);

        CaptionModel model(mc, ds.vocab, o.common.seed);
        Adam<float> opt(tc.adam, model.parameters());
        std::cerr << "row " << row.name << ": " << tc.ce_epochs << " epochs\n";
        for (std::int64_t e = 0; e < tc.ce_epochs; ++e)
            ce_epoch(model, examples, opt, tc, e, nullptr);
        if (o.scst_epochs > 0) {
            std::vector<std::vector<Tokens>> all_refs;
            for (const auto& ex : examples) all_refs.push_back(ex.reference_tokens);
            const auto idf = build_idf(all_refs);
            opt.schedule().offset = kScstScheduleOffset;
            for (std::int64_t e = 0; e < o.scst_epochs; ++e)
                scst_epoch(model, examples, opt, tc, idf, e, nullptr);
        }

        const auto ckpt = o.out + "/ce_" + row.name + ".bin";
        ensure_fresh(ckpt, o.common.force);
        CheckpointMeta meta;
        meta.config = mc;
        meta.vocab_hash = ds.vocab.content_hash();
        meta.train_steps = static_cast<std::uint64_t>(opt.schedule().step);
        meta.stage = o.scst_epochs > 0 ? "scst" : "ce";
        meta.seed = o.common.seed;
        save_checkpoint(model, ckpt, meta);
        ckpts.push_back(ckpt);

        const auto eval = evaluate_model(model, examples);
        json r;
        r["name"] = row.name;
        r["BLEU4"] = eval.bleu4;
        r["ROUGE_L"] = eval.rouge_l;
        r["CIDEr"] = eval.cider;
        r["METEOR_lite"] = eval.meteor_lite;
        report["rows"].push_back(std::move(r));
        std::cerr << "row " << row.name << " CIDEr " << eval.cider << '\n';
    }

    open_out(report_path) << report.dump(2) << '\n';
    std::cout << report.dump(2) << '\n';

    RunManifest m("ablate", config_path, o.common.seed);
    m.input_dataset(o.data);
    m.output(report_path);
    for (const auto& c : ckpts) {
        m.output(c);
        m.output(c + ".json");
    }
    auto& mo = m.options();
    record_model(mo, mc);
    record_train(mo, tc, tc.ce_epochs);
    mo["scst_epochs"] = o.scst_epochs;
    m.write(o.out + "/run_manifest.json");
    return 0;
}

// ---------------------------------------------------------------------------
// error reporting

int fail(const std::string& kind, int code, const std::string& message) {
    json err;
    err["error"] = {{"kind", kind}, {"code", code}, {"message", message}};
    std::cerr << err.dump() << '\n';
    return code;
}

bool is_validation(const std::exception& e) {
    return dynamic_cast<const CliError*>(&e) || dynamic_cast<const DataError*>(&e) ||
           dynamic_cast<const ModelError*>(&e) || dynamic_cast<const VocabError*>(&e) ||
           dynamic_cast<const TrainError*>(&e) || dynamic_cast<const PostprocessError*>(&e) ||
           dynamic_cast<const EmbedError*>(&e) || dynamic_cast<const PerceptionError*>(&e) ||
           dynamic_cast<const MetricError*>(&e) || dynamic_cast<const OptimError*>(&e) ||
           dynamic_cast<const ContainerError*>(&e);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"goal-oriented captioning pipeline for text-bearing images"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "INI config; [subcommand] sections or subcommand.key names, flags win");
    app.allow_config_extras(CLI::config_extras_mode::error);

    GenDataOpts gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen_cmd, gen.common);
    gen_cmd->add_option("--out", gen.out, "dataset directory")->required();
    gen_cmd->add_option("--images", gen.spec.n_images, "number of images");
    gen_cmd->add_option("--grid", gen.spec.n_pixel, "feature rows per image");
    gen_cmd->add_option("--feature-dim", gen.spec.img_dim, "feature width per row");
    gen_cmd->add_option("--object-words", gen.spec.n_object_words, "object word pool");
    gen_cmd->add_option("--brand-words", gen.spec.n_brand_words, "brand word pool");
    gen_cmd->add_option("--oov-words", gen.spec.n_oov_brand_words,
                        "held-out brand word pool");
    gen_cmd->add_option("--text-fraction", gen.spec.text_fraction,
                        "fraction of images with planted text");
    gen_cmd->add_option("--rotation-fraction", gen.spec.rotation_fraction,
                        "fraction of rotated images");
    gen_cmd->add_option("--oov-fraction", gen.spec.oov_plant_fraction,
                        "fraction of text images planting a held-out brand");
    gen_cmd->add_option("--confusion", gen.spec.confusion_rate,
                        "recognizer confusion rate stored in the spec");

    OrientOpts orient;
    auto* orient_cmd =
        app.add_subcommand("orient", "recover rotation angles via the lexicon");
    add_common(orient_cmd, orient.common);
    orient_cmd->add_option("--data", orient.data, "dataset directory")->required();
    orient_cmd->add_option("--out", orient.out, "angles JSONL file")->required();
    orient_cmd->add_option("--confusion", orient.confusion, "recognizer confusion rate");

    DecodeOpts dec;
    auto* dec_cmd = app.add_subcommand("decode", "caption a dataset with checkpoints");
    add_common(dec_cmd, dec.common);
    dec_cmd->add_option("--data", dec.data, "dataset directory")->required();
    dec_cmd->add_option("--checkpoint", dec.checkpoints, "checkpoint path (repeat to ensemble)")
        ->required();
    dec_cmd->add_option("--out", dec.out, "captions JSONL file")->required();
    dec_cmd->add_option("--mode", dec.mode, "greedy | sample");
    dec_cmd->add_option("--sample-seed", dec.sample_seed, "sampling seed");
    dec_cmd->add_option("--limit", dec.limit, "stop after N images (0 = all)");
    add_channel_flags(dec_cmd, dec.channels);

    EvaluateOpts ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "score candidate captions");
    add_common(ev_cmd, ev.common);
    ev_cmd->add_option("--candidates", ev.candidates, "candidate captions JSONL")->required();
    ev_cmd->add_option("--refs", ev.refs, "references JSONL or dataset directory")
        ->required();
    ev_cmd->add_option("--out", ev.out, "also write the report here");

    RerankOpts rr;
    auto* rr_cmd = app.add_subcommand("rerank", "pick one caption per candidate set");
    add_common(rr_cmd, rr.common);
    rr_cmd->add_option("--input", rr.input, "rerank requests JSONL")->required();
    rr_cmd->add_option("--out", rr.out, "chosen captions JSONL")->required();
    rr_cmd->add_option("--strategy", rr.strategy,
                       "consensus | ocr-max | ocr-max-consensus");
    rr_cmd->add_option("--vectors", rr.vectors, "stored embedding table");
    rr_cmd->add_option("--sim-dim", rr.sim_dim, "hashed embedding width");

    TrainCeOpts ce;
    auto* ce_cmd = app.add_subcommand("train-ce", "cross-entropy training stage");
    add_common(ce_cmd, ce.common);
    ce_cmd->add_option("--data", ce.data, "dataset directory")->required();
    ce_cmd->add_option("--out", ce.out, "output directory")->required();
    add_model_flags(ce_cmd, ce.model);
    add_train_flags(ce_cmd, ce.train);
    add_channel_flags(ce_cmd, ce.channels);

    TrainScstOpts sc;
    auto* sc_cmd = app.add_subcommand("train-scst", "self-critical fine-tuning stage");
    add_common(sc_cmd, sc.common);
    sc_cmd->add_option("--data", sc.data, "dataset directory")->required();
    sc_cmd->add_option("--init", sc.init, "first-stage checkpoint")->required();
    sc_cmd->add_option("--out", sc.out, "output directory")->required();
    add_train_flags(sc_cmd, sc.train);
    add_channel_flags(sc_cmd, sc.channels);
    sc_cmd->add_option("--reward", sc.reward, "cider | bleu4 | rouge | meteor");
    sc_cmd->add_flag("--resume-optimizer", sc.resume_optimizer,
                     "restore Adam moments from <init>.opt");

    AblateOpts ab;
    auto* ab_cmd = app.add_subcommand("ablate", "input-channel ablation grid");
    add_common(ab_cmd, ab.common);
    ab_cmd->add_option("--data", ab.data, "dataset directory")->required();
    ab_cmd->add_option("--out", ab.out, "output directory")->required();
    add_model_flags(ab_cmd, ab.model);
    add_train_flags(ab_cmd, ab.train);
    ab_cmd->add_option("--scst-epochs", ab.scst_epochs,
                       "fine-tune epochs after the first stage (0 = skip)");
    ab_cmd->add_option("--reward", ab.reward, "fine-tune reward metric");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", 1, e.what());
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen, config_path_of(app));
        if (orient_cmd->parsed()) return run_orient(orient, config_path_of(app));
        if (dec_cmd->parsed()) return run_decode(dec, config_path_of(app));
        if (ev_cmd->parsed()) return run_evaluate(ev, config_path_of(app));
        if (rr_cmd->parsed()) return run_rerank(rr, config_path_of(app));
        if (ce_cmd->parsed()) return run_train_ce(ce, config_path_of(app));
        if (sc_cmd->parsed()) return run_train_scst(sc, config_path_of(app));
        if (ab_cmd->parsed()) return run_ablate(ab, config_path_of(app));
        return fail("usage", 1, "no subcommand given");
    } catch (const std::exception& e) {
        if (is_validation(e)) return fail("validation", 2, e.what());
        return fail("runtime", 3, e.what());
    }
}
