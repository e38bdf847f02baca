#include "goalcap/data.hpp"

#include "goalcap/container.hpp"
#include "goalcap/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace goalcap {
namespace {

using nlohmann::json;

// Fixed template filler; everything else is drawn from seeded pools.
const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> w = {
        "a",    "photo",   "of",   "with", "the",  "has",  "written", "on",  "it",
        "text", "showing", "next", "to",   "in",   "someones", "hand", "and",
        "table"};
    return w;
}

// Pronounceable consonant-vowel pseudo-word; every generated word has even
// length and alternates consonant/vowel, so it can never collide with the
// filler list above or with all-consonant recognizer gibberish.
std::string pseudo_word(std::mt19937_64& rng, int syllables) {
    static constexpr char cons[] = "bcdfgklmnprstvz";
    static constexpr char vow[] = "aeiou";
    std::string w;
    for (int i = 0; i < syllables; ++i) {
        w += cons[uniform_index(rng, sizeof(cons) - 1)];
        w += vow[uniform_index(rng, sizeof(vow) - 1)];
    }
    return w;
}

std::vector<std::string> draw_pool(std::mt19937_64& rng, std::int64_t count, int syllables,
                                   std::set<std::string>& used) {
    std::vector<std::string> pool;
    pool.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        std::string w;
        do {
            w = pseudo_word(rng, syllables);
        } while (!used.insert(w).second);
        pool.push_back(std::move(w));
    }
    return pool;
}

// Every image containing `token` carries the same additive signature: an
// L2-normalized direction written into three hash-chosen feature rows. The
// pattern never depends on the capture rotation.
void add_token_pattern(std::vector<float>& features, std::int64_t n_pixel, std::int64_t img_dim,
                       const std::string& token, float strength) {
    const std::uint64_t h = fnv1a64(token);
    auto prng = make_rng(h, 0x7EA7);
    std::vector<double> dir(static_cast<std::size_t>(img_dim));
    double norm_sq = 0.0;
    for (auto& v : dir) {
        v = normal01(prng);
        norm_sq += v * v;
    }
    const double inv_norm = 1.0 / std::sqrt(std::max(norm_sq, 1e-30));
    for (int k = 0; k < 3; ++k) {
        const auto row = static_cast<std::int64_t>((h >> (8 * k)) % static_cast<std::uint64_t>(n_pixel));
        for (std::int64_t j = 0; j < img_dim; ++j) {
            features[static_cast<std::size_t>(row * img_dim + j)] +=
                strength * static_cast<float>(dir[static_cast<std::size_t>(j)] * inv_norm);
        }
    }
}

std::string join_and(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += " and ";
        out += words[i];
    }
    return out;
}

// All-consonant string: unintelligible by construction (lexicon words all
// contain vowels), with a membership check as a belt-and-braces guard.
std::string gibberish_token(std::mt19937_64& rng, const Lexicon& lexicon) {
    static constexpr char cons[] = "bcdfghjklmnpqrstvwxz";
    std::string w;
    do {
        w.clear();
        const auto len = 3 + uniform_index(rng, 4);
        for (std::uint64_t i = 0; i < len; ++i) {
            w += cons[uniform_index(rng, sizeof(cons) - 1)];
        }
    } while (lexicon.contains(w));
    return w;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json spec_to_json(const SynthSpec& s) {
    return json{{"n_images", s.n_images},
                {"n_pixel", s.n_pixel},
                {"img_dim", s.img_dim},
                {"n_object_words", s.n_object_words},
                {"n_brand_words", s.n_brand_words},
                {"n_oov_brand_words", s.n_oov_brand_words},
                {"text_fraction", s.text_fraction},
                {"rotation_fraction", s.rotation_fraction},
                {"oov_plant_fraction", s.oov_plant_fraction},
                {"confusion_rate", s.confusion_rate},
                {"seed", s.seed}};
}

SynthSpec spec_from_json(const json& j) {
    SynthSpec s;
    s.n_images = j.at("n_images").get<std::int64_t>();
    s.n_pixel = j.at("n_pixel").get<std::int64_t>();
    s.img_dim = j.at("img_dim").get<std::int64_t>();
    s.n_object_words = j.at("n_object_words").get<std::int64_t>();
    s.n_brand_words = j.at("n_brand_words").get<std::int64_t>();
    s.n_oov_brand_words = j.at("n_oov_brand_words").get<std::int64_t>();
    s.text_fraction = j.at("text_fraction").get<double>();
    s.rotation_fraction = j.at("rotation_fraction").get<double>();
    s.oov_plant_fraction = j.at("oov_plant_fraction").get<double>();
    s.confusion_rate = j.at("confusion_rate").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

void check_fraction(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw DataError(std::string(name) + " must lie in [0, 1]");
    }
}

}  // namespace

void SynthSpec::validate() const {
    if (n_images < 1) throw DataError("n_images must be >= 1");
    if (n_pixel < 1 || img_dim < 1) throw DataError("feature grid extents must be >= 1");
    if (n_object_words < 1) throw DataError("n_object_words must be >= 1");
    if (n_brand_words < 2) throw DataError("n_brand_words must be >= 2");
    if (n_oov_brand_words < 0) throw DataError("n_oov_brand_words must be >= 0");
    check_fraction(text_fraction, "text_fraction");
    check_fraction(rotation_fraction, "rotation_fraction");
    check_fraction(oov_plant_fraction, "oov_plant_fraction");
    check_fraction(confusion_rate, "confusion_rate");
    if (oov_plant_fraction > 0.0 && n_oov_brand_words < 1) {
        throw DataError("oov_plant_fraction > 0 requires a non-empty held-out pool");
    }
}

SynthDataset synth_generate(const SynthSpec& spec) {
    spec.validate();

    // Word pools, disjoint from each other and from the filler words.
    auto pool_rng = make_rng(spec.seed, 0x9001);
    std::set<std::string> used(filler_words().begin(), filler_words().end());
    const auto objects = draw_pool(pool_rng, spec.n_object_words, 2, used);
    const auto brands = draw_pool(pool_rng, spec.n_brand_words, 3, used);
    const auto oov_brands = draw_pool(pool_rng, spec.n_oov_brand_words, 3, used);

    SynthDataset ds;
    ds.spec = spec;
    ds.oov_tokens = oov_brands;
    std::sort(ds.oov_tokens.begin(), ds.oov_tokens.end());

    std::vector<std::string> all_refs;
    ds.records.reserve(static_cast<std::size_t>(spec.n_images));
    for (std::int64_t i = 0; i < spec.n_images; ++i) {
        auto rng = make_rng(spec.seed, 0x100000 + static_cast<std::uint64_t>(i));
        DatasetRecord rec;
        char id_buf[32];
        std::snprintf(id_buf, sizeof(id_buf), "img_%06lld", static_cast<long long>(i));
        rec.image_id = id_buf;

        // Scene objects: the first drawn is the high-confidence primary; the
        // rest sit lower but above the downstream filter threshold. Noise
        // detections land strictly below it.
        const int n_obj = 1 + static_cast<int>(uniform_index(rng, 3));
        std::set<std::size_t> picked;
        std::vector<std::string> scene;
        while (static_cast<int>(scene.size()) < n_obj &&
               scene.size() < static_cast<std::size_t>(objects.size())) {
            const auto k = uniform_index(rng, objects.size());
            if (picked.insert(k).second) scene.push_back(objects[k]);
        }
        for (std::size_t k = 0; k < scene.size(); ++k) {
            const double conf = k == 0 ? uniform(rng, 0.7, 0.95) : uniform(rng, 0.3, 0.65);
            rec.planted_objects.push_back({scene[k], conf});
        }
        const int n_noise = static_cast<int>(uniform_index(rng, 3));
        for (int k = 0; k < n_noise; ++k) {
            rec.planted_objects.push_back(
                {objects[uniform_index(rng, objects.size())], uniform(rng, 0.05, 0.22)});
        }

        // Both draws always happen so the rotation outcome never shifts the
        // stream: everything else about the record is invariant to it.
        const bool rotated = uniform01(rng) < spec.rotation_fraction;
        const int drawn_angle = 90 * (1 + static_cast<int>(uniform_index(rng, 3)));
        rec.true_rotation = rotated ? drawn_angle : 0;

        // Printed text: primary token first with the largest region so the
        // OCR ranking preserves generation order.
        std::vector<std::string> planted_tokens;
        if (uniform01(rng) < spec.text_fraction) {
            const bool two = uniform01(rng) < 0.3;
            const bool oov = uniform01(rng) < spec.oov_plant_fraction;
            const std::string primary =
                oov ? oov_brands[uniform_index(rng, oov_brands.size())]
                    : brands[uniform_index(rng, brands.size())];
            planted_tokens.push_back(primary);
            if (two) {
                std::string secondary;
                do {
                    secondary = brands[uniform_index(rng, brands.size())];
                } while (secondary == primary);
                planted_tokens.push_back(secondary);
            }
            for (std::size_t k = 0; k < planted_tokens.size(); ++k) {
                DetectedText t;
                t.token = planted_tokens[k];
                t.bbox[0] = uniform(rng, 0.0, 20.0);
                t.bbox[1] = uniform(rng, 0.0, 20.0);
                if (k == 0) {
                    t.bbox[2] = uniform(rng, 3.0, 5.0);
                    t.bbox[3] = uniform(rng, 3.0, 5.0);
                    t.confidence = uniform(rng, 0.6, 0.95);
                } else {
                    t.bbox[2] = uniform(rng, 1.0, 2.5);
                    t.bbox[3] = uniform(rng, 1.0, 2.5);
                    t.confidence = uniform(rng, 0.5, 0.9);
                }
                rec.planted_text.push_back(std::move(t));
            }
        }

        // Feature grid: background noise plus one signature per real object
        // and per planted token. Noise detections contribute no signature.
        rec.features.assign(static_cast<std::size_t>(spec.n_pixel * spec.img_dim), 0.0f);
        for (auto& v : rec.features) v = 0.05f * static_cast<float>(normal01(rng));
        for (const auto& label : scene) {
            add_token_pattern(rec.features, spec.n_pixel, spec.img_dim, label, 1.0f);
        }
        for (const auto& tok : planted_tokens) {
            add_token_pattern(rec.features, spec.n_pixel, spec.img_dim, tok, 1.0f);
        }

        const std::string& o = scene.front();
        if (!planted_tokens.empty()) {
            const std::string b = join_and(planted_tokens);
            rec.references.push_back("a " + o + " with " + b + " text on it");
            rec.references.push_back("a photo of a " + o + " showing " + b);
            rec.references.push_back("the " + o + " has " + b + " written on it");
        } else {
            rec.references.push_back("a " + o + " on a table");
            rec.references.push_back("a photo of a " + o);
            if (scene.size() >= 2) {
                rec.references.push_back("a " + o + " next to a " + scene[1]);
            } else {
                rec.references.push_back("a " + o + " in someones hand");
            }
        }
        for (const auto& r : rec.references) all_refs.push_back(r);
        ds.records.push_back(std::move(rec));
    }

    std::vector<std::string> lex_words = filler_words();
    lex_words.insert(lex_words.end(), objects.begin(), objects.end());
    lex_words.insert(lex_words.end(), brands.begin(), brands.end());
    lex_words.insert(lex_words.end(), oov_brands.begin(), oov_brands.end());
    ds.lexicon = Lexicon::from_words(lex_words);

    const std::unordered_set<std::string> exclude(ds.oov_tokens.begin(), ds.oov_tokens.end());
    ds.vocab = build_vocab(all_refs, 1, &exclude);
    return ds;
}

RotationResult simulated_recognizer(const DatasetRecord& rec, int angle, const Lexicon& lexicon,
                                    double confusion_rate, std::uint64_t seed) {
    if (angle != 0 && angle != 90 && angle != 180 && angle != 270) {
        throw DataError("query angle must be one of 0, 90, 180, 270");
    }
    check_fraction(confusion_rate, "confusion_rate");

    RotationResult out;
    out.angle = angle;
    if (angle == rec.true_rotation) {
        out.detections = rec.planted_text;
        return out;
    }

    auto rng = make_rng(seed ^ fnv1a64(rec.image_id), 0xA0000 + static_cast<std::uint64_t>(angle));
    std::vector<std::string> real_words(lexicon.words().begin(), lexicon.words().end());
    std::sort(real_words.begin(), real_words.end());
    for (const auto& planted : rec.planted_text) {
        DetectedText t;
        const bool confuse =
            !real_words.empty() && uniform01(rng) < confusion_rate;
        t.token = confuse ? real_words[uniform_index(rng, real_words.size())]
                          : gibberish_token(rng, lexicon);
        t.bbox = planted.bbox;  // same regions, misread content
        t.confidence = uniform(rng, 0.2, 0.9);
        out.detections.push_back(std::move(t));
    }
    return out;
}

void save_dataset(const SynthDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory: " + dir + ": " + ec.message());

    json manifest;
    manifest["format"] = "goalcap-dataset";
    manifest["version"] = 1;
    manifest["spec"] = spec_to_json(ds.spec);
    manifest["oov_tokens"] = ds.oov_tokens;
    json images = json::array();
    json annotations = json::array();
    for (const auto& rec : ds.records) {
        images.push_back({{"id", rec.image_id},
                          {"true_rotation", rec.true_rotation},
                          {"references", rec.references}});
        json objs = json::array();
        for (const auto& o : rec.planted_objects) {
            objs.push_back({{"label", o.label}, {"confidence", o.confidence}});
        }
        annotations.push_back({{"image_id", rec.image_id}, {"objects", std::move(objs)}});
    }
    manifest["images"] = std::move(images);
    manifest["annotations"] = std::move(annotations);
    write_text_file(dir + "/manifest.json", manifest.dump(2) + "\n");

    std::string lines;
    for (const auto& rec : ds.records) {
        json d;
        d["image_id"] = rec.image_id;
        json texts = json::array();
        for (const auto& t : rec.planted_text) {
            texts.push_back({{"token", t.token},
                             {"bbox", {t.bbox[0], t.bbox[1], t.bbox[2], t.bbox[3]}},
                             {"confidence", t.confidence}});
        }
        d["text"] = std::move(texts);
        lines += d.dump();
        lines += '\n';
    }
    write_text_file(dir + "/detections.jsonl", lines);

    std::vector<NamedTensor> feats;
    feats.reserve(ds.records.size());
    for (const auto& rec : ds.records) {
        feats.push_back({rec.image_id, Shape{ds.spec.n_pixel, ds.spec.img_dim}, rec.features});
    }
    save_container(dir + "/features.bin", feats);

    ds.lexicon.save(dir + "/lexicon.txt");
    ds.vocab.save(dir + "/vocab.txt");
}

SynthDataset load_dataset(const std::string& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(dir + "/manifest.json"));
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest.json: ") + e.what());
    }

    SynthDataset ds;
    try {
        if (manifest.at("format").get<std::string>() != "goalcap-dataset") {
            throw DataError("manifest.json: not a goalcap dataset");
        }
        if (manifest.at("version").get<int>() != 1) {
            throw DataError("manifest.json: unsupported version");
        }
        ds.spec = spec_from_json(manifest.at("spec"));
        ds.spec.validate();
        ds.oov_tokens = manifest.at("oov_tokens").get<std::vector<std::string>>();

        std::unordered_map<std::string, std::size_t> feat_index;
        auto tensors = load_container(dir + "/features.bin");
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            if (!feat_index.emplace(tensors[i].name, i).second) {
                throw DataError("features.bin: duplicate image id " + tensors[i].name);
            }
        }

        std::unordered_map<std::string, std::vector<DetectedText>> text_by_id;
        {
            std::istringstream in(read_text_file(dir + "/detections.jsonl"));
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const json d = json::parse(line);
                std::vector<DetectedText> texts;
                for (const auto& t : d.at("text")) {
                    DetectedText dt;
                    dt.token = t.at("token").get<std::string>();
                    const auto& bb = t.at("bbox");
                    if (bb.size() != 4) throw DataError("detections.jsonl: bbox must have 4 entries");
                    for (int k = 0; k < 4; ++k) dt.bbox[static_cast<std::size_t>(k)] = bb[static_cast<std::size_t>(k)].get<double>();
                    dt.confidence = t.at("confidence").get<double>();
                    texts.push_back(std::move(dt));
                }
                if (!text_by_id.emplace(d.at("image_id").get<std::string>(), std::move(texts)).second) {
                    throw DataError("detections.jsonl: duplicate image id");
                }
            }
        }

        std::unordered_map<std::string, std::vector<DetectedObject>> objs_by_id;
        for (const auto& a : manifest.at("annotations")) {
            std::vector<DetectedObject> objs;
            for (const auto& o : a.at("objects")) {
                objs.push_back({o.at("label").get<std::string>(), o.at("confidence").get<double>()});
            }
            if (!objs_by_id.emplace(a.at("image_id").get<std::string>(), std::move(objs)).second) {
                throw DataError("manifest.json: duplicate annotation image id");
            }
        }

        const auto& images = manifest.at("images");
        if (static_cast<std::int64_t>(images.size()) != ds.spec.n_images) {
            throw DataError("manifest.json: image count does not match the spec");
        }
        const Shape want{ds.spec.n_pixel, ds.spec.img_dim};
        std::unordered_set<std::string> seen_ids;
        for (const auto& img : images) {
            DatasetRecord rec;
            rec.image_id = img.at("id").get<std::string>();
            if (!seen_ids.insert(rec.image_id).second) {
                throw DataError("manifest.json: duplicate image id " + rec.image_id);
            }
            rec.true_rotation = img.at("true_rotation").get<int>();
            if (rec.true_rotation != 0 && rec.true_rotation != 90 && rec.true_rotation != 180 &&
                rec.true_rotation != 270) {
                throw DataError("manifest.json: bad true_rotation for " + rec.image_id);
            }
            rec.references = img.at("references").get<std::vector<std::string>>();
            if (rec.references.empty() || rec.references.size() > 5) {
                throw DataError("manifest.json: " + rec.image_id + " must carry 1..5 references");
            }
            const auto fit = feat_index.find(rec.image_id);
            if (fit == feat_index.end()) {
                throw DataError("features.bin: missing features for " + rec.image_id);
            }
            auto& nt = tensors[fit->second];
            if (nt.shape != want) {
                throw DataError("features.bin: wrong shape for " + rec.image_id);
            }
            rec.features = std::move(nt.data);
            const auto tit = text_by_id.find(rec.image_id);
            if (tit == text_by_id.end()) {
                throw DataError("detections.jsonl: missing entry for " + rec.image_id);
            }
            rec.planted_text = std::move(tit->second);
            const auto oit = objs_by_id.find(rec.image_id);
            if (oit == objs_by_id.end()) {
                throw DataError("manifest.json: missing annotations for " + rec.image_id);
            }
            rec.planted_objects = std::move(oit->second);
            ds.records.push_back(std::move(rec));
        }
        if (tensors.size() != ds.records.size()) {
            throw DataError("features.bin: orphan feature tensors");
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("dataset manifest: ") + e.what());
    }

    ds.lexicon = Lexicon::load(dir + "/lexicon.txt");
    ds.vocab = TokenizerVocab::load(dir + "/vocab.txt");
    return ds;
}

}  // namespace goalcap
