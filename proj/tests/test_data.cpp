#include "doctest.h"

#include "goalcap/data.hpp"
#include "goalcap/perception.hpp"
#include "goalcap/postprocess.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace goalcap;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out << content;
}

std::vector<std::string> words_of(const std::string& s) {
    std::istringstream ss(s);
    return {std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>()};
}

bool is_oov(const SynthDataset& ds, const std::string& tok) {
    return std::binary_search(ds.oov_tokens.begin(), ds.oov_tokens.end(), tok);
}

SynthSpec small_spec() {
    SynthSpec s;
    s.n_images = 40;
    s.n_pixel = 6;
    s.img_dim = 8;
    s.n_object_words = 6;
    s.n_brand_words = 5;
    s.n_oov_brand_words = 3;
    s.text_fraction = 0.6;
    s.rotation_fraction = 0.4;
    s.oov_plant_fraction = 0.25;
    s.seed = 11;
    return s;
}

}  // namespace

TEST_CASE("spec validation") {
    CHECK_NOTHROW(SynthSpec{}.validate());
    auto bad = [](auto&& mutate) {
        SynthSpec s;
        mutate(s);
        CHECK_THROWS_AS(s.validate(), DataError);
    };
    bad([](SynthSpec& s) { s.n_images = 0; });
    bad([](SynthSpec& s) { s.n_pixel = 0; });
    bad([](SynthSpec& s) { s.img_dim = -1; });
    bad([](SynthSpec& s) { s.n_object_words = 0; });
    bad([](SynthSpec& s) { s.n_brand_words = 1; });
    bad([](SynthSpec& s) { s.text_fraction = 1.5; });
    bad([](SynthSpec& s) { s.rotation_fraction = -0.1; });
    bad([](SynthSpec& s) { s.oov_plant_fraction = 2.0; });
    bad([](SynthSpec& s) { s.confusion_rate = -1.0; });
    bad([](SynthSpec& s) {
        s.oov_plant_fraction = 0.5;
        s.n_oov_brand_words = 0;
    });
}

TEST_CASE("generation is a pure function of the spec") {
    const auto spec = small_spec();
    const auto a = synth_generate(spec);
    const auto b = synth_generate(spec);
    REQUIRE(a.records.size() == b.records.size());
    CHECK(a.records == b.records);
    CHECK(a.oov_tokens == b.oov_tokens);
    CHECK(a.vocab.tokens() == b.vocab.tokens());
    CHECK(a.lexicon.words() == b.lexicon.words());

    auto other = spec;
    other.seed = 12;
    const auto c = synth_generate(other);
    CHECK(a.records != c.records);
}

TEST_CASE("record shape and channel invariants") {
    const auto ds = synth_generate(small_spec());
    REQUIRE(ds.records.size() == 40);
    for (const auto& rec : ds.records) {
        CHECK(rec.features.size() == 6 * 8);
        CHECK((rec.true_rotation == 0 || rec.true_rotation == 90 || rec.true_rotation == 180 ||
               rec.true_rotation == 270));
        CHECK(rec.references.size() == 3);
        REQUIRE(!rec.planted_objects.empty());

        // at least one confident object survives the filter, and nothing at or
        // below the threshold sneaks through
        const auto kept = filter_objects(rec.planted_objects);
        REQUIRE(!kept.empty());
        const auto confident = std::count_if(rec.planted_objects.begin(), rec.planted_objects.end(),
                                             [](const DetectedObject& o) { return o.confidence > 0.25; });
        CHECK(static_cast<std::int64_t>(kept.size()) == confident);

        // the most confident object is mentioned by every reference
        const auto& primary = kept.front().label;
        for (const auto& ref : rec.references) {
            const auto ws = words_of(ref);
            CHECK(std::count(ws.begin(), ws.end(), primary) >= 1);
        }

        // planted text comes largest-region-first, so ranking preserves order
        if (!rec.planted_text.empty()) {
            const auto ranked = rank_ocr(rec.planted_text);
            REQUIRE(ranked.size() == rec.planted_text.size());
            for (std::size_t k = 0; k < ranked.size(); ++k) {
                CHECK(ranked[k].token == rec.planted_text[k].token);
            }
            for (const auto& t : rec.planted_text) {
                CHECK(t.bbox[2] > 0.0);
                CHECK(t.bbox[3] > 0.0);
                CHECK(ds.lexicon.contains(t.token));
            }
            // every reference mentions every planted token, in rank order
            for (const auto& ref : rec.references) {
                const auto ws = words_of(ref);
                std::size_t last = 0;
                for (const auto& t : rec.planted_text) {
                    const auto it = std::find(ws.begin() + static_cast<std::ptrdiff_t>(last), ws.end(), t.token);
                    REQUIRE(it != ws.end());
                    last = static_cast<std::size_t>(it - ws.begin()) + 1;
                }
            }
        }
    }
}

TEST_CASE("zero text fraction plants no text anywhere") {
    auto spec = small_spec();
    spec.text_fraction = 0.0;
    spec.oov_plant_fraction = 0.0;
    const auto ds = synth_generate(spec);
    for (const auto& rec : ds.records) {
        CHECK(rec.planted_text.empty());
        // references stay fully in-vocabulary: nothing maps to <unk>
        for (const auto& ref : rec.references) {
            const auto toks = preprocess_caption(ref, ds.vocab);
            REQUIRE(!toks.empty());
            CHECK(std::count(toks.begin(), toks.end(), "<unk>") == 0);
        }
    }
}

TEST_CASE("held-out brand fraction tracks the knob") {
    SynthSpec spec;
    spec.n_images = 400;
    spec.n_pixel = 4;
    spec.img_dim = 4;
    spec.text_fraction = 1.0;
    spec.oov_plant_fraction = 0.3;
    spec.seed = 31;
    const auto ds = synth_generate(spec);

    int oov_images = 0;
    for (const auto& rec : ds.records) {
        REQUIRE(!rec.planted_text.empty());
        bool any = false;
        for (const auto& ref : rec.references) {
            for (const auto& w : words_of(ref)) {
                if (is_oov(ds, w)) any = true;
            }
        }
        if (any) ++oov_images;
        for (const auto& t : rec.planted_text) {
            if (is_oov(ds, t.token)) {
                // held out of the caption vocabulary but still a real word
                CHECK(ds.vocab.id(t.token) == -1);
                CHECK(ds.lexicon.contains(t.token));
            } else {
                CHECK(ds.vocab.id(t.token) >= 4);
            }
        }
    }
    // binomial 3-sigma band around 0.3 at n=400 is about +/-0.069
    const double frac = static_cast<double>(oov_images) / 400.0;
    CHECK(frac > 0.23);
    CHECK(frac < 0.37);

    auto none = spec;
    none.oov_plant_fraction = 0.0;
    const auto ds0 = synth_generate(none);
    for (const auto& rec : ds0.records) {
        for (const auto& ref : rec.references) {
            for (const auto& w : words_of(ref)) CHECK(!is_oov(ds0, w));
        }
    }
}

TEST_CASE("rotation outcome never leaks into the content") {
    auto flat = small_spec();
    flat.rotation_fraction = 0.0;
    auto spun = small_spec();
    spun.rotation_fraction = 1.0;
    const auto a = synth_generate(flat);
    const auto b = synth_generate(spun);
    REQUIRE(a.records.size() == b.records.size());
    bool saw90 = false, saw180 = false, saw270 = false;
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].true_rotation == 0);
        CHECK(b.records[i].true_rotation != 0);
        saw90 |= b.records[i].true_rotation == 90;
        saw180 |= b.records[i].true_rotation == 180;
        saw270 |= b.records[i].true_rotation == 270;
        // identical pixels, text, objects, and references — only the capture
        // angle differs
        CHECK(a.records[i].features == b.records[i].features);
        CHECK(a.records[i].planted_text == b.records[i].planted_text);
        CHECK(a.records[i].planted_objects == b.records[i].planted_objects);
        CHECK(a.records[i].references == b.records[i].references);
    }
    CHECK(saw90);
    CHECK(saw180);
    CHECK(saw270);

    SynthSpec wide;
    wide.n_images = 400;
    wide.n_pixel = 2;
    wide.img_dim = 2;
    wide.seed = 5;
    const auto ds = synth_generate(wide);
    const auto rotated = std::count_if(ds.records.begin(), ds.records.end(),
                                       [](const DatasetRecord& r) { return r.true_rotation != 0; });
    // 3-sigma band around the 0.285 default at n=400
    const double frac = static_cast<double>(rotated) / 400.0;
    CHECK(frac > 0.217);
    CHECK(frac < 0.353);
}

TEST_CASE("recognizer returns the planted truth only at the true angle") {
    auto spec = small_spec();
    spec.text_fraction = 1.0;
    const auto ds = synth_generate(spec);
    for (const auto& rec : ds.records) {
        for (const int angle : {0, 90, 180, 270}) {
            const auto r = simulated_recognizer(rec, angle, ds.lexicon, 0.0, 99);
            CHECK(r.angle == angle);
            REQUIRE(r.detections.size() == rec.planted_text.size());
            if (angle == rec.true_rotation) {
                CHECK(r.detections == rec.planted_text);
            } else {
                for (std::size_t k = 0; k < r.detections.size(); ++k) {
                    CHECK(!ds.lexicon.contains(r.detections[k].token));
                    CHECK(r.detections[k].bbox == rec.planted_text[k].bbox);
                }
                CHECK(intelligible_count(r.detections, ds.lexicon) == 0);
            }
            // deterministic in (record, angle, seed)
            CHECK(simulated_recognizer(rec, angle, ds.lexicon, 0.0, 99) == r);
        }
    }

    CHECK_THROWS_AS(simulated_recognizer(ds.records[0], 45, ds.lexicon, 0.0, 1), DataError);
    CHECK_THROWS_AS(simulated_recognizer(ds.records[0], 0, ds.lexicon, 1.5, 1), DataError);
}

TEST_CASE("confusion rate mixes real words into off-angle reads") {
    auto spec = small_spec();
    spec.text_fraction = 1.0;
    const auto ds = synth_generate(spec);

    int real = 0, junk = 0;
    for (const auto& rec : ds.records) {
        const int wrong = rec.true_rotation == 0 ? 90 : 0;
        const auto half = simulated_recognizer(rec, wrong, ds.lexicon, 0.5, 7);
        for (const auto& t : half.detections) {
            (ds.lexicon.contains(t.token) ? real : junk)++;
        }
        const auto full = simulated_recognizer(rec, wrong, ds.lexicon, 1.0, 7);
        for (const auto& t : full.detections) CHECK(ds.lexicon.contains(t.token));
    }
    CHECK(real > 0);
    CHECK(junk > 0);
}

TEST_CASE("orientation recovery from a four-angle sweep") {
    SynthSpec spec;
    spec.n_images = 60;
    spec.n_pixel = 4;
    spec.img_dim = 4;
    spec.text_fraction = 1.0;
    spec.rotation_fraction = 0.5;
    spec.seed = 21;
    const auto ds = synth_generate(spec);
    for (const auto& rec : ds.records) {
        std::vector<RotationResult> sweep;
        for (const int angle : {0, 90, 180, 270}) {
            sweep.push_back(simulated_recognizer(rec, angle, ds.lexicon, 0.0, 13));
        }
        const auto [angle, ranked] = select_orientation(sweep, ds.lexicon);
        CHECK(angle == rec.true_rotation);
        REQUIRE(!ranked.empty());
        CHECK(ranked[0].token == rec.planted_text[0].token);
    }
}

TEST_CASE("references survive the preprocessing round trip") {
    const auto ds = synth_generate(small_spec());
    for (const auto& rec : ds.records) {
        for (const auto& ref : rec.references) {
            const auto toks = preprocess_caption(ref, ds.vocab);
            REQUIRE(!toks.empty());
            const auto text = detokenize(toks);
            CHECK(preprocess_caption(text, ds.vocab) == toks);
        }
    }
}

TEST_CASE("dataset round trips through disk") {
    TempDir dir("goalcap_data_roundtrip");
    const auto ds = synth_generate(small_spec());
    save_dataset(ds, dir.path.string());
    for (const char* name :
         {"manifest.json", "features.bin", "detections.jsonl", "lexicon.txt", "vocab.txt"}) {
        CHECK(fs::exists(dir.path / name));
    }

    const auto back = load_dataset(dir.path.string());
    CHECK(back.spec == ds.spec);
    CHECK(back.records == ds.records);
    CHECK(back.oov_tokens == ds.oov_tokens);
    CHECK(back.vocab.tokens() == ds.vocab.tokens());
    CHECK(back.lexicon.words() == ds.lexicon.words());
}

TEST_CASE("a fixed seed reproduces the exact bytes on disk") {
    TempDir one("goalcap_data_bytes_a");
    TempDir two("goalcap_data_bytes_b");
    save_dataset(synth_generate(small_spec()), one.path.string());
    save_dataset(synth_generate(small_spec()), two.path.string());
    for (const char* name :
         {"manifest.json", "features.bin", "detections.jsonl", "lexicon.txt", "vocab.txt"}) {
        CHECK_MESSAGE(slurp(one.path / name) == slurp(two.path / name), name);
    }
}

TEST_CASE("loading rejects tampered datasets") {
    using nlohmann::json;
    TempDir dir("goalcap_data_tamper");
    const auto ds = synth_generate(small_spec());
    const auto root = dir.path.string();
    save_dataset(ds, root);
    const std::string pristine = slurp(dir.path / "manifest.json");

    auto mutate = [&](auto&& fn) {
        auto m = json::parse(pristine);
        fn(m);
        spit(dir.path / "manifest.json", m.dump(2) + "\n");
        CHECK_THROWS_AS(load_dataset(root), DataError);
        spit(dir.path / "manifest.json", pristine);
    };
    mutate([](json& m) { m["format"] = "something-else"; });
    mutate([](json& m) { m["version"] = 2; });
    mutate([](json& m) { m["spec"]["n_images"] = 7; });
    mutate([](json& m) { m["images"][0]["true_rotation"] = 45; });
    mutate([](json& m) { m["images"][0]["references"] = json::array(); });
    mutate([](json& m) { m["images"][1]["id"] = m["images"][0]["id"]; });
    mutate([](json& m) { m["images"][0]["id"] = "img_999999"; });
    mutate([](json& m) { m.erase("oov_tokens"); });

    // missing or truncated binary features
    const std::string feats = slurp(dir.path / "features.bin");
    spit(dir.path / "features.bin", feats.substr(0, feats.size() / 2));
    CHECK_THROWS(load_dataset(root));
    fs::remove(dir.path / "features.bin");
    CHECK_THROWS(load_dataset(root));
    spit(dir.path / "features.bin", feats);
    CHECK_NOTHROW(load_dataset(root));

    CHECK_THROWS_AS(load_dataset((dir.path / "nope").string()), DataError);
}
