// Synthetic captioning corpus: seeded generation of feature grids with
// token-keyed planted patterns, object/text ground truth, reference captions,
// a simulated rotation-sensitive recognizer, and a disk layout that round
// trips bit-exactly (manifest.json, features.bin, detections.jsonl,
// lexicon.txt, vocab.txt).
#pragma once

#include "goalcap/embeddings.hpp"
#include "goalcap/perception.hpp"
#include "goalcap/vocab.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace goalcap {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SynthSpec {
    std::int64_t n_images = 100;
    std::int64_t n_pixel = 16;   // feature rows per image
    std::int64_t img_dim = 16;   // feature width
    std::int64_t n_object_words = 12;     // object label pool
    std::int64_t n_brand_words = 12;      // in-vocabulary printed-text pool
    std::int64_t n_oov_brand_words = 6;   // printed-text pool held out of the caption vocab
    double text_fraction = 0.5;      // images that carry printed text
    double rotation_fraction = 0.285;  // images captured at a non-zero rotation
    double oov_plant_fraction = 0.0;   // text images whose primary token is held out
    double confusion_rate = 0.0;       // off-angle recognizer: real-word emissions
    std::uint64_t seed = 0;

    void validate() const;  // throws DataError
    bool operator==(const SynthSpec&) const = default;
};

struct DatasetRecord {
    std::string image_id;
    std::vector<float> features;  // n_pixel * img_dim, row-major
    int true_rotation = 0;        // 0, 90, 180, or 270
    std::vector<DetectedText> planted_text;      // ground-truth OCR, largest region first
    std::vector<DetectedObject> planted_objects; // detector output incl. low-confidence noise
    std::vector<std::string> references;

    bool operator==(const DatasetRecord&) const = default;
};

struct SynthDataset {
    SynthSpec spec;
    std::vector<DatasetRecord> records;
    Lexicon lexicon;           // every real word the recognizer could emit
    TokenizerVocab vocab;      // caption vocabulary, held-out brands excluded
    std::vector<std::string> oov_tokens;  // the held-out brands, sorted
};

// Pure function of the spec: the same spec always yields the same dataset.
SynthDataset synth_generate(const SynthSpec& spec);

// Recognizer behaviour at a query angle: the true rotation returns exactly the
// planted tokens; any other angle returns seeded gibberish absent from the
// lexicon, except that each token is independently swapped for a real lexicon
// word with probability confusion_rate.
RotationResult simulated_recognizer(const DatasetRecord& rec, int angle, const Lexicon& lexicon,
                                    double confusion_rate, std::uint64_t seed);

void save_dataset(const SynthDataset& ds, const std::string& dir);
SynthDataset load_dataset(const std::string& dir);

}  // namespace goalcap
