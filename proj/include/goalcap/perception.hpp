// OCR and object input channels: orientation selection by intelligible-token
// count across the four canonical rotations, OCR ranking by bounding area and
// confidence, and object confidence filtering.
#pragma once

#include "goalcap/embeddings.hpp"

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace goalcap {

class PerceptionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DetectedText {
    std::string token;
    std::array<double, 4> bbox{0, 0, 0, 0};  // x, y, width, height in pixels
    double confidence = 0.0;

    double area() const { return bbox[2] * bbox[3]; }
    bool operator==(const DetectedText&) const = default;
};

struct RotationResult {
    int angle = 0;  // one of 0, 90, 180, 270
    std::vector<DetectedText> detections;

    bool operator==(const RotationResult&) const = default;
};

struct DetectedObject {
    std::string label;
    double confidence = 0.0;

    bool operator==(const DetectedObject&) const = default;
};

struct ChannelLimits {
    int max_ocr = 20;
    int max_obj = 10;
    double obj_threshold = 0.25;
    // recorded ambiguities, each with a flag to flip the reading
    bool strict_obj_threshold = true;      // keep strictly above the threshold
    bool confidence_before_area = false;   // OCR sort key order
    bool count_distinct_types = false;     // intelligibility: instances vs types
};

// Number of intelligible whitespace-separated tokens across all detections.
int intelligible_count(const std::vector<DetectedText>& detections, const Lexicon& lexicon,
                       bool count_distinct_types = false);

// Picks the rotation with the most intelligible tokens (ties: 0 > 90 > 180 >
// 270) and returns its detections ranked and clipped by rank_ocr. Requires
// exactly one candidate per canonical angle, in any order.
std::pair<int, std::vector<DetectedText>> select_orientation(
    const std::vector<RotationResult>& candidates, const Lexicon& lexicon,
    const ChannelLimits& limits = {});

// Sort by (area desc, confidence desc) — or the flipped key order — stable on
// the original index, clipped to max_ocr.
std::vector<DetectedText> rank_ocr(std::vector<DetectedText> detections,
                                   const ChannelLimits& limits = {});

// Keep detections above the confidence threshold, sorted descending, clipped
// to max_obj.
std::vector<DetectedObject> filter_objects(std::vector<DetectedObject> detections,
                                           const ChannelLimits& limits = {});

// JSON-lines interchange:
//   rotation: {"angle": 90, "detections": [{"token": "...", "bbox": [x,y,w,h], "conf": 0.87}]}
//   object:   {"label": "...", "conf": 0.9}
RotationResult parse_rotation_json(const std::string& line);
std::string rotation_to_json(const RotationResult& r);
DetectedObject parse_object_json(const std::string& line);
std::string object_to_json(const DetectedObject& o);

}  // namespace goalcap
