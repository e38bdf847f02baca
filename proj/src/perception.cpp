#include "goalcap/perception.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace goalcap {
namespace {

using nlohmann::json;

std::vector<std::string> whitespace_tokens(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

void validate_detection(const DetectedText& d) {
    if (d.bbox[2] < 0 || d.bbox[3] < 0) throw PerceptionError("detection: negative bbox extent");
    if (d.confidence < 0.0 || d.confidence > 1.0)
        throw PerceptionError("detection: confidence outside [0,1]");
}

}  // namespace

int intelligible_count(const std::vector<DetectedText>& detections, const Lexicon& lexicon,
                       bool count_distinct_types) {
    int count = 0;
    std::set<std::string> seen;
    for (const auto& d : detections) {
        for (const auto& tok : whitespace_tokens(d.token)) {
            if (!is_intelligible(tok, lexicon)) continue;
            if (count_distinct_types) {
                seen.insert(lowercase_ascii(tok));
            } else {
                ++count;
            }
        }
    }
    return count_distinct_types ? static_cast<int>(seen.size()) : count;
}

std::pair<int, std::vector<DetectedText>> select_orientation(
    const std::vector<RotationResult>& candidates, const Lexicon& lexicon,
    const ChannelLimits& limits) {
    static constexpr std::array<int, 4> kAngles{0, 90, 180, 270};
    std::array<const RotationResult*, 4> by_angle{};
    for (const auto& c : candidates) {
        auto it = std::find(kAngles.begin(), kAngles.end(), c.angle);
        if (it == kAngles.end())
            throw PerceptionError("select_orientation: angle must be one of 0/90/180/270");
        auto& slot = by_angle[static_cast<std::size_t>(it - kAngles.begin())];
        if (slot != nullptr) throw PerceptionError("select_orientation: duplicate angle");
        slot = &c;
    }
    if (candidates.size() != 4)
        throw PerceptionError("select_orientation: exactly one candidate per angle required");

    // argmax over intelligible counts; ties fall to the earlier angle in 0,
    // 90, 180, 270 preference order
    int best_idx = 0;
    int best_count = -1;
    for (std::size_t i = 0; i < 4; ++i) {
        const int c = intelligible_count(by_angle[i]->detections, lexicon, limits.count_distinct_types);
        if (c > best_count) {
            best_count = c;
            best_idx = static_cast<int>(i);
        }
    }
    return {kAngles[static_cast<std::size_t>(best_idx)],
            rank_ocr(by_angle[static_cast<std::size_t>(best_idx)]->detections, limits)};
}

std::vector<DetectedText> rank_ocr(std::vector<DetectedText> detections, const ChannelLimits& limits) {
    for (const auto& d : detections) validate_detection(d);
    std::stable_sort(detections.begin(), detections.end(),
                     [&](const DetectedText& a, const DetectedText& b) {
                         if (limits.confidence_before_area) {
                             if (a.confidence != b.confidence) return a.confidence > b.confidence;
                             return a.area() > b.area();
                         }
                         if (a.area() != b.area()) return a.area() > b.area();
                         return a.confidence > b.confidence;
                     });
    if (detections.size() > static_cast<std::size_t>(limits.max_ocr))
        detections.resize(static_cast<std::size_t>(limits.max_ocr));
    return detections;
}

std::vector<DetectedObject> filter_objects(std::vector<DetectedObject> detections,
                                           const ChannelLimits& limits) {
    std::vector<DetectedObject> kept;
    for (const auto& d : detections) {
        if (d.label.empty()) throw PerceptionError("object: empty label");
        if (d.confidence < 0.0 || d.confidence > 1.0)
            throw PerceptionError("object: confidence outside [0,1]");
        const bool pass = limits.strict_obj_threshold ? d.confidence > limits.obj_threshold
                                                      : d.confidence >= limits.obj_threshold;
        if (pass) kept.push_back(d);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const DetectedObject& a, const DetectedObject& b) {
        return a.confidence > b.confidence;
    });
    if (kept.size() > static_cast<std::size_t>(limits.max_obj))
        kept.resize(static_cast<std::size_t>(limits.max_obj));
    return kept;
}

RotationResult parse_rotation_json(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw PerceptionError(std::string("rotation json: ") + e.what());
    }
    RotationResult r;
    try {
        r.angle = j.at("angle").get<int>();
        for (const auto& d : j.at("detections")) {
            DetectedText t;
            t.token = d.at("token").get<std::string>();
            const auto& bb = d.at("bbox");
            if (bb.size() != 4) throw PerceptionError("rotation json: bbox must have 4 entries");
            for (std::size_t i = 0; i < 4; ++i) t.bbox[i] = bb.at(i).get<double>();
            t.confidence = d.at("conf").get<double>();
            validate_detection(t);
            r.detections.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw PerceptionError(std::string("rotation json: ") + e.what());
    }
    if (r.angle != 0 && r.angle != 90 && r.angle != 180 && r.angle != 270)
        throw PerceptionError("rotation json: angle must be one of 0/90/180/270");
    return r;
}

std::string rotation_to_json(const RotationResult& r) {
    json dets = json::array();
    for (const auto& d : r.detections) {
        dets.push_back({{"token", d.token},
                        {"bbox", {d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]}},
                        {"conf", d.confidence}});
    }
    return json{{"angle", r.angle}, {"detections", dets}}.dump();
}

DetectedObject parse_object_json(const std::string& line) {
    try {
        json j = json::parse(line);
        DetectedObject o{j.at("label").get<std::string>(), j.at("conf").get<double>()};
        if (o.label.empty()) throw PerceptionError("object json: empty label");
        if (o.confidence < 0.0 || o.confidence > 1.0)
            throw PerceptionError("object json: confidence outside [0,1]");
        return o;
    } catch (const json::exception& e) {
        throw PerceptionError(std::string("object json: ") + e.what());
    }
}

std::string object_to_json(const DetectedObject& o) {
    return json{{"label", o.label}, {"conf", o.confidence}}.dump();
}

}  // namespace goalcap
