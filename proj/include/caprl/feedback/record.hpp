#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

#include "caprl/error.hpp"

namespace caprl {

/// One human (or simulated) rating of a caption for an image.
/// Serialized with the field names image_id, caption, rating, rater_id, ts.
struct FeedbackRecord {
    std::string image_id;
    std::string caption_text;
    double rating = 0.0;
    std::string rater_id;
    double timestamp = 0.0;  // UTC seconds since the epoch, fractional

    friend bool operator==(const FeedbackRecord&, const FeedbackRecord&) = default;
};

inline bool valid_rating(double r) { return std::isfinite(r) && r >= -1.0 && r <= 1.0; }

inline void validate_record(const FeedbackRecord& r) {
    if (!valid_rating(r.rating)) throw ValidationError("rating must lie in [-1, 1]");
    if (r.caption_text.empty()) throw ValidationError("caption must be non-empty");
    if (r.image_id.empty()) throw ValidationError("image_id must be non-empty");
}

inline void to_json(nlohmann::json& j, const FeedbackRecord& r) {
    j = {{"image_id", r.image_id}, {"caption", r.caption_text}, {"rating", r.rating}, {"rater_id", r.rater_id},
         {"ts", r.timestamp}};
}

inline void from_json(const nlohmann::json& j, FeedbackRecord& r) {
    j.at("image_id").get_to(r.image_id);
    j.at("caption").get_to(r.caption_text);
    j.at("rating").get_to(r.rating);
    j.at("rater_id").get_to(r.rater_id);
    j.at("ts").get_to(r.timestamp);
}

}  // namespace caprl
