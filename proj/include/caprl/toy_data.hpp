#pragma once

// Small deterministic image/caption corpus for demos and end-to-end tests.
// "Images" are synthetic byte blobs whose histograms differ per image, so the
// toy extractor gives each a distinct feature vector.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "caprl/corpus.hpp"
#include "caprl/rng.hpp"

namespace caprl::toy {

inline constexpr std::array<const char*, 16> kCaptions = {
    "A brown dog is running in a grassy plain .",
    "A boy surfs on a yellow board across the bright blue wave",
    "Black and white dog runs through an obstacle area",
    "Two dogs playing in the snow",
    "A woman in a red jacket is walking in the city",
    "Kids playing with water in a grass field",
    "A surfer with a yellow board rides a wave",
    "Men playing cricket on a sports field",
    "A boy pitches in a baseball game",
    "A man in a white shirt is riding a horse",
    "A dog is running on the grass",
    "Young man rides ocean wave on yellow surfboard .",
    "A girl in a pink dress jumps into the pool",
    "Two children sit on a wooden bench",
    "A black dog carries a stick through the water",
    "People walk along a busy city street",
};

inline constexpr std::size_t kMaxImages = kCaptions.size();

struct ToyItem {
    std::string image_id;
    std::vector<std::uint8_t> bytes;
    std::string caption;
};

/// 512 bytes drawn from a 6-value palette that depends on the image index.
inline std::vector<std::uint8_t> image_bytes(std::size_t index) {
    Rng rng(0x1A6E5ULL + index);
    std::array<std::uint8_t, 6> palette{};
    for (std::size_t j = 0; j < palette.size(); ++j) {
        palette[j] = static_cast<std::uint8_t>((index * 37 + j * 41 + (index * j) % 7) % 256);
    }
    std::vector<std::uint8_t> bytes(512);
    for (auto& b : bytes) {
        // Skewed toward the first palette entries.
        const std::size_t pick = std::min(rng.below(palette.size()), rng.below(palette.size()));
        b = palette[pick];
    }
    return bytes;
}

inline std::string image_id(std::size_t index) {
    std::string id = std::to_string(1000 + index);
    return "toy" + id + ".jpg";
}

inline std::vector<ToyItem> corpus(std::size_t n) {
    if (n == 0 || n > kMaxImages) throw ConfigError("toy corpus supports 1..16 images");
    std::vector<ToyItem> items;
    for (std::size_t k = 0; k < n; ++k) items.push_back({image_id(k), image_bytes(k), kCaptions[k]});
    return items;
}

/// The corpus rendered as a caption file (`name#0<TAB>caption`).
inline std::string caption_file(const std::vector<ToyItem>& items) {
    std::string out;
    for (const auto& it : items) out += it.image_id + "#0\t" + it.caption + "\n";
    return out;
}

inline FeatureTable features(const std::vector<ToyItem>& items, std::size_t dim = kDefaultToyFeatureDim) {
    FeatureTable table;
    for (const auto& it : items) table[it.image_id] = {it.image_id, toy_extract_features(it.bytes, dim)};
    return table;
}

}  // namespace caprl::toy

namespace caprl::toy {

/// Three captions per image built from two subject and two action phrases:
///   consensus = subject + action, variant_a = subject + alt_action,
///   variant_b = alt_subject + action.
/// The consensus caption shares words with both variants, which share
/// nothing with each other.
struct PreferenceItem {
    std::string image_id;
    std::vector<std::uint8_t> bytes;
    std::array<std::string, 3> captions;  // consensus, variant_a, variant_b
};

inline constexpr std::array<const char*, 16> kSubjects = {
    "a brown dog", "a young boy",  "two small kids", "a tall man",    "a black cat",  "an old woman",
    "three white birds", "a little girl", "a red car", "two big horses", "a happy baby", "a gray rabbit",
    "four young men", "a spotted cow", "a blue boat", "a fluffy sheep",
};
inline constexpr std::array<const char*, 16> kAltSubjects = {
    "one muddy puppy", "the child",  "some children", "the person", "the kitten", "the lady",
    "several seagulls", "the toddler", "the vehicle", "the ponies", "the infant", "the bunny",
    "the boys", "the cattle", "the vessel", "the lamb",
};
inline constexpr std::array<const char*, 16> kActions = {
    "runs on the grass", "plays in the water", "jumps over a fence", "walks down the street",
    "sits on a sofa", "reads a book outside", "fly over the sea", "swings at the park",
    "drives along the road", "gallop across a field", "laughs in a crib", "hides under a bush",
    "play soccer on sand", "grazes near a barn", "floats on a lake", "stands on a hill",
};
inline constexpr std::array<const char*, 16> kAltActions = {
    "sleeps near a tree", "builds a sandcastle", "climbs a tall wall", "waits for a bus",
    "chases a ball", "knits a warm scarf", "rest on wooden poles", "eats an ice cream",
    "parks beside a house", "drink from a stream", "holds a toy", "nibbles some carrots",
    "ride their bikes", "chews some hay", "sails past rocks", "eats green grass",
};

inline std::vector<PreferenceItem> preference_set(std::size_t n) {
    if (n == 0 || n > kSubjects.size()) throw ConfigError("preference set supports 1..16 images");
    std::vector<PreferenceItem> items;
    for (std::size_t k = 0; k < n; ++k) {
        const std::string s = kSubjects[k], s2 = kAltSubjects[k], a = kActions[k], a2 = kAltActions[k];
        items.push_back({image_id(k), image_bytes(k), {s + " " + a, s + " " + a2, s2 + " " + a}});
    }
    return items;
}

}  // namespace caprl::toy
