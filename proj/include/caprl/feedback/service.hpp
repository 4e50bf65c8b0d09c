#pragma once

// Rating tasks over a captions-to-rate manifest.
//
// Task k (1-based) is the k-th distinct (image_id, caption) pair of the
// manifest. A rater is always offered the lowest-numbered task they have not
// rated yet, so asking twice without submitting returns the same task.
// Ratings already in the store count on startup, which makes a restarted
// service resume where each rater left off.

#include <cctype>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "caprl/feedback/store.hpp"

namespace caprl {

struct ManifestEntry {
    std::string image_id;
    std::string caption;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) { j = {{"image_id", e.image_id}, {"caption", e.caption}}; }

/// JSONL of {"image_id", "caption"}. Repeated pairs collapse onto their first
/// occurrence with a warning. Blank lines are ignored.
inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const std::string& source = "<manifest>",
                                                 const WarningSink& warnings = stderr_warnings()) {
    std::vector<ManifestEntry> out;
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ManifestEntry e;
        try {
            const auto j = nlohmann::json::parse(line);
            j.at("image_id").get_to(e.image_id);
            j.at("caption").get_to(e.caption);
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(source + ":" + std::to_string(lineno) + ": " + ex.what());
        }
        if (e.image_id.empty() || e.caption.empty()) {
            throw ParseError(source + ":" + std::to_string(lineno) + ": image_id and caption must be non-empty");
        }
        if (!seen.emplace(e.image_id, e.caption).second) {
            warn(warnings, source + ":" + std::to_string(lineno) + ": duplicate task for '" + e.image_id + "' merged");
            continue;
        }
        out.push_back(std::move(e));
    }
    return out;
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path,
                                                const WarningSink& warnings = stderr_warnings()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    return parse_manifest(in, path.string(), warnings);
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
    for (const auto& e : entries) out << nlohmann::json(e).dump() << '\n';
}

/// Percent-encodes everything outside the URL unreserved set.
inline std::string url_path_segment(std::string_view raw) {
    static constexpr char kHex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char ch : raw) {
        if (std::isalnum(ch) || ch == '-' || ch == '_' || ch == '.' || ch == '~') {
            out += static_cast<char>(ch);
        } else {
            out += '%';
            out += kHex[ch >> 4];
            out += kHex[ch & 15];
        }
    }
    return out;
}

enum class TaskStatus { pending, rated };

struct RatingTask {
    std::string task_id;
    std::string image_id;
    std::string image_url;
    std::string caption_text;
    TaskStatus status = TaskStatus::pending;
};

inline void to_json(nlohmann::json& j, const RatingTask& t) {
    j = {{"task_id", t.task_id},
         {"image_id", t.image_id},
         {"image_url", t.image_url},
         {"caption", t.caption_text},
         {"status", t.status == TaskStatus::rated ? "rated" : "pending"}};
}

struct Progress {
    std::size_t total = 0;
    std::size_t rated = 0;
};

class FeedbackService {
public:
    /// An uninitialized service: every task operation throws ServiceError.
    FeedbackService(FeedbackStore& store, Clock clock = system_clock_seconds())
        : store_(store), clock_(std::move(clock)) {}

    FeedbackService(FeedbackStore& store, std::vector<ManifestEntry> manifest, Clock clock = system_clock_seconds())
        : FeedbackService(store, std::move(clock)) {
        initialize(std::move(manifest));
    }

    void initialize(std::vector<ManifestEntry> manifest) {
        std::lock_guard lock(mutex_);
        tasks_.clear();
        by_key_.clear();
        for (auto& e : manifest) {
            if (by_key_.count({e.image_id, e.caption})) continue;
            by_key_[{e.image_id, e.caption}] = tasks_.size();
            tasks_.push_back({std::move(e), {}});
        }
        for (const auto& r : store_.read().records) {
            auto it = by_key_.find({r.image_id, r.caption_text});
            if (it != by_key_.end()) tasks_[it->second].raters.insert(r.rater_id);
        }
        initialized_ = true;
    }

    bool initialized() const {
        std::lock_guard lock(mutex_);
        return initialized_;
    }

    bool has_image(const std::string& image_id) const {
        std::lock_guard lock(mutex_);
        for (const auto& t : tasks_) {
            if (t.entry.image_id == image_id) return true;
        }
        return false;
    }

    std::optional<RatingTask> next_task(const std::string& rater_id) const {
        if (rater_id.empty()) throw ValidationError("rater_id must be non-empty");
        std::lock_guard lock(mutex_);
        require_initialized();
        for (std::size_t k = 0; k < tasks_.size(); ++k) {
            if (!tasks_[k].raters.count(rater_id)) return make_task(k);
        }
        return std::nullopt;
    }

    /// Appends the rating to the store and returns the stored record.
    FeedbackRecord submit_rating(const std::string& task_id, const std::string& rater_id, double rating) {
        if (rater_id.empty()) throw ValidationError("rater_id must be non-empty");
        std::lock_guard lock(mutex_);
        require_initialized();
        const std::size_t k = index_of(task_id);
        if (!valid_rating(rating)) throw ValidationError("rating must lie in [-1, 1]");
        FeedbackRecord r{tasks_[k].entry.image_id, tasks_[k].entry.caption, rating, rater_id, clock_()};
        store_.append(r);
        tasks_[k].raters.insert(rater_id);
        return r;
    }

    Progress progress() const {
        std::lock_guard lock(mutex_);
        require_initialized();
        Progress p{tasks_.size(), 0};
        for (const auto& t : tasks_) p.rated += t.raters.empty() ? 0 : 1;
        return p;
    }

    std::vector<FeedbackRecord> export_feedback() const { return store_.export_records(); }

    static std::string task_id_for(std::size_t index) { return std::to_string(index + 1); }

private:
    struct Task {
        ManifestEntry entry;
        std::set<std::string> raters;
    };

    void require_initialized() const {
        if (!initialized_) throw ServiceError("task queue is not initialized (no manifest loaded)");
    }

    std::size_t index_of(const std::string& task_id) const {
        std::size_t k = 0;
        const bool digits = !task_id.empty() && task_id.size() < 19 && task_id.front() != '0' &&
                            task_id.find_first_not_of("0123456789") == std::string::npos;
        if (digits) k = std::stoull(task_id);
        if (k == 0 || k > tasks_.size()) throw NotFoundError("unknown task '" + task_id + "'");
        return k - 1;
    }

    RatingTask make_task(std::size_t k) const {
        const auto& t = tasks_[k];
        return {task_id_for(k), t.entry.image_id, "/images/" + url_path_segment(t.entry.image_id), t.entry.caption,
                t.raters.empty() ? TaskStatus::pending : TaskStatus::rated};
    }

    FeedbackStore& store_;
    Clock clock_;
    mutable std::mutex mutex_;
    bool initialized_ = false;
    std::vector<Task> tasks_;
    std::map<std::pair<std::string, std::string>, std::size_t> by_key_;
};

}  // namespace caprl
