#pragma once

// Append-only JSONL store of feedback records.
//
// Each append is one write(2) of a complete line on an O_APPEND descriptor,
// followed by fsync. A crash can therefore leave at most one unterminated
// fragment at the end of the file. Readers ignore a final line without a
// newline. Opening the store moves such a fragment to `<store>.partial` and
// cuts it from the store, so the next append starts on a fresh line and the
// unacknowledged write never becomes visible.
//
// Complete lines are never rewritten. A repeated (image, caption, rater) rating adds a
// new line, and reads keep the one with the latest timestamp. Among equal
// timestamps the later line wins.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "caprl/diagnostics.hpp"
#include "caprl/feedback/record.hpp"

namespace caprl {

using Clock = std::function<double()>;

/// Wall-clock UTC seconds with sub-second resolution.
inline Clock system_clock_seconds() {
    return [] {
        const auto now = std::chrono::system_clock::now().time_since_epoch();
        return std::chrono::duration<double>(now).count();
    };
}

struct StoreContents {
    std::vector<FeedbackRecord> records;  // valid lines, file order
    std::size_t skipped = 0;              // corrupt or unterminated lines
};

/// Parses store text. Lines that are not valid records (bad JSON, missing
/// fields, out-of-range rating) are skipped and counted, as is a trailing
/// fragment without a newline.
inline StoreContents parse_store(std::string_view text) {
    StoreContents out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            ++out.skipped;
            break;
        }
        const std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            auto r = nlohmann::json::parse(line).get<FeedbackRecord>();
            validate_record(r);
            if (!std::isfinite(r.timestamp)) throw ValidationError("bad timestamp");
            out.records.push_back(std::move(r));
        } catch (const std::exception&) {
            ++out.skipped;
        }
    }
    return out;
}

/// Latest record per (image_id, caption, rater_id), sorted by timestamp.
inline std::vector<FeedbackRecord> deduplicate(const std::vector<FeedbackRecord>& records) {
    using Key = std::tuple<std::string, std::string, std::string>;
    std::map<Key, std::size_t> latest;
    for (std::size_t k = 0; k < records.size(); ++k) {
        const auto& r = records[k];
        auto [it, inserted] = latest.try_emplace(Key{r.image_id, r.caption_text, r.rater_id}, k);
        if (!inserted && records[it->second].timestamp <= r.timestamp) it->second = k;
    }
    std::vector<std::size_t> keep;
    keep.reserve(latest.size());
    for (const auto& [key, index] : latest) keep.push_back(index);
    std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].timestamp != records[b].timestamp) return records[a].timestamp < records[b].timestamp;
        return a < b;
    });
    std::vector<FeedbackRecord> out;
    out.reserve(keep.size());
    for (std::size_t k : keep) out.push_back(records[k]);
    return out;
}

class FeedbackStore {
public:
    explicit FeedbackStore(std::filesystem::path path, WarningSink warnings = stderr_warnings())
        : path_(std::move(path)), warnings_(std::move(warnings)) {
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw IoError("cannot open feedback store " + path_.string() + ": " + std::strerror(errno));
        terminate_fragment();
    }

    FeedbackStore(const FeedbackStore&) = delete;
    FeedbackStore& operator=(const FeedbackStore&) = delete;
    ~FeedbackStore() {
        if (fd_ >= 0) ::close(fd_);
    }

    const std::filesystem::path& path() const { return path_; }

    /// Validates and durably appends one record.
    void append(const FeedbackRecord& r) {
        validate_record(r);
        if (!std::isfinite(r.timestamp)) throw ValidationError("timestamp must be finite");
        const std::string line = nlohmann::json(r).dump() + "\n";
        std::lock_guard lock(mutex_);
        write_all(line);
        if (::fsync(fd_) != 0) throw IoError("fsync failed on " + path_.string() + ": " + std::strerror(errno));
    }

    /// Every valid line in file order.
    StoreContents read() const {
        std::lock_guard lock(mutex_);
        std::ifstream in(path_, std::ios::binary);
        if (!in) throw IoError("cannot read feedback store " + path_.string());
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto contents = parse_store(text);
        if (contents.skipped > 0) {
            warn(warnings_, path_.string() + ": skipped " + std::to_string(contents.skipped) + " corrupt line(s)");
        }
        return contents;
    }

    /// Deduplicated records sorted by timestamp.
    std::vector<FeedbackRecord> export_records() const { return deduplicate(read().records); }

private:
    void write_all(std::string_view bytes) {
        // O_APPEND writes of a few hundred bytes to a regular file complete in
        // one call in practice. Looping keeps a short write correct anyway.
        while (!bytes.empty()) {
            const ssize_t n = ::write(fd_, bytes.data(), bytes.size());
            if (n < 0) {
                if (errno == EINTR) continue;
                throw IoError("write failed on " + path_.string() + ": " + std::strerror(errno));
            }
            bytes.remove_prefix(static_cast<std::size_t>(n));
        }
    }

    void terminate_fragment() {
        std::error_code ec;
        const auto size = std::filesystem::file_size(path_, ec);
        if (ec || size == 0) return;
        std::ifstream in(path_, std::ios::binary);
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (text.back() == '\n') return;
        const std::size_t keep = text.rfind('\n') == std::string::npos ? 0 : text.rfind('\n') + 1;
        auto sidecar = path_;
        sidecar += ".partial";
        {
            std::ofstream out(sidecar, std::ios::binary | std::ios::app);
            out << text.substr(keep) << '\n';
            if (!out) throw IoError("cannot save incomplete line to " + sidecar.string());
        }
        if (::ftruncate(fd_, static_cast<off_t>(keep)) != 0) {
            throw IoError("cannot cut incomplete line from " + path_.string() + ": " + std::strerror(errno));
        }
        warn(warnings_, path_.string() + ": moved an incomplete final line (" + std::to_string(text.size() - keep) +
                            " bytes) to " + sidecar.string());
    }

    std::filesystem::path path_;
    WarningSink warnings_;
    int fd_ = -1;
    mutable std::mutex mutex_;
};

}  // namespace caprl
