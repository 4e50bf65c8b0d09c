#pragma once

// Checkpoint container, version 1 (UTF-8 JSON):
//
//   {
//     "format":  "caprl-checkpoint",
//     "version": 1,
//     "kind":    "<model kind>",
//     "meta":    { ...model-specific configuration... },
//     "tensors": [ {"name": "...", "shape": [rows, cols], "data": [row-major values]}, ... ]
//   }
//
// Tensors appear in the owning parameter set's visit order. Doubles are
// written in shortest round-trip form, so save -> load is exact.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "caprl/nn/params.hpp"

namespace caprl::nn {

inline constexpr const char* kCheckpointFormat = "caprl-checkpoint";
inline constexpr int kCheckpointVersion = 1;

template <ParameterSet P>
nlohmann::json tensors_to_json(const P& params) {
    nlohmann::json arr = nlohmann::json::array();
    P::visit(params, [&](std::string_view name, const Tensor2& t) {
        arr.push_back({{"name", std::string(name)}, {"shape", {t.rows, t.cols}}, {"data", t.data}});
    });
    return arr;
}

/// Fills `params` (already shaped) from a tensor array; names and shapes must match.
template <ParameterSet P>
void tensors_from_json(const nlohmann::json& arr, P& params) {
    if (!arr.is_array()) throw ParseError("checkpoint: 'tensors' must be an array");
    std::size_t k = 0;
    P::visit(params, [&](std::string_view name, Tensor2& t) {
        if (k >= arr.size()) throw ParseError("checkpoint: missing tensor " + std::string(name));
        const auto& entry = arr.at(k++);
        const auto stored = entry.at("name").get<std::string>();
        if (stored != name) throw ParseError("checkpoint: expected tensor " + std::string(name) + ", found " + stored);
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols) {
            throw ShapeError("checkpoint: tensor " + stored + " has shape incompatible with " + shape_string(t));
        }
        auto data = entry.at("data").get<std::vector<double>>();
        t = Tensor2(t.rows, t.cols, std::move(data));
        if (!t.all_finite()) throw ValidationError("checkpoint: tensor " + stored + " has non-finite values");
    });
    if (k != arr.size()) throw ParseError("checkpoint: unexpected extra tensors");
}

inline nlohmann::json make_checkpoint(std::string_view kind, nlohmann::json meta, nlohmann::json tensors) {
    return {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"kind", std::string(kind)},
            {"meta", std::move(meta)},
            {"tensors", std::move(tensors)}};
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << doc.dump() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

/// Reads a checkpoint and checks its header; returns the whole document.
inline nlohmann::json read_checkpoint(const std::filesystem::path& path, std::string_view expected_kind) {
    auto doc = read_json_file(path);
    if (doc.value("format", "") != kCheckpointFormat) throw ParseError(path.string() + ": not a caprl checkpoint");
    if (doc.value("version", 0) != kCheckpointVersion) {
        throw ParseError(path.string() + ": unsupported checkpoint version");
    }
    if (doc.value("kind", "") != expected_kind) {
        throw ParseError(path.string() + ": expected a '" + std::string(expected_kind) + "' checkpoint");
    }
    return doc;
}

}  // namespace caprl::nn
