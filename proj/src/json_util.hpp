#pragma once

#include "placerank/errors.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace placerank::detail {

using ordered_json = nlohmann::ordered_json;

inline ordered_json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    ordered_json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cannot parse " + path.string() + ": " + e.what());
    }
    return doc;
}

/// Writes text atomically (temp file + rename) so readers never observe a
/// partial document.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) {
            throw IoError("cannot open " + tmp.string() + " for writing");
        }
        out << text;
        if (!out) {
            throw IoError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

/// Serializes with 2-space indentation and writes atomically.
inline void write_json_atomic(const std::filesystem::path& path, const ordered_json& doc) {
    write_text_atomic(path, doc.dump(2) + "\n");
}

} // namespace placerank::detail
