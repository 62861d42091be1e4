#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

namespace attnlab {

using Json = nlohmann::ordered_json;

// Serializes with every float written as %.17g so 64-bit values roundtrip
// bit-exactly. Non-finite floats are rejected.
std::string dump_json(const Json& doc, bool pretty = false);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// Parses a file; syntax errors surface as ErrorKind::format.
Json read_json(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace attnlab
