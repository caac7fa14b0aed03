#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace apprag::jsonl {

/// Parses a line-delimited JSON stream. `fn` receives the 1-based line number
/// and the parsed object. Blank lines are skipped; a line that fails to parse
/// or is not a JSON object raises ParseError naming `source` and the line.
void for_each(std::istream& in, const std::string& source,
              const std::function<void(std::size_t, const nlohmann::json&)>& fn);

void for_each_file(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const nlohmann::json&)>& fn);

std::vector<nlohmann::json> read_file(const std::filesystem::path& path);

/// Writes one compact JSON object per line. The write is atomic: content goes
/// to a sibling temp file which is renamed over `path` on success.
void write_file(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

/// Appends a single record; used by append-only logs (eval records, checkpoints).
void append_record(const std::filesystem::path& path, const nlohmann::json& record);

}  // namespace apprag::jsonl
