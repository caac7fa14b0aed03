#include "apprag/jsonl.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"

namespace apprag::jsonl {

namespace {

bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

void for_each(std::istream& in, const std::string& source,
              const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (blank(line)) continue;
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError(source + ":" + std::to_string(line_no) +
                             ": malformed record: " + ex.what());
        }
        if (!record.is_object()) {
            throw ParseError(source + ":" + std::to_string(line_no) +
                             ": malformed record: expected a JSON object");
        }
        fn(line_no, record);
    }
}

void for_each_file(const std::filesystem::path& path,
                   const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    for_each(in, path.string(), fn);
}

std::vector<nlohmann::json> read_file(const std::filesystem::path& path) {
    std::vector<nlohmann::json> records;
    for_each_file(path, [&](std::size_t, const nlohmann::json& record) { records.push_back(record); });
    return records;
}

void write_file(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        for (const auto& record : records) out << record.dump() << '\n';
        if (!out) throw IoError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

void append_record(const std::filesystem::path& path, const nlohmann::json& record) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot append to " + path.string());
    out << record.dump() << '\n';
    if (!out) throw IoError("append failed for " + path.string());
}

}  // namespace apprag::jsonl
