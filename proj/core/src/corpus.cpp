#include "apprag/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>

#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/jsonl.hpp"

namespace apprag {

std::string to_string(Kind kind) {
    switch (kind) {
        case Kind::conceptual: return "conceptual";
        case Kind::procedural: return "procedural";
        default: return "unclassified";
    }
}

std::optional<Kind> kind_from_string(std::string_view s) {
    if (s == "conceptual") return Kind::conceptual;
    if (s == "procedural") return Kind::procedural;
    if (s == "unclassified") return Kind::unclassified;
    return std::nullopt;
}

std::string to_string(AppOrigin origin) {
    return origin == AppOrigin::generated ? "generated" : "matched";
}

std::optional<AppOrigin> origin_from_string(std::string_view s) {
    if (s == "generated") return AppOrigin::generated;
    if (s == "matched") return AppOrigin::matched;
    return std::nullopt;
}

namespace detail {

template <typename Item>
void CorpusBase<Item>::add(Item item) {
    if (item.id.empty()) throw UsageError("corpus item with empty id");
    if (item.text.empty()) throw UsageError("corpus item '" + item.id + "' has empty text");
    if (by_id_.count(item.id)) throw UsageError("duplicate corpus id '" + item.id + "'");
    by_id_.emplace(item.id, items_.size());
    items_.push_back(std::move(item));
}

template <typename Item>
const Item* CorpusBase<Item>::find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &items_[it->second];
}

template <typename Item>
const Item& CorpusBase<Item>::at(const std::string& id) const {
    const Item* item = find(id);
    if (!item) throw UsageError("unknown corpus id '" + id + "'");
    return *item;
}

template <typename Item>
Item& CorpusBase<Item>::mutable_at(const std::string& id) {
    return const_cast<Item&>(at(id));
}

template class CorpusBase<KnowledgeItem>;
template class CorpusBase<ApplicationItem>;

}  // namespace detail

void KnowledgeCorpus::set_kind(const std::string& id, Kind kind) {
    mutable_at(id).kind = kind;
}

void KnowledgeCorpus::set_category(const std::string& id, std::string category) {
    mutable_at(id).category = std::move(category);
}

namespace {

std::string require_string(const nlohmann::json& record, const char* field,
                           const std::string& where) {
    if (!record.contains(field) || !record.at(field).is_string()) {
        throw ParseError(where + ": malformed record: missing string field '" +
                         field + "'");
    }
    return record.at(field).get<std::string>();
}

std::string at_line(const std::string& source, std::size_t line_no) {
    return source + ":" + std::to_string(line_no);
}

}  // namespace

KnowledgeCorpus ingest_knowledge(std::istream& in, const std::string& source_name) {
    KnowledgeCorpus corpus;
    jsonl::for_each(in, source_name, [&](std::size_t line_no, const nlohmann::json& record) {
        const std::string where = at_line(source_name, line_no);
        KnowledgeItem item;
        item.id = require_string(record, "id", where);
        item.text = require_string(record, "text", where);
        if (item.text.empty()) throw ParseError(where + ": malformed record: empty 'text'");
        if (record.contains("kind") && !record.at("kind").is_null()) {
            const auto kind_str = require_string(record, "kind", where);
            auto kind = kind_from_string(kind_str);
            if (!kind) throw ParseError(where + ": malformed record: unknown kind '" + kind_str + "'");
            item.kind = *kind;
        }
        if (record.contains("category") && !record.at("category").is_null()) {
            item.category = require_string(record, "category", where);
        }
        item.source = where;
        if (const KnowledgeItem* existing = corpus.find(item.id)) {
            throw ParseError("duplicate id '" + item.id + "' at " + where +
                             " (first seen at " + existing->source + ")");
        }
        corpus.add(std::move(item));
    });
    return corpus;
}

KnowledgeCorpus load_knowledge(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return ingest_knowledge(in, path.string());
}

void save_knowledge(const KnowledgeCorpus& corpus, const std::filesystem::path& path) {
    std::vector<nlohmann::json> records;
    records.reserve(corpus.size());
    for (const auto& item : corpus.items()) {
        nlohmann::json record{{"id", item.id}, {"text", item.text}};
        if (item.kind != Kind::unclassified) record["kind"] = to_string(item.kind);
        if (item.category) record["category"] = *item.category;
        records.push_back(std::move(record));
    }
    jsonl::write_file(path, records);
}

ApplicationCorpus ingest_applications(std::istream& in, const std::string& source_name) {
    ApplicationCorpus corpus;
    jsonl::for_each(in, source_name, [&](std::size_t line_no, const nlohmann::json& record) {
        const std::string where = at_line(source_name, line_no);
        ApplicationItem item;
        item.id = require_string(record, "id", where);
        item.text = require_string(record, "text", where);
        const auto origin_str = require_string(record, "origin", where);
        auto origin = origin_from_string(origin_str);
        if (!origin) throw ParseError(where + ": malformed record: unknown origin '" + origin_str + "'");
        item.origin = *origin;
        if (record.contains("source_problem_id") && !record.at("source_problem_id").is_null()) {
            item.source_problem_id = require_string(record, "source_problem_id", where);
        }
        if (item.origin == AppOrigin::matched && !item.source_problem_id) {
            throw ParseError(where + ": matched application '" + item.id +
                             "' lacks source_problem_id");
        }
        if (item.origin == AppOrigin::generated && item.source_problem_id) {
            throw ParseError(where + ": generated application '" + item.id +
                             "' must not carry source_problem_id");
        }
        if (corpus.contains(item.id)) {
            throw ParseError("duplicate id '" + item.id + "' at " + where);
        }
        corpus.add(std::move(item));
    });
    return corpus;
}

ApplicationCorpus load_applications(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return ingest_applications(in, path.string());
}

void save_applications(const ApplicationCorpus& corpus, const std::filesystem::path& path) {
    std::vector<nlohmann::json> records;
    records.reserve(corpus.size());
    for (const auto& item : corpus.items()) {
        nlohmann::json record{
            {"id", item.id}, {"text", item.text}, {"origin", to_string(item.origin)}};
        if (item.source_problem_id) record["source_problem_id"] = *item.source_problem_id;
        records.push_back(std::move(record));
    }
    jsonl::write_file(path, records);
}

namespace {

// True when the token closes a sentence: its last byte (ignoring trailing
// quotes/brackets) is sentence-final punctuation, ASCII or fullwidth.
bool sentence_final(std::string_view token) {
    static constexpr std::string_view kClosers = "\"')]}";
    std::size_t end = token.size();
    while (end > 0 && kClosers.find(token[end - 1]) != std::string_view::npos) --end;
    if (end == 0) return false;
    const char last = token[end - 1];
    if (last == '.' || last == '!' || last == '?') return true;
    if (end >= 3) {
        const std::string_view tail = token.substr(end - 3, 3);
        return tail == "\xE3\x80\x82" || tail == "\xEF\xBC\x81" || tail == "\xEF\xBC\x9F";
    }
    return false;
}

}  // namespace

std::vector<Chunk> chunk_item(const KnowledgeItem& item, const ChunkOptions& options,
                              const Tokenizer& tokenizer) {
    if (options.max_tokens < 1) throw UsageError("max_tokens must be >= 1");
    const std::string& text = item.text;
    const auto spans = tokenizer.spans(text);
    if (spans.empty()) return {};

    std::vector<int> weights(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        weights[i] = tokenizer.weight(
            std::string_view(text).substr(spans[i].begin, spans[i].end - spans[i].begin));
    }

    // First pass: split points in token space.
    struct Piece {
        std::size_t first_token;
        std::size_t end_token;  // exclusive
        int weight;
        bool oversize;
    };
    std::vector<Piece> pieces;
    std::size_t i = 0;
    while (i < spans.size()) {
        if (weights[i] > options.max_tokens) {
            pieces.push_back({i, i + 1, weights[i], true});
            ++i;
            continue;
        }
        std::size_t j = i;
        int budget = 0;
        while (j < spans.size() && weights[j] <= options.max_tokens &&
               budget + weights[j] <= options.max_tokens) {
            budget += weights[j];
            ++j;
        }
        if (j < spans.size()) {
            // Prefer a sentence boundary in the tail of the window.
            const auto window = static_cast<std::size_t>(
                std::ceil(options.max_tokens * (1.0 - options.boundary_window)));
            const std::size_t lo = i + std::max<std::size_t>(window, 1);
            for (std::size_t k = j; k > lo; --k) {
                const auto& span = spans[k - 1];
                if (sentence_final(std::string_view(text).substr(span.begin, span.end - span.begin))) {
                    budget = 0;
                    for (std::size_t t = i; t < k; ++t) budget += weights[t];
                    j = k;
                    break;
                }
            }
        }
        pieces.push_back({i, j, budget, false});
        i = j;
    }

    // Second pass: cut points in byte space so the chunks partition the text.
    std::vector<Chunk> chunks;
    chunks.reserve(pieces.size());
    for (std::size_t p = 0; p < pieces.size(); ++p) {
        const std::size_t begin = p == 0 ? 0 : spans[pieces[p].first_token].begin;
        const std::size_t end =
            p + 1 == pieces.size() ? text.size() : spans[pieces[p + 1].first_token].begin;
        Chunk chunk;
        chunk.parent_id = item.id;
        chunk.index = static_cast<int>(p);
        chunk.text = text.substr(begin, end - begin);
        chunk.token_count = pieces[p].weight;
        chunk.oversize = pieces[p].oversize;
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

std::vector<Chunk> chunk_corpus(const KnowledgeCorpus& corpus, const ChunkOptions& options,
                                const Tokenizer& tokenizer) {
    std::vector<Chunk> chunks;
    for (const auto& item : corpus.items()) {
        auto piece = chunk_item(item, options, tokenizer);
        chunks.insert(chunks.end(), std::make_move_iterator(piece.begin()),
                      std::make_move_iterator(piece.end()));
    }
    return chunks;
}

void save_chunks(const std::vector<Chunk>& chunks, const std::filesystem::path& path) {
    std::vector<nlohmann::json> records;
    records.reserve(chunks.size());
    for (const auto& chunk : chunks) {
        records.push_back({{"parent_id", chunk.parent_id},
                           {"index", chunk.index},
                           {"text", chunk.text},
                           {"token_count", chunk.token_count},
                           {"oversize", chunk.oversize}});
    }
    jsonl::write_file(path, records);
}

std::vector<Chunk> load_chunks(const std::filesystem::path& path) {
    std::vector<Chunk> chunks;
    jsonl::for_each_file(path, [&](std::size_t line_no, const nlohmann::json& record) {
        const std::string where = path.string() + ":" + std::to_string(line_no);
        Chunk chunk;
        chunk.parent_id = require_string(record, "parent_id", where);
        chunk.text = require_string(record, "text", where);
        chunk.index = record.value("index", 0);
        chunk.token_count = record.value("token_count", 0);
        chunk.oversize = record.value("oversize", false);
        chunks.push_back(std::move(chunk));
    });
    return chunks;
}

}  // namespace apprag
