#include "apprag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <set>

#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/jsonl.hpp"

namespace apprag {

double dot(const SparseVector& a, const SparseVector& b) {
    const SparseVector& small = a.size() <= b.size() ? a : b;
    const SparseVector& large = a.size() <= b.size() ? b : a;
    double sum = 0.0;
    for (const auto& [term, weight] : small) {
        auto it = large.find(term);
        if (it != large.end()) sum += weight * it->second;
    }
    return sum;
}

double l2_norm(const SparseVector& v) {
    double sum = 0.0;
    for (const auto& [term, weight] : v) sum += weight * weight;
    return std::sqrt(sum);
}

void l2_normalize(SparseVector& v) {
    const double norm = l2_norm(v);
    if (norm == 0.0) return;
    for (auto& [term, weight] : v) weight /= norm;
}

std::string normalize_term(std::string_view token) {
    static constexpr std::string_view kPunct = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
    std::size_t begin = 0;
    std::size_t end = token.size();
    while (begin < end && kPunct.find(token[begin]) != std::string_view::npos) ++begin;
    while (end > begin && kPunct.find(token[end - 1]) != std::string_view::npos) --end;
    std::string out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        char c = token[i];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        out.push_back(c);
    }
    return out;
}

std::vector<std::string> index_terms(std::string_view text, const Tokenizer& tokenizer) {
    std::vector<std::string> terms;
    for (const auto& span : tokenizer.spans(text)) {
        auto term = normalize_term(text.substr(span.begin, span.end - span.begin));
        if (!term.empty()) terms.push_back(std::move(term));
    }
    return terms;
}

TfIdfVectorizer::TfIdfVectorizer(std::map<std::string, std::size_t> document_frequency,
                                 std::size_t doc_count, const Tokenizer& tokenizer)
    : df_(std::move(document_frequency)), doc_count_(doc_count), tokenizer_(&tokenizer) {}

SparseVector TfIdfVectorizer::vectorize(const std::string& text) const {
    std::map<std::string, int> tf;
    for (auto& term : index_terms(text, *tokenizer_)) ++tf[term];

    SparseVector v;
    for (const auto& [term, count] : tf) {
        auto it = df_.find(term);
        if (it == df_.end() || it->second == 0) continue;
        const double idf =
            std::log(static_cast<double>(doc_count_) / static_cast<double>(it->second));
        const double weight = static_cast<double>(count) * idf;
        if (weight != 0.0) v.emplace(term, weight);
    }
    l2_normalize(v);
    return v;
}

namespace {

void check_unique_chunk_ids(const std::vector<Chunk>& chunks) {
    std::map<std::string, int> seen;
    for (const auto& chunk : chunks) {
        if (++seen[chunk.chunk_id()] > 1) {
            throw UsageError("duplicate chunk id '" + chunk.chunk_id() + "'");
        }
    }
}

}  // namespace

Index build_index(const std::vector<Chunk>& chunks, const Tokenizer& tokenizer) {
    check_unique_chunk_ids(chunks);
    Index index;
    index.tag_ = TfIdfVectorizer::kTag;

    for (const auto& chunk : chunks) {
        std::map<std::string, int> tf;
        for (auto& term : index_terms(chunk.text, tokenizer)) ++tf[term];
        for (const auto& [term, count] : tf) ++index.vocab_[term];
    }

    auto vectorizer =
        std::make_shared<TfIdfVectorizer>(index.vocab_, chunks.size(), tokenizer);
    for (const auto& chunk : chunks) {
        index.entries_.emplace(
            chunk.chunk_id(),
            IndexEntry{chunk.parent_id, chunk.text, vectorizer->vectorize(chunk.text)});
    }
    index.vectorizer_ = std::move(vectorizer);
    return index;
}

Index build_index(const std::vector<Chunk>& chunks, std::shared_ptr<const Vectorizer> vectorizer) {
    check_unique_chunk_ids(chunks);
    Index index;
    index.tag_ = vectorizer->tag();
    for (const auto& chunk : chunks) {
        SparseVector v = vectorizer->vectorize(chunk.text);
        l2_normalize(v);
        index.entries_.emplace(chunk.chunk_id(),
                               IndexEntry{chunk.parent_id, chunk.text, std::move(v)});
    }
    index.vectorizer_ = std::move(vectorizer);
    return index;
}

void Index::set_vectorizer(std::shared_ptr<const Vectorizer> vectorizer) {
    vectorizer_ = std::move(vectorizer);
}

const Vectorizer& Index::vectorizer() const {
    if (!vectorizer_) {
        throw UsageError("index has no query vectorizer bound (provider tag '" + tag_ + "')");
    }
    return *vectorizer_;
}

RetrievalResult search(const Index& index, const std::string& query, int k) {
    if (k < 0) throw UsageError("search k must be >= 0");
    RetrievalResult result;
    result.query_echo = query;
    if (k == 0 || index.doc_count() == 0) return result;

    const SparseVector query_vector = index.vectorizer().vectorize(query);

    std::vector<ScoredChunk> scored;
    scored.reserve(index.doc_count());
    for (const auto& [chunk_id, entry] : index.entries()) {
        scored.push_back({entry.knowledge_id, chunk_id, dot(query_vector, entry.vector)});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.chunk_id < b.chunk_id;
    });

    std::set<std::string> seen;
    for (auto& candidate : scored) {
        if (!seen.insert(candidate.knowledge_id).second) continue;
        result.ranked.push_back(std::move(candidate));
        if (result.ranked.size() == static_cast<std::size_t>(k)) break;
    }
    return result;
}

std::optional<ScoredChunk> fuzzy_match(const Index& index, const std::string& text,
                                       double threshold) {
    auto result = search(index, text, 1);
    if (result.ranked.empty() || result.ranked.front().score < threshold) return std::nullopt;
    return result.ranked.front();
}

namespace {

std::string double_bits_hex(double value) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, &value, sizeof(bits));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(bits));
    return buf;
}

double double_from_bits_hex(const std::string& hex) {
    const std::uint64_t bits = std::strtoull(hex.c_str(), nullptr, 16);
    double value = 0.0;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
}

}  // namespace

void save_index(const Index& index, const std::filesystem::path& path) {
    std::vector<nlohmann::json> records;
    records.push_back({{"type", "index"},
                       {"version", 1},
                       {"tag", index.tag_},
                       {"doc_count", index.entries_.size()}});
    for (const auto& [term, df] : index.vocab_) {
        records.push_back({{"type", "term"}, {"t", term}, {"df", df}});
    }
    for (const auto& [chunk_id, entry] : index.entries_) {
        nlohmann::json weights = nlohmann::json::object();
        for (const auto& [term, weight] : entry.vector) weights[term] = double_bits_hex(weight);
        records.push_back({{"type", "entry"},
                           {"chunk_id", chunk_id},
                           {"knowledge_id", entry.knowledge_id},
                           {"text", entry.text},
                           {"w", std::move(weights)}});
    }
    jsonl::write_file(path, records);
}

Index load_index(const std::filesystem::path& path, const Tokenizer& tokenizer) {
    Index index;
    bool header_seen = false;
    std::size_t declared_docs = 0;
    jsonl::for_each_file(path, [&](std::size_t line_no, const nlohmann::json& record) {
        const std::string where = path.string() + ":" + std::to_string(line_no);
        const auto type = record.value("type", std::string());
        if (type == "index") {
            header_seen = true;
            index.tag_ = record.value("tag", std::string());
            declared_docs = record.value("doc_count", std::size_t{0});
        } else if (type == "term") {
            index.vocab_[record.at("t").get<std::string>()] = record.at("df").get<std::size_t>();
        } else if (type == "entry") {
            IndexEntry entry;
            entry.knowledge_id = record.at("knowledge_id").get<std::string>();
            entry.text = record.value("text", std::string());
            for (const auto& [term, hex] : record.at("w").items()) {
                entry.vector.emplace(term, double_from_bits_hex(hex.get<std::string>()));
            }
            index.entries_.emplace(record.at("chunk_id").get<std::string>(), std::move(entry));
        } else {
            throw ParseError(where + ": unknown index record type '" + type + "'");
        }
    });
    if (!header_seen) throw ParseError(path.string() + ": missing index header record");
    if (declared_docs != index.entries_.size()) {
        throw ParseError(path.string() + ": doc_count mismatch");
    }
    if (index.tag_ == TfIdfVectorizer::kTag) {
        index.vectorizer_ = std::make_shared<TfIdfVectorizer>(index.vocab_,
                                                              index.entries_.size(), tokenizer);
    }
    return index;
}

ProviderVectorizer::ProviderVectorizer(std::shared_ptr<const EmbeddingProvider> provider)
    : provider_(std::move(provider)) {}

SparseVector ProviderVectorizer::vectorize(const std::string& text) const {
    const auto vectors = provider_->embed({text});
    if (vectors.size() != 1) {
        throw ProviderError("embedding provider returned " + std::to_string(vectors.size()) +
                            " vectors for 1 text");
    }
    SparseVector v;
    for (std::size_t i = 0; i < vectors[0].size(); ++i) {
        if (vectors[0][i] != 0.0) v.emplace("e" + std::to_string(i), vectors[0][i]);
    }
    l2_normalize(v);
    return v;
}

std::string ProviderVectorizer::tag() const { return provider_->tag(); }

}  // namespace apprag
