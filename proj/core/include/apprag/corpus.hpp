#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "apprag/tokenizer.hpp"

namespace apprag {

enum class Kind { unclassified, conceptual, procedural };

std::string to_string(Kind kind);
std::optional<Kind> kind_from_string(std::string_view s);

enum class AppOrigin { generated, matched };

std::string to_string(AppOrigin origin);
std::optional<AppOrigin> origin_from_string(std::string_view s);

/// One unit of the knowledge corpus.
struct KnowledgeItem {
    std::string id;
    std::string text;
    Kind kind = Kind::unclassified;
    std::optional<std::string> category;
    std::string source;  // provenance, "file:line"
};

/// One application example, either generated for a knowledge item or matched
/// from a real problem instance.
struct ApplicationItem {
    std::string id;
    std::string text;
    AppOrigin origin = AppOrigin::generated;
    std::optional<std::string> source_problem_id;  // present iff origin == matched
};

namespace detail {

template <typename Item>
class CorpusBase {
public:
    void add(Item item);
    bool contains(const std::string& id) const { return by_id_.count(id) != 0; }
    const Item* find(const std::string& id) const;
    const Item& at(const std::string& id) const;
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    const std::vector<Item>& items() const { return items_; }

protected:
    Item& mutable_at(const std::string& id);

private:
    std::vector<Item> items_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace detail

class KnowledgeCorpus : public detail::CorpusBase<KnowledgeItem> {
public:
    // Classification and category alignment run before the corpus is frozen
    // for inference; these are the only sanctioned mutations.
    void set_kind(const std::string& id, Kind kind);
    void set_category(const std::string& id, std::string category);
};

class ApplicationCorpus : public detail::CorpusBase<ApplicationItem> {};

/// Reads a line-delimited knowledge corpus from a stream. Fields per record:
/// `id`, `text`, optional `kind` (conceptual|procedural), optional `category`.
/// Duplicate ids are rejected with both sources named; malformed records are
/// rejected with their line number.
KnowledgeCorpus ingest_knowledge(std::istream& in, const std::string& source_name);
KnowledgeCorpus load_knowledge(const std::filesystem::path& path);
void save_knowledge(const KnowledgeCorpus& corpus, const std::filesystem::path& path);

ApplicationCorpus ingest_applications(std::istream& in, const std::string& source_name);
ApplicationCorpus load_applications(const std::filesystem::path& path);
void save_applications(const ApplicationCorpus& corpus, const std::filesystem::path& path);

/// One retrieval unit cut from a knowledge item. Chunks of one parent
/// partition the parent text exactly: concatenating them in order restores
/// the item byte for byte (inter-chunk whitespace rides along with the chunk
/// that precedes it).
struct Chunk {
    std::string parent_id;
    int index = 0;
    std::string text;
    int token_count = 0;
    bool oversize = false;  // a single token alone exceeded the budget

    std::string chunk_id() const { return parent_id + "#" + std::to_string(index); }
};

struct ChunkOptions {
    int max_tokens = 800;
    /// Fraction of the window, at its tail, searched for a sentence-final cut
    /// point before falling back to a hard cut.
    double boundary_window = 0.15;
};

std::vector<Chunk> chunk_item(const KnowledgeItem& item, const ChunkOptions& options,
                              const Tokenizer& tokenizer = default_tokenizer());
std::vector<Chunk> chunk_corpus(const KnowledgeCorpus& corpus, const ChunkOptions& options,
                                const Tokenizer& tokenizer = default_tokenizer());

void save_chunks(const std::vector<Chunk>& chunks, const std::filesystem::path& path);
std::vector<Chunk> load_chunks(const std::filesystem::path& path);

}  // namespace apprag
