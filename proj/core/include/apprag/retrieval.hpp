#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apprag/corpus.hpp"
#include "apprag/tokenizer.hpp"

namespace apprag {

/// term -> weight; std::map so iteration order is deterministic.
using SparseVector = std::map<std::string, double>;

double dot(const SparseVector& a, const SparseVector& b);
double l2_norm(const SparseVector& v);
void l2_normalize(SparseVector& v);

/// Lowercases ASCII letters and strips leading/trailing ASCII punctuation.
/// Returns the empty string when nothing survives.
std::string normalize_term(std::string_view token);

/// Index terms of a text under the given tokenizer (empty terms dropped).
std::vector<std::string> index_terms(std::string_view text, const Tokenizer& tokenizer);

/// Turns text into an L2-normalized vector. The built-in scheme is TF-IDF;
/// an external dense-embedding provider plugs in behind the same interface.
class Vectorizer {
public:
    virtual ~Vectorizer() = default;
    virtual SparseVector vectorize(const std::string& text) const = 0;
    virtual std::string tag() const = 0;
};

/// tf(term, doc) * ln(doc_count / df(term)), L2-normalized. Terms absent
/// from the vocabulary contribute nothing; a document whose every term
/// occurs in all documents vectorizes to the zero vector.
class TfIdfVectorizer final : public Vectorizer {
public:
    static constexpr const char* kTag = "tfidf.ln.l2";

    TfIdfVectorizer(std::map<std::string, std::size_t> document_frequency, std::size_t doc_count,
                    const Tokenizer& tokenizer = default_tokenizer());

    SparseVector vectorize(const std::string& text) const override;
    std::string tag() const override { return kTag; }

private:
    std::map<std::string, std::size_t> df_;
    std::size_t doc_count_;
    const Tokenizer* tokenizer_;
};

struct IndexEntry {
    std::string knowledge_id;
    std::string text;  // the chunk text, kept so prompts can quote what matched
    SparseVector vector;
};

struct ScoredChunk {
    std::string knowledge_id;
    std::string chunk_id;
    double score = 0.0;
};

struct RetrievalResult {
    std::vector<ScoredChunk> ranked;  // scores non-increasing; <= k entries
    std::string query_echo;
};

class Index {
public:
    std::size_t doc_count() const { return entries_.size(); }
    const std::string& provider_tag() const { return tag_; }
    const std::map<std::string, std::size_t>& vocabulary() const { return vocab_; }
    const std::map<std::string, IndexEntry>& entries() const { return entries_; }

    /// Binds the query-side vectorizer; required after loading an index that
    /// was built with an external provider.
    void set_vectorizer(std::shared_ptr<const Vectorizer> vectorizer);
    const Vectorizer& vectorizer() const;

private:
    friend Index build_index(const std::vector<Chunk>&, const Tokenizer&);
    friend Index build_index(const std::vector<Chunk>&, std::shared_ptr<const Vectorizer>);
    friend void save_index(const Index&, const std::filesystem::path&);
    friend Index load_index(const std::filesystem::path&, const Tokenizer&);

    std::map<std::string, IndexEntry> entries_;   // chunk_id -> entry
    std::map<std::string, std::size_t> vocab_;    // term -> document frequency
    std::string tag_;
    std::shared_ptr<const Vectorizer> vectorizer_;
};

/// Builds the default TF-IDF index. Chunk ids must be unique.
Index build_index(const std::vector<Chunk>& chunks,
                  const Tokenizer& tokenizer = default_tokenizer());

/// Builds an index with an external vectorizer (e.g. a dense embedder).
Index build_index(const std::vector<Chunk>& chunks, std::shared_ptr<const Vectorizer> vectorizer);

/// Exact top-k by cosine similarity. Ties break by ascending chunk id, and
/// results are deduplicated to one chunk per knowledge item (the best one)
/// before truncation to k.
RetrievalResult search(const Index& index, const std::string& query, int k);

/// Best-scoring knowledge item for `text`, or nullopt below the threshold.
std::optional<ScoredChunk> fuzzy_match(const Index& index, const std::string& text,
                                       double threshold = 0.5);

/// Round-trips bit-exactly: weights persist as IEEE-754 bit patterns.
void save_index(const Index& index, const std::filesystem::path& path);
Index load_index(const std::filesystem::path& path,
                 const Tokenizer& tokenizer = default_tokenizer());

/// Batch text embedding over the same wire-protocol family as the chat
/// gateway: request carries a text list, response an equal-length vector
/// list of fixed dimension.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) const = 0;
    virtual std::string tag() const = 0;
};

/// Adapts an EmbeddingProvider to the Vectorizer interface. Dimensions map
/// to synthetic terms "e0", "e1", ...; vectors are L2-normalized.
class ProviderVectorizer final : public Vectorizer {
public:
    explicit ProviderVectorizer(std::shared_ptr<const EmbeddingProvider> provider);
    SparseVector vectorize(const std::string& text) const override;
    std::string tag() const override;

private:
    std::shared_ptr<const EmbeddingProvider> provider_;
};

/// OpenAI-compatible /embeddings client; auth token read from `auth_env`.
std::shared_ptr<EmbeddingProvider> make_http_embedding_provider(const std::string& base_url,
                                                                const std::string& model,
                                                                const std::string& auth_env = "");

}  // namespace apprag
