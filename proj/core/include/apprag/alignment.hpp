#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "apprag/corpus.hpp"

namespace apprag {

enum class LinkMethod { generated, matched };

std::string to_string(LinkMethod method);
std::optional<LinkMethod> link_method_from_string(std::string_view s);

struct Link {
    std::string knowledge_id;
    std::string application_id;
    LinkMethod method = LinkMethod::generated;
    double confidence = 1.0;  // in [0, 1]
};

struct CoverageResult {
    double fraction = 1.0;
    std::vector<std::string> unmatched;  // sorted by id
};

/// The many-to-many mapping between knowledge items and application items,
/// established offline during construction and read-only at inference.
class AlignmentStore {
public:
    /// Adds a link after checking both ids against their corpora. Repeating
    /// an existing (knowledge_id, application_id) pair is a no-op.
    void link(const KnowledgeCorpus& knowledge, const ApplicationCorpus& applications,
              const std::string& knowledge_id, const std::string& application_id,
              LinkMethod method, double confidence);

    /// Applications aligned to one knowledge item, ordered by confidence
    /// descending then application id ascending, truncated to `cap`.
    std::vector<ApplicationItem> applications_for(const KnowledgeCorpus& knowledge,
                                                  const ApplicationCorpus& applications,
                                                  const std::string& knowledge_id,
                                                  int cap) const;

    /// Fraction of knowledge items with at least one link. An empty corpus
    /// counts as fully covered.
    CoverageResult coverage(const KnowledgeCorpus& knowledge) const;

    std::size_t degree(const std::string& knowledge_id) const;
    bool has_link(const std::string& knowledge_id, const std::string& application_id) const;
    std::size_t size() const { return links_.size(); }
    bool empty() const { return links_.empty(); }

    /// Links in deterministic order: (knowledge_id, application_id) ascending.
    std::vector<Link> links() const;

    void save(const std::filesystem::path& path) const;
    static AlignmentStore load(const std::filesystem::path& path,
                               const KnowledgeCorpus& knowledge,
                               const ApplicationCorpus& applications);

private:
    // keyed (knowledge_id, application_id); std::map keeps output deterministic
    std::map<std::pair<std::string, std::string>, Link> links_;
};

}  // namespace apprag
