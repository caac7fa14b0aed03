#include "apprag/alignment.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/jsonl.hpp"

namespace apprag {

std::string to_string(LinkMethod method) {
    return method == LinkMethod::generated ? "generated" : "matched";
}

std::optional<LinkMethod> link_method_from_string(std::string_view s) {
    if (s == "generated") return LinkMethod::generated;
    if (s == "matched") return LinkMethod::matched;
    return std::nullopt;
}

void AlignmentStore::link(const KnowledgeCorpus& knowledge, const ApplicationCorpus& applications,
                          const std::string& knowledge_id, const std::string& application_id,
                          LinkMethod method, double confidence) {
    if (!knowledge.contains(knowledge_id)) {
        throw UsageError("dangling link: unknown knowledge id '" + knowledge_id + "'");
    }
    if (!applications.contains(application_id)) {
        throw UsageError("dangling link: unknown application id '" + application_id + "'");
    }
    if (confidence < 0.0 || confidence > 1.0) {
        throw UsageError("link confidence must lie in [0, 1]");
    }
    links_.emplace(std::make_pair(knowledge_id, application_id),
                   Link{knowledge_id, application_id, method, confidence});
}

std::vector<ApplicationItem> AlignmentStore::applications_for(
    const KnowledgeCorpus& knowledge, const ApplicationCorpus& applications,
    const std::string& knowledge_id, int cap) const {
    if (!knowledge.contains(knowledge_id)) {
        throw UsageError("unknown knowledge id '" + knowledge_id + "'");
    }
    if (cap <= 0) return {};

    std::vector<const Link*> linked;
    auto it = links_.lower_bound({knowledge_id, std::string()});
    for (; it != links_.end() && it->first.first == knowledge_id; ++it) {
        linked.push_back(&it->second);
    }
    std::sort(linked.begin(), linked.end(), [](const Link* a, const Link* b) {
        if (a->confidence != b->confidence) return a->confidence > b->confidence;
        return a->application_id < b->application_id;
    });
    if (linked.size() > static_cast<std::size_t>(cap)) linked.resize(static_cast<std::size_t>(cap));

    std::vector<ApplicationItem> out;
    out.reserve(linked.size());
    for (const Link* link : linked) out.push_back(applications.at(link->application_id));
    return out;
}

CoverageResult AlignmentStore::coverage(const KnowledgeCorpus& knowledge) const {
    CoverageResult result;
    if (knowledge.empty()) return result;  // vacuously covered
    std::size_t linked = 0;
    for (const auto& item : knowledge.items()) {
        if (degree(item.id) > 0) {
            ++linked;
        } else {
            result.unmatched.push_back(item.id);
        }
    }
    std::sort(result.unmatched.begin(), result.unmatched.end());
    result.fraction = static_cast<double>(linked) / static_cast<double>(knowledge.size());
    return result;
}

std::size_t AlignmentStore::degree(const std::string& knowledge_id) const {
    std::size_t n = 0;
    auto it = links_.lower_bound({knowledge_id, std::string()});
    for (; it != links_.end() && it->first.first == knowledge_id; ++it) ++n;
    return n;
}

bool AlignmentStore::has_link(const std::string& knowledge_id,
                              const std::string& application_id) const {
    return links_.count({knowledge_id, application_id}) != 0;
}

std::vector<Link> AlignmentStore::links() const {
    std::vector<Link> out;
    out.reserve(links_.size());
    for (const auto& [key, link] : links_) out.push_back(link);
    return out;
}

void AlignmentStore::save(const std::filesystem::path& path) const {
    std::vector<nlohmann::json> records;
    records.reserve(links_.size());
    for (const auto& [key, link] : links_) {
        records.push_back({{"knowledge_id", link.knowledge_id},
                           {"application_id", link.application_id},
                           {"method", to_string(link.method)},
                           {"confidence", link.confidence}});
    }
    jsonl::write_file(path, records);
}

AlignmentStore AlignmentStore::load(const std::filesystem::path& path,
                                    const KnowledgeCorpus& knowledge,
                                    const ApplicationCorpus& applications) {
    AlignmentStore store;
    jsonl::for_each_file(path, [&](std::size_t line_no, const nlohmann::json& record) {
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (!record.contains("knowledge_id") || !record.contains("application_id")) {
            throw ParseError(where + ": malformed link record");
        }
        const auto method_str = record.value("method", std::string("generated"));
        auto method = link_method_from_string(method_str);
        if (!method) throw ParseError(where + ": unknown link method '" + method_str + "'");
        store.link(knowledge, applications, record.at("knowledge_id").get<std::string>(),
                   record.at("application_id").get<std::string>(), *method,
                   record.value("confidence", 1.0));
    });
    return store;
}

}  // namespace apprag
