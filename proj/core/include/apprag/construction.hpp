#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "apprag/alignment.hpp"
#include "apprag/corpus.hpp"
#include "apprag/llm.hpp"
#include "apprag/templates.hpp"

namespace apprag {

/// A real problem instance used by application matching.
struct ProblemInstance {
    std::string id;
    std::string text;
    std::optional<std::string> category;
};

std::vector<ProblemInstance> ingest_problems(std::istream& in, const std::string& source_name);
std::vector<ProblemInstance> load_problems(const std::filesystem::path& path);

/// Outcome of self-consistency voting over category labels. Samples that map
/// to no category land in an "abstain" bucket that can never win.
struct VoteResult {
    std::string label;
    std::map<std::string, int> tally;
    int total = 0;
    bool tie = false;
};

struct ConstructionConfig {
    std::string model;
    int n_samples = 5;
    double vote_temperature = 1.0;
    double relevance_threshold = 0.5;
    int max_attempts = 3;  // per-item retries for unparseable/empty replies
    std::vector<std::string> categories;
    std::map<std::string, std::string> category_overrides;  // review-file import
    int parallelism = 1;
};

struct ReportEntry {
    std::string id;
    std::string stage;   // classify | generate | category | select
    std::string reason;
};

/// One reviewable decision for the manual-refinement cycle: a tie-flagged or
/// low-agreement call, exported for editing and re-imported as an override.
struct ReviewEntry {
    std::string subject_id;  // problem or knowledge id
    std::string decided_label;
    std::string flag;
};

void save_report(const std::vector<ReportEntry>& entries, const std::filesystem::path& path);
std::vector<ReportEntry> load_report(const std::filesystem::path& path);
void save_review(const std::vector<ReviewEntry>& entries, const std::filesystem::path& path);
/// subject_id -> decided_label, for ConstructionConfig::category_overrides.
std::map<std::string, std::string> load_review_overrides(const std::filesystem::path& path);

/// Append-only store of per-unit results keyed (stage, id). A run that was
/// interrupted resumes by replaying finished units from here instead of
/// calling the provider again; payloads are serialized JSON.
class CheckpointStore {
public:
    explicit CheckpointStore(std::filesystem::path dir);
    std::optional<std::string> get(const std::string& stage, const std::string& id) const;
    void put(const std::string& stage, const std::string& id, const std::string& payload_json);
    std::size_t size() const;
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::filesystem::path file_;
    std::map<std::pair<std::string, std::string>, std::string> cache_;
    mutable std::mutex mutex_;
};

/// Asks the provider to label one knowledge item conceptual or procedural.
/// Returns Kind::unclassified when no attempt yielded a parseable label.
Kind classify_kind(const KnowledgeItem& item, Gateway& gateway, const TemplateEngine& templates,
                   const ConstructionConfig& config);

/// Generates one application for a classified item, appends it to the corpus
/// and records the link at confidence 1.0. Returns nullopt (and leaves the
/// corpus untouched) when the provider kept answering empty.
std::optional<ApplicationItem> generate_application(const KnowledgeItem& item, Gateway& gateway,
                                                    const TemplateEngine& templates,
                                                    const ConstructionConfig& config,
                                                    const KnowledgeCorpus& knowledge,
                                                    ApplicationCorpus& applications,
                                                    AlignmentStore& store);

/// Samples the provider n times at the given temperature and majority-votes
/// the replies onto the category list. Ties are flagged and broken by
/// ascending label.
VoteResult vote_category(const std::string& text, const std::vector<std::string>& categories,
                         Gateway& gateway, const TemplateEngine& templates,
                         const std::string& model, int n_samples, double temperature);

struct RelevanceSelection {
    std::vector<std::pair<std::string, double>> selected;  // (knowledge id, vote share)
    std::map<std::string, double> shares;                  // every mentioned candidate
    std::vector<std::string> invalid_ids;                  // tokens outside the candidate set
};

/// Vote share per candidate knowledge item = mentions / n_samples; keeps ids
/// at or above the relevance threshold, ordered by share descending then id.
RelevanceSelection select_relevant(const ProblemInstance& problem,
                                   const std::vector<const KnowledgeItem*>& candidates,
                                   Gateway& gateway, const TemplateEngine& templates,
                                   const ConstructionConfig& config);

enum class BuildMode { generate, match, hybrid };

std::string to_string(BuildMode mode);
std::optional<BuildMode> build_mode_from_string(std::string_view s);

struct BuildOutputs {
    KnowledgeCorpus knowledge;  // input corpus with kinds/categories filled in
    ApplicationCorpus applications;
    AlignmentStore store;
    std::vector<ReportEntry> report;
    std::vector<ReviewEntry> review;
    CoverageResult coverage_before;  // after matching, before supplementation
    CoverageResult coverage_after;
};

/// Builds the application corpus. generate: one generated application per
/// classifiable item. match: category-align problems and knowledge, then
/// relevance-select within each category. hybrid: match first, then generate
/// for every still-unmatched item so coverage ends at 1.0.
BuildOutputs build_application_corpus(const KnowledgeCorpus& knowledge,
                                      const std::vector<ProblemInstance>* problems,
                                      BuildMode mode, Gateway& gateway,
                                      const TemplateEngine& templates,
                                      const ConstructionConfig& config,
                                      CheckpointStore* checkpoint = nullptr);

/// Unit keys (stage:id) that a finished run would have checkpointed but this
/// checkpoint lacks; used to report what an interrupted run left undone.
std::vector<std::string> incomplete_units(const KnowledgeCorpus& knowledge,
                                          const std::vector<ProblemInstance>* problems,
                                          BuildMode mode, const CheckpointStore& checkpoint);

}  // namespace apprag
