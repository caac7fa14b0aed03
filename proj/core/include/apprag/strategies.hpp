#pragma once

#include <optional>
#include <string>
#include <vector>

#include "apprag/alignment.hpp"
#include "apprag/corpus.hpp"
#include "apprag/llm.hpp"
#include "apprag/retrieval.hpp"
#include "apprag/templates.hpp"

namespace apprag {

enum class StrategyBase { rag, afrag, rerank, graph_adapter };
enum class Augmentation { plain, application_only, plus };

std::string to_string(StrategyBase base);
std::optional<StrategyBase> strategy_base_from_string(std::string_view s);
std::string to_string(Augmentation aug);
std::optional<Augmentation> augmentation_from_string(std::string_view s);

struct LabeledOption {
    std::string label;
    std::string text;
};

struct StrategyConfig {
    StrategyBase base = StrategyBase::rag;
    Augmentation augmentation = Augmentation::plain;
    int k_retrieve = 3;
    int k_rerank_pool = 10;
    int app_cap = 2;
    int max_rerank_attempts = 3;
    double fuzzy_match_threshold = 0.5;
    std::string model;  // model used for strategy-internal calls (preliminary answer, rerank)

    void validate() const;
};

/// Display name: base plus "+" for application augmentation or "-" for
/// application-only retrieval ("rag", "rag+", "rag-", "afrag+", ...).
std::string strategy_name(const StrategyConfig& config);

/// A fully assembled prompt. In plus mode application_slots[i] holds only
/// applications aligned to knowledge_slots[i]; in application-only mode the
/// knowledge texts are dropped while the retrieved ids stay recorded.
struct PromptBundle {
    std::string question;
    std::vector<LabeledOption> options;
    std::vector<std::string> knowledge_ids;  // "" for external context blocks
    std::vector<std::string> knowledge_slots;
    std::vector<std::vector<std::string>> application_slots;
    std::string template_id;
    std::string rendered;
    std::vector<std::string> degradations;  // e.g. "afrag_fallback", "rerank_fallback"
    int rerank_attempts = 0;
};

/// Read-only dependencies shared by every strategy execution.
struct StrategyContext {
    const Index* index = nullptr;
    const KnowledgeCorpus* knowledge = nullptr;
    const ApplicationCorpus* applications = nullptr;
    const AlignmentStore* store = nullptr;
    const TemplateEngine* templates = nullptr;
    Gateway* gateway = nullptr;
};

std::string render_options(const std::vector<LabeledOption>& options);

/// Retrieval query for the question-driven strategies: the question plus its
/// answer options.
std::string retrieval_query(const std::string& question,
                            const std::vector<LabeledOption>& options);

/// Per-item application texts for the retrieved ids. plain -> empty; plus and
/// application_only -> one slot per id with up to `app_cap` aligned texts.
/// Empty ids (external context rows) yield empty slots.
std::vector<std::vector<std::string>> attach_applications(
    const std::vector<std::string>& knowledge_ids, const KnowledgeCorpus& knowledge,
    const ApplicationCorpus& applications, const AlignmentStore& store, Augmentation mode,
    int app_cap);

std::string assemble_prompt(const TemplateEngine& templates, const std::string& template_id,
                            const std::string& question,
                            const std::vector<LabeledOption>& options,
                            const std::vector<std::string>& knowledge_slots,
                            const std::vector<std::vector<std::string>>& application_slots);

PromptBundle run_rag(const std::string& question, const std::vector<LabeledOption>& options,
                     const StrategyConfig& config, const StrategyContext& ctx);

/// Two-stage: ask the model for a preliminary answer, retrieve with it, then
/// prompt with the original question and the retrieved context only.
PromptBundle run_afrag(const std::string& question, const std::vector<LabeledOption>& options,
                       const StrategyConfig& config, const StrategyContext& ctx);

/// Retrieve a pool, have the model reorder it, keep the top k_retrieve.
/// Non-compliant replies are re-prompted up to max_rerank_attempts; after
/// that the similarity order stands and the degradation is recorded.
PromptBundle run_rerank(const std::string& question, const std::vector<LabeledOption>& options,
                        const StrategyConfig& config, const StrategyContext& ctx);

/// Wraps externally produced context blocks (e.g. graph-retrieval output):
/// each block is fuzzy-matched back to the corpus, matched items join the
/// knowledge slots, and their aligned applications attach in plus mode.
PromptBundle adapt_graph_output(const std::vector<std::string>& external_blocks,
                                const std::string& question,
                                const std::vector<LabeledOption>& options,
                                const StrategyConfig& config, const StrategyContext& ctx);

/// Dispatch on config.base. graph_adapter requires `external_blocks`.
PromptBundle run_strategy(const std::string& question, const std::vector<LabeledOption>& options,
                          const StrategyConfig& config, const StrategyContext& ctx,
                          const std::vector<std::string>* external_blocks = nullptr);

/// Lenient reranker-output parser: returns the first maximal run of integers
/// (1-based candidate indices), out-of-range values dropped, duplicates kept
/// first-occurrence only. Empty when no run contains a valid index.
std::vector<int> parse_rerank_reply(const std::string& reply, int pool_size);

}  // namespace apprag
