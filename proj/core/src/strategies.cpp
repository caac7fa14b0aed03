#include "apprag/strategies.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "apprag/errors.hpp"

namespace apprag {

std::string to_string(StrategyBase base) {
    switch (base) {
        case StrategyBase::rag: return "rag";
        case StrategyBase::afrag: return "afrag";
        case StrategyBase::rerank: return "rerank";
        default: return "graph-adapter";
    }
}

std::optional<StrategyBase> strategy_base_from_string(std::string_view s) {
    if (s == "rag") return StrategyBase::rag;
    if (s == "afrag") return StrategyBase::afrag;
    if (s == "rerank") return StrategyBase::rerank;
    if (s == "graph-adapter" || s == "graph_adapter") return StrategyBase::graph_adapter;
    return std::nullopt;
}

std::string to_string(Augmentation aug) {
    switch (aug) {
        case Augmentation::plain: return "plain";
        case Augmentation::application_only: return "app-only";
        default: return "plus";
    }
}

std::optional<Augmentation> augmentation_from_string(std::string_view s) {
    if (s == "plain") return Augmentation::plain;
    if (s == "app-only" || s == "application_only") return Augmentation::application_only;
    if (s == "plus") return Augmentation::plus;
    return std::nullopt;
}

void StrategyConfig::validate() const {
    if (k_retrieve < 1) throw UsageError("k_retrieve must be >= 1");
    if (base == StrategyBase::rerank && k_rerank_pool < k_retrieve) {
        throw UsageError("k_rerank_pool must be >= k_retrieve");
    }
    if (app_cap < 0) throw UsageError("app_cap must be >= 0");
    if (max_rerank_attempts < 1) throw UsageError("max_rerank_attempts must be >= 1");
}

std::string strategy_name(const StrategyConfig& config) {
    std::string name = config.base == StrategyBase::graph_adapter ? "graph" : to_string(config.base);
    switch (config.augmentation) {
        case Augmentation::plus: return name + "+";
        case Augmentation::application_only: return name + "-";
        default: return name;
    }
}

std::string render_options(const std::vector<LabeledOption>& options) {
    std::string out;
    for (std::size_t i = 0; i < options.size(); ++i) {
        if (i > 0) out += '\n';
        out += options[i].label + ". " + options[i].text;
    }
    return out;
}

std::string retrieval_query(const std::string& question,
                            const std::vector<LabeledOption>& options) {
    std::string query = question;
    if (!options.empty()) {
        query += '\n';
        query += render_options(options);
    }
    return query;
}

namespace {

void require(bool condition, const char* what) {
    if (!condition) throw UsageError(what);
}

void check_context(const StrategyConfig& config, const StrategyContext& ctx) {
    require(ctx.index != nullptr, "strategy context lacks an index");
    require(ctx.templates != nullptr, "strategy context lacks a template engine");
    if (config.augmentation != Augmentation::plain) {
        require(ctx.knowledge != nullptr, "augmented strategies need the knowledge corpus");
        require(ctx.applications != nullptr, "augmented strategies need the application corpus");
        require(ctx.store != nullptr, "augmented strategies need the alignment store");
    }
    if (config.base == StrategyBase::afrag || config.base == StrategyBase::rerank) {
        require(ctx.gateway != nullptr, "this strategy needs a gateway");
        require(!config.model.empty(), "this strategy needs config.model");
    }
    if (config.base == StrategyBase::graph_adapter) {
        require(ctx.knowledge != nullptr, "graph adapter needs the knowledge corpus");
    }
}

std::string template_for(Augmentation aug) {
    switch (aug) {
        case Augmentation::plus: return "answer_plus";
        case Augmentation::application_only: return "answer_app_only";
        default: return "answer_plain";
    }
}

/// Attaches applications, picks the template, renders. Expects knowledge_ids
/// and knowledge_slots to be filled in already.
void finalize_bundle(PromptBundle& bundle, const StrategyConfig& config,
                     const StrategyContext& ctx) {
    if (config.augmentation == Augmentation::plain) {
        bundle.application_slots.clear();
    } else {
        bundle.application_slots =
            attach_applications(bundle.knowledge_ids, *ctx.knowledge, *ctx.applications,
                                *ctx.store, config.augmentation, config.app_cap);
    }
    if (config.augmentation == Augmentation::application_only) {
        bundle.knowledge_slots.clear();
    }
    bundle.template_id = template_for(config.augmentation);
    bundle.rendered = assemble_prompt(*ctx.templates, bundle.template_id, bundle.question,
                                      bundle.options, bundle.knowledge_slots,
                                      bundle.application_slots);
}

void fill_from_result(PromptBundle& bundle, const RetrievalResult& result, const Index& index) {
    for (const auto& scored : result.ranked) {
        bundle.knowledge_ids.push_back(scored.knowledge_id);
        bundle.knowledge_slots.push_back(index.entries().at(scored.chunk_id).text);
    }
}

}  // namespace

std::vector<std::vector<std::string>> attach_applications(
    const std::vector<std::string>& knowledge_ids, const KnowledgeCorpus& knowledge,
    const ApplicationCorpus& applications, const AlignmentStore& store, Augmentation mode,
    int app_cap) {
    if (mode == Augmentation::plain) return {};
    std::vector<std::vector<std::string>> slots;
    slots.reserve(knowledge_ids.size());
    for (const auto& id : knowledge_ids) {
        std::vector<std::string> slot;
        if (!id.empty()) {
            for (const auto& app : store.applications_for(knowledge, applications, id, app_cap)) {
                slot.push_back(app.text);
            }
        }
        slots.push_back(std::move(slot));
    }
    return slots;
}

std::string assemble_prompt(const TemplateEngine& templates, const std::string& template_id,
                            const std::string& question,
                            const std::vector<LabeledOption>& options,
                            const std::vector<std::string>& knowledge_slots,
                            const std::vector<std::vector<std::string>>& application_slots) {
    RenderContext context;
    context.scalars["question"] = question;
    context.scalars["options"] = render_options(options);

    std::vector<TemplateItem> knowledge_items;
    knowledge_items.reserve(knowledge_slots.size());
    std::vector<TemplateItem> flat_applications;
    for (std::size_t i = 0; i < knowledge_slots.size(); ++i) {
        TemplateItem item;
        item.text = knowledge_slots[i];
        std::vector<TemplateItem> apps;
        if (i < application_slots.size()) {
            for (const auto& text : application_slots[i]) apps.push_back({text, {}, {}});
        }
        item.children["applications"] = std::move(apps);
        knowledge_items.push_back(std::move(item));
    }
    for (const auto& slot : application_slots) {
        for (const auto& text : slot) flat_applications.push_back({text, {}, {}});
    }
    context.sections["knowledge"] = std::move(knowledge_items);
    context.sections["applications"] = std::move(flat_applications);
    return templates.render(template_id, context);
}

PromptBundle run_rag(const std::string& question, const std::vector<LabeledOption>& options,
                     const StrategyConfig& config, const StrategyContext& ctx) {
    config.validate();
    check_context(config, ctx);
    PromptBundle bundle;
    bundle.question = question;
    bundle.options = options;
    const auto result = search(*ctx.index, retrieval_query(question, options), config.k_retrieve);
    fill_from_result(bundle, result, *ctx.index);
    finalize_bundle(bundle, config, ctx);
    return bundle;
}

PromptBundle run_afrag(const std::string& question, const std::vector<LabeledOption>& options,
                       const StrategyConfig& config, const StrategyContext& ctx) {
    config.validate();
    check_context(config, ctx);

    std::string preliminary;
    try {
        RenderContext prelim_ctx;
        prelim_ctx.scalars["question"] = question;
        prelim_ctx.scalars["options"] = render_options(options);
        const std::string prompt = ctx.templates->render("preliminary", prelim_ctx);
        preliminary = ctx.gateway->complete(config.model, user_message(prompt));
    } catch (const ProviderError&) {
        preliminary.clear();
    }
    if (preliminary.find_first_not_of(" \t\r\n") == std::string::npos) {
        PromptBundle fallback = run_rag(question, options, config, ctx);
        fallback.degradations.push_back("afrag_fallback");
        return fallback;
    }

    PromptBundle bundle;
    bundle.question = question;
    bundle.options = options;
    const auto result = search(*ctx.index, preliminary, config.k_retrieve);
    fill_from_result(bundle, result, *ctx.index);
    finalize_bundle(bundle, config, ctx);
    return bundle;
}

std::vector<int> parse_rerank_reply(const std::string& reply, int pool_size) {
    auto is_separator = [](char c) {
        return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ',' || c == ';' ||
               c == '.';
    };
    std::size_t i = 0;
    const std::size_t n = reply.size();
    while (i < n) {
        // Find the start of a digit run.
        while (i < n && !std::isdigit(static_cast<unsigned char>(reply[i]))) ++i;
        if (i >= n) break;
        // Expand over digits and separators.
        std::vector<int> run;
        std::set<int> seen;
        while (i < n) {
            if (std::isdigit(static_cast<unsigned char>(reply[i]))) {
                long value = 0;
                while (i < n && std::isdigit(static_cast<unsigned char>(reply[i]))) {
                    if (value <= pool_size) value = value * 10 + (reply[i] - '0');
                    ++i;
                }
                if (value >= 1 && value <= pool_size && seen.insert(static_cast<int>(value)).second) {
                    run.push_back(static_cast<int>(value));
                }
            } else if (is_separator(reply[i])) {
                ++i;
            } else {
                break;
            }
        }
        if (!run.empty()) return run;
    }
    return {};
}

PromptBundle run_rerank(const std::string& question, const std::vector<LabeledOption>& options,
                        const StrategyConfig& config, const StrategyContext& ctx) {
    config.validate();
    check_context(config, ctx);

    PromptBundle bundle;
    bundle.question = question;
    bundle.options = options;

    const auto pool =
        search(*ctx.index, retrieval_query(question, options), config.k_rerank_pool).ranked;
    if (pool.empty()) {
        finalize_bundle(bundle, config, ctx);
        return bundle;
    }

    RenderContext rerank_ctx;
    rerank_ctx.scalars["question"] = question;
    rerank_ctx.scalars["options"] = render_options(options);
    std::vector<TemplateItem> candidates;
    candidates.reserve(pool.size());
    for (const auto& scored : pool) {
        candidates.push_back({ctx.index->entries().at(scored.chunk_id).text, {}, {}});
    }
    rerank_ctx.sections["candidates"] = std::move(candidates);
    Messages messages = user_message(ctx.templates->render("rerank", rerank_ctx));

    const int needed = std::min<int>(config.k_retrieve, static_cast<int>(pool.size()));
    std::vector<int> order;
    for (int attempt = 1; attempt <= config.max_rerank_attempts; ++attempt) {
        bundle.rerank_attempts = attempt;
        std::string reply;
        try {
            reply = ctx.gateway->complete(config.model, messages);
        } catch (const ProviderError&) {
            reply.clear();
        }
        auto parsed = parse_rerank_reply(reply, static_cast<int>(pool.size()));
        if (static_cast<int>(parsed.size()) >= needed) {
            order = std::move(parsed);
            break;
        }
        if (attempt < config.max_rerank_attempts) {
            messages.push_back({"assistant", reply});
            messages.push_back({"user",
                                "That reply could not be parsed. Respond with the candidate "
                                "numbers only, comma-separated, most relevant first."});
        }
    }

    if (order.empty()) {
        // Never compliant: keep the similarity order and record the degradation.
        for (int i = 0; i < needed; ++i) order.push_back(i + 1);
        bundle.degradations.push_back("rerank_fallback");
    }
    if (static_cast<int>(order.size()) > config.k_retrieve) {
        order.resize(static_cast<std::size_t>(config.k_retrieve));
    }
    for (int position : order) {
        const auto& scored = pool[static_cast<std::size_t>(position - 1)];
        bundle.knowledge_ids.push_back(scored.knowledge_id);
        bundle.knowledge_slots.push_back(ctx.index->entries().at(scored.chunk_id).text);
    }
    finalize_bundle(bundle, config, ctx);
    return bundle;
}

PromptBundle adapt_graph_output(const std::vector<std::string>& external_blocks,
                                const std::string& question,
                                const std::vector<LabeledOption>& options,
                                const StrategyConfig& config, const StrategyContext& ctx) {
    config.validate();
    check_context(config, ctx);
    if (external_blocks.empty()) {
        throw UsageError("graph adapter requires at least one external context block");
    }

    PromptBundle bundle;
    bundle.question = question;
    bundle.options = options;
    for (const auto& block : external_blocks) {
        bundle.knowledge_ids.emplace_back();
        bundle.knowledge_slots.push_back(block);
    }

    // Fuzzy-match every block back to the corpus; each matched item joins the
    // knowledge slots once, in first-match order, in every augmentation mode.
    std::vector<std::string> matched;
    std::set<std::string> seen;
    for (const auto& block : external_blocks) {
        if (auto match = fuzzy_match(*ctx.index, block, config.fuzzy_match_threshold)) {
            if (seen.insert(match->knowledge_id).second) matched.push_back(match->knowledge_id);
        }
    }
    for (const auto& id : matched) {
        bundle.knowledge_ids.push_back(id);
        bundle.knowledge_slots.push_back(ctx.knowledge->at(id).text);
    }
    finalize_bundle(bundle, config, ctx);
    return bundle;
}

PromptBundle run_strategy(const std::string& question, const std::vector<LabeledOption>& options,
                          const StrategyConfig& config, const StrategyContext& ctx,
                          const std::vector<std::string>* external_blocks) {
    switch (config.base) {
        case StrategyBase::rag: return run_rag(question, options, config, ctx);
        case StrategyBase::afrag: return run_afrag(question, options, config, ctx);
        case StrategyBase::rerank: return run_rerank(question, options, config, ctx);
        case StrategyBase::graph_adapter:
            if (!external_blocks) {
                throw UsageError("graph adapter strategy requires external context blocks");
            }
            return adapt_graph_output(*external_blocks, question, options, config, ctx);
    }
    throw UsageError("unknown strategy base");
}

}  // namespace apprag
