#include "apprag/construction.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/jsonl.hpp"
#include "apprag/parallel.hpp"

namespace apprag {

namespace {

std::string trim(std::string_view s) {
    std::size_t begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    std::size_t end = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(begin, end - begin + 1));
}

std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string strip_wrapping_punct(std::string s) {
    static constexpr std::string_view kWrap = "\"'()[]{}*_.,:;!?";
    std::size_t begin = 0;
    std::size_t end = s.size();
    while (begin < end && kWrap.find(s[begin]) != std::string_view::npos) ++begin;
    while (end > begin && kWrap.find(s[end - 1]) != std::string_view::npos) --end;
    return s.substr(begin, end - begin);
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

/// Whole-word (boundary-checked) containment of `needle` in `haystack`.
bool contains_word(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return false;
    std::size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        const bool left_ok = pos == 0 || !is_word_char(haystack[pos - 1]);
        const std::size_t after = pos + needle.size();
        const bool right_ok = after >= haystack.size() || !is_word_char(haystack[after]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

}  // namespace

std::vector<ProblemInstance> ingest_problems(std::istream& in, const std::string& source_name) {
    std::vector<ProblemInstance> problems;
    std::set<std::string> seen;
    jsonl::for_each(in, source_name, [&](std::size_t line_no, const nlohmann::json& record) {
        const std::string where = source_name + ":" + std::to_string(line_no);
        ProblemInstance problem;
        if (!record.contains("id") || !record.at("id").is_string() ||
            !record.contains("text") || !record.at("text").is_string()) {
            throw ParseError(where + ": malformed problem record");
        }
        problem.id = record.at("id").get<std::string>();
        problem.text = record.at("text").get<std::string>();
        if (problem.text.empty()) throw ParseError(where + ": empty problem text");
        if (record.contains("category") && !record.at("category").is_null()) {
            problem.category = record.at("category").get<std::string>();
        }
        if (!seen.insert(problem.id).second) {
            throw ParseError("duplicate problem id '" + problem.id + "' at " + where);
        }
        problems.push_back(std::move(problem));
    });
    return problems;
}

std::vector<ProblemInstance> load_problems(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return ingest_problems(in, path.string());
}

void save_report(const std::vector<ReportEntry>& entries, const std::filesystem::path& path) {
    std::vector<ReportEntry> sorted = entries;
    std::sort(sorted.begin(), sorted.end(), [](const ReportEntry& a, const ReportEntry& b) {
        return std::tie(a.stage, a.id, a.reason) < std::tie(b.stage, b.id, b.reason);
    });
    std::vector<nlohmann::json> records;
    records.reserve(sorted.size());
    for (const auto& entry : sorted) {
        records.push_back({{"id", entry.id}, {"stage", entry.stage}, {"reason", entry.reason}});
    }
    jsonl::write_file(path, records);
}

std::vector<ReportEntry> load_report(const std::filesystem::path& path) {
    std::vector<ReportEntry> entries;
    jsonl::for_each_file(path, [&](std::size_t, const nlohmann::json& record) {
        entries.push_back({record.value("id", std::string()), record.value("stage", std::string()),
                           record.value("reason", std::string())});
    });
    return entries;
}

void save_review(const std::vector<ReviewEntry>& entries, const std::filesystem::path& path) {
    std::vector<ReviewEntry> sorted = entries;
    std::sort(sorted.begin(), sorted.end(), [](const ReviewEntry& a, const ReviewEntry& b) {
        return std::tie(a.subject_id, a.flag) < std::tie(b.subject_id, b.flag);
    });
    std::vector<nlohmann::json> records;
    records.reserve(sorted.size());
    for (const auto& entry : sorted) {
        records.push_back({{"subject_id", entry.subject_id},
                           {"decided_label", entry.decided_label},
                           {"flag", entry.flag}});
    }
    jsonl::write_file(path, records);
}

std::map<std::string, std::string> load_review_overrides(const std::filesystem::path& path) {
    std::map<std::string, std::string> overrides;
    jsonl::for_each_file(path, [&](std::size_t line_no, const nlohmann::json& record) {
        if (!record.contains("subject_id") || !record.contains("decided_label")) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": malformed review record");
        }
        overrides[record.at("subject_id").get<std::string>()] =
            record.at("decided_label").get<std::string>();
    });
    return overrides;
}

CheckpointStore::CheckpointStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    file_ = dir_ / "checkpoint.jsonl";
    if (std::filesystem::exists(file_)) {
        jsonl::for_each_file(file_, [&](std::size_t, const nlohmann::json& record) {
            cache_[{record.at("stage").get<std::string>(), record.at("id").get<std::string>()}] =
                record.at("payload").dump();
        });
    }
}

std::optional<std::string> CheckpointStore::get(const std::string& stage,
                                                const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = cache_.find({stage, id});
    if (it == cache_.end()) return std::nullopt;
    return it->second;
}

void CheckpointStore::put(const std::string& stage, const std::string& id,
                          const std::string& payload_json) {
    std::lock_guard lock(mutex_);
    if (cache_.count({stage, id})) return;
    nlohmann::json record{
        {"stage", stage}, {"id", id}, {"payload", nlohmann::json::parse(payload_json)}};
    jsonl::append_record(file_, record);
    cache_[{stage, id}] = payload_json;
}

std::size_t CheckpointStore::size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

namespace {

/// Serves a unit result from the checkpoint or computes and records it.
nlohmann::json run_unit(CheckpointStore* checkpoint, const std::string& stage,
                        const std::string& id,
                        const std::function<nlohmann::json()>& compute) {
    if (checkpoint) {
        if (auto hit = checkpoint->get(stage, id)) return nlohmann::json::parse(*hit);
    }
    nlohmann::json result = compute();
    if (checkpoint) checkpoint->put(stage, id, result.dump());
    return result;
}

std::optional<Kind> parse_kind_reply(const std::string& reply) {
    const std::string lowered = lowercase(reply);
    const bool conceptual = contains_word(lowered, "conceptual");
    const bool procedural = contains_word(lowered, "procedural");
    if (conceptual == procedural) return std::nullopt;  // neither, or both
    return conceptual ? Kind::conceptual : Kind::procedural;
}

std::optional<std::string> map_sample_to_category(const std::string& sample,
                                                  const std::vector<std::string>& categories) {
    const std::string normalized = lowercase(strip_wrapping_punct(trim(sample)));
    for (const auto& category : categories) {
        if (normalized == lowercase(category)) return category;
    }
    const std::string lowered = lowercase(sample);
    std::optional<std::string> found;
    for (const auto& category : categories) {
        if (contains_word(lowered, lowercase(category))) {
            if (found) return std::nullopt;  // ambiguous mention
            found = category;
        }
    }
    return found;
}

}  // namespace

Kind classify_kind(const KnowledgeItem& item, Gateway& gateway, const TemplateEngine& templates,
                   const ConstructionConfig& config) {
    RenderContext context;
    context.scalars["text"] = item.text;
    const Messages messages = user_message(templates.render("classify_kind", context));
    for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
        const std::string reply = gateway.complete(config.model, messages, attempt);
        if (auto kind = parse_kind_reply(reply)) return *kind;
    }
    return Kind::unclassified;
}

namespace {

std::string generated_app_id(const std::string& knowledge_id) { return "app-g-" + knowledge_id; }
std::string matched_app_id(const std::string& problem_id) { return "app-m-" + problem_id; }

std::optional<std::string> generate_application_text(const KnowledgeItem& item, Gateway& gateway,
                                                     const TemplateEngine& templates,
                                                     const ConstructionConfig& config) {
    if (item.kind == Kind::unclassified) {
        throw UsageError("generate_application requires a classified item ('" + item.id + "')");
    }
    const std::string template_id =
        item.kind == Kind::conceptual ? "generate_conceptual" : "generate_procedural";
    RenderContext context;
    context.scalars["text"] = item.text;
    const Messages messages = user_message(templates.render(template_id, context));
    for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
        const std::string reply = gateway.complete(config.model, messages, attempt);
        if (!trim(reply).empty()) return reply;
    }
    return std::nullopt;
}

}  // namespace

std::optional<ApplicationItem> generate_application(const KnowledgeItem& item, Gateway& gateway,
                                                    const TemplateEngine& templates,
                                                    const ConstructionConfig& config,
                                                    const KnowledgeCorpus& knowledge,
                                                    ApplicationCorpus& applications,
                                                    AlignmentStore& store) {
    auto text = generate_application_text(item, gateway, templates, config);
    if (!text) return std::nullopt;
    ApplicationItem app;
    app.id = generated_app_id(item.id);
    app.text = *text;
    app.origin = AppOrigin::generated;
    applications.add(app);
    store.link(knowledge, applications, item.id, app.id, LinkMethod::generated, 1.0);
    return app;
}

VoteResult vote_category(const std::string& text, const std::vector<std::string>& categories,
                         Gateway& gateway, const TemplateEngine& templates,
                         const std::string& model, int n_samples, double temperature) {
    if (n_samples < 1) throw UsageError("vote_category requires n_samples >= 1");
    if (categories.empty()) throw UsageError("vote_category requires a non-empty category list");

    RenderContext context;
    context.scalars["text"] = text;
    std::string category_lines;
    for (const auto& category : categories) {
        if (!category_lines.empty()) category_lines += '\n';
        category_lines += "- " + category;
    }
    context.scalars["categories"] = category_lines;
    const Messages messages = user_message(templates.render("vote_category", context));

    const auto samples = gateway.sample_n(model, messages, n_samples,
                                          DecodingProfile::sampling(temperature));

    VoteResult result;
    result.total = n_samples;
    for (const auto& sample : samples) {
        auto category = map_sample_to_category(sample, categories);
        ++result.tally[category.value_or("abstain")];
    }

    std::vector<std::string> sorted = categories;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    int best = -1;
    for (const auto& category : sorted) {
        auto it = result.tally.find(category);
        const int count = it == result.tally.end() ? 0 : it->second;
        if (count > best) {
            best = count;
            result.label = category;
            result.tie = false;
        } else if (count == best) {
            result.tie = true;
        }
    }
    return result;
}

RelevanceSelection select_relevant(const ProblemInstance& problem,
                                   const std::vector<const KnowledgeItem*>& candidates,
                                   Gateway& gateway, const TemplateEngine& templates,
                                   const ConstructionConfig& config) {
    if (!problem.category) {
        throw UsageError("select_relevant requires problem '" + problem.id +
                         "' to carry a category");
    }
    RelevanceSelection selection;
    if (candidates.empty()) return selection;
    std::set<std::string> candidate_ids;
    for (const KnowledgeItem* candidate : candidates) {
        if (!candidate->category || *candidate->category != *problem.category) {
            throw UsageError("candidate '" + candidate->id + "' is not in category '" +
                             *problem.category + "'");
        }
        candidate_ids.insert(candidate->id);
    }

    RenderContext context;
    context.scalars["text"] = problem.text;
    std::vector<TemplateItem> rows;
    rows.reserve(candidates.size());
    for (const KnowledgeItem* candidate : candidates) {
        TemplateItem row;
        row.text = candidate->text;
        row.scalars["id"] = candidate->id;
        rows.push_back(std::move(row));
    }
    context.sections["candidates"] = std::move(rows);
    const Messages messages = user_message(templates.render("select_relevant", context));

    const auto samples = gateway.sample_n(config.model, messages, config.n_samples,
                                          DecodingProfile::sampling(config.vote_temperature));

    std::map<std::string, int> mentions;
    for (const auto& sample : samples) {
        std::set<std::string> in_this_sample;
        std::size_t start = 0;
        while (start <= sample.size()) {
            std::size_t end = sample.find_first_of(",;\n", start);
            if (end == std::string::npos) end = sample.size();
            const std::string token = strip_wrapping_punct(trim(sample.substr(start, end - start)));
            if (!token.empty()) {
                if (candidate_ids.count(token)) {
                    in_this_sample.insert(token);
                } else {
                    selection.invalid_ids.push_back(token);
                }
            }
            start = end + 1;
        }
        for (const auto& id : in_this_sample) ++mentions[id];
    }

    for (const auto& [id, count] : mentions) {
        selection.shares[id] = static_cast<double>(count) / static_cast<double>(config.n_samples);
    }
    for (const auto& [id, share] : selection.shares) {
        if (share >= config.relevance_threshold) selection.selected.emplace_back(id, share);
    }
    std::sort(selection.selected.begin(), selection.selected.end(),
              [](const auto& a, const auto& b) {
                  if (a.second != b.second) return a.second > b.second;
                  return a.first < b.first;
              });
    return selection;
}

std::string to_string(BuildMode mode) {
    switch (mode) {
        case BuildMode::generate: return "generate";
        case BuildMode::match: return "match";
        default: return "hybrid";
    }
}

std::optional<BuildMode> build_mode_from_string(std::string_view s) {
    if (s == "generate") return BuildMode::generate;
    if (s == "match") return BuildMode::match;
    if (s == "hybrid") return BuildMode::hybrid;
    return std::nullopt;
}

namespace {

/// Category for one subject: explicit value, review override, or vote.
/// Returns (label, review_entry_or_empty_flag).
struct CategoryDecision {
    std::string label;
    bool reviewable = false;
    std::string flag;
};

CategoryDecision decide_category(const std::string& subject_id,
                                 const std::optional<std::string>& existing,
                                 const std::string& text, const std::string& stage,
                                 Gateway& gateway, const TemplateEngine& templates,
                                 const ConstructionConfig& config,
                                 CheckpointStore* checkpoint) {
    CategoryDecision decision;
    auto override_it = config.category_overrides.find(subject_id);
    if (override_it != config.category_overrides.end()) {
        decision.label = override_it->second;
        return decision;
    }
    if (existing) {
        decision.label = *existing;
        return decision;
    }
    if (config.categories.empty()) {
        throw UsageError("category voting requires a configured category list");
    }
    const nlohmann::json payload = run_unit(checkpoint, stage, subject_id, [&] {
        const VoteResult vote =
            vote_category(text, config.categories, gateway, templates, config.model,
                          config.n_samples, config.vote_temperature);
        return nlohmann::json{{"label", vote.label}, {"tie", vote.tie}};
    });
    decision.label = payload.at("label").get<std::string>();
    if (payload.value("tie", false)) {
        decision.reviewable = true;
        decision.flag = "category_tie";
    }
    return decision;
}

struct GenerationOutcome {
    std::optional<std::string> text;
    std::string failure;  // reason when text is absent
    Kind kind = Kind::unclassified;
};

/// classify (when needed) + generate, both checkpointed.
GenerationOutcome run_generation_unit(const KnowledgeItem& item, Gateway& gateway,
                                      const TemplateEngine& templates,
                                      const ConstructionConfig& config,
                                      CheckpointStore* checkpoint) {
    GenerationOutcome outcome;
    outcome.kind = item.kind;
    if (outcome.kind == Kind::unclassified) {
        const nlohmann::json payload = run_unit(checkpoint, "classify", item.id, [&] {
            return nlohmann::json{{"kind", to_string(classify_kind(item, gateway, templates,
                                                                   config))}};
        });
        outcome.kind = *kind_from_string(payload.at("kind").get<std::string>());
        if (outcome.kind == Kind::unclassified) {
            outcome.failure = "unparseable kind after " + std::to_string(config.max_attempts) +
                              " attempts";
            return outcome;
        }
    }
    KnowledgeItem classified = item;
    classified.kind = outcome.kind;
    const nlohmann::json payload = run_unit(checkpoint, "generate", item.id, [&] {
        auto text = generate_application_text(classified, gateway, templates, config);
        if (!text) {
            return nlohmann::json{{"failed", "empty responses after " +
                                                 std::to_string(config.max_attempts) +
                                                 " attempts"}};
        }
        return nlohmann::json{{"text", *text}};
    });
    if (payload.contains("text")) {
        outcome.text = payload.at("text").get<std::string>();
    } else {
        outcome.failure = payload.value("failed", std::string("generation failed"));
    }
    return outcome;
}

}  // namespace

BuildOutputs build_application_corpus(const KnowledgeCorpus& knowledge,
                                      const std::vector<ProblemInstance>* problems,
                                      BuildMode mode, Gateway& gateway,
                                      const TemplateEngine& templates,
                                      const ConstructionConfig& config,
                                      CheckpointStore* checkpoint) {
    if (mode != BuildMode::generate && (problems == nullptr)) {
        throw UsageError("mode '" + to_string(mode) + "' requires a problem set");
    }

    BuildOutputs out;
    out.knowledge = knowledge;

    const auto& items = knowledge.items();

    if (mode == BuildMode::match || mode == BuildMode::hybrid) {
        // Category alignment: knowledge items first, then problems.
        std::vector<CategoryDecision> item_categories(items.size());
        parallel_for(items.size(), config.parallelism, [&](std::size_t i) {
            item_categories[i] = decide_category(items[i].id, items[i].category, items[i].text,
                                                 "kcat", gateway, templates, config, checkpoint);
        });
        for (std::size_t i = 0; i < items.size(); ++i) {
            out.knowledge.set_category(items[i].id, item_categories[i].label);
            if (item_categories[i].reviewable) {
                out.review.push_back(
                    {items[i].id, item_categories[i].label, item_categories[i].flag});
            }
        }

        std::vector<ProblemInstance> categorized = *problems;
        std::vector<CategoryDecision> problem_categories(categorized.size());
        parallel_for(categorized.size(), config.parallelism, [&](std::size_t i) {
            problem_categories[i] =
                decide_category(categorized[i].id, categorized[i].category, categorized[i].text,
                                "pcat", gateway, templates, config, checkpoint);
        });
        for (std::size_t i = 0; i < categorized.size(); ++i) {
            categorized[i].category = problem_categories[i].label;
            if (problem_categories[i].reviewable) {
                out.review.push_back(
                    {categorized[i].id, problem_categories[i].label, problem_categories[i].flag});
            }
        }

        std::map<std::string, std::vector<const KnowledgeItem*>> by_category;
        for (const auto& item : out.knowledge.items()) {
            by_category[*item.category].push_back(&item);
        }

        // Relevance selection within each category.
        std::vector<nlohmann::json> selections(categorized.size());
        parallel_for(categorized.size(), config.parallelism, [&](std::size_t i) {
            const ProblemInstance& problem = categorized[i];
            selections[i] = run_unit(checkpoint, "select", problem.id, [&] {
                auto group_it = by_category.find(*problem.category);
                if (group_it == by_category.end() || group_it->second.empty()) {
                    return nlohmann::json{{"no_candidates", true}};
                }
                const RelevanceSelection selection =
                    select_relevant(problem, group_it->second, gateway, templates, config);
                nlohmann::json selected = nlohmann::json::array();
                for (const auto& [id, share] : selection.selected) {
                    selected.push_back({{"id", id}, {"share", share}});
                }
                return nlohmann::json{{"selected", std::move(selected)},
                                      {"invalid", selection.invalid_ids},
                                      {"any_votes", !selection.shares.empty()}};
            });
        });

        for (std::size_t i = 0; i < categorized.size(); ++i) {
            const ProblemInstance& problem = categorized[i];
            const nlohmann::json& payload = selections[i];
            if (payload.value("no_candidates", false)) {
                out.report.push_back({problem.id, "select",
                                      "no knowledge in category '" + *problem.category + "'"});
                continue;
            }
            for (const auto& token : payload.value("invalid", std::vector<std::string>{})) {
                out.report.push_back(
                    {problem.id, "select", "provider listed unknown id '" + token + "'"});
            }
            const auto& selected = payload.at("selected");
            if (selected.empty()) {
                out.review.push_back({problem.id, *problem.category,
                                      payload.value("any_votes", false) ? "low_share"
                                                                        : "no_agreement"});
                continue;
            }
            ApplicationItem app;
            app.id = matched_app_id(problem.id);
            app.text = problem.text;
            app.origin = AppOrigin::matched;
            app.source_problem_id = problem.id;
            out.applications.add(app);
            for (const auto& row : selected) {
                out.store.link(out.knowledge, out.applications, row.at("id").get<std::string>(),
                               app.id, LinkMethod::matched, row.at("share").get<double>());
            }
        }
    }

    out.coverage_before = out.store.coverage(out.knowledge);

    if (mode == BuildMode::generate || mode == BuildMode::hybrid) {
        // In hybrid mode only the still-unmatched items get generated apps.
        std::vector<std::size_t> targets;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (mode == BuildMode::generate || out.store.degree(items[i].id) == 0) {
                targets.push_back(i);
            }
        }
        std::vector<GenerationOutcome> outcomes(targets.size());
        parallel_for(targets.size(), config.parallelism, [&](std::size_t t) {
            outcomes[t] = run_generation_unit(items[targets[t]], gateway, templates, config,
                                              checkpoint);
        });
        for (std::size_t t = 0; t < targets.size(); ++t) {
            const KnowledgeItem& item = items[targets[t]];
            const GenerationOutcome& outcome = outcomes[t];
            if (outcome.kind != Kind::unclassified) {
                out.knowledge.set_kind(item.id, outcome.kind);
            }
            if (!outcome.text) {
                out.report.push_back({item.id,
                                      outcome.kind == Kind::unclassified ? "classify" : "generate",
                                      outcome.failure});
                continue;
            }
            ApplicationItem app;
            app.id = generated_app_id(item.id);
            app.text = *outcome.text;
            app.origin = AppOrigin::generated;
            out.applications.add(app);
            out.store.link(out.knowledge, out.applications, item.id, app.id,
                           LinkMethod::generated, 1.0);
        }
    }

    out.coverage_after = out.store.coverage(out.knowledge);
    return out;
}

std::vector<std::string> incomplete_units(const KnowledgeCorpus& knowledge,
                                          const std::vector<ProblemInstance>* problems,
                                          BuildMode mode, const CheckpointStore& checkpoint) {
    std::vector<std::string> missing;
    auto want = [&](const std::string& stage, const std::string& id) {
        if (!checkpoint.get(stage, id)) missing.push_back(stage + ":" + id);
    };

    if (mode == BuildMode::match || mode == BuildMode::hybrid) {
        for (const auto& item : knowledge.items()) {
            if (!item.category) want("kcat", item.id);
        }
        if (problems) {
            for (const auto& problem : *problems) {
                if (!problem.category) want("pcat", problem.id);
                want("select", problem.id);
            }
        }
    }
    if (mode == BuildMode::generate) {
        for (const auto& item : knowledge.items()) {
            if (item.kind == Kind::unclassified) want("classify", item.id);
            want("generate", item.id);
        }
    } else if (mode == BuildMode::hybrid && problems) {
        // Supplement targets are knowable only once every selection ran.
        bool selections_done = true;
        std::set<std::string> matched;
        for (const auto& problem : *problems) {
            auto payload = checkpoint.get("select", problem.id);
            if (!payload) {
                selections_done = false;
                break;
            }
            const auto parsed = nlohmann::json::parse(*payload);
            if (parsed.contains("selected")) {
                for (const auto& row : parsed.at("selected")) {
                    matched.insert(row.at("id").get<std::string>());
                }
            }
        }
        if (selections_done) {
            for (const auto& item : knowledge.items()) {
                if (matched.count(item.id)) continue;
                if (item.kind == Kind::unclassified) want("classify", item.id);
                want("generate", item.id);
            }
        }
    }
    return missing;
}

}  // namespace apprag
