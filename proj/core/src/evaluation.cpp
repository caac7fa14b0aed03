#include "apprag/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "apprag/errors.hpp"
#include "apprag/jsonl.hpp"
#include "apprag/parallel.hpp"

namespace apprag {

namespace {

std::string option_label(std::size_t index) {
    return std::string(1, static_cast<char>('A' + index));
}

char ascii_upper(char c) {
    return static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
}

std::string strip_wrapping(const std::string& token) {
    static constexpr std::string_view kWrap = "\"'()[]{}*_.,:;!<>";
    std::size_t begin = 0;
    std::size_t end = token.size();
    while (begin < end && kWrap.find(token[begin]) != std::string_view::npos) ++begin;
    while (end > begin && kWrap.find(token[end - 1]) != std::string_view::npos) --end;
    return token.substr(begin, end - begin);
}

}  // namespace

std::vector<McqItem> load_dataset(const std::filesystem::path& path) {
    std::vector<McqItem> items;
    std::set<std::string> seen;
    jsonl::for_each_file(path, [&](std::size_t line_no, const nlohmann::json& record) {
        const std::string where = path.string() + ":" + std::to_string(line_no);
        McqItem item;
        if (!record.contains("id") || !record.at("id").is_string() ||
            !record.contains("question") || !record.at("question").is_string() ||
            !record.contains("options") || !record.at("options").is_array() ||
            !record.contains("answer") || !record.at("answer").is_string()) {
            throw ParseError(where + ": malformed dataset record");
        }
        item.id = record.at("id").get<std::string>();
        item.question = record.at("question").get<std::string>();
        const auto& options = record.at("options");
        if (options.size() < 2) {
            throw ParseError(where + ": item '" + item.id + "' needs at least 2 options");
        }
        if (options.size() > 26) {
            throw ParseError(where + ": item '" + item.id + "' has more than 26 options");
        }
        for (std::size_t i = 0; i < options.size(); ++i) {
            if (!options[i].is_string()) {
                throw ParseError(where + ": item '" + item.id + "' has a non-string option");
            }
            item.options.push_back({option_label(i), options[i].get<std::string>()});
        }
        item.answer = record.at("answer").get<std::string>();
        const bool gold_exists = std::any_of(item.options.begin(), item.options.end(),
                                             [&](const LabeledOption& option) {
                                                 return option.label == item.answer;
                                             });
        if (!gold_exists) {
            throw ParseError(where + ": item '" + item.id + "': answer '" + item.answer +
                             "' is not among its options");
        }
        if (!seen.insert(item.id).second) {
            throw ParseError(where + ": duplicate item id '" + item.id + "'");
        }
        items.push_back(std::move(item));
    });
    return items;
}

namespace {

std::optional<std::string> label_for_token(const std::string& token,
                                           const std::vector<LabeledOption>& options) {
    const std::string stripped = strip_wrapping(token);
    if (stripped.size() != 1) return std::nullopt;
    const char letter = ascii_upper(stripped[0]);
    for (const auto& option : options) {
        if (option.label.size() == 1 && option.label[0] == letter) return option.label;
    }
    return std::nullopt;
}

/// Rule 1: the last "answer : X" marker anywhere in the text.
std::optional<std::string> marker_rule(const std::string& raw,
                                       const std::vector<LabeledOption>& options) {
    std::optional<std::string> last;
    const std::string lowered = [&] {
        std::string s = raw;
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    }();
    std::size_t pos = 0;
    while ((pos = lowered.find("answer", pos)) != std::string::npos) {
        std::size_t cursor = pos + 6;
        while (cursor < raw.size() && (raw[cursor] == ' ' || raw[cursor] == '*')) ++cursor;
        if (cursor < raw.size() && raw[cursor] == ':') {
            ++cursor;
            while (cursor < raw.size() &&
                   (raw[cursor] == ' ' || raw[cursor] == '*' || raw[cursor] == '\t')) {
                ++cursor;
            }
            std::size_t end = cursor;
            while (end < raw.size() && !std::isspace(static_cast<unsigned char>(raw[end]))) ++end;
            if (auto label = label_for_token(raw.substr(cursor, end - cursor), options)) {
                last = label;
            }
        }
        pos += 6;
    }
    return last;
}

std::string final_nonempty_line(const std::string& raw) {
    std::size_t end = raw.size();
    while (true) {
        while (end > 0 && (raw[end - 1] == '\n' || raw[end - 1] == '\r')) --end;
        if (end == 0) return {};
        std::size_t begin = raw.find_last_of('\n', end - 1);
        begin = begin == std::string::npos ? 0 : begin + 1;
        const std::string line = raw.substr(begin, end - begin);
        if (line.find_first_not_of(" \t\r") != std::string::npos) return line;
        end = begin;
    }
}

/// Rule 2: a standalone option letter on the final line.
std::optional<std::string> final_line_letter_rule(const std::string& line,
                                                  const std::vector<LabeledOption>& options) {
    std::istringstream stream(line);
    std::string token;
    while (stream >> token) {
        if (auto label = label_for_token(token, options)) return label;
    }
    return std::nullopt;
}

/// Rule 3: an option's full text appearing verbatim in the final line.
std::optional<std::string> final_line_text_rule(const std::string& line,
                                                const std::vector<LabeledOption>& options) {
    std::optional<std::string> best;
    std::size_t best_len = 0;
    for (const auto& option : options) {
        if (option.text.empty()) continue;
        if (line.find(option.text) != std::string::npos && option.text.size() > best_len) {
            best = option.label;
            best_len = option.text.size();
        }
    }
    return best;
}

}  // namespace

std::string extract_answer(const std::string& raw, const std::vector<LabeledOption>& options) {
    if (auto label = marker_rule(raw, options)) return *label;
    const std::string line = final_nonempty_line(raw);
    if (!line.empty()) {
        if (auto label = final_line_letter_rule(line, options)) return *label;
        if (auto label = final_line_text_rule(line, options)) return *label;
    }
    return kUnparsed;
}

namespace {

nlohmann::json record_to_json(const EvalRecord& record) {
    return {{"item_id", record.item_id},   {"strategy", record.strategy},
            {"run", record.run},           {"output", record.output},
            {"extracted", record.extracted}, {"correct", record.correct},
            {"degradations", record.degradations},
            {"rerank_attempts", record.rerank_attempts},
            {"errored", record.errored}};
}

EvalRecord record_from_json(const nlohmann::json& json) {
    EvalRecord record;
    record.item_id = json.at("item_id").get<std::string>();
    record.strategy = json.at("strategy").get<std::string>();
    record.run = json.at("run").get<int>();
    record.output = json.value("output", std::string());
    record.extracted = json.value("extracted", std::string(kUnparsed));
    record.correct = json.value("correct", false);
    record.degradations = json.value("degradations", std::vector<std::string>{});
    record.rerank_attempts = json.value("rerank_attempts", 0);
    record.errored = json.value("errored", false);
    return record;
}

}  // namespace

void append_eval_record(const std::filesystem::path& path, const EvalRecord& record) {
    jsonl::append_record(path, record_to_json(record));
}

std::vector<EvalRecord> load_eval_records(const std::filesystem::path& path) {
    std::vector<EvalRecord> records;
    jsonl::for_each_file(path, [&](std::size_t, const nlohmann::json& json) {
        records.push_back(record_from_json(json));
    });
    return records;
}

namespace {

EvalSummary summarize(const std::string& strategy, const std::vector<EvalRecord>& records,
                      int runs, std::size_t items) {
    if (records.size() != static_cast<std::size_t>(runs) * items) {
        throw Error("record count " + std::to_string(records.size()) + " != runs*items " +
                    std::to_string(runs * items));
    }
    EvalSummary summary;
    summary.strategy = strategy;
    summary.runs = runs;
    summary.items = items;
    std::vector<std::size_t> correct_per_run(static_cast<std::size_t>(runs), 0);
    for (const auto& record : records) {
        if (record.correct) ++correct_per_run[static_cast<std::size_t>(record.run)];
        if (record.errored) {
            ++summary.errored;
        } else if (record.extracted == kUnparsed) {
            ++summary.unparsed;
        }
        if (!record.degradations.empty()) ++summary.degraded;
    }
    double mean = 0.0;
    for (int r = 0; r < runs; ++r) {
        const double accuracy =
            static_cast<double>(correct_per_run[static_cast<std::size_t>(r)]) /
            static_cast<double>(items);
        summary.per_run_accuracy.push_back(accuracy);
        mean += accuracy;
    }
    mean /= static_cast<double>(runs);
    summary.mean_accuracy = mean;
    double variance = 0.0;
    for (double accuracy : summary.per_run_accuracy) {
        variance += (accuracy - mean) * (accuracy - mean);
    }
    variance /= static_cast<double>(runs);  // population std over the runs
    summary.std_accuracy = std::sqrt(variance);
    return summary;
}

}  // namespace

EvalResult evaluate(const std::vector<McqItem>& dataset, const StrategyConfig& strategy,
                    const std::string& answer_model, int runs, const StrategyContext& ctx,
                    const EvaluateOptions& options) {
    if (dataset.empty()) throw UsageError("cannot evaluate an empty dataset");
    if (runs < 1) throw UsageError("runs must be >= 1");
    strategy.validate();
    if (!ctx.gateway) throw UsageError("evaluation requires a gateway");
    const std::string name = strategy_name(strategy);

    if (strategy.base == StrategyBase::graph_adapter) {
        for (const auto& item : dataset) {
            if (!options.external_contexts.count(item.id)) {
                throw UsageError("graph adapter: no external context for item '" + item.id + "'");
            }
        }
    }

    // Resume support: (run, item) pairs already on disk are taken as-is.
    std::map<std::pair<int, std::string>, EvalRecord> done;
    if (options.records_path && std::filesystem::exists(*options.records_path)) {
        for (auto& record : load_eval_records(*options.records_path)) {
            if (record.strategy == name) {
                done.emplace(std::make_pair(record.run, record.item_id), std::move(record));
            }
        }
    }

    const bool long_form =
        ctx.gateway->profile_for(answer_model).profile_class == ProfileClass::long_form;

    std::vector<EvalRecord> records(static_cast<std::size_t>(runs) * dataset.size());
    std::mutex persist_mutex;
    for (int run = 0; run < runs; ++run) {
        parallel_for(dataset.size(), options.parallelism, [&](std::size_t i) {
            const McqItem& item = dataset[i];
            const std::size_t slot = static_cast<std::size_t>(run) * dataset.size() + i;
            if (auto it = done.find({run, item.id}); it != done.end()) {
                records[slot] = it->second;
                return;
            }

            EvalRecord record;
            record.item_id = item.id;
            record.strategy = name;
            record.run = run;

            const std::vector<std::string>* blocks = nullptr;
            if (strategy.base == StrategyBase::graph_adapter) {
                blocks = &options.external_contexts.at(item.id);
            }
            const PromptBundle bundle =
                run_strategy(item.question, item.options, strategy, ctx, blocks);
            record.degradations = bundle.degradations;
            record.rerank_attempts = bundle.rerank_attempts;

            try {
                // Deterministic decoding is idempotent across runs, so the
                // run index keys samples only for long-form models.
                record.output = ctx.gateway->complete(answer_model,
                                                      user_message(bundle.rendered),
                                                      long_form ? run : 0);
                record.extracted = extract_answer(record.output, item.options);
            } catch (const ProviderError& ex) {
                record.errored = true;
                record.extracted = kUnparsed;
                record.output = std::string("error: ") + ex.what();
            }
            record.correct = !record.errored && record.extracted == item.answer;

            {
                std::lock_guard lock(persist_mutex);
                if (options.records_path) append_eval_record(*options.records_path, record);
                records[slot] = std::move(record);
            }
        });
    }

    EvalResult result;
    result.records = std::move(records);
    result.summary = summarize(name, result.records, runs, dataset.size());
    return result;
}

std::vector<EvalSummary> summarize_records(const std::vector<EvalRecord>& records) {
    std::map<std::string, std::vector<EvalRecord>> by_strategy;
    for (const auto& record : records) by_strategy[record.strategy].push_back(record);

    std::vector<EvalSummary> summaries;
    for (auto& [strategy, group] : by_strategy) {
        int max_run = 0;
        std::set<std::string> items;
        std::set<std::pair<int, std::string>> keys;
        for (const auto& record : group) {
            max_run = std::max(max_run, record.run);
            items.insert(record.item_id);
            if (!keys.insert({record.run, record.item_id}).second) {
                throw Error("duplicate record for strategy '" + strategy + "', run " +
                            std::to_string(record.run) + ", item '" + record.item_id + "'");
            }
        }
        summaries.push_back(summarize(strategy, group, max_run + 1, items.size()));
    }
    return summaries;
}

namespace {

std::string format_accuracy(const EvalSummary& summary) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f \xC2\xB1%.1f", summary.mean_accuracy * 100.0,
                  summary.std_accuracy * 100.0);
    return buf;
}

std::vector<EvalSummary> sorted_by_strategy(std::vector<EvalSummary> summaries) {
    std::sort(summaries.begin(), summaries.end(),
              [](const EvalSummary& a, const EvalSummary& b) { return a.strategy < b.strategy; });
    return summaries;
}

}  // namespace

std::string format_report_grid(const std::vector<EvalSummary>& summaries) {
    if (summaries.empty()) throw UsageError("report needs at least one summary");
    const auto sorted = sorted_by_strategy(summaries);

    std::size_t name_width = std::string("strategy").size();
    for (const auto& summary : sorted) name_width = std::max(name_width, summary.strategy.size());

    std::ostringstream out;
    out << std::left;
    out.width(static_cast<std::streamsize>(name_width + 2));
    out << "strategy";
    out << "accuracy (%)   runs  items\n";
    for (const auto& summary : sorted) {
        out.width(static_cast<std::streamsize>(name_width + 2));
        out << summary.strategy;
        std::string accuracy = format_accuracy(summary);
        out << accuracy;
        for (std::size_t pad = accuracy.size(); pad < 16; ++pad) out << ' ';  // ± is 2 bytes
        out << summary.runs << "     " << summary.items << '\n';
    }
    for (const auto& summary : sorted) {
        if (summary.unparsed == 0 && summary.degraded == 0 && summary.errored == 0) continue;
        out << "note: " << summary.strategy;
        if (summary.unparsed > 0) out << "  unparsed: " << summary.unparsed;
        if (summary.degraded > 0) out << "  degraded: " << summary.degraded;
        if (summary.errored > 0) out << "  errored: " << summary.errored;
        out << '\n';
    }
    return out.str();
}

std::string format_report_tsv(const std::vector<EvalSummary>& summaries) {
    if (summaries.empty()) throw UsageError("report needs at least one summary");
    std::ostringstream out;
    out << "strategy\tmean\tstd\truns\titems\tunparsed\tdegraded\terrored\n";
    char buf[64];
    for (const auto& summary : sorted_by_strategy(summaries)) {
        std::snprintf(buf, sizeof(buf), "%.2f\t%.1f", summary.mean_accuracy * 100.0,
                      summary.std_accuracy * 100.0);
        out << summary.strategy << '\t' << buf << '\t' << summary.runs << '\t' << summary.items
            << '\t' << summary.unparsed << '\t' << summary.degraded << '\t' << summary.errored
            << '\n';
    }
    return out.str();
}

}  // namespace apprag
