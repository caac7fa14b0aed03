#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apprag/strategies.hpp"

namespace apprag {

/// One multiple-choice question; labels run A, B, C, ...
struct McqItem {
    std::string id;
    std::string question;
    std::vector<LabeledOption> options;
    std::string answer;  // gold label, present among the options
};

/// Loads and validates a line-delimited dataset ({id, question, options,
/// answer}). Violations are rejected with line numbers; an empty file is an
/// empty dataset, left to the caller to warn about.
std::vector<McqItem> load_dataset(const std::filesystem::path& path);

inline constexpr const char* kUnparsed = "unparsed";

/// Answer extraction, first rule that fires wins:
///   1. the last explicit "Answer: X" marker (case-insensitive),
///   2. a standalone option letter on the final non-empty line,
///   3. an option's full text appearing verbatim in the final line.
/// Otherwise "unparsed", which never counts as correct.
std::string extract_answer(const std::string& raw, const std::vector<LabeledOption>& options);

struct EvalRecord {
    std::string item_id;
    std::string strategy;  // strategy fingerprint, e.g. "rag+"
    int run = 0;
    std::string output;     // raw model output
    std::string extracted;  // label or kUnparsed
    bool correct = false;
    std::vector<std::string> degradations;
    int rerank_attempts = 0;
    bool errored = false;  // gateway gave up on this item
};

struct EvalSummary {
    std::string strategy;
    int runs = 0;
    std::size_t items = 0;
    std::vector<double> per_run_accuracy;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // population std over per-run accuracies
    int unparsed = 0;
    int degraded = 0;
    int errored = 0;
};

void append_eval_record(const std::filesystem::path& path, const EvalRecord& record);
std::vector<EvalRecord> load_eval_records(const std::filesystem::path& path);

struct EvaluateOptions {
    std::optional<std::filesystem::path> records_path;  // persist + resume point
    /// External context blocks per item id, required by the graph adapter.
    std::map<std::string, std::vector<std::string>> external_contexts;
    int parallelism = 1;
};

struct EvalResult {
    EvalSummary summary;
    std::vector<EvalRecord> records;  // ordered (run, dataset position)
};

/// Runs `runs` passes of the strategy over the dataset with `answer_model`
/// producing the final answers. Records persist before summarization, and
/// (item, run) pairs already present in the records file are not re-run, so
/// an interrupted evaluation resumes where it stopped.
EvalResult evaluate(const std::vector<McqItem>& dataset, const StrategyConfig& strategy,
                    const std::string& answer_model, int runs, const StrategyContext& ctx,
                    const EvaluateOptions& options = {});

/// Rebuilds per-strategy summaries from persisted records (used by `report`).
std::vector<EvalSummary> summarize_records(const std::vector<EvalRecord>& records);

/// Human-readable grid, one row per strategy (sorted), accuracy as
/// "MM.MM ±S.S" percent, with footnotes for unparsed/degraded/errored counts.
std::string format_report_grid(const std::vector<EvalSummary>& summaries);

/// Tab-separated variant of the same table.
std::string format_report_tsv(const std::vector<EvalSummary>& summaries);

}  // namespace apprag
