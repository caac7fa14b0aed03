// apprag: command-line driver for the application-aware RAG pipeline.
// Subcommands: ingest, build-apps, index, eval, report.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "apprag/alignment.hpp"
#include "apprag/construction.hpp"
#include "apprag/corpus.hpp"
#include "apprag/errors.hpp"
#include "apprag/evaluation.hpp"
#include "apprag/jsonl.hpp"
#include "apprag/llm.hpp"
#include "apprag/retrieval.hpp"
#include "apprag/strategies.hpp"
#include "apprag/templates.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 1469598103934665603ull) {
    std::uint64_t hash = seed;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

std::uint64_t hash_file(const fs::path& path, std::uint64_t seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return seed;
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return fnv1a64(buffer.str(), seed);
}

/// Hash of every input that can affect the run's outputs: flag values plus
/// the bytes of each referenced file (template and replay dirs included).
std::string config_hash(const json& flags, const std::vector<fs::path>& files,
                        const std::vector<fs::path>& dirs) {
    std::uint64_t hash = fnv1a64(flags.dump());
    for (const auto& file : files) hash = hash_file(file, hash);
    for (const auto& dir : dirs) {
        if (!fs::is_directory(dir)) continue;
        std::vector<fs::path> entries;
        for (const auto& entry : fs::recursive_directory_iterator(dir)) {
            if (entry.is_regular_file()) entries.push_back(entry.path());
        }
        std::sort(entries.begin(), entries.end());
        for (const auto& entry : entries) {
            hash = fnv1a64(entry.string(), hash);
            hash = hash_file(entry, hash);
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct GatewayFlags {
    std::string endpoints_file;
    std::string replay_dir;
    std::string record_dir;
    std::string model_class = "deterministic";
    int parallelism = 1;
    int max_attempts = 3;
};

apprag::Gateway make_gateway(const GatewayFlags& flags, const std::vector<std::string>& models) {
    apprag::EndpointRegistry registry;
    if (!flags.endpoints_file.empty()) {
        registry = apprag::EndpointRegistry::from_file(flags.endpoints_file);
    }
    // Models named only on the command line get an ad-hoc registration; they
    // can run in replay mode or against --endpoints-configured URLs.
    auto cls = apprag::profile_class_from_string(flags.model_class);
    if (!cls) throw apprag::UsageError("unknown model class '" + flags.model_class + "'");
    for (const auto& model : models) {
        if (!model.empty() && !registry.contains(model)) {
            registry.add(model, apprag::ModelEndpoint{"", "", *cls, 2048});
        }
    }

    apprag::GatewayOptions options;
    options.max_attempts = flags.max_attempts;
    options.parallelism = flags.parallelism;
    if (!flags.replay_dir.empty()) options.replay_dir = flags.replay_dir;
    if (!flags.record_dir.empty()) options.record_dir = flags.record_dir;

    std::shared_ptr<apprag::Backend> backend;
    if (flags.replay_dir.empty()) backend = apprag::make_http_backend();
    return apprag::Gateway(std::move(registry), std::move(backend), std::move(options));
}

std::map<std::string, std::vector<std::string>> load_contexts(const fs::path& path) {
    std::map<std::string, std::vector<std::string>> contexts;
    apprag::jsonl::for_each_file(path, [&](std::size_t line_no, const json& record) {
        if (!record.contains("item_id") || !record.contains("blocks")) {
            throw apprag::ParseError(path.string() + ":" + std::to_string(line_no) +
                                     ": context record needs item_id and blocks");
        }
        contexts[record.at("item_id").get<std::string>()] =
            record.at("blocks").get<std::vector<std::string>>();
    });
    return contexts;
}

// ---------------------------------------------------------------- ingest --

struct IngestArgs {
    std::string knowledge;
    std::string out;
    int max_tokens = 800;
};

int run_ingest(const IngestArgs& args) {
    const auto corpus = apprag::load_knowledge(args.knowledge);
    const auto chunks = apprag::chunk_corpus(corpus, apprag::ChunkOptions{args.max_tokens});
    fs::create_directories(args.out);
    apprag::save_knowledge(corpus, fs::path(args.out) / "knowledge.jsonl");
    apprag::save_chunks(chunks, fs::path(args.out) / "chunks.jsonl");
    std::cout << "knowledge items: " << corpus.size() << "\nchunks: " << chunks.size() << '\n';
    return 0;
}

// ------------------------------------------------------------ build-apps --

struct BuildAppsArgs {
    std::string mode = "hybrid";
    std::string knowledge;
    std::string problems;
    std::string out;
    std::string model;
    std::string review;
    std::vector<std::string> categories;
    bool checkpoint = false;
    int n_samples = 5;
    double vote_temperature = 1.0;
    double threshold = 0.5;
    int max_attempts = 3;
    std::string templates_dir = "templates";
    GatewayFlags gateway;
};

int run_build_apps(const BuildAppsArgs& args) {
    const auto mode = apprag::build_mode_from_string(args.mode);
    if (!mode) throw apprag::UsageError("unknown mode '" + args.mode + "'");
    if (*mode != apprag::BuildMode::generate && args.problems.empty()) {
        throw apprag::UsageError("mode '" + args.mode + "' requires --problems");
    }

    const auto knowledge = apprag::load_knowledge(fs::path(args.knowledge) / "knowledge.jsonl");
    std::vector<apprag::ProblemInstance> problems;
    if (!args.problems.empty()) problems = apprag::load_problems(args.problems);

    apprag::ConstructionConfig config;
    config.model = args.model;
    config.n_samples = args.n_samples;
    config.vote_temperature = args.vote_temperature;
    config.relevance_threshold = args.threshold;
    config.max_attempts = args.max_attempts;
    config.categories = args.categories;
    config.parallelism = args.gateway.parallelism;
    if (!args.review.empty()) {
        config.category_overrides = apprag::load_review_overrides(args.review);
    }

    const auto templates = apprag::TemplateEngine::load_directory(args.templates_dir);
    auto gateway = make_gateway(args.gateway, {args.model});

    fs::create_directories(args.out);
    std::optional<apprag::CheckpointStore> checkpoint;
    if (args.checkpoint) checkpoint.emplace(fs::path(args.out) / "checkpoint");

    apprag::BuildOutputs outputs;
    try {
        outputs = apprag::build_application_corpus(knowledge,
                                                   args.problems.empty() ? nullptr : &problems,
                                                   *mode, gateway, templates, config,
                                                   checkpoint ? &*checkpoint : nullptr);
    } catch (const apprag::ProviderUnavailableError& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        if (checkpoint) {
            const auto missing =
                apprag::incomplete_units(knowledge, args.problems.empty() ? nullptr : &problems,
                                         *mode, *checkpoint);
            std::vector<apprag::ReportEntry> partial;
            for (const auto& unit : missing) {
                partial.push_back({unit, "incomplete", "provider outage"});
            }
            apprag::save_report(partial, fs::path(args.out) / "report.jsonl");
            std::cerr << "checkpointed; " << missing.size()
                      << " units incomplete, rerun the same command to resume\n";
        }
        return 1;
    }

    apprag::save_knowledge(outputs.knowledge, fs::path(args.out) / "knowledge.jsonl");
    apprag::save_applications(outputs.applications, fs::path(args.out) / "applications.jsonl");
    outputs.store.save(fs::path(args.out) / "alignment.jsonl");
    apprag::save_report(outputs.report, fs::path(args.out) / "report.jsonl");
    if (!outputs.review.empty()) {
        apprag::save_review(outputs.review, fs::path(args.out) / "review.jsonl");
    }

    std::printf("applications: %zu  links: %zu\n", outputs.applications.size(),
                outputs.store.size());
    std::printf("coverage: %.2f -> %.2f\n", outputs.coverage_before.fraction,
                outputs.coverage_after.fraction);
    if (!outputs.report.empty()) {
        std::printf("report entries: %zu (see report.jsonl)\n", outputs.report.size());
    }
    return 0;
}

// ----------------------------------------------------------------- index --

struct IndexArgs {
    std::string knowledge;
    std::string out;
};

int run_index(const IndexArgs& args) {
    const auto chunks = apprag::load_chunks(fs::path(args.knowledge) / "chunks.jsonl");
    const auto index = apprag::build_index(chunks);
    apprag::save_index(index, args.out);
    std::cout << "indexed chunks: " << index.doc_count() << '\n';
    return 0;
}

// ------------------------------------------------------------------ eval --

struct EvalArgs {
    std::string dataset;
    std::string strategy = "rag";
    std::string aug = "plain";
    std::string model;
    std::string strategy_model;  // reranker / preliminary-answer model
    int runs = 3;
    std::string knowledge;
    std::string index;
    std::string apps;
    std::string store;
    std::string contexts;
    std::string templates_dir = "templates";
    std::string out;
    int k_retrieve = 3;
    int k_rerank_pool = 10;
    int app_cap = 2;
    int max_rerank_attempts = 3;
    double fuzzy_threshold = 0.5;
    GatewayFlags gateway;
};

int run_eval(const EvalArgs& args) {
    apprag::StrategyConfig strategy;
    const auto base = apprag::strategy_base_from_string(args.strategy);
    if (!base) throw apprag::UsageError("unknown strategy '" + args.strategy + "'");
    strategy.base = *base;
    const auto aug = apprag::augmentation_from_string(args.aug);
    if (!aug) throw apprag::UsageError("unknown augmentation '" + args.aug + "'");
    strategy.augmentation = *aug;
    strategy.k_retrieve = args.k_retrieve;
    strategy.k_rerank_pool = args.k_rerank_pool;
    strategy.app_cap = args.app_cap;
    strategy.max_rerank_attempts = args.max_rerank_attempts;
    strategy.fuzzy_match_threshold = args.fuzzy_threshold;
    strategy.model = args.strategy_model.empty() ? args.model : args.strategy_model;
    strategy.validate();

    const auto dataset = apprag::load_dataset(args.dataset);
    if (dataset.empty()) std::cerr << "warning: dataset is empty\n";

    const auto knowledge = apprag::load_knowledge(fs::path(args.knowledge) / "knowledge.jsonl");
    const auto index = apprag::load_index(args.index);

    apprag::ApplicationCorpus applications;
    apprag::AlignmentStore store;
    if (strategy.augmentation != apprag::Augmentation::plain) {
        if (args.apps.empty() || args.store.empty()) {
            throw apprag::UsageError("augmentation '" + args.aug +
                                     "' requires --apps and --store");
        }
        applications = apprag::load_applications(args.apps);
        store = apprag::AlignmentStore::load(args.store, knowledge, applications);
    }

    const auto templates = apprag::TemplateEngine::load_directory(args.templates_dir);
    auto gateway = make_gateway(args.gateway, {args.model, strategy.model});

    apprag::StrategyContext ctx;
    ctx.index = &index;
    ctx.knowledge = &knowledge;
    ctx.applications = &applications;
    ctx.store = &store;
    ctx.templates = &templates;
    ctx.gateway = &gateway;

    apprag::EvaluateOptions eval_options;
    fs::create_directories(args.out);
    eval_options.records_path = fs::path(args.out) / "records.jsonl";
    eval_options.parallelism = args.gateway.parallelism;
    if (!args.contexts.empty()) eval_options.external_contexts = load_contexts(args.contexts);

    const auto result =
        apprag::evaluate(dataset, strategy, args.model, args.runs, ctx, eval_options);

    json flags{{"command", "eval"},
               {"dataset", args.dataset},
               {"knowledge", args.knowledge},
               {"index", args.index},
               {"apps", args.apps},
               {"store", args.store},
               {"contexts", args.contexts},
               {"templates", args.templates_dir},
               {"strategy",
                {{"base", apprag::to_string(strategy.base)},
                 {"aug", apprag::to_string(strategy.augmentation)},
                 {"k_retrieve", strategy.k_retrieve},
                 {"k_rerank_pool", strategy.k_rerank_pool},
                 {"app_cap", strategy.app_cap},
                 {"max_rerank_attempts", strategy.max_rerank_attempts},
                 {"fuzzy_match_threshold", strategy.fuzzy_match_threshold},
                 {"model", strategy.model}}},
               {"model", args.model},
               {"runs", args.runs},
               {"replay", !args.gateway.replay_dir.empty()},
               {"endpoints", args.gateway.endpoints_file}};
    std::vector<fs::path> hashed_files{args.dataset, args.index,
                                       fs::path(args.knowledge) / "knowledge.jsonl"};
    if (!args.apps.empty()) hashed_files.push_back(args.apps);
    if (!args.store.empty()) hashed_files.push_back(args.store);
    if (!args.contexts.empty()) hashed_files.push_back(args.contexts);
    if (!args.gateway.endpoints_file.empty()) {
        hashed_files.push_back(args.gateway.endpoints_file);
    }
    std::vector<fs::path> hashed_dirs{args.templates_dir};
    if (!args.gateway.replay_dir.empty()) hashed_dirs.push_back(args.gateway.replay_dir);

    json manifest = flags;
    manifest["config_hash"] = config_hash(flags, hashed_files, hashed_dirs);
    manifest["records"] = eval_options.records_path->string();
    manifest["timestamp"] = now_iso8601();
    {
        std::ofstream out(fs::path(args.out) / "manifest.json", std::ios::trunc);
        out << manifest.dump(2) << '\n';
    }

    std::cout << apprag::format_report_grid({result.summary});
    return 0;
}

// ---------------------------------------------------------------- report --

struct ReportArgs {
    std::vector<std::string> records_dirs;
    std::string out;
};

int run_report(const ReportArgs& args) {
    std::vector<apprag::EvalRecord> records;
    for (const auto& dir : args.records_dirs) {
        const fs::path path = fs::path(dir) / "records.jsonl";
        if (!fs::exists(path)) throw apprag::Error("no records.jsonl under " + dir);
        auto loaded = apprag::load_eval_records(path);
        records.insert(records.end(), loaded.begin(), loaded.end());
    }
    if (records.empty()) throw apprag::Error("no evaluation records found");

    const auto summaries = apprag::summarize_records(records);
    const std::string grid = apprag::format_report_grid(summaries);
    const std::string tsv = apprag::format_report_tsv(summaries);
    if (args.out.empty()) {
        std::cout << grid;
    } else {
        std::ofstream grid_out(args.out, std::ios::trunc);
        if (!grid_out) throw apprag::IoError("cannot write " + args.out);
        grid_out << grid;
        std::ofstream tsv_out(args.out + ".tsv", std::ios::trunc);
        tsv_out << tsv;
        std::cout << "wrote " << args.out << " and " << args.out << ".tsv\n";
    }
    return 0;
}

void add_gateway_flags(CLI::App* cmd, GatewayFlags& flags) {
    cmd->add_option("--endpoints", flags.endpoints_file, "model endpoint config file");
    auto* replay = cmd->add_option("--replay", flags.replay_dir, "replay fixtures from DIR");
    auto* record = cmd->add_option("--record", flags.record_dir, "record fixtures into DIR");
    replay->excludes(record);
    cmd->add_option("--model-class", flags.model_class,
                    "decoding class for models not in --endpoints")
        ->check(CLI::IsMember({"deterministic", "long_form"}));
    cmd->add_option("--parallel", flags.parallelism, "provider-call parallelism")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--max-attempts", flags.max_attempts, "transport retry attempts")
        ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"application-aware retrieval-augmented generation pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from a config file");

    IngestArgs ingest_args;
    auto* ingest = app.add_subcommand("ingest", "load and chunk a knowledge corpus");
    ingest->add_option("--knowledge", ingest_args.knowledge, "knowledge corpus file")->required();
    ingest->add_option("--out", ingest_args.out, "output directory")->required();
    ingest->add_option("--max-tokens", ingest_args.max_tokens, "chunk budget in tokens")
        ->check(CLI::PositiveNumber);

    BuildAppsArgs build_args;
    auto* build = app.add_subcommand("build-apps", "build the application corpus");
    build->add_option("--mode", build_args.mode, "generate | match | hybrid")
        ->required()
        ->check(CLI::IsMember({"generate", "match", "hybrid"}));
    build->add_option("--knowledge", build_args.knowledge, "ingested corpus directory")
        ->required();
    build->add_option("--problems", build_args.problems, "problem instances file");
    build->add_option("--out", build_args.out, "output directory")->required();
    build->add_option("--model", build_args.model, "construction model name")->required();
    build->add_option("--categories", build_args.categories, "category inventory")
        ->delimiter(',');
    build->add_option("--review", build_args.review, "review file with category overrides");
    build->add_flag("--checkpoint", build_args.checkpoint, "checkpoint units for resume");
    build->add_option("--n-samples", build_args.n_samples, "votes per decision")
        ->check(CLI::PositiveNumber);
    build->add_option("--vote-temperature", build_args.vote_temperature,
                      "sampling temperature for voting");
    build->add_option("--threshold", build_args.threshold, "relevance vote-share threshold");
    build->add_option("--attempts", build_args.max_attempts, "per-item parse/empty retries")
        ->check(CLI::PositiveNumber);
    build->add_option("--templates", build_args.templates_dir, "template directory");
    add_gateway_flags(build, build_args.gateway);

    IndexArgs index_args;
    auto* index = app.add_subcommand("index", "build the retrieval index");
    index->add_option("--knowledge", index_args.knowledge, "ingested corpus directory")
        ->required();
    index->add_option("--out", index_args.out, "index output file")->required();

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "evaluate a strategy over a dataset");
    eval->add_option("--dataset", eval_args.dataset, "multiple-choice dataset file")->required();
    eval->add_option("--strategy", eval_args.strategy, "strategy base")
        ->required()
        ->check(CLI::IsMember({"rag", "afrag", "rerank", "graph-adapter"}));
    eval->add_option("--aug", eval_args.aug, "augmentation mode")
        ->check(CLI::IsMember({"plain", "app-only", "plus"}));
    eval->add_option("--model", eval_args.model, "answering model")->required();
    eval->add_option("--strategy-model", eval_args.strategy_model,
                     "model for rerank/preliminary calls (default: --model)");
    eval->add_option("--runs", eval_args.runs, "independent runs")->check(CLI::PositiveNumber);
    eval->add_option("--knowledge", eval_args.knowledge, "ingested corpus directory")
        ->required();
    eval->add_option("--index", eval_args.index, "index file")->required();
    eval->add_option("--apps", eval_args.apps, "application corpus file");
    eval->add_option("--store", eval_args.store, "alignment store file");
    eval->add_option("--contexts", eval_args.contexts,
                     "external context blocks for graph-adapter");
    eval->add_option("--templates", eval_args.templates_dir, "template directory");
    eval->add_option("--out", eval_args.out, "output directory")->required();
    eval->add_option("--k", eval_args.k_retrieve, "retrieved items per prompt")
        ->check(CLI::PositiveNumber);
    eval->add_option("--pool", eval_args.k_rerank_pool, "rerank candidate pool")
        ->check(CLI::PositiveNumber);
    eval->add_option("--app-cap", eval_args.app_cap, "applications per knowledge item");
    eval->add_option("--rerank-attempts", eval_args.max_rerank_attempts,
                     "re-prompts before similarity fallback")
        ->check(CLI::PositiveNumber);
    eval->add_option("--fuzzy-threshold", eval_args.fuzzy_threshold,
                     "graph-adapter fuzzy match threshold");
    add_gateway_flags(eval, eval_args.gateway);

    ReportArgs report_args;
    auto* report = app.add_subcommand("report", "merge evaluation records into a table");
    report->add_option("--records", report_args.records_dirs, "eval output directories")
        ->required()
        ->expected(-1);
    report->add_option("--out", report_args.out, "write the table here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (ingest->parsed()) return run_ingest(ingest_args);
        if (build->parsed()) return run_build_apps(build_args);
        if (index->parsed()) return run_index(index_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (report->parsed()) return run_report(report_args);
    } catch (const apprag::UsageError& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 2;
    } catch (const apprag::ReplayMissError& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
