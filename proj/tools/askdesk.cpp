#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "askdesk/abtest.hpp"
#include "askdesk/answer.hpp"
#include "askdesk/corpus.hpp"
#include "askdesk/evalkit.hpp"
#include "askdesk/gateway.hpp"
#include "askdesk/index.hpp"
#include "askdesk/jsonl.hpp"
#include "askdesk/rerank.hpp"
#include "askdesk/synthetic.hpp"

using namespace askdesk;

namespace {

struct CommonOptions {
    std::string config_path;
    std::string index_dir;
    std::string log_dir;
    std::string reranker_model;
};

gateway::ServiceConfig load_config(const CommonOptions& common) {
    auto config = common.config_path.empty() ? gateway::ServiceConfig{} : gateway::ServiceConfig::load(common.config_path);
    if (!common.index_dir.empty()) config.index_dir = common.index_dir;
    if (!common.log_dir.empty()) config.log_dir = common.log_dir;
    if (!common.reranker_model.empty()) config.reranker_model = common.reranker_model;
    config.validate();
    return config;
}

void add_common(CLI::App* cmd, CommonOptions& common) {
    cmd->add_option("-c,--config", common.config_path, "Service config file (JSON)");
    cmd->add_option("--index-dir", common.index_dir, "Override the index directory");
}

corpus::ChunkingConfig chunking_for(const std::string& setting, const corpus::ChunkingConfig& fallback) {
    if (setting.empty()) return fallback;
    if (setting == "a") return corpus::ChunkingConfig::setting_a();
    if (setting == "b") return corpus::ChunkingConfig::setting_b();
    if (setting == "c") return corpus::ChunkingConfig::setting_c();
    throw Error("unknown chunking setting: " + setting);
}

void print_json(const nlohmann::json& j) {
    std::cout << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

int run_ingest(const CommonOptions& common, const std::string& corpus_path, const std::string& setting,
               const std::string& chunks_out) {
    const auto config = load_config(common);
    const auto docs = corpus::load_corpus(corpus_path);
    const auto chunking = chunking_for(setting, config.chunking);
    chunking.validate();
    const auto chunks = corpus::chunk_documents(docs, chunking);
    if (!chunks_out.empty()) {
        std::ofstream out(chunks_out);
        if (!out) throw Error("cannot write " + chunks_out);
        corpus::write_chunks(out, chunks);
    }
    print_json({{"docs", docs.size()}, {"chunks", chunks.size()}});
    return 0;
}

int run_index(const CommonOptions& common, const std::string& corpus_path, const std::string& setting) {
    const auto config = load_config(common);
    const auto docs = corpus::load_corpus(corpus_path);
    const auto chunking = chunking_for(setting, config.chunking);
    chunking.validate();
    auto chunks = corpus::chunk_documents(docs, chunking);
    const auto provider = gateway::make_embedding_provider(config.embedding, config.api_key_env);
    std::uint64_t version = 1;
    if (index::has_current(config.index_dir)) version = index::load_current(config.index_dir).version() + 1;
    const std::size_t n_chunks = chunks.size();
    const auto snapshot = index::IndexSnapshot::build(std::move(chunks), *provider, version);
    index::publish_snapshot(config.index_dir, snapshot);
    print_json({{"docs", docs.size()}, {"chunks", n_chunks}, {"version", version},
                {"index_dir", config.index_dir.string()}});
    return 0;
}

struct TrainOptions {
    std::string out;
    std::string report;
    std::string examples_out;
    std::size_t questions_per_chunk = 4;
    std::size_t keywords = 2;
    std::size_t candidates = 20;
    double teacher_jitter = 0.0;
    rerank::TrainConfig train;
};

int run_train(const CommonOptions& common, const TrainOptions& options) {
    const auto config = load_config(common);
    if (!index::has_current(config.index_dir)) throw Error("no index under " + config.index_dir.string());
    const auto snapshot = index::load_current(config.index_dir);
    const auto provider = gateway::make_embedding_provider(config.embedding, config.api_key_env);
    const auto& view = snapshot.all();

    std::vector<rerank::SyntheticQuestion> questions;
    for (std::size_t i = 0; i < options.questions_per_chunk; ++i) {
        const rerank::TemplateQuestionGenerator generator(options.keywords, options.train.seed + i + 1);
        auto batch = rerank::generate_questions(view.chunks(), generator);
        questions.insert(questions.end(), batch.begin(), batch.end());
    }
    const rerank::LexicalOverlapTeacher teacher(options.train.seed, options.teacher_jitter);
    auto data = rerank::build_distillation_dataset(questions, view, *provider, teacher, options.candidates);
    spdlog::info("{} questions, {} kept, {} dropped by recall, {} dropped by teacher", data.stats.questions,
                 data.stats.kept, data.stats.dropped_by_recall, data.stats.dropped_by_teacher);
    if (!options.examples_out.empty()) {
        std::ofstream out(options.examples_out);
        rerank::write_examples(out, data.examples);
    }
    auto result = rerank::train(data.examples, options.train);
    result.scorer.save(std::filesystem::path(options.out));
    if (!options.report.empty()) {
        std::ofstream out(options.report);
        rerank::write_report(out, result.report);
    }
    nlohmann::json summary{{"questions", data.stats.questions},
                           {"kept", data.stats.kept},
                           {"train_examples", result.report.train_examples},
                           {"validation_examples", result.report.validation_examples},
                           {"train_pairs", result.report.train_pairs},
                           {"steps", result.report.steps},
                           {"model", options.out}};
    summary["validation_accuracy"] = result.report.validation_accuracy ? nlohmann::json(*result.report.validation_accuracy)
                                                                        : nlohmann::json(nullptr);
    summary["final_loss"] = result.report.step_loss.empty() ? nlohmann::json(nullptr)
                                                            : nlohmann::json(result.report.step_loss.back());
    print_json(summary);
    return 0;
}

struct EvalOptions {
    std::string queries;
    std::string qrels;
    std::string mode = "retrieval";
    std::string role;
    std::string report;
    std::string judge = "mock";
    bool rerank = false;
};

int run_eval(const CommonOptions& common, const EvalOptions& options) {
    const auto config = load_config(common);
    const auto snapshot = index::has_current(config.index_dir) ? index::load_current(config.index_dir)
                                                               : throw Error("no index under " + config.index_dir.string());
    const auto provider = gateway::make_embedding_provider(config.embedding, config.api_key_env);
    const auto reader = gateway::make_reader(config.reader, config.api_key_env);
    std::optional<rerank::StudentScorer> scorer;
    if (options.rerank) {
        if (!config.reranker_model) throw Error("--rerank needs a reranker model");
        scorer = rerank::StudentScorer::load(*config.reranker_model);
    }
    answer::PipelineConfig pipeline_config;
    pipeline_config.retrieve_k = config.top_k_retrieve;
    pipeline_config.ground_k = config.top_k_ground;
    const answer::AnswerPipeline pipeline(*provider, *reader, scorer ? &*scorer : nullptr, pipeline_config);

    const auto queries = evalkit::read_queries(options.queries);
    const auto qrels = evalkit::read_qrels(options.qrels);
    const auto& view = options.role.empty() ? snapshot.all() : snapshot.for_role(options.role);
    const bool answers = options.mode == "answer";
    if (!answers && options.mode != "retrieval") throw Error("unknown eval mode: " + options.mode);

    const evalkit::MockJudge mock_judge;
    const evalkit::JudgeClient* judge = (answers && options.judge == "mock") ? &mock_judge : nullptr;
    const auto report = evalkit::evaluate(
        queries, qrels,
        [&](const evalkit::EvalQuery& q) {
            evalkit::QueryOutcome outcome;
            if (!answers) {
                outcome.hits = pipeline.retrieve(q.question, view, options.rerank);
                return outcome;
            }
            const auto role = options.role.empty() ? std::string("agent") : options.role;
            auto result = pipeline.answer_question(q.question, role, snapshot, options.rerank, q.query_id);
            outcome.hits = std::move(result.trace.hits);
            outcome.envelope = std::move(result.envelope);
            return outcome;
        },
        judge);
    if (!options.report.empty()) {
        std::ofstream out(options.report);
        report.write(out);
    }
    print_json(report.summary_json());
    return 0;
}

int run_abtest_analyze(const std::string& records_path, const std::string& exposures_path,
                       const std::string& feedback_path) {
    std::vector<abtest::ExperimentRecord> records;
    if (!records_path.empty()) {
        records = abtest::read_records(records_path);
    } else {
        if (exposures_path.empty()) throw Error("give --records or --exposures");
        const auto exposures = gateway::read_exposures(exposures_path);
        std::vector<evalkit::FeedbackEvent> feedback;
        if (!feedback_path.empty() && std::filesystem::exists(feedback_path)) feedback = gateway::read_feedback(feedback_path);
        records = abtest::aggregate(exposures, feedback);
    }
    const auto results = abtest::analyze(records);
    std::cout << abtest::format_table(results);
    return 0;
}

int run_abtest_power(double alpha, double power, double baseline, double effect, bool unpooled) {
    const auto formula = unpooled ? abtest::SampleSizeFormula::unpooled : abtest::SampleSizeFormula::pooled;
    const auto n = abtest::required_samples(alpha, power, baseline, effect, formula);
    print_json({{"per_arm", n}, {"alpha", alpha}, {"power", power}, {"baseline_rate", baseline},
                {"relative_effect", effect}, {"formula", unpooled ? "unpooled" : "pooled"}});
    return 0;
}

int run_abtest_simulate(const abtest::SimulationConfig& sim, std::size_t replicates, std::uint64_t seed) {
    const auto summary = abtest::run_simulation(sim, replicates, seed);
    nlohmann::json out{{"replicates", summary.replicates},
                       {"detection_rate", summary.detection_rate},
                       {"coverage", summary.coverage},
                       {"nominal_coverage", summary.nominal_coverage},
                       {"true_difference", summary.true_difference}};
    // Under no effect the p-values should be uniform.
    if (sim.relative_effect == 0.0) out["ks_uniform_p"] = abtest::ks_uniform_pvalue(summary.p_values);
    print_json(out);
    return 0;
}

gateway::HttpServer* g_server = nullptr;

void handle_signal(int) {
    if (g_server != nullptr) g_server->stop();
}

int run_serve(const CommonOptions& common, const std::string& host, int port) {
    auto config = load_config(common);
    if (!host.empty()) config.host = host;
    if (port >= 0) config.port = port;
    auto service = gateway::Service::from_config(config);
    gateway::HttpServer server(*service);
    const int bound = server.bind(config.host, config.port);
    g_server = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    spdlog::info("serving on http://{}:{} (snapshot v{})", config.host, bound, service->snapshot()->version());
    server.listen();
    g_server = nullptr;
    return 0;
}

int run_ask(const CommonOptions& common, const std::string& question, std::string role, bool rerank) {
    const auto config = load_config(common);
    if (!index::has_current(config.index_dir)) throw Error("no index under " + config.index_dir.string());
    const auto snapshot = index::load_current(config.index_dir);
    const auto provider = gateway::make_embedding_provider(config.embedding, config.api_key_env);
    const auto reader = gateway::make_reader(config.reader, config.api_key_env);
    std::optional<rerank::StudentScorer> scorer;
    if (rerank && config.reranker_model) scorer = rerank::StudentScorer::load(*config.reranker_model);
    answer::PipelineConfig pipeline_config;
    pipeline_config.retrieve_k = config.top_k_retrieve;
    pipeline_config.ground_k = config.top_k_ground;
    const answer::AnswerPipeline pipeline(*provider, *reader, scorer ? &*scorer : nullptr, pipeline_config);
    if (role.empty()) role = config.default_role.empty() ? "agent" : config.default_role;

    const auto result = pipeline.answer_question(question, role, snapshot, rerank);
    auto citations = nlohmann::json::array();
    for (const auto& ref : result.envelope.citations) {
        const auto* chunk = snapshot.all().find(ref);
        citations.push_back({{"origin_id", ref.origin_id},
                             {"local_id", ref.local_id},
                             {"title", chunk ? chunk->title : ""},
                             {"source_uri", chunk ? chunk->source_uri : ""}});
    }
    print_json({{"answer_text", result.envelope.answer_text},
                {"citations", citations},
                {"no_answer", result.envelope.no_answer},
                {"latency_ms", result.trace.latency_ms}});
    return 0;
}

int run_synth(const std::string& out_dir, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    synthetic::DistillationConfig dc;
    dc.seed = seed;
    const auto fixture = synthetic::make_distillation_fixture(dc);
    {
        std::ofstream out(fs::path(out_dir) / "corpus.jsonl");
        corpus::write_corpus(out, fixture.documents);
    }
    const auto questions =
        rerank::generate_questions(fixture.heldout_chunks, rerank::TemplateQuestionGenerator(2, seed + 1000));
    const auto queries = synthetic::as_eval_queries(questions, fixture.chunks);
    {
        std::ofstream out(fs::path(out_dir) / "queries.jsonl");
        evalkit::write_queries(out, queries);
    }
    {
        std::ofstream out(fs::path(out_dir) / "qrels.jsonl");
        evalkit::write_qrels(out, synthetic::graded_qrels(queries, questions, fixture.chunks));
    }
    gateway::ServiceConfig config;
    config.index_dir = "index";
    config.log_dir = "logs";
    config.embedding.dimension = 64;
    config.embedding.seed = 3;
    config.reader.min_coverage = 0.8;
    config.default_role = "agent";
    config.chunking = fixture.chunking;
    {
        std::ofstream out(fs::path(out_dir) / "config.json");
        out << config.to_json().dump(2) << '\n';
    }
    print_json({{"docs", fixture.documents.size()}, {"chunks", fixture.chunks.size()}, {"queries", queries.size()},
                {"dir", out_dir}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("askdesk"));
    spdlog::set_level(spdlog::level::info);

    CLI::App app{"askdesk: retrieval-augmented answers for support agents"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    CommonOptions common;

    auto* ingest = app.add_subcommand("ingest", "Validate and chunk a corpus file");
    add_common(ingest, common);
    std::string corpus_path, setting, chunks_out;
    ingest->add_option("corpus", corpus_path, "Corpus JSONL file")->required();
    ingest->add_option("--setting", setting, "Chunking preset a, b or c (default: config)");
    ingest->add_option("--chunks-out", chunks_out, "Write chunks as JSONL");

    auto* index_cmd = app.add_subcommand("index", "Build and publish an index snapshot from a corpus");
    add_common(index_cmd, common);
    index_cmd->add_option("corpus", corpus_path, "Corpus JSONL file")->required();
    index_cmd->add_option("--setting", setting, "Chunking preset a, b or c (default: config)");

    auto* train = app.add_subcommand("train-reranker", "Distill teacher rankings into a student reranker");
    add_common(train, common);
    TrainOptions train_options;
    train->add_option("-o,--out", train_options.out, "Model output path")->required();
    train->add_option("--report", train_options.report, "Training report (JSONL)");
    train->add_option("--examples-out", train_options.examples_out, "Write the ranking examples (JSONL)");
    train->add_option("--questions-per-chunk", train_options.questions_per_chunk, "Synthetic questions per chunk")
        ->capture_default_str();
    train->add_option("--keywords", train_options.keywords, "Keywords per synthetic question")->capture_default_str();
    train->add_option("--candidates", train_options.candidates, "Dense candidates per question")->capture_default_str();
    train->add_option("--teacher-jitter", train_options.teacher_jitter, "Teacher score jitter");
    train->add_option("--lr", train_options.train.learning_rate, "Learning rate")->capture_default_str();
    train->add_option("--batch", train_options.train.batch_size, "Batch size")->capture_default_str();
    train->add_option("--warmup", train_options.train.warmup_steps, "Warmup steps")->capture_default_str();
    train->add_option("--weight-decay", train_options.train.weight_decay, "Weight decay")->capture_default_str();
    train->add_option("--epochs", train_options.train.epochs, "Epochs")->capture_default_str();
    train->add_option("--hidden", train_options.train.hidden_units, "Hidden units (0 = linear)")->capture_default_str();
    train->add_option("--seed", train_options.train.seed, "Random seed")->capture_default_str();

    auto* eval = app.add_subcommand("eval", "Score retrieval or answers against qrels");
    add_common(eval, common);
    eval->add_option("--reranker-model", common.reranker_model, "Override the reranker model");
    EvalOptions eval_options;
    eval->add_option("--queries", eval_options.queries, "Queries JSONL")->required();
    eval->add_option("--qrels", eval_options.qrels, "Qrels JSONL")->required();
    eval->add_option("--mode", eval_options.mode, "retrieval or answer")->capture_default_str();
    eval->add_option("--role", eval_options.role, "Evaluate a role view (default: all chunks)");
    eval->add_option("--report", eval_options.report, "Per-query report (JSONL)");
    eval->add_option("--judge", eval_options.judge, "mock or none")->capture_default_str();
    eval->add_flag("--rerank", eval_options.rerank, "Rerank with the configured model");

    auto* ab = app.add_subcommand("abtest", "Experiment analysis tools");
    ab->require_subcommand(1);
    auto* analyze = ab->add_subcommand("analyze", "Test No Answer Rate and Positive Feedback Rate");
    std::string records_path, exposures_path, feedback_path;
    analyze->add_option("--records", records_path, "ExperimentRecord JSONL");
    analyze->add_option("--exposures", exposures_path, "Gateway exposure log");
    analyze->add_option("--feedback", feedback_path, "Gateway feedback log");
    auto* power_cmd = ab->add_subcommand("power", "Per-arm sample size for a rate change");
    double alpha = abtest::kAlphaAllInteractions, power = 0.8, baseline = 0.25, effect = -0.119;
    bool unpooled = false;
    power_cmd->add_option("--alpha", alpha)->capture_default_str();
    power_cmd->add_option("--power", power)->capture_default_str();
    power_cmd->add_option("--baseline", baseline, "Baseline rate")->capture_default_str();
    power_cmd->add_option("--effect", effect, "Relative effect, e.g. -0.119")->capture_default_str();
    power_cmd->add_flag("--unpooled", unpooled, "Unpooled variance under the null");
    auto* simulate = ab->add_subcommand("simulate", "Monte Carlo detection rate and interval coverage");
    abtest::SimulationConfig sim;
    std::size_t replicates = 200;
    std::uint64_t sim_seed = 1;
    simulate->add_option("--replicates", replicates)->capture_default_str();
    simulate->add_option("--agents", sim.agents)->capture_default_str();
    simulate->add_option("--days", sim.days)->capture_default_str();
    simulate->add_option("--mean-queries", sim.mean_queries)->capture_default_str();
    simulate->add_option("--no-answer-rate", sim.no_answer_rate)->capture_default_str();
    simulate->add_option("--effect", sim.relative_effect)->capture_default_str();
    simulate->add_option("--agent-effect-sd", sim.agent_effect_sd)->capture_default_str();
    simulate->add_option("--seed", sim_seed)->capture_default_str();

    auto* serve = app.add_subcommand("serve", "Run the HTTP gateway");
    add_common(serve, common);
    serve->add_option("--log-dir", common.log_dir, "Override the log directory");
    serve->add_option("--reranker-model", common.reranker_model, "Override the reranker model");
    std::string host;
    int port = -1;
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");

    auto* ask = app.add_subcommand("ask", "Answer one question and exit");
    add_common(ask, common);
    ask->add_option("--reranker-model", common.reranker_model, "Override the reranker model");
    std::string question, role;
    bool rerank = false;
    ask->add_option("question", question, "Question text")->required();
    ask->add_option("--role", role, "Role for document visibility");
    ask->add_flag("--rerank", rerank, "Rerank with the configured model");

    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus, queries, qrels and config");
    std::string out_dir;
    std::uint64_t synth_seed = 7;
    synth->add_option("out_dir", out_dir, "Output directory")->required();
    synth->add_option("--seed", synth_seed)->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    if (verbose) spdlog::set_level(spdlog::level::debug);

    try {
        if (*ingest) return run_ingest(common, corpus_path, setting, chunks_out);
        if (*index_cmd) return run_index(common, corpus_path, setting);
        if (*train) return run_train(common, train_options);
        if (*eval) return run_eval(common, eval_options);
        if (*analyze) return run_abtest_analyze(records_path, exposures_path, feedback_path);
        if (*power_cmd) return run_abtest_power(alpha, power, baseline, effect, unpooled);
        if (*simulate) return run_abtest_simulate(sim, replicates, sim_seed);
        if (*serve) return run_serve(common, host, port);
        if (*ask) return run_ask(common, question, role, rerank);
        if (*synth) return run_synth(out_dir, synth_seed);
    } catch (const jsonl::ParseError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
