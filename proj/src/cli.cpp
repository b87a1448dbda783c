#include "derivare/cli.hpp"

#include "derivare/error.hpp"
#include "derivare/eval.hpp"
#include "derivare/ingest.hpp"
#include "derivare/provider.hpp"
#include "derivare/retrieval.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace derivare {

namespace {

std::string trim(const std::string& s) {
    size_t begin = 0;
    size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

int parse_int_value(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        int parsed = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return parsed;
    } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidConfig, key + " must be an integer, got: " + value);
    }
}

bool parse_bool_value(const std::string& key, const std::string& value) {
    std::string v = lowercase(value);
    if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
    if (v == "false" || v == "no" || v == "off" || v == "0") return false;
    throw Error(ErrorKind::InvalidConfig, key + " must be a boolean, got: " + value);
}

Language parse_language_value(const std::string& key, const std::string& value) {
    std::string v = lowercase(trim(value));
    if (v == "en") return Language::En;
    if (v == "es") return Language::Es;
    throw Error(ErrorKind::InvalidConfig, key + " must be \"en\" or \"es\", got: " + value);
}

DerivationMode parse_mode_value(const std::string& key, const std::string& value) {
    auto mode = parse_derivation_mode(value);
    if (!mode) throw Error(ErrorKind::InvalidConfig, key + " must be \"one-step\" or \"whole\", got: " + value);
    return *mode;
}

void apply_config_entry(AppConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "corpus_dir") cfg.corpus_dir = value;
    else if (key == "chunks_path") cfg.chunks_path = value;
    else if (key == "index_path") cfg.index_path = value;
    else if (key == "chunking.max_chars") cfg.max_chars = parse_int_value(key, value);
    else if (key == "chunking.overlap_chars") cfg.overlap_chars = parse_int_value(key, value);
    else if (key == "retrieval.k") cfg.k = parse_int_value(key, value);
    else if (key == "retrieval.rerank") cfg.rerank = parse_bool_value(key, value);
    else if (key == "retrieval.rerank_pool") cfg.rerank_pool = parse_int_value(key, value);
    else if (key == "engine.mode") cfg.mode = parse_mode_value(key, value);
    else if (key == "engine.max_steps") cfg.max_steps = parse_int_value(key, value);
    else if (key == "engine.language") cfg.language = parse_language_value(key, value);
    else if (key == "engine.few_shots") cfg.few_shots_path = value;
    else if (key == "engine.templates_dir") cfg.templates_dir = value;
    else if (key == "provider.kind") cfg.provider_kind = lowercase(trim(value));
    else if (key == "provider.endpoint") cfg.endpoint = value;
    else if (key == "provider.model") cfg.model = value;
    else if (key == "provider.embed_model") cfg.embed_model = value;
    else if (key == "provider.rerank_model") cfg.rerank_model = value;
    else if (key == "provider.script") cfg.mock_script_path = value;
    else if (key == "provider.embedding_dim") cfg.embedding_dim = parse_int_value(key, value);
    else if (key == "eval.rubric") cfg.rubric_path = value;
    else if (key == "eval.parallelism") cfg.parallelism = parse_int_value(key, value);
    else throw Error(ErrorKind::InvalidConfig, "unknown config key: " + key);
}

} // namespace

AppConfig load_app_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open config file: " + path);
    AppConfig cfg;
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string entry = trim(line);
        if (entry.empty() || entry[0] == '#' || entry[0] == ';') continue;
        const std::string where = path + ":" + std::to_string(line_no);
        if (entry.front() == '[') {
            if (entry.back() != ']')
                throw Error(ErrorKind::InvalidConfig, where + ": unterminated section header");
            section = trim(entry.substr(1, entry.size() - 2));
            if (section.empty()) throw Error(ErrorKind::InvalidConfig, where + ": empty section name");
            continue;
        }
        size_t eq = entry.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::InvalidConfig, where + ": expected key = value");
        std::string key = trim(entry.substr(0, eq));
        std::string value = trim(entry.substr(eq + 1));
        if (value.size() >= 2 && ((value.front() == '"' && value.back() == '"') ||
                                  (value.front() == '\'' && value.back() == '\'')))
            value = value.substr(1, value.size() - 2);
        if (key.empty()) throw Error(ErrorKind::InvalidConfig, where + ": empty key");
        std::string full_key = section.empty() ? key : section + "." + key;
        try {
            apply_config_entry(cfg, full_key, value);
        } catch (const Error& e) {
            throw Error(e.kind(), where + ": " + e.message());
        }
    }
    return cfg;
}

void validate_app_config(const AppConfig& cfg) {
    if (cfg.k < 1) throw Error(ErrorKind::InvalidConfig, "retrieval.k must be at least 1");
    if (cfg.rerank && cfg.rerank_pool < cfg.k)
        throw Error(ErrorKind::InvalidConfig, "retrieval.rerank_pool must be at least k");
    if (cfg.max_chars < 1) throw Error(ErrorKind::InvalidConfig, "chunking.max_chars must be positive");
    if (cfg.overlap_chars < 0 || cfg.overlap_chars >= cfg.max_chars)
        throw Error(ErrorKind::InvalidConfig, "chunking.overlap_chars must be in [0, max_chars)");
    if (cfg.max_steps < 1) throw Error(ErrorKind::InvalidConfig, "engine.max_steps must be at least 1");
    if (cfg.parallelism < 1) throw Error(ErrorKind::InvalidConfig, "eval.parallelism must be at least 1");
    if (cfg.embedding_dim < 1) throw Error(ErrorKind::InvalidConfig, "provider.embedding_dim must be at least 1");
    if (cfg.provider_kind != "mock" && cfg.provider_kind != "remote")
        throw Error(ErrorKind::InvalidConfig, "provider.kind must be \"mock\" or \"remote\"");
    if (cfg.provider_kind == "remote" && cfg.endpoint.empty())
        throw Error(ErrorKind::InvalidConfig, "provider.endpoint is required for the remote provider");
}

namespace {

std::unique_ptr<Provider> make_provider(const AppConfig& cfg) {
    if (cfg.provider_kind == "mock") {
        std::vector<ScriptEntry> script;
        if (!cfg.mock_script_path.empty()) script = load_script(cfg.mock_script_path);
        return std::make_unique<MockProvider>(std::move(script), cfg.embedding_dim);
    }
    RemoteProviderConfig remote;
    remote.endpoint = cfg.endpoint;
    remote.model = cfg.model;
    remote.embed_model = cfg.embed_model;
    remote.rerank_model = cfg.rerank_model;
    return std::make_unique<RemoteProvider>(remote);
}

EngineConfig make_engine_config(const AppConfig& cfg) {
    EngineConfig engine;
    engine.mode = cfg.mode;
    engine.max_steps = cfg.max_steps;
    engine.language = cfg.language;
    engine.few_shots =
        cfg.few_shots_path.empty() ? default_few_shots(cfg.language) : load_few_shots(cfg.few_shots_path);
    if (!cfg.templates_dir.empty()) engine.templates = load_templates(cfg.templates_dir);
    return engine;
}

ScoreRubric make_rubric(const AppConfig& cfg) {
    return cfg.rubric_path.empty() ? default_rubric() : load_rubric(cfg.rubric_path);
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write file: " + path);
    out << content;
    if (!out) throw Error(ErrorKind::IoError, "failed writing file: " + path);
}

int cmd_ingest(const AppConfig& cfg, std::ostream& out, std::ostream& err) {
    CorpusLoad corpus = load_corpus(cfg.corpus_dir);
    for (const std::string& warning : corpus.skipped) err << "warning: " << warning << "\n";
    ChunkingConfig chunking{static_cast<size_t>(cfg.max_chars), static_cast<size_t>(cfg.overlap_chars)};
    std::vector<Chunk> chunks = chunk_corpus(corpus.documents, chunking);
    save_chunks(chunks, cfg.chunks_path);
    out << "ingested " << corpus.documents.size() << " documents into " << chunks.size()
        << " chunks -> " << cfg.chunks_path << "\n";
    return 0;
}

int cmd_index(const AppConfig& cfg, std::ostream& out, std::ostream&) {
    std::vector<Chunk> chunks = load_chunks(cfg.chunks_path);
    std::unique_ptr<Provider> provider = make_provider(cfg);
    EmbeddingIndex index = build_index(chunks, *provider);
    save_index(index, cfg.index_path);
    out << "indexed " << index.entries.size() << " chunks (dim " << index.dim << ") -> "
        << cfg.index_path << "\n";
    return 0;
}

std::vector<Chunk> retrieve_for_question(const AppConfig& cfg, const std::string& question,
                                         Provider& provider) {
    std::vector<Chunk> chunks = load_chunks(cfg.chunks_path);
    EmbeddingIndex index = load_index(cfg.index_path, chunks);
    RetrievalConfig retrieval{cfg.k, cfg.rerank, cfg.rerank_pool};
    std::vector<ScoredChunk> scored =
        retrieve_top_k(index, question, retrieval, provider, cfg.rerank ? &provider : nullptr);
    std::vector<Chunk> picked;
    picked.reserve(scored.size());
    for (const ScoredChunk& sc : scored) picked.push_back(sc.chunk);
    return picked;
}

int cmd_ask(const AppConfig& cfg, GenerationStrategy strategy, const std::string& question,
            const std::string& out_path, std::ostream& out, std::ostream& err) {
    std::unique_ptr<Provider> provider = make_provider(cfg);
    if (strategy == GenerationStrategy::PlainRag) {
        std::vector<Chunk> chunks = retrieve_for_question(cfg, question, *provider);
        EngineConfig engine;
        engine.language = cfg.language;
        if (!cfg.templates_dir.empty()) engine.templates = load_templates(cfg.templates_dir);
        std::string answer = answer_plain_rag(question, chunks, *provider, engine);
        if (!out_path.empty()) write_text_file(out_path, answer + "\n");
        out << answer << "\n";
        return 0;
    }
    if (strategy == GenerationStrategy::LongContext) {
        CorpusLoad corpus = load_corpus(cfg.corpus_dir);
        LongContextOptions options;
        options.language = cfg.language;
        if (!cfg.templates_dir.empty()) options.templates = load_templates(cfg.templates_dir);
        std::string answer = answer_long_context(question, corpus.documents, *provider, options);
        if (!out_path.empty()) write_text_file(out_path, answer + "\n");
        out << answer << "\n";
        return 0;
    }
    std::vector<Chunk> chunks = retrieve_for_question(cfg, question, *provider);
    EngineConfig engine = make_engine_config(cfg);
    DerivationTree tree = run_derivation(question, chunks, *provider, engine);
    if (!out_path.empty()) write_text_file(out_path, render_tree(tree, RenderFormat::Json));
    out << render_tree(tree, RenderFormat::Ascii);
    if (tree.status != TreeStatus::Final) {
        err << "error: derivation aborted: "
            << (tree.abort_reason.empty() ? "unknown reason" : tree.abort_reason) << "\n";
        return 2;
    }
    // Answer last so pipelines can tail it.
    out << "\n" << tree.final_conclusion().value_or("") << "\n";
    return 0;
}

int cmd_render(const std::string& tree_path, RenderFormat format, const std::string& out_path,
               std::ostream& out) {
    std::ifstream in(tree_path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open tree file: " + tree_path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    DerivationTree tree = parse_tree(buffer.str());
    std::string rendered = render_tree(tree, format);
    if (!out_path.empty()) {
        write_text_file(out_path, rendered);
    } else {
        out << rendered;
    }
    return 0;
}

int cmd_eval(const AppConfig& cfg, GenerationStrategy strategy, const std::string& dataset_path,
             const std::string& out_dir, std::ostream& out, std::ostream& err) {
    std::vector<QaRecord> dataset = load_dataset(dataset_path);
    std::unique_ptr<Provider> provider = make_provider(cfg);
    ScoreRubric rubric = make_rubric(cfg);

    // Generate candidates sequentially for records that do not carry one;
    // a failed generation excludes the record, like a failed judgement.
    std::vector<std::pair<size_t, std::string>> generation_failures;
    std::vector<size_t> judged_indices;
    std::vector<QaRecord> to_judge;
    std::optional<CorpusLoad> corpus;
    for (size_t i = 0; i < dataset.size(); ++i) {
        QaRecord record = dataset[i];
        record.strategy = strategy;
        if (record.candidate_answer.empty()) {
            try {
                if (strategy == GenerationStrategy::PlainRag) {
                    std::vector<Chunk> chunks = retrieve_for_question(cfg, record.question, *provider);
                    EngineConfig engine;
                    engine.language = cfg.language;
                    if (!cfg.templates_dir.empty()) engine.templates = load_templates(cfg.templates_dir);
                    record.candidate_answer = answer_plain_rag(record.question, chunks, *provider, engine);
                } else if (strategy == GenerationStrategy::LongContext) {
                    if (!corpus) corpus = load_corpus(cfg.corpus_dir);
                    LongContextOptions options;
                    options.language = cfg.language;
                    if (!cfg.templates_dir.empty()) options.templates = load_templates(cfg.templates_dir);
                    record.candidate_answer =
                        answer_long_context(record.question, corpus->documents, *provider, options);
                } else {
                    std::vector<Chunk> chunks = retrieve_for_question(cfg, record.question, *provider);
                    EngineConfig engine = make_engine_config(cfg);
                    DerivationTree tree = run_derivation(record.question, chunks, *provider, engine);
                    if (tree.status != TreeStatus::Final)
                        throw Error(ErrorKind::MissingFinal,
                                    "derivation aborted: " +
                                        (tree.abort_reason.empty() ? "unknown reason" : tree.abort_reason));
                    record.derivation = tree;
                    record.candidate_answer = tree.final_conclusion().value_or("");
                }
            } catch (const Error& e) {
                generation_failures.emplace_back(i, e.what());
                continue;
            }
        }
        judged_indices.push_back(i);
        to_judge.push_back(std::move(record));
    }

    if (to_judge.empty())
        throw Error(ErrorKind::AllRecordsFailed,
                    "every record failed generation; first error: " + generation_failures.front().second);

    EvalOutcome outcome = run_eval(to_judge, *provider, rubric, cfg.parallelism);

    // Map judged-subset indices back to dataset positions.
    EvalOutcome merged;
    merged.summary = outcome.summary;
    for (const auto& [sub_index, verdict] : outcome.verdicts)
        merged.verdicts.emplace_back(judged_indices[sub_index], verdict);
    for (const auto& [sub_index, message] : outcome.failures)
        merged.failures.emplace_back(judged_indices[sub_index], message);
    for (const auto& failure : generation_failures) merged.failures.push_back(failure);
    std::sort(merged.failures.begin(), merged.failures.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<QaRecord> annotated = dataset;
    for (QaRecord& record : annotated) record.strategy = strategy;
    for (size_t j = 0; j < to_judge.size(); ++j) annotated[judged_indices[j]] = to_judge[j];

    std::string prefix = out_dir.empty() ? "." : out_dir;
    write_verdicts_jsonl(prefix + "/verdicts.jsonl", annotated, merged);
    write_summary_json(prefix + "/summary.json", merged);
    for (const auto& [index, message] : merged.failures)
        err << "warning: record " << (index + 1) << " excluded: " << message << "\n";
    out << summary_to_json(merged);
    return 0;
}

int exit_code_for(const Error& e) {
    if (is_provider_failure(e.kind()) || e.kind() == ErrorKind::AllRecordsFailed) return 2;
    return 1;
}

} // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"derivare: derivation-based question answering over a document corpus"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "Config file (INI-style sections)");

    // Overrides, applied over the config file only when given on the command
    // line; registered at the top level and reachable after any subcommand.
    std::string corpus_dir, chunks_path, index_path, strategy_name, mode_name, language_name;
    std::string provider_kind, endpoint, model, embed_model, rerank_model, mock_script, few_shots_path;
    std::string templates_dir, rubric_path;
    int k = 0, rerank_pool = 0, max_chars = 0, overlap_chars = -1, max_steps = 0, parallelism = 0,
        embedding_dim = 0;
    bool rerank = false, no_rerank = false;
    app.add_option("--corpus-dir", corpus_dir, "Corpus directory");
    app.add_option("--chunks-path", chunks_path, "Chunk store path");
    app.add_option("--index-path", index_path, "Embedding index path");
    app.add_option("--strategy", strategy_name, "Generation strategy: rag | long-context | derivation");
    app.add_option("-k,--k", k, "Chunks to retrieve");
    app.add_flag("--rerank", rerank, "Rerank the retrieval pool with the pair scorer");
    app.add_flag("--no-rerank", no_rerank, "Disable reranking");
    app.add_option("--rerank-pool", rerank_pool, "Pool size fed to the reranker");
    app.add_option("--max-chars", max_chars, "Chunk size in characters");
    app.add_option("--overlap-chars", overlap_chars, "Chunk overlap in characters");
    app.add_option("--mode", mode_name, "Derivation mode: one-step | whole");
    app.add_option("--max-steps", max_steps, "Derivation step budget");
    app.add_option("--language", language_name, "Prompt language: en | es");
    app.add_option("--few-shots", few_shots_path, "Few-shot examples JSON file");
    app.add_option("--templates-dir", templates_dir, "Prompt template directory");
    app.add_option("--provider", provider_kind, "Provider kind: mock | remote");
    app.add_option("--endpoint", endpoint, "Remote provider base URL");
    app.add_option("--model", model, "Remote completion model id");
    app.add_option("--embed-model", embed_model, "Remote embedding model id");
    app.add_option("--rerank-model", rerank_model, "Remote rerank model id");
    app.add_option("--mock-script", mock_script, "Mock provider script JSON file");
    app.add_option("--embedding-dim", embedding_dim, "Mock embedding dimension");
    app.add_option("--rubric", rubric_path, "Score rubric JSON file");
    app.add_option("--parallelism", parallelism, "Concurrent judge calls");

    std::string question, tree_path, dataset_path, format_name = "ascii", out_path;

    CLI::App* ingest = app.add_subcommand("ingest", "Chunk the corpus into the chunk store");
    ingest->fallthrough();
    CLI::App* index = app.add_subcommand("index", "Embed the chunk store into the index");
    index->fallthrough();
    CLI::App* ask = app.add_subcommand("ask", "Answer a question with the chosen strategy");
    ask->fallthrough();
    ask->add_option("question", question, "The question to answer")->required();
    ask->add_option("--out", out_path, "Also write the answer (or derivation tree) to this file");
    CLI::App* render = app.add_subcommand("render", "Render a stored derivation tree");
    render->fallthrough();
    render->add_option("tree", tree_path, "Derivation tree JSON file")->required();
    render->add_option("--format", format_name, "Output format: ascii | dot | json");
    render->add_option("--out", out_path, "Write the rendering to this file instead of stdout");
    CLI::App* eval = app.add_subcommand("eval", "Generate, judge and summarize a dataset");
    eval->fallthrough();
    eval->add_option("dataset", dataset_path, "Dataset JSONL file")->required();
    eval->add_option("--out", out_path, "Directory for verdicts.jsonl and summary.json");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("derivare");
    for (const std::string& arg : args) argv.push_back(arg.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        AppConfig cfg = config_path.empty() ? AppConfig{} : load_app_config(config_path);
        if (app.count("--corpus-dir")) cfg.corpus_dir = corpus_dir;
        if (app.count("--chunks-path")) cfg.chunks_path = chunks_path;
        if (app.count("--index-path")) cfg.index_path = index_path;
        if (app.count("--k")) cfg.k = k;
        if (app.count("--rerank")) cfg.rerank = true;
        if (app.count("--no-rerank")) cfg.rerank = false;
        if (app.count("--rerank-pool")) cfg.rerank_pool = rerank_pool;
        if (app.count("--max-chars")) cfg.max_chars = max_chars;
        if (app.count("--overlap-chars")) cfg.overlap_chars = overlap_chars;
        if (app.count("--mode")) cfg.mode = parse_mode_value("--mode", mode_name);
        if (app.count("--max-steps")) cfg.max_steps = max_steps;
        if (app.count("--language")) cfg.language = parse_language_value("--language", language_name);
        if (app.count("--few-shots")) cfg.few_shots_path = few_shots_path;
        if (app.count("--templates-dir")) cfg.templates_dir = templates_dir;
        if (app.count("--provider")) cfg.provider_kind = lowercase(trim(provider_kind));
        if (app.count("--endpoint")) cfg.endpoint = endpoint;
        if (app.count("--model")) cfg.model = model;
        if (app.count("--embed-model")) cfg.embed_model = embed_model;
        if (app.count("--rerank-model")) cfg.rerank_model = rerank_model;
        if (app.count("--mock-script")) cfg.mock_script_path = mock_script;
        if (app.count("--embedding-dim")) cfg.embedding_dim = embedding_dim;
        if (app.count("--rubric")) cfg.rubric_path = rubric_path;
        if (app.count("--parallelism")) cfg.parallelism = parallelism;
        validate_app_config(cfg);

        GenerationStrategy strategy = GenerationStrategy::Derivation;
        if (app.count("--strategy")) {
            auto parsed = parse_strategy(strategy_name);
            if (!parsed)
                throw Error(ErrorKind::InvalidConfig,
                            "--strategy must be rag, long-context or derivation, got: " + strategy_name);
            strategy = *parsed;
        }

        if (ingest->parsed()) return cmd_ingest(cfg, out, err);
        if (index->parsed()) return cmd_index(cfg, out, err);
        if (ask->parsed()) return cmd_ask(cfg, strategy, question, out_path, out, err);
        if (render->parsed()) {
            auto format = parse_render_format(format_name);
            if (!format)
                throw Error(ErrorKind::InvalidConfig,
                            "--format must be ascii, dot or json, got: " + format_name);
            return cmd_render(tree_path, *format, out_path, out);
        }
        if (eval->parsed()) return cmd_eval(cfg, strategy, dataset_path, out_path, out, err);
        err << "error: no subcommand given\n";
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace derivare
