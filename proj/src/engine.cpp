#include "derivare/engine.hpp"

#include "derivare/bundled.hpp"
#include "derivare/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace derivare {

namespace {

std::string trim(std::string_view s) {
    size_t begin = 0;
    size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return std::string(s.substr(begin, end - begin));
}

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    parts.push_back(current);
    return parts;
}

} // namespace

std::optional<DerivationMode> parse_derivation_mode(std::string_view name) {
    std::string n = lowercase(trim(name));
    if (n == "one-step" || n == "one_step" || n == "onestep") return DerivationMode::OneStep;
    if (n == "whole" || n == "whole-derivation" || n == "whole_derivation") return DerivationMode::WholeDerivation;
    return std::nullopt;
}

std::string_view derivation_mode_str(DerivationMode mode) {
    switch (mode) {
    case DerivationMode::OneStep: return "one-step";
    case DerivationMode::WholeDerivation: return "whole";
    }
    return "unknown";
}

std::optional<GenerationStrategy> parse_strategy(std::string_view name) {
    std::string n = lowercase(trim(name));
    if (n == "rag") return GenerationStrategy::PlainRag;
    if (n == "long-context" || n == "long_context" || n == "longcontext") return GenerationStrategy::LongContext;
    if (n == "derivation") return GenerationStrategy::Derivation;
    return std::nullopt;
}

std::string_view strategy_str(GenerationStrategy strategy) {
    switch (strategy) {
    case GenerationStrategy::PlainRag: return "rag";
    case GenerationStrategy::LongContext: return "long-context";
    case GenerationStrategy::Derivation: return "derivation";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Few-shot examples and templates

namespace {

std::vector<FewShotExample> parse_few_shots_json(const std::string& text, const std::string& origin) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, origin + ": not valid JSON: " + e.what());
    }
    if (!doc.is_array())
        throw Error(ErrorKind::InvalidConfig, origin + ": expected a JSON list of examples");
    std::vector<FewShotExample> out;
    for (size_t i = 0; i < doc.size(); ++i) {
        const auto& item = doc[i];
        const std::string where = origin + ", example " + std::to_string(i + 1);
        if (!item.is_object() || !item.contains("hypotheses") || !item.contains("question") ||
            !item.contains("transcript"))
            throw Error(ErrorKind::InvalidConfig,
                        where + ": expected an object with hypotheses, question and transcript");
        FewShotExample ex;
        if (!item["hypotheses"].is_array() || item["hypotheses"].empty())
            throw Error(ErrorKind::InvalidConfig, where + ": hypotheses must be a non-empty list of strings");
        for (const auto& h : item["hypotheses"]) {
            if (!h.is_string())
                throw Error(ErrorKind::InvalidConfig, where + ": hypotheses must be a non-empty list of strings");
            ex.hypotheses.push_back(h.get<std::string>());
        }
        if (!item["question"].is_string() || !item["transcript"].is_string())
            throw Error(ErrorKind::InvalidConfig, where + ": question and transcript must be strings");
        ex.question = item["question"].get<std::string>();
        ex.transcript = item["transcript"].get<std::string>();
        try {
            parse_derivation_transcript(ex.transcript, static_cast<int>(ex.hypotheses.size()));
        } catch (const Error& e) {
            throw Error(ErrorKind::InvalidConfig, where + ": transcript does not parse: " + e.what());
        }
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw Error(ErrorKind::InvalidConfig, origin + ": example list is empty");
    return out;
}

} // namespace

std::vector<FewShotExample> default_few_shots(Language lang) {
    return parse_few_shots_json(bundled::few_shots_json(lang), "bundled few-shot examples");
}

std::vector<FewShotExample> load_few_shots(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open few-shot examples file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_few_shots_json(buffer.str(), path);
}

EngineConfig engine_defaults(Language lang) {
    EngineConfig cfg;
    cfg.language = lang;
    cfg.few_shots = default_few_shots(lang);
    return cfg;
}

PromptTemplates default_templates(Language lang) {
    PromptTemplates t;
    t.whole_derivation = bundled::whole_derivation_template(lang);
    t.one_step = bundled::one_step_template(lang);
    t.rag = bundled::rag_template(lang);
    t.long_context = bundled::long_context_template(lang);
    return t;
}

namespace {

std::string read_template_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open template file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

} // namespace

PromptTemplates load_templates(const std::string& dir) {
    PromptTemplates t;
    t.whole_derivation = read_template_file(dir + "/whole_derivation.txt");
    t.one_step = read_template_file(dir + "/one_step.txt");
    t.rag = read_template_file(dir + "/rag.txt");
    t.long_context = read_template_file(dir + "/long_context.txt");
    return t;
}

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    size_t pos = 0;
    while (pos < tmpl.size()) {
        size_t open = tmpl.find("{{", pos);
        if (open == std::string::npos) {
            out.append(tmpl, pos, std::string::npos);
            break;
        }
        out.append(tmpl, pos, open - pos);
        size_t close = tmpl.find("}}", open + 2);
        if (close == std::string::npos)
            throw Error(ErrorKind::InvalidConfig, "template has an unterminated {{ placeholder");
        std::string key = tmpl.substr(open + 2, close - open - 2);
        auto it = values.find(key);
        if (it == values.end())
            throw Error(ErrorKind::InvalidConfig, "template references unknown placeholder {{" + key + "}}");
        out += it->second;
        pos = close + 2;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Transcript grammar

ParsedStepLine parse_step_line(const std::string& line) {
    std::vector<std::string> fields = split(line, '|');
    if (fields.size() != 4)
        throw Error(ErrorKind::MalformedLine, "expected 4 pipe-separated fields, got " +
                                                  std::to_string(fields.size()) + ": " + trim(line));
    for (auto& f : fields) f = trim(f);

    ParsedStepLine parsed;
    auto rule = parse_rule_name(fields[0]);
    if (!rule) throw Error(ErrorKind::UnknownRule, "unknown rule name: " + fields[0]);
    parsed.rule = *rule;

    if (!fields[1].empty()) {
        for (const std::string& raw : split(fields[1], ',')) {
            std::string label = trim(raw);
            if (label.empty())
                throw Error(ErrorKind::MalformedLine, "empty label in argument list: " + fields[1]);
            parsed.args.push_back(std::move(label));
        }
    }
    if (parsed.args.empty() && parsed.rule != RuleName::NoInfo)
        throw Error(ErrorKind::ArityMismatch,
                    std::string(rule_name_str(parsed.rule)) + " requires arguments; only NoInfo takes none");

    if (fields[2].empty()) throw Error(ErrorKind::EmptyConclusion, "step line has an empty conclusion");
    parsed.conclusion = fields[2];

    std::string finality = lowercase(fields[3]);
    if (!finality.empty() && finality.back() == '.') finality.pop_back();
    finality = trim(finality);
    if (finality == "final answer") {
        parsed.is_final = true;
    } else if (finality == "not a final answer") {
        parsed.is_final = false;
    } else {
        throw Error(ErrorKind::BadFinalityMarker,
                    "finality must be \"Final answer\" or \"Not a final answer\", got: " + fields[3]);
    }
    return parsed;
}

std::string serialize_step_line(const DerivationStep& step) {
    if (step.conclusion.find('|') != std::string::npos)
        throw Error(ErrorKind::MalformedLine, "conclusion contains the reserved '|' character");
    for (const std::string& arg : step.args)
        if (arg.find('|') != std::string::npos || arg.find(',') != std::string::npos)
            throw Error(ErrorKind::MalformedLine, "argument label contains a reserved character: " + arg);
    std::string args;
    for (size_t i = 0; i < step.args.size(); ++i) {
        if (i > 0) args += ",";
        args += step.args[i];
    }
    std::string out(rule_name_str(step.rule));
    out += " | " + args + " | " + step.conclusion + " | ";
    out += step.is_final ? "Final answer" : "Not a final answer";
    return out;
}

std::string serialize_transcript(const std::vector<DerivationStep>& steps) {
    std::string out;
    for (const DerivationStep& step : steps) {
        out += serialize_step_line(step);
        out += '\n';
    }
    return out;
}

namespace {

struct TranscriptScan {
    std::vector<DerivationStep> steps; // valid prefix, out_label filled
    std::optional<Error> error;        // first error, message carries the line number
};

// Collects the valid step prefix of a transcript and the first error, if any.
// Steps after a final line are not added to the prefix.
TranscriptScan scan_transcript(const std::string& text, int initial_count) {
    TranscriptScan scan;
    std::set<std::string> available;
    for (int i = 1; i <= initial_count; ++i) available.insert(std::to_string(i));
    int derived = 0;
    bool saw_final = false;

    int line_no = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find('|') == std::string::npos) continue; // prose, echoes, blanks
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (saw_final) {
            scan.error = Error(ErrorKind::StepsAfterFinal, where + "step after the final step");
            return scan;
        }
        ParsedStepLine parsed;
        try {
            parsed = parse_step_line(line);
        } catch (const Error& e) {
            scan.error = Error(e.kind(), where + e.message());
            return scan;
        }
        if (static_cast<int>(parsed.args.size()) != rule_arity(parsed.rule)) {
            scan.error = Error(ErrorKind::ArityMismatch,
                               where + std::string(rule_name_str(parsed.rule)) + " takes " +
                                   std::to_string(rule_arity(parsed.rule)) + " arguments, got " +
                                   std::to_string(parsed.args.size()));
            return scan;
        }
        for (const std::string& arg : parsed.args) {
            if (!available.count(arg)) {
                scan.error =
                    Error(ErrorKind::ForwardReference, where + "label used before it exists: " + arg);
                return scan;
            }
        }
        DerivationStep step;
        step.rule = parsed.rule;
        step.args = parsed.args;
        step.conclusion = parsed.conclusion;
        step.is_final = parsed.is_final;
        if (parsed.is_final) {
            saw_final = true;
        } else {
            step.out_label = next_label(initial_count, derived);
            available.insert(*step.out_label);
            ++derived;
        }
        scan.steps.push_back(std::move(step));
    }
    if (!saw_final)
        scan.error = Error(ErrorKind::MissingFinal, "transcript ended without a final step");
    return scan;
}

} // namespace

std::vector<DerivationStep> parse_derivation_transcript(const std::string& text, int initial_count) {
    if (initial_count < 1)
        throw Error(ErrorKind::EmptyHypotheses, "a transcript needs at least one initial hypothesis");
    TranscriptScan scan = scan_transcript(text, initial_count);
    if (scan.error) throw *scan.error;
    return scan.steps;
}

// ---------------------------------------------------------------------------
// Prompt construction

namespace {

std::string rules_block(Language lang) {
    std::string out;
    for (const Rule& rule : rule_catalogue(lang)) {
        out += "- ";
        out += rule_name_str(rule.name);
        out += " (" + std::to_string(rule.arity) + (rule.arity == 1 ? " argument" : " arguments") + "): ";
        out += rule.description;
        out += '\n';
    }
    if (!out.empty()) out.pop_back();
    return out;
}

std::string numbered_block(const std::vector<std::string>& texts) {
    std::string out;
    for (size_t i = 0; i < texts.size(); ++i) {
        out += std::to_string(i + 1) + ". " + texts[i] + "\n";
    }
    if (!out.empty()) out.pop_back();
    return out;
}

std::string labelled_block(const std::vector<Hypothesis>& hypotheses) {
    std::string out;
    for (const Hypothesis& h : hypotheses) {
        out += h.label + ". " + h.text + "\n";
    }
    if (!out.empty()) out.pop_back();
    return out;
}

std::string few_shots_block(const std::vector<FewShotExample>& examples, Language lang) {
    const char* hypotheses_word = lang == Language::Es ? "Hipótesis:" : "Hypotheses:";
    const char* question_word = lang == Language::Es ? "Pregunta del usuario:" : "User question:";
    std::string out;
    for (size_t i = 0; i < examples.size(); ++i) {
        if (i > 0) out += "\n\n";
        const FewShotExample& ex = examples[i];
        out += hypotheses_word;
        out += '\n';
        out += numbered_block(ex.hypotheses);
        out += "\n\n";
        out += question_word;
        out += ' ' + ex.question;
        out += "\n\n";
        std::string transcript = ex.transcript;
        while (!transcript.empty() && transcript.back() == '\n') transcript.pop_back();
        out += transcript;
    }
    return out;
}

const PromptTemplates& templates_for(const EngineConfig& cfg, PromptTemplates& storage) {
    if (cfg.templates) return *cfg.templates;
    storage = default_templates(cfg.language);
    return storage;
}

} // namespace

std::string build_whole_derivation_prompt(const std::vector<Hypothesis>& hypotheses, const std::string& query,
                                          const EngineConfig& cfg) {
    if (hypotheses.empty())
        throw Error(ErrorKind::EmptyHypotheses, "cannot build a derivation prompt without hypotheses");
    if (cfg.few_shots.empty())
        throw Error(ErrorKind::InvalidConfig, "whole-derivation prompts require at least one few-shot example");
    std::vector<std::string> texts;
    texts.reserve(hypotheses.size());
    for (const Hypothesis& h : hypotheses) texts.push_back(h.text);
    PromptTemplates storage;
    const PromptTemplates& templates = templates_for(cfg, storage);
    return render_template(templates.whole_derivation,
                           {{"rules", rules_block(cfg.language)},
                            {"few_shots", few_shots_block(cfg.few_shots, cfg.language)},
                            {"hypotheses", numbered_block(texts)},
                            {"question", query}});
}

std::string build_one_step_prompt(const DerivationTree& tree, const EngineConfig& cfg) {
    if (tree.status != TreeStatus::InProgress)
        throw Error(ErrorKind::TreeAlreadyFinal, "cannot extend a tree that is no longer in progress");
    if (tree.initial.empty())
        throw Error(ErrorKind::EmptyHypotheses, "cannot build a derivation prompt without hypotheses");
    PromptTemplates storage;
    const PromptTemplates& templates = templates_for(cfg, storage);
    return render_template(templates.one_step, {{"rules", rules_block(cfg.language)},
                                                {"hypotheses", labelled_block(tree.all_hypotheses())},
                                                {"question", tree.query}});
}

// ---------------------------------------------------------------------------
// Derivation loop

namespace {

void abort_tree(DerivationTree& tree, std::string reason) {
    tree.status = TreeStatus::Aborted;
    tree.abort_reason = std::move(reason);
}

// Applies a scanned transcript to the tree under the step budget. The final
// step is applied only when the scan holds a complete, error-free transcript.
void replay_transcript(DerivationTree& tree, const TranscriptScan& scan, int max_steps) {
    size_t budget = static_cast<size_t>(max_steps);
    size_t limit = std::min(scan.steps.size(), budget);
    for (size_t i = 0; i < limit; ++i) {
        const DerivationStep& step = scan.steps[i];
        if (step.is_final && (scan.error || scan.steps.size() > budget)) break;
        try {
            apply_step(tree, step.rule, step.args, step.conclusion, step.is_final);
        } catch (const Error& e) {
            abort_tree(tree, std::string("transcript error: ") + e.what());
            return;
        }
    }
    if (tree.status == TreeStatus::Final) return;
    if (tree.steps.size() >= budget) {
        abort_tree(tree, kStepBudgetReason);
    } else if (scan.error) {
        abort_tree(tree, "transcript error: " + scan.error->message());
    } else {
        // Complete transcript, final step within budget: handled above.
        abort_tree(tree, "transcript error: transcript ended without a final step");
    }
}

std::optional<std::string> first_step_line(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find('|') != std::string::npos) return line;
    }
    return std::nullopt;
}

} // namespace

DerivationTree run_derivation(const std::string& query, const std::vector<Chunk>& chunks, Provider& provider,
                              const EngineConfig& cfg) {
    if (chunks.empty())
        throw Error(ErrorKind::EmptyHypotheses, "cannot derive an answer without retrieved chunks");
    if (cfg.max_steps < 1)
        throw Error(ErrorKind::InvalidConfig, "max_steps must be at least 1");
    std::vector<std::pair<std::string, std::string>> initial;
    initial.reserve(chunks.size());
    for (const Chunk& chunk : chunks) initial.emplace_back(chunk.chunk_id, chunk.text);
    DerivationTree tree = make_tree(query, initial);

    if (cfg.mode == DerivationMode::WholeDerivation) {
        if (cfg.few_shots.empty())
            throw Error(ErrorKind::InvalidConfig,
                        "whole-derivation mode requires at least one few-shot example");
        std::string prompt = build_whole_derivation_prompt(tree.initial, query, cfg);
        std::string response;
        try {
            response = provider.complete({std::nullopt, prompt});
        } catch (const Error& e) {
            abort_tree(tree, std::string("provider error: ") + e.what());
            return tree;
        }
        TranscriptScan scan = scan_transcript(response, static_cast<int>(tree.initial.size()));
        replay_transcript(tree, scan, cfg.max_steps);
        return tree;
    }

    for (int step = 0; step < cfg.max_steps; ++step) {
        std::string prompt = build_one_step_prompt(tree, cfg);
        std::string response;
        try {
            response = provider.complete({std::nullopt, prompt});
        } catch (const Error& e) {
            abort_tree(tree, std::string("provider error: ") + e.what());
            return tree;
        }
        std::optional<std::string> line = first_step_line(response);
        if (!line) {
            abort_tree(tree, "transcript error: model response contains no step line");
            return tree;
        }
        try {
            ParsedStepLine parsed = parse_step_line(*line);
            apply_step(tree, parsed.rule, parsed.args, parsed.conclusion, parsed.is_final);
        } catch (const Error& e) {
            abort_tree(tree, std::string("transcript error: ") + e.what());
            return tree;
        }
        if (tree.status == TreeStatus::Final) return tree;
    }
    abort_tree(tree, kStepBudgetReason);
    return tree;
}

// ---------------------------------------------------------------------------
// Baselines

std::string answer_plain_rag(const std::string& query, const std::vector<Chunk>& chunks, Provider& provider,
                             const EngineConfig& cfg) {
    if (chunks.empty())
        throw Error(ErrorKind::EmptyInput, "cannot answer without retrieved chunks");
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const Chunk& chunk : chunks) texts.push_back(chunk.text);
    PromptTemplates storage;
    const PromptTemplates& templates = templates_for(cfg, storage);
    std::string prompt =
        render_template(templates.rag, {{"chunks", numbered_block(texts)}, {"question", query}});
    return provider.complete({std::nullopt, prompt});
}

std::string answer_long_context(const std::string& query, const std::vector<Document>& docs, Provider& provider,
                                const LongContextOptions& options) {
    if (docs.empty()) throw Error(ErrorKind::EmptyInput, "cannot answer without documents");
    std::string block;
    for (const Document& doc : docs) {
        block += "--- " + doc.doc_id + " ---\n";
        block += doc.text;
        block += "\n\n";
    }
    while (!block.empty() && block.back() == '\n') block.pop_back();
    if (block.size() > options.max_context_chars)
        throw Error(ErrorKind::ContextOverflow,
                    "documents total " + std::to_string(block.size()) + " characters, budget is " +
                        std::to_string(options.max_context_chars));
    PromptTemplates templates = options.templates ? *options.templates : default_templates(options.language);
    std::string prompt =
        render_template(templates.long_context, {{"documents", block}, {"question", query}});
    return provider.complete({std::nullopt, prompt});
}

} // namespace derivare
