#include "derivare/core.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace derivare {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ArityMismatch: return "ArityMismatch";
        case ErrorKind::UnknownLabel: return "UnknownLabel";
        case ErrorKind::UnknownRule: return "UnknownRule";
        case ErrorKind::TreeAlreadyFinal: return "TreeAlreadyFinal";
        case ErrorKind::EmptyConclusion: return "EmptyConclusion";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::EmptyCorpus: return "EmptyCorpus";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::TransportError: return "TransportError";
        case ErrorKind::RateLimited: return "RateLimited";
        case ErrorKind::ScriptExhausted: return "ScriptExhausted";
        case ErrorKind::ScriptMismatch: return "ScriptMismatch";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::ZeroVector: return "ZeroVector";
        case ErrorKind::EmptyHypotheses: return "EmptyHypotheses";
        case ErrorKind::MalformedLine: return "MalformedLine";
        case ErrorKind::BadFinalityMarker: return "BadFinalityMarker";
        case ErrorKind::ForwardReference: return "ForwardReference";
        case ErrorKind::MissingFinal: return "MissingFinal";
        case ErrorKind::StepsAfterFinal: return "StepsAfterFinal";
        case ErrorKind::StepBudgetExceeded: return "StepBudgetExceeded";
        case ErrorKind::ContextOverflow: return "ContextOverflow";
        case ErrorKind::MissingReference: return "MissingReference";
        case ErrorKind::NoResultMarker: return "NoResultMarker";
        case ErrorKind::ScoreOutOfRange: return "ScoreOutOfRange";
        case ErrorKind::AllRecordsFailed: return "AllRecordsFailed";
    }
    return "UnknownError";
}

bool is_provider_failure(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::TransportError:
        case ErrorKind::RateLimited:
        case ErrorKind::ScriptExhausted:
        case ErrorKind::ScriptMismatch:
            return true;
        default:
            return false;
    }
}

// ---------------------------------------------------------------------------
// Rules

namespace {

struct RuleInfo {
    RuleName name;
    const char* text;
    int arity;
    const char* description_en;
    const char* description_es;
};

const RuleInfo kRules[] = {
    {RuleName::Extract, "Extract", 1,
     "Given a hypothesis h, this rule extracts a specific part of h as a conclusion.",
     "Dada una hipótesis h, esta regla extrae una parte específica de h como conclusión."},
    {RuleName::Concat, "Concat", 2,
     "Combines two independent hypotheses to generate the conclusion.",
     "Combina dos hipótesis independientes para generar la conclusión."},
    {RuleName::Instantiate, "Instantiate", 1,
     "Generates a conclusion by instantiating a generic hypothesis into a particular case.",
     "Genera una conclusión instanciando una hipótesis genérica en un caso particular."},
    {RuleName::Compose, "Compose", 2,
     "Combines two hypotheses that share a common element to generate a new conclusion.",
     "Combina dos hipótesis que comparten un elemento común para generar una nueva conclusión."},
    {RuleName::Refine, "Refine", 1,
     "Given a hypothesis h, it slightly adapts it to better fit the question, without modifying the semantics or "
     "content of h.",
     "Dada una hipótesis h, la adapta ligeramente para ajustarse mejor a la pregunta, sin modificar la semántica ni "
     "el contenido de h."},
    {RuleName::NoInfo, "NoInfo", 0,
     "This rule is used when none of the hypotheses provide information to answer the question (or part of the "
     "question).",
     "Esta regla se usa cuando ninguna de las hipótesis aporta información para responder la pregunta (o parte de la "
     "pregunta)."},
};

const RuleInfo& rule_info(RuleName rule) {
    for (const auto& info : kRules) {
        if (info.name == rule) return info;
    }
    return kRules[0]; // unreachable for valid enum values
}

std::string lower_trim(std::string_view text) {
    size_t begin = text.find_first_not_of(" \t\r\n");
    if (begin == std::string_view::npos) return {};
    size_t end = text.find_last_not_of(" \t\r\n");
    std::string out(text.substr(begin, end - begin + 1));
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

} // namespace

int rule_arity(RuleName rule) { return rule_info(rule).arity; }

std::string_view rule_name_str(RuleName rule) { return rule_info(rule).text; }

std::optional<RuleName> parse_rule_name(std::string_view text) {
    std::string needle = lower_trim(text);
    for (const auto& info : kRules) {
        if (needle == lower_trim(info.text)) return info.name;
    }
    return std::nullopt;
}

std::string_view rule_description(RuleName rule, Language lang) {
    const auto& info = rule_info(rule);
    return lang == Language::Es ? info.description_es : info.description_en;
}

std::vector<Rule> rule_catalogue(Language lang) {
    std::vector<Rule> out;
    for (const auto& info : kRules) {
        out.push_back({info.name, info.arity, std::string(lang == Language::Es ? info.description_es : info.description_en)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trees

std::string_view tree_status_str(TreeStatus status) {
    switch (status) {
        case TreeStatus::InProgress: return "in_progress";
        case TreeStatus::Final: return "final";
        case TreeStatus::Aborted: return "aborted";
    }
    return "in_progress";
}

std::vector<Hypothesis> DerivationTree::all_hypotheses() const {
    std::vector<Hypothesis> out = initial;
    for (size_t i = 0; i < steps.size(); ++i) {
        if (steps[i].out_label) {
            Hypothesis h;
            h.label = *steps[i].out_label;
            h.text = steps[i].conclusion;
            h.origin = Hypothesis::Origin::Derived;
            h.step_index = static_cast<int>(i);
            out.push_back(std::move(h));
        }
    }
    return out;
}

std::optional<Hypothesis> DerivationTree::find_hypothesis(const std::string& label) const {
    for (const auto& h : all_hypotheses()) {
        if (h.label == label) return h;
    }
    return std::nullopt;
}

int DerivationTree::derived_count() const {
    int n = 0;
    for (const auto& step : steps) {
        if (!step.is_final) ++n;
    }
    return n;
}

std::optional<std::string> DerivationTree::final_conclusion() const {
    if (status != TreeStatus::Final || steps.empty()) return std::nullopt;
    return steps.back().conclusion;
}

DerivationTree make_tree(std::string query, const std::vector<std::pair<std::string, std::string>>& chunk_id_and_text) {
    DerivationTree tree;
    tree.query = std::move(query);
    int index = 0;
    for (const auto& [chunk_id, text] : chunk_id_and_text) {
        Hypothesis h;
        h.label = std::to_string(++index);
        h.text = text;
        h.origin = Hypothesis::Origin::Initial;
        h.chunk_id = chunk_id;
        tree.initial.push_back(std::move(h));
    }
    return tree;
}

std::string next_label(int initial_count, int derived_count) {
    if (initial_count < 0 || derived_count < 0) {
        throw Error(ErrorKind::InvalidConfig, "label counts must be non-negative");
    }
    // Bijective base-26: 0 -> "a", 25 -> "z", 26 -> "aa", ...
    long n = static_cast<long>(derived_count) + 1;
    std::string out;
    while (n > 0) {
        --n;
        out.insert(out.begin(), static_cast<char>('a' + n % 26));
        n /= 26;
    }
    return out;
}

std::optional<std::string> apply_step(DerivationTree& tree, RuleName rule, const std::vector<std::string>& args,
                                      const std::string& conclusion, bool is_final) {
    if (tree.status != TreeStatus::InProgress) {
        throw Error(ErrorKind::TreeAlreadyFinal, "cannot apply a step to a " + std::string(tree_status_str(tree.status)) + " tree");
    }
    if (static_cast<int>(args.size()) != rule_arity(rule)) {
        throw Error(ErrorKind::ArityMismatch, std::string(rule_name_str(rule)) + " takes " +
                                                  std::to_string(rule_arity(rule)) + " argument(s), got " +
                                                  std::to_string(args.size()));
    }
    for (const auto& arg : args) {
        if (!tree.find_hypothesis(arg)) {
            throw Error(ErrorKind::UnknownLabel, "no hypothesis labelled \"" + arg + "\"");
        }
    }
    if (conclusion.empty()) {
        throw Error(ErrorKind::EmptyConclusion, "step conclusion must not be empty");
    }

    DerivationStep step;
    step.rule = rule;
    step.args = args;
    step.conclusion = conclusion;
    step.is_final = is_final;
    if (is_final) {
        tree.steps.push_back(std::move(step));
        tree.status = TreeStatus::Final;
        return std::nullopt;
    }
    std::string label = next_label(static_cast<int>(tree.initial.size()), tree.derived_count());
    step.out_label = label;
    tree.steps.push_back(std::move(step));
    return label;
}

// ---------------------------------------------------------------------------
// Validation

const char* violation_kind_name(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::DuplicateLabel: return "duplicate_label";
        case ViolationKind::BadInitialLabel: return "bad_initial_label";
        case ViolationKind::ArityMismatch: return "arity_mismatch";
        case ViolationKind::UnknownLabel: return "unknown_label";
        case ViolationKind::ForwardReference: return "forward_reference";
        case ViolationKind::FinalNotLast: return "final_not_last";
        case ViolationKind::StatusMismatch: return "status_mismatch";
        case ViolationKind::MissingOutLabel: return "missing_out_label";
        case ViolationKind::UnexpectedOutLabel: return "unexpected_out_label";
        case ViolationKind::BadOutLabel: return "bad_out_label";
        case ViolationKind::EmptyConclusion: return "empty_conclusion";
        case ViolationKind::NoInfoInFinal: return "noinfo_in_final";
    }
    return "unknown";
}

std::vector<Violation> validate_tree(const DerivationTree& tree) {
    std::vector<Violation> out;
    auto add = [&](ViolationKind kind, int step_index, std::string message, Severity severity = Severity::Error) {
        out.push_back({kind, severity, step_index, std::move(message)});
    };

    const int initial_count = static_cast<int>(tree.initial.size());
    for (int i = 0; i < initial_count; ++i) {
        const auto& h = tree.initial[i];
        if (h.label != std::to_string(i + 1)) {
            add(ViolationKind::BadInitialLabel, -1,
                "initial hypothesis " + std::to_string(i) + " labelled \"" + h.label + "\", expected \"" +
                    std::to_string(i + 1) + "\"");
        }
        if (h.origin != Hypothesis::Origin::Initial) {
            add(ViolationKind::BadInitialLabel, -1, "initial hypothesis \"" + h.label + "\" has a derived origin");
        }
    }

    // Duplicate labels across initial hypotheses and step outputs.
    {
        std::set<std::string> seen;
        auto check = [&](const std::string& label, int step_index) {
            if (!seen.insert(label).second) {
                add(ViolationKind::DuplicateLabel, step_index, "label \"" + label + "\" assigned more than once");
            }
        };
        for (const auto& h : tree.initial) check(h.label, -1);
        for (size_t i = 0; i < tree.steps.size(); ++i) {
            if (tree.steps[i].out_label) check(*tree.steps[i].out_label, static_cast<int>(i));
        }
    }

    // Labels produced by each step, for distinguishing a forward reference
    // from a label that never exists at all.
    std::set<std::string> all_labels;
    for (const auto& h : tree.initial) all_labels.insert(h.label);
    for (const auto& step : tree.steps) {
        if (step.out_label) all_labels.insert(*step.out_label);
    }

    std::set<std::string> available;
    for (const auto& h : tree.initial) available.insert(h.label);

    std::set<std::string> noinfo_labels; // outputs of non-final NoInfo steps
    int derived_so_far = 0;
    const int last = static_cast<int>(tree.steps.size()) - 1;
    for (int i = 0; i <= last; ++i) {
        const auto& step = tree.steps[i];
        if (static_cast<int>(step.args.size()) != rule_arity(step.rule)) {
            add(ViolationKind::ArityMismatch, i,
                std::string(rule_name_str(step.rule)) + " takes " + std::to_string(rule_arity(step.rule)) +
                    " argument(s), step has " + std::to_string(step.args.size()));
        }
        for (const auto& arg : step.args) {
            if (available.count(arg)) continue;
            if (all_labels.count(arg)) {
                add(ViolationKind::ForwardReference, i, "argument \"" + arg + "\" used before it is derived");
            } else {
                add(ViolationKind::UnknownLabel, i, "argument \"" + arg + "\" does not name any hypothesis");
            }
        }
        if (step.conclusion.empty()) {
            add(ViolationKind::EmptyConclusion, i, "step conclusion is empty");
        }
        if (step.is_final) {
            if (i != last) {
                add(ViolationKind::FinalNotLast, i, "final step not last");
            }
            if (step.out_label) {
                add(ViolationKind::UnexpectedOutLabel, i, "final step carries out_label \"" + *step.out_label + "\"");
            }
            for (const auto& arg : step.args) {
                if (noinfo_labels.count(arg)) {
                    add(ViolationKind::NoInfoInFinal, i,
                        "final step combines the no-information hypothesis \"" + arg + "\"", Severity::Info);
                }
            }
        } else {
            if (!step.out_label) {
                add(ViolationKind::MissingOutLabel, i, "non-final step has no out_label");
            } else {
                std::string expected = next_label(initial_count, derived_so_far);
                if (*step.out_label != expected) {
                    add(ViolationKind::BadOutLabel, i,
                        "out_label \"" + *step.out_label + "\", expected \"" + expected + "\"");
                }
                available.insert(*step.out_label);
                if (step.rule == RuleName::NoInfo) noinfo_labels.insert(*step.out_label);
            }
            ++derived_so_far;
        }
    }

    const bool has_final = !tree.steps.empty() && tree.steps.back().is_final;
    switch (tree.status) {
        case TreeStatus::Final:
            if (!has_final) add(ViolationKind::StatusMismatch, -1, "status is final but the last step is not");
            break;
        case TreeStatus::InProgress:
        case TreeStatus::Aborted:
            if (has_final) {
                add(ViolationKind::StatusMismatch, -1,
                    "status is " + std::string(tree_status_str(tree.status)) + " but the tree ends in a final step");
            }
            break;
    }

    return out;
}

bool tree_ok(const DerivationTree& tree) {
    for (const auto& v : validate_tree(tree)) {
        if (v.severity == Severity::Error) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

using nlohmann::json;

std::string truncate_for_display(const std::string& text, size_t limit = 160) {
    if (text.size() <= limit) return text;
    return text.substr(0, limit) + "...";
}

std::string join_labels(const std::vector<std::string>& labels) {
    std::string out;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (i) out += ", ";
        out += labels[i];
    }
    return out;
}

struct AsciiRenderer {
    const DerivationTree& tree;
    std::ostringstream out;
    std::vector<bool> rendered;

    explicit AsciiRenderer(const DerivationTree& t) : tree(t), rendered(t.steps.size(), false) {}

    // Step that produced `label`, or -1 for initial/unknown labels.
    int producer(const std::string& label) const {
        for (size_t i = 0; i < tree.steps.size(); ++i) {
            if (tree.steps[i].out_label && *tree.steps[i].out_label == label) return static_cast<int>(i);
        }
        return -1;
    }

    void leaf(const std::string& prefix, bool is_last, const std::string& text) {
        out << prefix << (is_last ? "`-- " : "|-- ") << text << "\n";
    }

    void step_node(int index, const std::string& prefix, const std::string& connector, const std::string& child_prefix) {
        const auto& step = tree.steps[index];
        rendered[index] = true;
        out << prefix << connector;
        if (step.is_final) {
            out << rule_name_str(step.rule) << "(" << join_labels(step.args) << ") => final answer\n";
        } else {
            out << *step.out_label << " = " << rule_name_str(step.rule) << "(" << join_labels(step.args) << ")\n";
        }
        out << child_prefix << (step.args.empty() ? "    " : "|   ") << "\"" << truncate_for_display(step.conclusion)
            << "\"\n";
        for (size_t a = 0; a < step.args.size(); ++a) {
            const bool last_child = a + 1 == step.args.size();
            child(step.args[a], child_prefix, last_child);
        }
    }

    void child(const std::string& label, const std::string& prefix, bool is_last) {
        int source = producer(label);
        if (source < 0) {
            auto h = tree.find_hypothesis(label);
            std::string origin = h && !h->chunk_id.empty() ? " [initial " + h->chunk_id + "]" : " [initial]";
            leaf(prefix, is_last, label + origin);
            return;
        }
        if (rendered[source]) {
            leaf(prefix, is_last, label + " (shown above)");
            return;
        }
        step_node(source, prefix, is_last ? "`-- " : "|-- ", prefix + (is_last ? "    " : "|   "));
    }

    std::string render() {
        out << "question: " << tree.query << "\n";
        out << "status: " << tree_status_str(tree.status);
        if (tree.status == TreeStatus::Aborted && !tree.abort_reason.empty()) out << " (" << tree.abort_reason << ")";
        out << "\n";
        if (tree.steps.empty()) {
            out << "(no steps)\n";
            return out.str();
        }
        for (int i = static_cast<int>(tree.steps.size()) - 1; i >= 0; --i) {
            if (!rendered[i]) step_node(i, "", "", "");
        }
        return out.str();
    }
};

std::string dot_escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out;
}

std::string render_dot(const DerivationTree& tree) {
    std::ostringstream out;
    out << "digraph derivation {\n";
    for (const auto& h : tree.initial) {
        out << "  \"" << dot_escape(h.label) << "\" [shape=box];\n";
    }
    for (const auto& step : tree.steps) {
        std::string node = step.is_final ? "CONCLUSION" : *step.out_label;
        out << "  \"" << dot_escape(node) << "\" [label=\"" << dot_escape(node) << ": " << rule_name_str(step.rule)
            << "\"";
        if (step.is_final) out << " shape=doubleoctagon";
        out << "];\n";
    }
    for (const auto& step : tree.steps) {
        std::string node = step.is_final ? "CONCLUSION" : *step.out_label;
        for (const auto& arg : step.args) {
            out << "  \"" << dot_escape(arg) << "\" -> \"" << dot_escape(node) << "\";\n";
        }
    }
    out << "}\n";
    return out.str();
}

json tree_to_json(const DerivationTree& tree) {
    json initial = json::array();
    for (const auto& h : tree.initial) {
        initial.push_back({{"label", h.label}, {"text", h.text}, {"chunk_id", h.chunk_id}});
    }
    json steps = json::array();
    for (const auto& step : tree.steps) {
        json s = {{"rule", rule_name_str(step.rule)},
                  {"args", step.args},
                  {"conclusion", step.conclusion},
                  {"is_final", step.is_final}};
        if (step.out_label) s["out_label"] = *step.out_label;
        steps.push_back(std::move(s));
    }
    json doc = {{"query", tree.query},
                {"initial", std::move(initial)},
                {"steps", std::move(steps)},
                {"status", tree_status_str(tree.status)}};
    if (tree.status == TreeStatus::Aborted) doc["abort_reason"] = tree.abort_reason;
    return doc;
}

} // namespace

std::optional<RenderFormat> parse_render_format(std::string_view name) {
    std::string needle = lower_trim(name);
    if (needle == "ascii") return RenderFormat::Ascii;
    if (needle == "dot") return RenderFormat::Dot;
    if (needle == "json") return RenderFormat::Json;
    return std::nullopt;
}

std::string render_tree(const DerivationTree& tree, RenderFormat format) {
    switch (format) {
        case RenderFormat::Ascii: return AsciiRenderer(tree).render();
        case RenderFormat::Dot: return render_dot(tree);
        case RenderFormat::Json: return tree_to_json(tree).dump(2) + "\n";
    }
    return {};
}

DerivationTree parse_tree(const std::string& json_text) {
    const json doc = json::parse(json_text);
    DerivationTree tree;
    tree.query = doc.at("query").get<std::string>();
    for (const auto& item : doc.at("initial")) {
        Hypothesis h;
        h.label = item.at("label").get<std::string>();
        h.text = item.at("text").get<std::string>();
        h.origin = Hypothesis::Origin::Initial;
        h.chunk_id = item.value("chunk_id", std::string());
        tree.initial.push_back(std::move(h));
    }
    int index = 0;
    for (const auto& item : doc.at("steps")) {
        DerivationStep step;
        auto rule = parse_rule_name(item.at("rule").get<std::string>());
        if (!rule) {
            throw Error(ErrorKind::UnknownRule, "step " + std::to_string(index) + ": \"" +
                                                    item.at("rule").get<std::string>() + "\"");
        }
        step.rule = *rule;
        step.args = item.at("args").get<std::vector<std::string>>();
        step.conclusion = item.at("conclusion").get<std::string>();
        step.is_final = item.at("is_final").get<bool>();
        if (item.contains("out_label")) step.out_label = item.at("out_label").get<std::string>();
        tree.steps.push_back(std::move(step));
        ++index;
    }
    const std::string status = doc.at("status").get<std::string>();
    if (status == "final") {
        tree.status = TreeStatus::Final;
    } else if (status == "aborted") {
        tree.status = TreeStatus::Aborted;
        tree.abort_reason = doc.value("abort_reason", std::string());
    } else if (status == "in_progress") {
        tree.status = TreeStatus::InProgress;
    } else {
        throw Error(ErrorKind::InvalidConfig, "unknown tree status \"" + status + "\"");
    }
    return tree;
}

} // namespace derivare
