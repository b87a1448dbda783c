#pragma once

#include "derivare/core.hpp"
#include "derivare/ingest.hpp"
#include "derivare/provider.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace derivare {

// A complete worked derivation used to teach the whole-derivation format.
struct FewShotExample {
    std::vector<std::string> hypotheses;
    std::string question;
    std::string transcript; // must parse against |hypotheses|

    bool operator==(const FewShotExample&) const = default;
};

enum class DerivationMode { OneStep, WholeDerivation };

std::optional<DerivationMode> parse_derivation_mode(std::string_view name); // "one-step" | "whole"
std::string_view derivation_mode_str(DerivationMode mode);

enum class GenerationStrategy { PlainRag, LongContext, Derivation };

std::optional<GenerationStrategy> parse_strategy(std::string_view name); // "rag" | "long-context" | "derivation"
std::string_view strategy_str(GenerationStrategy strategy);

struct PromptTemplates {
    std::string whole_derivation;
    std::string one_step;
    std::string rag;
    std::string long_context;
};

struct EngineConfig {
    DerivationMode mode = DerivationMode::WholeDerivation;
    int max_steps = 12;
    Language language = Language::En;
    std::vector<FewShotExample> few_shots; // required non-empty for WholeDerivation
    std::optional<PromptTemplates> templates; // bundled defaults when absent
};

// EngineConfig with the bundled few-shot set for the language.
EngineConfig engine_defaults(Language lang = Language::En);

std::vector<FewShotExample> default_few_shots(Language lang = Language::En);

// Few-shot examples file: JSON list of {hypotheses:[str], question:str,
// transcript:str}. Every transcript is checked against its hypothesis count.
std::vector<FewShotExample> load_few_shots(const std::string& path);

PromptTemplates default_templates(Language lang = Language::En);

// Reads whole_derivation.txt, one_step.txt, rag.txt and long_context.txt
// from a directory of override templates.
PromptTemplates load_templates(const std::string& dir);

// Replaces {{name}} placeholders; an unresolved placeholder is an
// InvalidConfig error.
std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& values);

// ---------------------------------------------------------------------------
// Transcript grammar
//
// One rule application per line:
//   rule | comma-separated argument labels | conclusion | finality
// where finality is "Final answer" or "Not a final answer". Lines without a
// pipe (echoed "New hypothesis:" blocks, restated conclusions) are not steps.

struct ParsedStepLine {
    RuleName rule;
    std::vector<std::string> args;
    std::string conclusion;
    bool is_final;

    bool operator==(const ParsedStepLine&) const = default;
};

// Throws MalformedLine, UnknownRule, ArityMismatch (empty args outside
// NoInfo), EmptyConclusion, BadFinalityMarker.
ParsedStepLine parse_step_line(const std::string& line);

// Canonical form of one step; the inverse of parse_step_line.
std::string serialize_step_line(const DerivationStep& step);

// Step lines only, one per line, trailing newline.
std::string serialize_transcript(const std::vector<DerivationStep>& steps);

// Parses a whole-derivation transcript against initial labels 1..initial_count,
// assigning derived labels a, b, ... in order. Exactly the last step must be
// final. Errors carry the 1-based line number.
// Throws parse_step_line errors plus ForwardReference, MissingFinal,
// StepsAfterFinal.
std::vector<DerivationStep> parse_derivation_transcript(const std::string& text, int initial_count);

// ---------------------------------------------------------------------------
// Prompt construction

// Rule catalogue, every few-shot transcript, the hypotheses enumerated
// "1".."n", ending with the question cue line.
std::string build_whole_derivation_prompt(const std::vector<Hypothesis>& hypotheses, const std::string& query,
                                          const EngineConfig& cfg);

// All current hypotheses (initial and derived) with labels, the rule
// catalogue, and an instruction to emit exactly one step line.
std::string build_one_step_prompt(const DerivationTree& tree, const EngineConfig& cfg);

// ---------------------------------------------------------------------------
// Derivation loop and baselines

inline constexpr const char* kStepBudgetReason = "step budget exceeded";

// Builds a derivation for the query over the given chunks. WholeDerivation
// issues one completion and replays the transcript; OneStep issues one
// completion per rule application until a final step or cfg.max_steps.
// Provider and parse failures come back as status Aborted with a reason;
// the returned tree always validates clean.
DerivationTree run_derivation(const std::string& query, const std::vector<Chunk>& chunks, Provider& provider,
                              const EngineConfig& cfg);

// Plain retrieval-augmented answer over the given chunks.
std::string answer_plain_rag(const std::string& query, const std::vector<Chunk>& chunks, Provider& provider,
                             const EngineConfig& cfg = {});

struct LongContextOptions {
    size_t max_context_chars = 600000;
    Language language = Language::En;
    std::optional<PromptTemplates> templates;
};

// Single completion with every full document in the prompt.
// Throws ContextOverflow when the documents exceed the character budget.
std::string answer_long_context(const std::string& query, const std::vector<Document>& docs, Provider& provider,
                                const LongContextOptions& options = {});

} // namespace derivare
