#pragma once

#include "derivare/error.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace derivare {

enum class Language { En, Es };

// ---------------------------------------------------------------------------
// Rules

enum class RuleName { Extract, Concat, Instantiate, Compose, Refine, NoInfo };

struct Rule {
    RuleName name;
    int arity;
    std::string description;
};

int rule_arity(RuleName rule);
std::string_view rule_name_str(RuleName rule);

// Case-insensitive after trimming; nullopt for anything that is not one of
// the six rule names.
std::optional<RuleName> parse_rule_name(std::string_view text);

std::string_view rule_description(RuleName rule, Language lang = Language::En);

// The six rules with arity and description, in catalogue order.
std::vector<Rule> rule_catalogue(Language lang = Language::En);

// ---------------------------------------------------------------------------
// Derivation trees

struct Hypothesis {
    enum class Origin { Initial, Derived };

    std::string label;
    std::string text;
    Origin origin = Origin::Initial;
    std::string chunk_id; // set when origin == Initial
    int step_index = -1;  // set when origin == Derived

    bool operator==(const Hypothesis&) const = default;
};

struct DerivationStep {
    RuleName rule = RuleName::Extract;
    std::vector<std::string> args;
    std::string conclusion;
    bool is_final = false;
    std::optional<std::string> out_label; // absent iff is_final

    bool operator==(const DerivationStep&) const = default;
};

enum class TreeStatus { InProgress, Final, Aborted };

std::string_view tree_status_str(TreeStatus status);

struct DerivationTree {
    std::string query;
    std::vector<Hypothesis> initial;
    std::vector<DerivationStep> steps;
    TreeStatus status = TreeStatus::InProgress;
    std::string abort_reason; // meaningful only when status == Aborted

    bool operator==(const DerivationTree&) const = default;

    // Initial hypotheses followed by one derived hypothesis per non-final step.
    std::vector<Hypothesis> all_hypotheses() const;
    std::optional<Hypothesis> find_hypothesis(const std::string& label) const;
    int derived_count() const;
    // The final answer, present only when status == Final.
    std::optional<std::string> final_conclusion() const;
};

// A fresh in-progress tree whose initial hypotheses get labels "1".."n".
DerivationTree make_tree(std::string query, const std::vector<std::pair<std::string, std::string>>& chunk_id_and_text);

// Label for the next derived hypothesis: "a", "b", ..., "z", "aa", ...
// (bijective base-26 over derived_count). Initial labels are the decimal
// strings "1".."initial_count" and never come from here.
std::string next_label(int initial_count, int derived_count);

// Appends one rule application. Non-final steps register their conclusion as
// a new derived hypothesis and return its label; a final step closes the
// tree and returns nullopt.
// Throws: TreeAlreadyFinal, ArityMismatch, UnknownLabel, EmptyConclusion.
std::optional<std::string> apply_step(DerivationTree& tree, RuleName rule, const std::vector<std::string>& args,
                                      const std::string& conclusion, bool is_final);

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind {
    DuplicateLabel,
    BadInitialLabel,
    ArityMismatch,
    UnknownLabel,
    ForwardReference,
    FinalNotLast,
    StatusMismatch,
    MissingOutLabel,
    UnexpectedOutLabel,
    BadOutLabel,
    EmptyConclusion,
    NoInfoInFinal, // informational only
};

enum class Severity { Error, Info };

struct Violation {
    ViolationKind kind;
    Severity severity;
    int step_index; // -1 when not tied to a step
    std::string message;
};

const char* violation_kind_name(ViolationKind kind);

// Reports every violated structural invariant. Violations are data, not
// faults; an empty error set means the tree is well-formed.
std::vector<Violation> validate_tree(const DerivationTree& tree);

// True when validate_tree reports no Error-severity violation.
bool tree_ok(const DerivationTree& tree);

// ---------------------------------------------------------------------------
// Rendering

enum class RenderFormat { Ascii, Dot, Json };

std::optional<RenderFormat> parse_render_format(std::string_view name);

// ascii: indented rule applications from the root conclusion down.
// dot:   one directed edge per (arg -> produced label / CONCLUSION).
// json:  canonical serialization; round-trips losslessly via parse_tree.
std::string render_tree(const DerivationTree& tree, RenderFormat format);

DerivationTree parse_tree(const std::string& json_text);

} // namespace derivare
