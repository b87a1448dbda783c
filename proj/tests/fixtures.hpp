#pragma once

// Shared fixture: the worked "credits" derivation that every layer of the
// toolkit agrees on — three initial hypotheses about a university curriculum,
// four rule applications, and a final Concat conclusion.

#include "derivare/core.hpp"

#include <string>
#include <vector>

namespace derivare::testing {

inline const std::string kCreditsQuestion =
    "What is the meaning of a credit and how many hours of weekly study should be dedicated to a "
    "13-credit course?";

inline const std::vector<std::string> kCreditsHypotheses = {
    "Enrolment for the academic year takes place in September through the online office. Students "
    "admitted to a degree programme must enrol in at least 30 credits during their first year.",
    "The curriculum is organized in credits. A credit is a measure of the dedication required for a "
    "subject. It is assumed that if a subject has more credits, it requires more hours of dedication. "
    "A credit approximately equals one hour of weekly study, throughout an entire semester.",
    "The degree programme comprises ten semesters. Each semester groups subjects into compulsory and "
    "elective modules, and ends with an examination period of three weeks.",
};

inline const std::string kCreditsStep1 =
    "A credit is a measure of the dedication required for a subject. It is assumed that if a subject "
    "has more credits, it requires more hours of dedication.";
inline const std::string kCreditsStep2 =
    "A credit approximately equals one hour of weekly study, throughout an entire semester.";
inline const std::string kCreditsStep3 =
    "A credit approximately equals one hour of weekly study, throughout an entire semester. "
    "Therefore, a subject with 13 credits implies an approximate dedication of 13 hours per week.";
inline const std::string kCreditsAnswer =
    "A credit is a measure of the dedication required for a subject. It is assumed that if a subject "
    "has more credits, it requires more hours of dedication. A credit approximately equals one hour "
    "of weekly study, throughout an entire semester. Therefore, a subject with 13 credits implies an "
    "approximate dedication of 13 hours per week.";

// Canonical transcript form: "rule | args | conclusion | finality" with
// single-space padding, comma-joined args, one step per line.
inline const std::string kCreditsTranscript =
    "Extract | 2 | " + kCreditsStep1 + " | Not a final answer\n" +
    "Extract | 2 | " + kCreditsStep2 + " | Not a final answer\n" +
    "Instantiate | b | " + kCreditsStep3 + " | Not a final answer\n" +
    "Concat | a,c | " + kCreditsAnswer + " | Final answer\n";

// The same derivation built step by step through the tree API.
inline DerivationTree credits_tree() {
    std::vector<std::pair<std::string, std::string>> chunks;
    for (size_t i = 0; i < kCreditsHypotheses.size(); ++i) {
        chunks.emplace_back("corpus.md#" + std::to_string(i), kCreditsHypotheses[i]);
    }
    DerivationTree tree = make_tree(kCreditsQuestion, chunks);
    apply_step(tree, RuleName::Extract, {"2"}, kCreditsStep1, false);
    apply_step(tree, RuleName::Extract, {"2"}, kCreditsStep2, false);
    apply_step(tree, RuleName::Instantiate, {"b"}, kCreditsStep3, false);
    apply_step(tree, RuleName::Concat, {"a", "c"}, kCreditsAnswer, true);
    return tree;
}

} // namespace derivare::testing
