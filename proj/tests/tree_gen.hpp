#pragma once

// Random derivation-tree generator and invariant-breaking mutators for the
// property suites. Valid trees are grown through apply_step so they satisfy
// the structural invariants by construction; mutators then corrupt a copy in
// one targeted way and name the violation that must be reported.

#include "derivare/core.hpp"

#include <random>
#include <string>
#include <vector>

namespace derivare::testing {

inline int pick(std::mt19937& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline RuleName random_rule(std::mt19937& rng) {
    static const RuleName kRules[] = {RuleName::Extract,     RuleName::Concat, RuleName::Instantiate,
                                      RuleName::Compose,     RuleName::Refine, RuleName::NoInfo};
    return kRules[pick(rng, 0, 5)];
}

// A structurally valid tree: 1-5 initial hypotheses and 0-8 non-final steps,
// closed by one final step when requested.
inline DerivationTree random_valid_tree(std::mt19937& rng, bool closed) {
    const int initial_count = pick(rng, 1, 5);
    std::vector<std::pair<std::string, std::string>> chunks;
    std::vector<std::string> labels;
    for (int i = 1; i <= initial_count; ++i) {
        chunks.emplace_back("doc.md#" + std::to_string(i - 1), "chunk text " + std::to_string(i));
        labels.push_back(std::to_string(i));
    }
    DerivationTree tree = make_tree("generated question " + std::to_string(pick(rng, 0, 999)), chunks);

    auto random_args = [&](RuleName rule) {
        std::vector<std::string> args;
        for (int i = 0; i < rule_arity(rule); ++i) {
            args.push_back(labels[static_cast<size_t>(pick(rng, 0, static_cast<int>(labels.size()) - 1))]);
        }
        return args;
    };

    const int step_count = pick(rng, 0, 8);
    for (int s = 0; s < step_count; ++s) {
        RuleName rule = random_rule(rng);
        auto label = apply_step(tree, rule, random_args(rule), "conclusion " + std::to_string(s), false);
        labels.push_back(*label);
    }
    if (closed) {
        RuleName rule = random_rule(rng);
        apply_step(tree, rule, random_args(rule), "final conclusion", true);
    }
    return tree;
}

// Appends one extra (existing) label to a random step's argument list, so the
// step no longer matches its rule's arity. Expected kind: ArityMismatch.
inline DerivationTree mutate_bad_arity(DerivationTree tree, std::mt19937& rng) {
    DerivationStep& step = tree.steps[static_cast<size_t>(pick(rng, 0, static_cast<int>(tree.steps.size()) - 1))];
    step.args.push_back(step.args.empty() ? "1" : step.args.front());
    return tree;
}

// True when the tree has a step that can be pointed at a label introduced
// only later: some step with arguments before the last non-final step.
inline bool forward_reference_possible(const DerivationTree& tree) {
    int last_producer = -1;
    for (size_t i = 0; i < tree.steps.size(); ++i) {
        if (!tree.steps[i].is_final) last_producer = static_cast<int>(i);
    }
    for (int i = 0; i < last_producer; ++i) {
        if (!tree.steps[static_cast<size_t>(i)].args.empty()) return true;
    }
    return false;
}

// Rewires an earlier step's argument to the label produced by the last
// non-final step, so the argument is used before it exists.
// Expected kind: ForwardReference. Requires forward_reference_possible.
inline DerivationTree mutate_forward_reference(DerivationTree tree, std::mt19937& rng) {
    int last_producer = -1;
    for (size_t i = 0; i < tree.steps.size(); ++i) {
        if (!tree.steps[i].is_final) last_producer = static_cast<int>(i);
    }
    std::vector<int> candidates;
    for (int i = 0; i < last_producer; ++i) {
        if (!tree.steps[static_cast<size_t>(i)].args.empty()) candidates.push_back(i);
    }
    DerivationStep& victim = tree.steps[static_cast<size_t>(candidates[static_cast<size_t>(
        pick(rng, 0, static_cast<int>(candidates.size()) - 1))])];
    size_t arg = static_cast<size_t>(pick(rng, 0, static_cast<int>(victim.args.size()) - 1));
    victim.args[arg] = *tree.steps[static_cast<size_t>(last_producer)].out_label;
    return tree;
}

// Duplicates the closing step of a finished tree, leaving a final step that
// is not last. Expected kind: FinalNotLast. Requires a Final tree.
inline DerivationTree mutate_double_final(DerivationTree tree, std::mt19937&) {
    tree.steps.push_back(tree.steps.back());
    return tree;
}

} // namespace derivare::testing
