#include "doctest.h"

#include "derivare/engine.hpp"

#include "fixtures.hpp"
#include "tree_gen.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

using namespace derivare;
using namespace derivare::testing;

namespace {

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected a derivare::Error");
    return ErrorKind::InvalidConfig;
}

std::string message_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.message();
    }
    FAIL("expected a derivare::Error");
    return {};
}

std::vector<Chunk> credits_chunks() {
    std::vector<Chunk> chunks;
    for (size_t i = 0; i < kCreditsHypotheses.size(); ++i) {
        Chunk chunk;
        chunk.chunk_id = "corpus.md#" + std::to_string(i);
        chunk.doc_id = "corpus.md";
        chunk.text = kCreditsHypotheses[i];
        chunk.char_offset = i * 100;
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

// Splits a canonical transcript into its step lines.
std::vector<std::string> transcript_lines(const std::string& transcript) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start < transcript.size()) {
        size_t end = transcript.find('\n', start);
        if (end == std::string::npos) end = transcript.size();
        if (end > start) lines.push_back(transcript.substr(start, end - start));
        start = end + 1;
    }
    return lines;
}

// Mock scripted to emit the given transcript one line per completion.
MockProvider one_step_mock(const std::string& transcript) {
    std::vector<ScriptEntry> script;
    for (const std::string& line : transcript_lines(transcript)) script.push_back({"*", line});
    return MockProvider(script);
}

} // namespace

TEST_SUITE("engine") {

TEST_CASE("mode and strategy names parse both ways") {
    CHECK(parse_derivation_mode("one-step") == DerivationMode::OneStep);
    CHECK(parse_derivation_mode("one_step") == DerivationMode::OneStep);
    CHECK(parse_derivation_mode(" OneStep ") == DerivationMode::OneStep);
    CHECK(parse_derivation_mode("whole") == DerivationMode::WholeDerivation);
    CHECK(parse_derivation_mode("WHOLE-DERIVATION") == DerivationMode::WholeDerivation);
    CHECK(parse_derivation_mode("both") == std::nullopt);
    CHECK(derivation_mode_str(DerivationMode::OneStep) == "one-step");
    CHECK(derivation_mode_str(DerivationMode::WholeDerivation) == "whole");

    CHECK(parse_strategy("rag") == GenerationStrategy::PlainRag);
    CHECK(parse_strategy("long-context") == GenerationStrategy::LongContext);
    CHECK(parse_strategy("Long_Context") == GenerationStrategy::LongContext);
    CHECK(parse_strategy("derivation") == GenerationStrategy::Derivation);
    CHECK(parse_strategy("vanilla") == std::nullopt);
    CHECK(strategy_str(GenerationStrategy::PlainRag) == "rag");
    CHECK(strategy_str(GenerationStrategy::LongContext) == "long-context");
    CHECK(strategy_str(GenerationStrategy::Derivation) == "derivation");
}

TEST_CASE("parse_step_line reads the four pipe-separated fields") {
    ParsedStepLine step = parse_step_line("Extract | 2 | some conclusion | Not a final answer");
    CHECK(step.rule == RuleName::Extract);
    CHECK(step.args == std::vector<std::string>{"2"});
    CHECK(step.conclusion == "some conclusion");
    CHECK_FALSE(step.is_final);

    step = parse_step_line("Concat | a,c | the answer | Final answer");
    CHECK(step.rule == RuleName::Concat);
    CHECK(step.args == std::vector<std::string>{"a", "c"});
    CHECK(step.is_final);

    // Whitespace, case and a trailing period are tolerated.
    step = parse_step_line("  concat |  a ,  c | padded | FINAL ANSWER.  ");
    CHECK(step.rule == RuleName::Concat);
    CHECK(step.args == std::vector<std::string>{"a", "c"});
    CHECK(step.conclusion == "padded");
    CHECK(step.is_final);

    step = parse_step_line("NoInfo |  | The hypotheses say nothing about this. | Final answer");
    CHECK(step.rule == RuleName::NoInfo);
    CHECK(step.args.empty());
    CHECK(step.is_final);
}

TEST_CASE("parse_step_line rejects malformed lines with the specific kind") {
    CHECK(kind_of([] { parse_step_line("Extract | 1 | missing finality"); }) == ErrorKind::MalformedLine);
    CHECK(kind_of([] { parse_step_line("Extract | 1 | a | b | c"); }) == ErrorKind::MalformedLine);
    CHECK(kind_of([] { parse_step_line("just prose with one | pipe"); }) == ErrorKind::MalformedLine);
    CHECK(kind_of([] { parse_step_line("Foo | 1 | x | Final answer"); }) == ErrorKind::UnknownRule);
    CHECK(kind_of([] { parse_step_line("Extract |  | x | Final answer"); }) == ErrorKind::ArityMismatch);
    CHECK(kind_of([] { parse_step_line("Extract | 1, | x | Final answer"); }) == ErrorKind::MalformedLine);
    CHECK(kind_of([] { parse_step_line("Extract | 1 |  | Final answer"); }) == ErrorKind::EmptyConclusion);
    CHECK(kind_of([] { parse_step_line("Extract | 1 | x | maybe final"); }) == ErrorKind::BadFinalityMarker);

    // The line grammar does not know rule arities beyond "empty means NoInfo";
    // counting arguments is the transcript parser's job.
    CHECK(parse_step_line("Concat | 1 | x | Final answer").args == std::vector<std::string>{"1"});
    CHECK(parse_step_line("NoInfo | 1 | x | Final answer").args == std::vector<std::string>{"1"});
}

TEST_CASE("serialize_step_line writes the canonical form") {
    DerivationStep step;
    step.rule = RuleName::Concat;
    step.args = {"a", "c"};
    step.conclusion = "joined text";
    step.is_final = true;
    CHECK(serialize_step_line(step) == "Concat | a,c | joined text | Final answer");

    step.is_final = false;
    CHECK(serialize_step_line(step) == "Concat | a,c | joined text | Not a final answer");

    DerivationStep noinfo;
    noinfo.rule = RuleName::NoInfo;
    noinfo.conclusion = "nothing applies";
    noinfo.is_final = true;
    CHECK(serialize_step_line(noinfo) == "NoInfo |  | nothing applies | Final answer");

    DerivationStep bad = step;
    bad.conclusion = "has a | pipe";
    CHECK(kind_of([&] { serialize_step_line(bad); }) == ErrorKind::MalformedLine);
    bad = step;
    bad.args = {"a,b"};
    CHECK(kind_of([&] { serialize_step_line(bad); }) == ErrorKind::MalformedLine);
}

TEST_CASE("step lines round-trip through serialize and parse") {
    std::mt19937 rng(31415);
    for (int i = 0; i < 200; ++i) {
        CAPTURE(i);
        DerivationTree tree = random_valid_tree(rng, true);
        for (const DerivationStep& step : tree.steps) {
            ParsedStepLine parsed = parse_step_line(serialize_step_line(step));
            CHECK(parsed.rule == step.rule);
            CHECK(parsed.args == step.args);
            CHECK(parsed.conclusion == step.conclusion);
            CHECK(parsed.is_final == step.is_final);
        }
    }
}

TEST_CASE("the credits transcript parses to exactly four steps") {
    auto steps = parse_derivation_transcript(kCreditsTranscript, 3);
    REQUIRE(steps.size() == 4);
    CHECK(steps[0].rule == RuleName::Extract);
    CHECK(steps[1].rule == RuleName::Extract);
    CHECK(steps[2].rule == RuleName::Instantiate);
    CHECK(steps[3].rule == RuleName::Concat);
    CHECK(steps[0].args == std::vector<std::string>{"2"});
    CHECK(steps[2].args == std::vector<std::string>{"b"});
    CHECK(steps[3].args == std::vector<std::string>{"a", "c"});
    CHECK(steps[0].out_label == "a");
    CHECK(steps[1].out_label == "b");
    CHECK(steps[2].out_label == "c");
    CHECK(steps[3].out_label == std::nullopt);
    CHECK_FALSE(steps[0].is_final);
    CHECK(steps[3].is_final);
    CHECK(steps[3].conclusion == kCreditsAnswer);
}

TEST_CASE("re-serializing the parsed credits transcript is byte-identical") {
    auto steps = parse_derivation_transcript(kCreditsTranscript, 3);
    CHECK(serialize_transcript(steps) == kCreditsTranscript);
    // And the fixture tree serializes to the same canonical text.
    CHECK(serialize_transcript(credits_tree().steps) == kCreditsTranscript);
}

TEST_CASE("prose, echoes and blank lines between steps are ignored") {
    std::string messy = "I will build the derivation now.\n"
                        "\n"
                        "Extract | 2 | first part | Not a final answer\n"
                        "New hypothesis: a.\n"
                        "\r\n"
                        "Refine | a | polished part | Final answer\r\n"
                        "That concludes the derivation.\n";
    auto steps = parse_derivation_transcript(messy, 3);
    REQUIRE(steps.size() == 2);
    CHECK(steps[0].rule == RuleName::Extract);
    CHECK(steps[1].rule == RuleName::Refine);
    CHECK(steps[1].args == std::vector<std::string>{"a"});
    CHECK(steps[1].conclusion == "polished part"); // carriage return stripped
    CHECK(steps[1].is_final);
}

TEST_CASE("transcript errors carry 1-based line numbers over all lines") {
    CHECK(kind_of([] { parse_derivation_transcript("Extract | 2 | x | Not a final answer\n", 3); }) ==
          ErrorKind::MissingFinal);

    std::string after_final = "Refine | 1 | done | Final answer\n"
                              "Extract | 1 | extra | Not a final answer\n";
    CHECK(kind_of([&] { parse_derivation_transcript(after_final, 3); }) == ErrorKind::StepsAfterFinal);
    CHECK(message_of([&] { parse_derivation_transcript(after_final, 3); }).find("line 2:") == 0);

    // A label used in the first step can only exist later: a forward reference.
    std::string forward = "Extract | b | x | Not a final answer\n"
                          "Extract | 1 | y | Not a final answer\n"
                          "Concat | a,b | z | Final answer\n";
    CHECK(kind_of([&] { parse_derivation_transcript(forward, 3); }) == ErrorKind::ForwardReference);
    CHECK(message_of([&] { parse_derivation_transcript(forward, 3); }).find("line 1:") == 0);

    std::string bad_arity = "some prose first\n"
                            "more prose\n"
                            "Concat | 1 | x | Final answer\n";
    CHECK(kind_of([&] { parse_derivation_transcript(bad_arity, 3); }) == ErrorKind::ArityMismatch);
    CHECK(message_of([&] { parse_derivation_transcript(bad_arity, 3); }).find("line 3:") == 0);

    CHECK(kind_of([] { parse_derivation_transcript("NoInfo | 1 | x | Final answer\n", 3); }) ==
          ErrorKind::ArityMismatch);
    CHECK(kind_of([] { parse_derivation_transcript("x | y\n", 3); }) == ErrorKind::MalformedLine);
    CHECK(kind_of([] { parse_derivation_transcript("Refine | 1 | fine | Final answer\n", 0); }) ==
          ErrorKind::EmptyHypotheses);
}

TEST_CASE("render_template substitutes placeholders") {
    CHECK(render_template("A {{x}} B {{y}} C", {{"x", "1"}, {"y", "2"}}) == "A 1 B 2 C");
    CHECK(render_template("no placeholders", {}) == "no placeholders");
    CHECK(render_template("{{a}}{{a}}", {{"a", "twice "}}) == "twice twice ");
    CHECK(kind_of([] { render_template("{{unknown}}", {}); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([] { render_template("{{unterminated", {}); }) == ErrorKind::InvalidConfig);
    // Substituted values are not re-scanned for placeholders.
    CHECK(render_template("{{a}}", {{"a", "{{b}}"}}) == "{{b}}");
}

TEST_CASE("prompt templates load from a directory and fall back to bundled text") {
    PromptTemplates bundled = default_templates();
    CHECK(bundled.whole_derivation.find("{{few_shots}}") != std::string::npos);
    CHECK(bundled.whole_derivation.find("{{rules}}") != std::string::npos);
    CHECK(bundled.one_step.find("{{hypotheses}}") != std::string::npos);
    CHECK(bundled.rag.find("{{chunks}}") != std::string::npos);
    CHECK(bundled.long_context.find("{{documents}}") != std::string::npos);

    PromptTemplates spanish = default_templates(Language::Es);
    CHECK(spanish.whole_derivation != bundled.whole_derivation);
    CHECK(spanish.whole_derivation.find("Pregunta del usuario:") != std::string::npos);

    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / ("derivare-templates-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    std::ofstream((dir / "whole_derivation.txt")) << "W {{rules}} {{few_shots}} {{hypotheses}} {{question}}";
    std::ofstream((dir / "one_step.txt")) << "O {{rules}} {{hypotheses}} {{question}}";
    std::ofstream((dir / "rag.txt")) << "R {{chunks}} {{question}}";
    std::ofstream((dir / "long_context.txt")) << "L {{documents}} {{question}}";
    PromptTemplates loaded = load_templates(dir.string());
    CHECK(loaded.whole_derivation.substr(0, 2) == "W ");
    CHECK(loaded.rag.substr(0, 2) == "R ");

    fs::remove(dir / "rag.txt");
    CHECK(kind_of([&] { load_templates(dir.string()); }) == ErrorKind::IoError);
    std::error_code ec;
    fs::remove_all(dir, ec);
}

TEST_CASE("the bundled few-shot set opens with the credits example") {
    auto examples = default_few_shots();
    REQUIRE(examples.size() == 6);
    CHECK(examples[0].question == kCreditsQuestion);
    CHECK(examples[0].hypotheses == kCreditsHypotheses);
    CHECK(examples[0].transcript == kCreditsTranscript);
    for (const FewShotExample& ex : examples) {
        // Constructor guarantee: every transcript parses against its hypotheses.
        auto steps = parse_derivation_transcript(ex.transcript, static_cast<int>(ex.hypotheses.size()));
        CHECK(steps.back().is_final);
    }
    // One example must demonstrate the no-information outcome.
    bool has_noinfo = false;
    for (const FewShotExample& ex : examples) {
        if (ex.transcript.find("NoInfo |") != std::string::npos) has_noinfo = true;
    }
    CHECK(has_noinfo);

    auto spanish = default_few_shots(Language::Es);
    REQUIRE(spanish.size() == 6);
    for (const FewShotExample& ex : spanish) {
        // Rule names and finality markers stay in English in Spanish prompts.
        auto steps = parse_derivation_transcript(ex.transcript, static_cast<int>(ex.hypotheses.size()));
        CHECK(steps.back().is_final);
        CHECK(ex.transcript.find("Final answer") != std::string::npos);
    }
    CHECK(spanish[0].question != kCreditsQuestion);
}

TEST_CASE("few-shot files are validated on load") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / ("derivare-fewshots-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    const std::string path = (dir / "examples.json").string();

    std::ofstream(path) << R"([{"hypotheses": ["only fact"], "question": "what?",
                               "transcript": "Refine | 1 | the fact, refined | Final answer\n"}])";
    auto examples = load_few_shots(path);
    REQUIRE(examples.size() == 1);
    CHECK(examples[0].hypotheses == std::vector<std::string>{"only fact"});

    // A transcript that does not parse against its own hypothesis count.
    std::ofstream(path) << R"([{"hypotheses": ["only fact"], "question": "what?",
                               "transcript": "Refine | 2 | out of range | Final answer\n"}])";
    CHECK(kind_of([&] { load_few_shots(path); }) == ErrorKind::InvalidConfig);

    std::ofstream(path) << R"([{"question": "missing fields"}])";
    CHECK(kind_of([&] { load_few_shots(path); }) == ErrorKind::InvalidConfig);
    std::ofstream(path) << R"({"not": "a list"})";
    CHECK(kind_of([&] { load_few_shots(path); }) == ErrorKind::InvalidConfig);
    std::ofstream(path) << R"([])";
    CHECK(kind_of([&] { load_few_shots(path); }) == ErrorKind::InvalidConfig);
    CHECK(kind_of([&] { load_few_shots((dir / "absent.json").string()); }) == ErrorKind::IoError);

    std::error_code ec;
    fs::remove_all(dir, ec);
}

TEST_CASE("the whole-derivation prompt stacks rules, examples, hypotheses and question") {
    EngineConfig cfg = engine_defaults();
    std::vector<Hypothesis> hypotheses = {
        {"1", "alpha fact", Hypothesis::Origin::Initial, "d#0", -1},
        {"2", "beta fact", Hypothesis::Origin::Initial, "d#1", -1},
        {"3", "gamma fact", Hypothesis::Origin::Initial, "d#2", -1},
    };
    std::string prompt = build_whole_derivation_prompt(hypotheses, "a unique question?", cfg);

    // Rule catalogue with arities and verbatim descriptions.
    CHECK(prompt.find("- Extract (1 argument): Given a hypothesis h, this rule extracts a specific part "
                      "of h as a conclusion.") != std::string::npos);
    CHECK(prompt.find("- Concat (2 arguments): Combines two independent hypotheses to generate the "
                      "conclusion.") != std::string::npos);
    CHECK(prompt.find("- NoInfo (0 arguments):") != std::string::npos);

    // Every bundled example appears in full.
    for (const FewShotExample& ex : cfg.few_shots) {
        std::string body = ex.transcript;
        while (!body.empty() && body.back() == '\n') body.pop_back();
        CHECK(prompt.find(body) != std::string::npos);
        CHECK(prompt.find("User question: " + ex.question) != std::string::npos);
    }

    // The current hypotheses are enumerated 1..n after the examples.
    CHECK(prompt.find("1. alpha fact\n2. beta fact\n3. gamma fact") != std::string::npos);

    // The prompt ends with the question cue so the reply starts the derivation.
    const std::string tail = "User question: a unique question?\n";
    REQUIRE(prompt.size() >= tail.size());
    CHECK(prompt.substr(prompt.size() - tail.size()) == tail);

    size_t rules_at = prompt.find("- Extract (1 argument)");
    size_t examples_at = prompt.find("User question: " + cfg.few_shots[0].question);
    size_t hypotheses_at = prompt.find("1. alpha fact");
    size_t question_at = prompt.rfind(tail);
    CHECK(rules_at < examples_at);
    CHECK(examples_at < hypotheses_at);
    CHECK(hypotheses_at < question_at);

    CHECK(kind_of([&] { build_whole_derivation_prompt({}, "q", cfg); }) == ErrorKind::EmptyHypotheses);
    EngineConfig no_examples = cfg;
    no_examples.few_shots.clear();
    CHECK(kind_of([&] { build_whole_derivation_prompt(hypotheses, "q", no_examples); }) ==
          ErrorKind::InvalidConfig);
}

TEST_CASE("the spanish whole-derivation prompt keeps rule names in english") {
    EngineConfig cfg = engine_defaults(Language::Es);
    std::vector<Hypothesis> hypotheses = {{"1", "un hecho", Hypothesis::Origin::Initial, "d#0", -1}};
    std::string prompt = build_whole_derivation_prompt(hypotheses, "¿una pregunta?", cfg);
    CHECK(prompt.find("- Extract (1") != std::string::npos);
    CHECK(prompt.find("Dada una hipótesis h") != std::string::npos);
    CHECK(prompt.find("Pregunta del usuario: ¿una pregunta?") != std::string::npos);
    CHECK(prompt.find("Hipótesis:") != std::string::npos);
}

TEST_CASE("the one-step prompt lists current hypotheses with their labels") {
    DerivationTree tree = make_tree("what is the answer?", {{"d#0", "alpha"}, {"d#1", "beta"}});
    apply_step(tree, RuleName::Extract, {"1"}, "alpha detail", false);

    EngineConfig cfg = engine_defaults();
    cfg.mode = DerivationMode::OneStep;
    std::string prompt = build_one_step_prompt(tree, cfg);
    CHECK(prompt.find("1. alpha\n2. beta\na. alpha detail") != std::string::npos);
    CHECK(prompt.find("User question: what is the answer?") != std::string::npos);
    CHECK(prompt.find("- Refine (1 argument):") != std::string::npos);
    // One-step prompts carry no worked examples.
    CHECK(prompt.find(kCreditsQuestion) == std::string::npos);

    apply_step(tree, RuleName::Refine, {"a"}, "done", true);
    CHECK(kind_of([&] { build_one_step_prompt(tree, cfg); }) == ErrorKind::TreeAlreadyFinal);
}

TEST_CASE("whole-derivation mode replays a scripted transcript into the fixture tree") {
    MockProvider mock(std::vector<ScriptEntry>{{"User question: " + kCreditsQuestion, kCreditsTranscript}});
    EngineConfig cfg = engine_defaults();
    DerivationTree tree = run_derivation(kCreditsQuestion, credits_chunks(), mock, cfg);

    CHECK(tree == credits_tree());
    CHECK(tree.status == TreeStatus::Final);
    CHECK(tree_ok(tree));
    CHECK(mock.completion_count() == 1);
}

TEST_CASE("one-step mode rebuilds the same tree with one completion per step") {
    MockProvider mock = one_step_mock(kCreditsTranscript);
    EngineConfig cfg = engine_defaults();
    cfg.mode = DerivationMode::OneStep;
    DerivationTree tree = run_derivation(kCreditsQuestion, credits_chunks(), mock, cfg);

    CHECK(tree == credits_tree());
    CHECK(mock.completion_count() == 4); // n steps, n calls
    CHECK(mock.remaining_responses() == 0);
}

TEST_CASE("both modes agree on a NoInfo derivation") {
    const std::string transcript = "NoInfo |  | The hypotheses do not cover this question. | Final answer\n";
    std::vector<Chunk> chunks = credits_chunks();
    const std::string question = "who teaches the pottery class?";

    MockProvider whole_mock(std::vector<ScriptEntry>{{"*", transcript}});
    DerivationTree whole_tree = run_derivation(question, chunks, whole_mock, engine_defaults());

    MockProvider step_mock = one_step_mock(transcript);
    EngineConfig one = engine_defaults();
    one.mode = DerivationMode::OneStep;
    DerivationTree one_tree = run_derivation(question, chunks, step_mock, one);

    CHECK(whole_tree == one_tree);
    CHECK(whole_tree.status == TreeStatus::Final);
    CHECK(whole_tree.steps.size() == 1);
    CHECK(whole_tree.steps[0].rule == RuleName::NoInfo);
    CHECK(whole_mock.completion_count() == 1);
    CHECK(step_mock.completion_count() == 1);
}

TEST_CASE("both modes abort identically when the step budget runs out") {
    // Three non-final steps but a budget of two.
    const std::string transcript = "Extract | 1 | first | Not a final answer\n"
                                   "Extract | 2 | second | Not a final answer\n"
                                   "Extract | 3 | third | Not a final answer\n"
                                   "Concat | a,b | combined | Final answer\n";
    std::vector<Chunk> chunks = credits_chunks();

    EngineConfig whole = engine_defaults();
    whole.max_steps = 2;
    MockProvider whole_mock(std::vector<ScriptEntry>{{"*", transcript}});
    DerivationTree whole_tree = run_derivation("q", chunks, whole_mock, whole);

    EngineConfig one = engine_defaults();
    one.mode = DerivationMode::OneStep;
    one.max_steps = 2;
    MockProvider step_mock(std::vector<ScriptEntry>{{"*", "Extract | 1 | first | Not a final answer"},
                            {"*", "Extract | 2 | second | Not a final answer"}});
    DerivationTree one_tree = run_derivation("q", chunks, step_mock, one);

    CHECK(whole_tree == one_tree);
    CHECK(whole_tree.status == TreeStatus::Aborted);
    CHECK(whole_tree.abort_reason == kStepBudgetReason);
    CHECK(one_tree.abort_reason == kStepBudgetReason);
    CHECK(whole_tree.steps.size() == 2);
    CHECK(tree_ok(whole_tree));
    CHECK(tree_ok(one_tree));
    CHECK(whole_mock.completion_count() == 1);
    CHECK(step_mock.completion_count() == 2);
}

TEST_CASE("both modes agree on a compose-style derivation") {
    const std::string transcript =
        "Extract | 1 | Enrolment needs at least 30 credits. | Not a final answer\n"
        "Compose | a,2 | Thirty credits mean about thirty weekly study hours. | Final answer\n";
    std::vector<Chunk> chunks = credits_chunks();

    MockProvider whole_mock(std::vector<ScriptEntry>{{"*", transcript}});
    DerivationTree whole_tree = run_derivation("how much study time?", chunks, whole_mock, engine_defaults());

    MockProvider step_mock = one_step_mock(transcript);
    EngineConfig one = engine_defaults();
    one.mode = DerivationMode::OneStep;
    DerivationTree one_tree = run_derivation("how much study time?", chunks, step_mock, one);

    CHECK(whole_tree == one_tree);
    CHECK(whole_tree.status == TreeStatus::Final);
    CHECK(whole_tree.final_conclusion() == "Thirty credits mean about thirty weekly study hours.");
    CHECK(whole_mock.completion_count() == 1);
    CHECK(step_mock.completion_count() == 2);
}

TEST_CASE("whole-mode aborts keep the valid prefix and stay well-formed") {
    std::vector<Chunk> chunks = credits_chunks();
    EngineConfig cfg = engine_defaults();

    SUBCASE("a garbled line aborts with its line number") {
        MockProvider mock(std::vector<ScriptEntry>{{"*", "Extract | 2 | fine so far | Not a final answer\n"
                                 "Extract | what even is this\n"
                                 "Concat | a,b | never reached | Final answer\n"}});
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason.find("transcript error: line 2:") == 0);
        REQUIRE(tree.steps.size() == 1); // the valid prefix was applied
        CHECK(tree.steps[0].conclusion == "fine so far");
        CHECK(tree_ok(tree));
    }
    SUBCASE("a missing final step aborts") {
        MockProvider mock(std::vector<ScriptEntry>{{"*", "Extract | 2 | fine | Not a final answer\n"}});
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason == "transcript error: transcript ended without a final step");
        CHECK(tree.steps.size() == 1);
        CHECK(tree_ok(tree));
    }
    SUBCASE("a forward reference aborts before applying the bad step") {
        MockProvider mock(std::vector<ScriptEntry>{{"*", "Extract | b | uses the future | Not a final answer\n"
                                 "Extract | 1 | fine | Final answer\n"}});
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason.find("transcript error: line 1:") == 0);
        CHECK(tree.steps.empty());
        CHECK(tree_ok(tree));
    }
    SUBCASE("the final step is withheld when the transcript overruns the budget") {
        EngineConfig tight = cfg;
        tight.max_steps = 1;
        MockProvider mock(std::vector<ScriptEntry>{{"*", "Extract | 1 | one | Not a final answer\n"
                                 "Extract | 2 | two | Not a final answer\n"
                                 "garbage after the budget\n"}});
        DerivationTree tree = run_derivation("q", chunks, mock, tight);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason == kStepBudgetReason); // budget outranks the later parse error
        CHECK(tree.steps.size() == 1);
        CHECK(tree_ok(tree));
    }
    SUBCASE("a provider failure aborts with a provider reason") {
        MockProvider mock; // no scripted responses at all
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason.find("provider error: ") == 0);
        CHECK(tree.abort_reason.find("no scripted responses left") != std::string::npos);
        CHECK(tree.steps.empty());
        CHECK(tree_ok(tree));
    }
}

TEST_CASE("one-step aborts surface the offending response") {
    std::vector<Chunk> chunks = credits_chunks();
    EngineConfig cfg = engine_defaults();
    cfg.mode = DerivationMode::OneStep;

    SUBCASE("a reply without any step line") {
        MockProvider mock(std::vector<ScriptEntry>{{"*", "I am not sure how to proceed."}});
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason == "transcript error: model response contains no step line");
        CHECK(tree_ok(tree));
    }
    SUBCASE("an unknown label in a step") {
        MockProvider mock(std::vector<ScriptEntry>{{"*", "Extract | 9 | no such hypothesis | Final answer"}});
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason.find("transcript error: ") == 0);
        CHECK(tree.abort_reason.find("UnknownLabel") != std::string::npos);
        CHECK(tree.steps.empty());
        CHECK(tree_ok(tree));
    }
    SUBCASE("a provider failure mid-derivation keeps the applied steps") {
        MockProvider mock(std::vector<ScriptEntry>{{"*", "Extract | 1 | good step | Not a final answer"}});
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Aborted);
        CHECK(tree.abort_reason.find("provider error: ") == 0);
        CHECK(tree.steps.size() == 1);
        CHECK(tree_ok(tree));
    }
    SUBCASE("the first pipe line of a chatty reply is taken as the step") {
        MockProvider mock(std::vector<ScriptEntry>{{"*", "Here is my step:\n"
                                 "Refine | 1 | enrolment happens in september | Final answer\n"
                                 "I hope that helps!"}});
        DerivationTree tree = run_derivation("q", chunks, mock, cfg);
        CHECK(tree.status == TreeStatus::Final);
        CHECK(tree.final_conclusion() == "enrolment happens in september");
    }
}

TEST_CASE("run_derivation validates its inputs up front") {
    MockProvider mock;
    EngineConfig cfg = engine_defaults();
    CHECK(kind_of([&] { run_derivation("q", {}, mock, cfg); }) == ErrorKind::EmptyHypotheses);

    EngineConfig bad_steps = cfg;
    bad_steps.max_steps = 0;
    CHECK(kind_of([&] { run_derivation("q", credits_chunks(), mock, bad_steps); }) == ErrorKind::InvalidConfig);

    EngineConfig no_shots = cfg;
    no_shots.few_shots.clear();
    CHECK(kind_of([&] { run_derivation("q", credits_chunks(), mock, no_shots); }) == ErrorKind::InvalidConfig);

    // One-step mode needs no few-shot examples.
    EngineConfig one = cfg;
    one.mode = DerivationMode::OneStep;
    one.few_shots.clear();
    MockProvider scripted(std::vector<ScriptEntry>{{"*", "NoInfo |  | nothing relevant found | Final answer"}});
    DerivationTree tree = run_derivation("q", credits_chunks(), scripted, one);
    CHECK(tree.status == TreeStatus::Final);
}

TEST_CASE("plain RAG answers from numbered chunks") {
    std::vector<Chunk> chunks = credits_chunks();
    MockProvider mock(std::vector<ScriptEntry>{{"User question: how many credits", "Thirty credits in the first year."}});
    std::string answer = answer_plain_rag("how many credits", chunks, mock);
    CHECK(answer == "Thirty credits in the first year.");

    auto log = mock.call_log();
    REQUIRE(log.size() == 1);
    CHECK(log[0].payload.find("1. " + kCreditsHypotheses[0]) != std::string::npos);
    CHECK(log[0].payload.find("3. " + kCreditsHypotheses[2]) != std::string::npos);
    CHECK(log[0].payload.find("User question: how many credits") != std::string::npos);

    CHECK(kind_of([&] { answer_plain_rag("q", {}, mock); }) == ErrorKind::EmptyInput);
}

TEST_CASE("long-context answers embed whole documents under a budget") {
    std::vector<Document> docs = {{"a.md", "AAA text", ""}, {"b.md", "BBB text", ""}};
    MockProvider mock(std::vector<ScriptEntry>{{"User question: the question", "the long-context answer"}});
    CHECK(answer_long_context("the question", docs, mock) == "the long-context answer");

    auto log = mock.call_log();
    REQUIRE(log.size() == 1);
    CHECK(log[0].payload.find("--- a.md ---\nAAA text\n\n--- b.md ---\nBBB text") != std::string::npos);

    LongContextOptions tight;
    tight.max_context_chars = 10;
    CHECK(kind_of([&] { answer_long_context("q", docs, mock, tight); }) == ErrorKind::ContextOverflow);
    CHECK(kind_of([&] { answer_long_context("q", {}, mock); }) == ErrorKind::EmptyInput);
}

TEST_CASE("custom templates replace the bundled prompts everywhere") {
    PromptTemplates custom;
    custom.whole_derivation = "WD[{{rules}}|{{few_shots}}|{{hypotheses}}|{{question}}]";
    custom.one_step = "OS[{{rules}}|{{hypotheses}}|{{question}}]";
    custom.rag = "RAG[{{chunks}}|{{question}}]";
    custom.long_context = "LC[{{documents}}|{{question}}]";

    std::vector<Chunk> chunks = credits_chunks();
    EngineConfig cfg = engine_defaults();
    cfg.templates = custom;

    MockProvider mock(std::vector<ScriptEntry>{{"*", kCreditsTranscript}, {"*", "rag answer"}, {"*", "lc answer"}});
    run_derivation(kCreditsQuestion, chunks, mock, cfg);
    answer_plain_rag("q2", chunks, mock, cfg);
    LongContextOptions options;
    options.templates = custom;
    answer_long_context("q3", {{"d.md", "body", ""}}, mock, options);

    auto log = mock.call_log();
    REQUIRE(log.size() == 3);
    CHECK(log[0].payload.substr(0, 3) == "WD[");
    CHECK(log[0].payload.find(kCreditsQuestion + "]") != std::string::npos);
    CHECK(log[1].payload.substr(0, 4) == "RAG[");
    CHECK(log[2].payload == "LC[--- d.md ---\nbody|q3]");
}

TEST_CASE("the step budget reason is the pinned sentence") {
    CHECK(std::string(kStepBudgetReason) == "step budget exceeded");
}

} // TEST_SUITE("engine")
