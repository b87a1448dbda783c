#pragma once

#include "derivare/core.hpp"
#include "derivare/engine.hpp"
#include "derivare/provider.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace derivare {

// One question with its reference answer and the candidate to be judged.
struct QaRecord {
    std::string question;
    std::string reference_answer;
    std::string candidate_answer;
    GenerationStrategy strategy = GenerationStrategy::PlainRag;
    std::optional<DerivationTree> derivation;
};

// Judge scoring rubric: overall criteria plus one description per score 1..5.
struct ScoreRubric {
    std::string criteria;
    std::map<int, std::string> per_score;
};

ScoreRubric default_rubric();

// Throws InvalidConfig unless criteria is non-empty and scores 1..5 all have
// non-empty descriptions.
void validate_rubric(const ScoreRubric& rubric);

// Rubric file: JSON {"criteria": str, "per_score": {"1": str, ..., "5": str}}.
ScoreRubric load_rubric(const std::string& path);

enum class Classification { Acceptable, Unacceptable };

std::string_view classification_str(Classification c);

struct JudgeVerdict {
    int score = 0; // 1..5
    std::string feedback;
    Classification classification = Classification::Unacceptable;

    bool operator==(const JudgeVerdict&) const = default;
};

struct EvalSummary {
    int n = 0;
    std::map<int, int> counts; // score -> occurrences, keys 1..5 always present
    double pct_acceptable = 0.0; // 100 * (c3+c4+c5) / n, full precision
    double average = 0.0;
    double std_dev = 0.0;
};

// Four sections in order: the instruction (question) to evaluate, the
// response to evaluate, the reference answer, and the score rubric; ends with
// the "[RESULT] <1-5>" output-format instruction.
// Throws MissingReference when the record has no reference answer.
std::string build_judge_prompt(const QaRecord& record, const ScoreRubric& rubric);

// Extracts the last "[RESULT] n" marker; everything before it is feedback.
// Throws NoResultMarker, ScoreOutOfRange.
JudgeVerdict parse_judge_output(const std::string& text);

// 1,2 -> Unacceptable; 3,4,5 -> Acceptable. Throws ScoreOutOfRange.
Classification classify_score(int score);

// Score distribution, % acceptable, mean and standard deviation (unbiased,
// n-1; defined as 0 when n <= 1). Throws EmptyInput.
EvalSummary aggregate(const std::vector<JudgeVerdict>& verdicts);
EvalSummary aggregate_counts(const std::map<int, int>& counts);

struct EvalOutcome {
    std::vector<std::pair<size_t, JudgeVerdict>> verdicts; // record index -> verdict
    std::vector<std::pair<size_t, std::string>> failures;  // record index -> error
    EvalSummary summary;                                   // over successful verdicts only
};

// Judges every record, with bounded parallelism. A judge failure excludes the
// record from the summary instead of inventing a score.
// Throws EmptyInput, InvalidConfig, AllRecordsFailed.
EvalOutcome run_eval(const std::vector<QaRecord>& dataset, Provider& judge, const ScoreRubric& rubric,
                     int parallelism = 4);

// Dataset JSONL: {"question","reference_answer"} plus optional
// "candidate_answer" per line.
std::vector<QaRecord> load_dataset(const std::string& path);

// Verdict JSONL: {"question","strategy","score","classification","feedback"}.
void write_verdicts_jsonl(const std::string& path, const std::vector<QaRecord>& dataset,
                          const EvalOutcome& outcome);

// Summary JSON mirroring EvalSummary plus the excluded-record count.
void write_summary_json(const std::string& path, const EvalOutcome& outcome);
std::string summary_to_json(const EvalOutcome& outcome);

} // namespace derivare
