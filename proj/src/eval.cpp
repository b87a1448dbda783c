#include "derivare/eval.hpp"

#include "derivare/error.hpp"

#include "json.hpp"

#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

namespace derivare {

namespace {

std::string trim(const std::string& s) {
    size_t begin = 0;
    size_t end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
}

} // namespace

ScoreRubric default_rubric() {
    ScoreRubric rubric;
    rubric.criteria = "Determine whether the generated answer is correct and truthful.";
    rubric.per_score = {
        {1, "Candidate contradicts reference; false information."},
        {2, "Candidate has conflicts with reference; partially false information."},
        {3, "Candidate does not contradict reference but does not provide any information either."},
        {4, "Candidate partially matches reference; correct but incomplete information."},
        {5, "Candidate completely matches reference; correct and complete information."},
    };
    return rubric;
}

void validate_rubric(const ScoreRubric& rubric) {
    if (trim(rubric.criteria).empty())
        throw Error(ErrorKind::InvalidConfig, "rubric criteria must not be empty");
    for (int score = 1; score <= 5; ++score) {
        auto it = rubric.per_score.find(score);
        if (it == rubric.per_score.end() || trim(it->second).empty())
            throw Error(ErrorKind::InvalidConfig,
                        "rubric must describe score " + std::to_string(score));
    }
    for (const auto& [score, text] : rubric.per_score) {
        if (score < 1 || score > 5)
            throw Error(ErrorKind::InvalidConfig,
                        "rubric describes out-of-range score " + std::to_string(score));
    }
}

ScoreRubric load_rubric(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open rubric file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, path + ": not valid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("criteria") || !doc.contains("per_score"))
        throw Error(ErrorKind::InvalidConfig, path + ": expected {criteria, per_score}");
    ScoreRubric rubric;
    if (!doc["criteria"].is_string())
        throw Error(ErrorKind::InvalidConfig, path + ": criteria must be a string");
    rubric.criteria = doc["criteria"].get<std::string>();
    if (!doc["per_score"].is_object())
        throw Error(ErrorKind::InvalidConfig, path + ": per_score must be an object");
    for (const auto& [key, value] : doc["per_score"].items()) {
        int score = 0;
        try {
            score = std::stoi(key);
        } catch (const std::exception&) {
            throw Error(ErrorKind::InvalidConfig, path + ": per_score key is not a score: " + key);
        }
        if (!value.is_string())
            throw Error(ErrorKind::InvalidConfig, path + ": per_score values must be strings");
        rubric.per_score[score] = value.get<std::string>();
    }
    validate_rubric(rubric);
    return rubric;
}

std::string_view classification_str(Classification c) {
    return c == Classification::Acceptable ? "acceptable" : "unacceptable";
}

std::string build_judge_prompt(const QaRecord& record, const ScoreRubric& rubric) {
    if (trim(record.reference_answer).empty())
        throw Error(ErrorKind::MissingReference, "record has no reference answer to judge against");
    if (trim(record.question).empty())
        throw Error(ErrorKind::InvalidConfig, "record has an empty question");
    validate_rubric(rubric);

    std::string prompt;
    prompt +=
        "You are a fair and strict judge of question answering. Evaluate the response below against "
        "the reference answer, following the score rubric. Write a feedback for the response based "
        "strictly on the score rubric, then give an integer score from 1 to 5. The output format "
        "should be: feedback text [RESULT] <1-5>\n\n";
    prompt += "### Instruction to evaluate:\n" + record.question + "\n\n";
    prompt += "### Response to Evaluate:\n" + record.candidate_answer + "\n\n";
    prompt += "### Reference Answer:\n" + record.reference_answer + "\n\n";
    prompt += "### Customized Score Rubric:\n" + rubric.criteria + "\n";
    for (int score = 1; score <= 5; ++score) {
        prompt += "Score " + std::to_string(score) + ": " + rubric.per_score.at(score) + "\n";
    }
    return prompt;
}

JudgeVerdict parse_judge_output(const std::string& text) {
    static const std::regex marker(R"(\[RESULT\]\s*:?\s*(-?\d+))");
    auto begin = std::sregex_iterator(text.begin(), text.end(), marker);
    auto end = std::sregex_iterator();
    if (begin == end)
        throw Error(ErrorKind::NoResultMarker, "judge output has no [RESULT] marker: " + trim(text));
    std::smatch last;
    for (auto it = begin; it != end; ++it) last = *it;
    int score = 0;
    try {
        score = std::stoi(last[1].str());
    } catch (const std::exception&) {
        throw Error(ErrorKind::ScoreOutOfRange, "judge score does not fit an integer: " + last[1].str());
    }
    JudgeVerdict verdict;
    verdict.score = score;
    verdict.classification = classify_score(score); // throws ScoreOutOfRange
    verdict.feedback = trim(text.substr(0, static_cast<size_t>(last.position(0))));
    return verdict;
}

Classification classify_score(int score) {
    if (score < 1 || score > 5)
        throw Error(ErrorKind::ScoreOutOfRange,
                    "scores range from 1 to 5, got " + std::to_string(score));
    return score <= 2 ? Classification::Unacceptable : Classification::Acceptable;
}

EvalSummary aggregate_counts(const std::map<int, int>& counts) {
    long n = 0;
    for (const auto& [score, count] : counts) {
        if (score < 1 || score > 5)
            throw Error(ErrorKind::ScoreOutOfRange,
                        "count vector has out-of-range score " + std::to_string(score));
        if (count < 0)
            throw Error(ErrorKind::EmptyInput, "count vector has a negative count");
        n += count;
    }
    if (n == 0) throw Error(ErrorKind::EmptyInput, "cannot aggregate zero verdicts");

    EvalSummary summary;
    summary.n = static_cast<int>(n);
    for (int score = 1; score <= 5; ++score) {
        auto it = counts.find(score);
        summary.counts[score] = it == counts.end() ? 0 : it->second;
    }
    long acceptable = summary.counts[3] + summary.counts[4] + summary.counts[5];
    summary.pct_acceptable = 100.0 * static_cast<double>(acceptable) / static_cast<double>(n);
    double total = 0.0;
    for (int score = 1; score <= 5; ++score) total += static_cast<double>(score) * summary.counts[score];
    summary.average = total / static_cast<double>(n);
    if (n > 1) {
        double squares = 0.0;
        for (int score = 1; score <= 5; ++score) {
            double d = static_cast<double>(score) - summary.average;
            squares += static_cast<double>(summary.counts[score]) * d * d;
        }
        summary.std_dev = std::sqrt(squares / static_cast<double>(n - 1));
    }
    return summary;
}

EvalSummary aggregate(const std::vector<JudgeVerdict>& verdicts) {
    if (verdicts.empty()) throw Error(ErrorKind::EmptyInput, "cannot aggregate zero verdicts");
    std::map<int, int> counts;
    for (const JudgeVerdict& verdict : verdicts) {
        classify_score(verdict.score); // range check
        ++counts[verdict.score];
    }
    return aggregate_counts(counts);
}

EvalOutcome run_eval(const std::vector<QaRecord>& dataset, Provider& judge, const ScoreRubric& rubric,
                     int parallelism) {
    if (dataset.empty()) throw Error(ErrorKind::EmptyInput, "cannot evaluate an empty dataset");
    if (parallelism < 1) throw Error(ErrorKind::InvalidConfig, "parallelism must be at least 1");
    validate_rubric(rubric);

    std::vector<std::optional<JudgeVerdict>> verdicts(dataset.size());
    std::vector<std::optional<std::string>> errors(dataset.size());

    auto judge_one = [&](size_t i) {
        try {
            std::string prompt = build_judge_prompt(dataset[i], rubric);
            std::string output = judge.complete({std::nullopt, prompt});
            verdicts[i] = parse_judge_output(output);
        } catch (const Error& e) {
            errors[i] = e.what();
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    };

    size_t workers = std::min<size_t>(static_cast<size_t>(parallelism), dataset.size());
    if (workers <= 1) {
        for (size_t i = 0; i < dataset.size(); ++i) judge_one(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (size_t i = next.fetch_add(1); i < dataset.size(); i = next.fetch_add(1)) {
                    judge_one(i);
                }
            });
        }
        for (std::thread& t : pool) t.join();
    }

    EvalOutcome outcome;
    std::vector<JudgeVerdict> successful;
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (verdicts[i]) {
            outcome.verdicts.emplace_back(i, *verdicts[i]);
            successful.push_back(*verdicts[i]);
        } else {
            outcome.failures.emplace_back(i, errors[i].value_or("unknown judge failure"));
        }
    }
    if (successful.empty())
        throw Error(ErrorKind::AllRecordsFailed, "every record failed judging; first error: " +
                                                     outcome.failures.front().second);
    outcome.summary = aggregate(successful);
    return outcome;
}

std::vector<QaRecord> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open dataset file: " + path);
    std::vector<QaRecord> dataset;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::InvalidConfig, where + ": not valid JSON: " + e.what());
        }
        if (!doc.is_object() || !doc.contains("question") || !doc.contains("reference_answer") ||
            !doc["question"].is_string() || !doc["reference_answer"].is_string())
            throw Error(ErrorKind::InvalidConfig,
                        where + ": expected {\"question\", \"reference_answer\"} strings");
        QaRecord record;
        record.question = doc["question"].get<std::string>();
        record.reference_answer = doc["reference_answer"].get<std::string>();
        if (trim(record.question).empty() || trim(record.reference_answer).empty())
            throw Error(ErrorKind::InvalidConfig, where + ": question and reference_answer must be non-empty");
        if (doc.contains("candidate_answer")) {
            if (!doc["candidate_answer"].is_string())
                throw Error(ErrorKind::InvalidConfig, where + ": candidate_answer must be a string");
            record.candidate_answer = doc["candidate_answer"].get<std::string>();
        }
        dataset.push_back(std::move(record));
    }
    if (dataset.empty()) throw Error(ErrorKind::EmptyInput, "dataset has no records: " + path);
    return dataset;
}

void write_verdicts_jsonl(const std::string& path, const std::vector<QaRecord>& dataset,
                          const EvalOutcome& outcome) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write verdicts file: " + path);
    for (const auto& [index, verdict] : outcome.verdicts) {
        nlohmann::json doc = {
            {"question", dataset.at(index).question},
            {"strategy", std::string(strategy_str(dataset.at(index).strategy))},
            {"score", verdict.score},
            {"classification", std::string(classification_str(verdict.classification))},
            {"feedback", verdict.feedback},
        };
        out << doc.dump() << '\n';
    }
    if (!out) throw Error(ErrorKind::IoError, "failed writing verdicts file: " + path);
}

std::string summary_to_json(const EvalOutcome& outcome) {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [score, count] : outcome.summary.counts)
        counts[std::to_string(score)] = count;
    nlohmann::json doc = {
        {"n", outcome.summary.n},
        {"counts", counts},
        {"pct_acceptable", outcome.summary.pct_acceptable},
        {"average", outcome.summary.average},
        {"std_dev", outcome.summary.std_dev},
        {"excluded", outcome.failures.size()},
    };
    return doc.dump(2) + "\n";
}

void write_summary_json(const std::string& path, const EvalOutcome& outcome) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write summary file: " + path);
    out << summary_to_json(outcome);
    if (!out) throw Error(ErrorKind::IoError, "failed writing summary file: " + path);
}

} // namespace derivare
