#pragma once

#include "derivare/error.hpp"

#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace derivare {

struct GenerationRequest {
    std::optional<std::string> system;
    std::string prompt; // must be non-empty
    double temperature = 0.0;
    int max_output_chars = 16384;
};

struct EmbeddingVector {
    std::vector<double> values;

    int dim() const { return static_cast<int>(values.size()); }
    bool operator==(const EmbeddingVector&) const = default;
};

// Uniform interface to text-generation and embedding backends. All network
// I/O in the project lives behind this interface.
class Provider {
public:
    virtual ~Provider() = default;

    // Returns the model completion for the request.
    virtual std::string complete(const GenerationRequest& request) = 0;

    // One vector per input text, constant dimension across a backend.
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;

    // Cross-encoder style relevance: one score per candidate, higher is more
    // relevant to the query.
    virtual std::vector<double> score_pairs(const std::string& query, const std::vector<std::string>& candidates) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic offline mock

struct ScriptEntry {
    std::string match; // substring the prompt must contain; "*" matches anything
    std::string response;
};

struct LoggedCall {
    enum class Kind { Complete, Embed, ScorePairs };
    Kind kind;
    std::string payload; // prompt, joined texts, or query
};

// Replays scripted responses: each complete() consumes the first unused
// entry whose matcher matches the prompt. Embeddings come from a
// deterministic hashing embedder; pair scores are either scripted or the
// cosine of hashed embeddings.
class MockProvider : public Provider {
public:
    explicit MockProvider(std::vector<ScriptEntry> script = {}, int embedding_dim = 64);

    std::string complete(const GenerationRequest& request) override;
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    std::vector<double> score_pairs(const std::string& query, const std::vector<std::string>& candidates) override;

    // Switches score_pairs to scripted mode; scores are consumed from this
    // queue, one per candidate, and running out raises ScriptExhausted.
    void script_scores(const std::vector<double>& scores);

    void append_script(ScriptEntry entry);

    std::vector<LoggedCall> call_log() const;
    int completion_count() const;
    size_t remaining_responses() const;

private:
    mutable std::mutex mutex_;
    std::deque<ScriptEntry> script_;
    std::deque<double> scripted_scores_;
    bool scores_scripted_ = false;
    int embedding_dim_;
    std::vector<LoggedCall> log_;
};

// The mock's embedder, exposed for oracle tests: deterministic, unit-norm,
// stable across runs and platforms.
EmbeddingVector hashing_embedding(const std::string& text, int dim);

// Loads a mock script from a JSON file: [{"match": str, "response": str}].
std::vector<ScriptEntry> load_script(const std::string& path);

// ---------------------------------------------------------------------------
// Remote backend

struct RemoteProviderConfig {
    std::string endpoint; // e.g. "https://api.example.com"
    std::string model;
    std::string embed_model;
    std::string rerank_model;
    std::string api_key_env = "DERIVARE_API_KEY";
    int max_retries = 3;
    int retry_base_ms = 250;
};

// OpenAI-compatible HTTP client (chat completions, embeddings, and a
// Cohere-style rerank endpoint for pair scoring). Retries RateLimited and
// transient transport failures with exponential backoff.
class RemoteProvider : public Provider {
public:
    explicit RemoteProvider(RemoteProviderConfig config);
    ~RemoteProvider() override;

    std::string complete(const GenerationRequest& request) override;
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    std::vector<double> score_pairs(const std::string& query, const std::vector<std::string>& candidates) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace derivare
