#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "derivare/provider.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <thread>

namespace derivare {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Hashing embedder

namespace {

uint64_t fnv1a(std::string_view text) {
    uint64_t hash = 14695981039346656037ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

void accumulate_token(std::vector<double>& values, std::string_view token) {
    const uint64_t hash = fnv1a(token);
    const size_t index = hash % values.size();
    values[index] += ((hash >> 32) & 1) ? 1.0 : -1.0;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

} // namespace

EmbeddingVector hashing_embedding(const std::string& text, int dim) {
    std::vector<double> values(static_cast<size_t>(dim), 0.0);

    // Lowercase, non-alphanumeric collapsed to single spaces.
    std::string normalized;
    normalized.reserve(text.size());
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            normalized += static_cast<char>(std::tolower(c));
        } else if (!normalized.empty() && normalized.back() != ' ') {
            normalized += ' ';
        }
    }
    while (!normalized.empty() && normalized.back() == ' ') normalized.pop_back();

    // Word features plus character trigrams, feature-hashed with sign.
    size_t start = 0;
    while (start < normalized.size()) {
        size_t end = normalized.find(' ', start);
        if (end == std::string::npos) end = normalized.size();
        accumulate_token(values, std::string_view(normalized).substr(start, end - start));
        start = end + 1;
    }
    for (size_t i = 0; i + 3 <= normalized.size(); ++i) {
        accumulate_token(values, std::string_view(normalized).substr(i, 3));
    }

    double norm = std::sqrt(dot(values, values));
    if (norm == 0.0) {
        values[0] = 1.0; // fixed direction for featureless text
    } else {
        for (auto& v : values) v /= norm;
    }
    return {std::move(values)};
}

// ---------------------------------------------------------------------------
// MockProvider

MockProvider::MockProvider(std::vector<ScriptEntry> script, int embedding_dim)
    : script_(script.begin(), script.end()), embedding_dim_(embedding_dim) {}

std::string MockProvider::complete(const GenerationRequest& request) {
    if (request.prompt.empty()) throw Error(ErrorKind::EmptyInput, "prompt must be non-empty");
    std::lock_guard lock(mutex_);
    log_.push_back({LoggedCall::Kind::Complete, request.prompt});
    if (script_.empty()) {
        throw Error(ErrorKind::ScriptExhausted, "no scripted responses left");
    }
    for (auto it = script_.begin(); it != script_.end(); ++it) {
        if (it->match == "*" || request.prompt.find(it->match) != std::string::npos) {
            std::string response = it->response;
            script_.erase(it);
            return response;
        }
    }
    throw Error(ErrorKind::ScriptMismatch, "no remaining script entry matches the prompt");
}

std::vector<EmbeddingVector> MockProvider::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw Error(ErrorKind::EmptyInput, "embed requires at least one text");
    {
        std::lock_guard lock(mutex_);
        std::string joined;
        for (const auto& t : texts) {
            if (!joined.empty()) joined += "\n";
            joined += t;
        }
        log_.push_back({LoggedCall::Kind::Embed, std::move(joined)});
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& text : texts) out.push_back(hashing_embedding(text, embedding_dim_));
    return out;
}

std::vector<double> MockProvider::score_pairs(const std::string& query, const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw Error(ErrorKind::EmptyInput, "score_pairs requires at least one candidate");
    std::lock_guard lock(mutex_);
    log_.push_back({LoggedCall::Kind::ScorePairs, query});
    if (scores_scripted_) {
        if (scripted_scores_.size() < candidates.size()) {
            throw Error(ErrorKind::ScriptExhausted, "scripted scores left: " + std::to_string(scripted_scores_.size()) +
                                                        ", needed: " + std::to_string(candidates.size()));
        }
        std::vector<double> out;
        for (size_t i = 0; i < candidates.size(); ++i) {
            out.push_back(scripted_scores_.front());
            scripted_scores_.pop_front();
        }
        return out;
    }
    EmbeddingVector q = hashing_embedding(query, embedding_dim_);
    std::vector<double> out;
    out.reserve(candidates.size());
    for (const auto& candidate : candidates) {
        out.push_back(dot(q.values, hashing_embedding(candidate, embedding_dim_).values));
    }
    return out;
}

void MockProvider::script_scores(const std::vector<double>& scores) {
    std::lock_guard lock(mutex_);
    scores_scripted_ = true;
    scripted_scores_.insert(scripted_scores_.end(), scores.begin(), scores.end());
}

void MockProvider::append_script(ScriptEntry entry) {
    std::lock_guard lock(mutex_);
    script_.push_back(std::move(entry));
}

std::vector<LoggedCall> MockProvider::call_log() const {
    std::lock_guard lock(mutex_);
    return log_;
}

int MockProvider::completion_count() const {
    std::lock_guard lock(mutex_);
    int n = 0;
    for (const auto& call : log_) {
        if (call.kind == LoggedCall::Kind::Complete) ++n;
    }
    return n;
}

size_t MockProvider::remaining_responses() const {
    std::lock_guard lock(mutex_);
    return script_.size();
}

std::vector<ScriptEntry> load_script(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read script " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidConfig, "script " + path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_array()) throw Error(ErrorKind::InvalidConfig, "script " + path + " must be a JSON array");
    std::vector<ScriptEntry> script;
    for (const auto& item : doc) {
        script.push_back({item.at("match").get<std::string>(), item.at("response").get<std::string>()});
    }
    return script;
}

// ---------------------------------------------------------------------------
// RemoteProvider

struct RemoteProvider::Impl {
    RemoteProviderConfig config;
    std::string api_key;

    json post_with_retries(const std::string& path, const json& body) {
        httplib::Client client(config.endpoint);
        client.set_connection_timeout(30);
        client.set_read_timeout(120);
        httplib::Headers headers;
        if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

        int attempts = std::max(1, config.max_retries);
        std::string last_failure;
        bool rate_limited = false;
        for (int attempt = 0; attempt < attempts; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(config.retry_base_ms << (attempt - 1)));
            }
            auto res = client.Post(path, headers, body.dump(), "application/json");
            if (!res) {
                last_failure = "no response (" + httplib::to_string(res.error()) + ")";
                rate_limited = false;
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_failure = "HTTP " + std::to_string(res->status);
                rate_limited = res->status == 429;
                continue;
            }
            if (res->status != 200) {
                throw Error(ErrorKind::TransportError, path + " returned HTTP " + std::to_string(res->status));
            }
            try {
                return json::parse(res->body);
            } catch (const json::exception& e) {
                throw Error(ErrorKind::TransportError, path + " returned invalid JSON: " + e.what());
            }
        }
        throw Error(rate_limited ? ErrorKind::RateLimited : ErrorKind::TransportError,
                    path + " failed after " + std::to_string(attempts) + " attempts: " + last_failure);
    }
};

RemoteProvider::RemoteProvider(RemoteProviderConfig config) : impl_(std::make_unique<Impl>()) {
    if (std::getenv("DERIVARE_ASSERT_NO_NETWORK")) {
        throw Error(ErrorKind::TransportError, "network access disabled by DERIVARE_ASSERT_NO_NETWORK");
    }
    if (config.endpoint.empty()) {
        throw Error(ErrorKind::InvalidConfig, "remote provider requires an endpoint");
    }
    const char* key = config.api_key_env.empty() ? nullptr : std::getenv(config.api_key_env.c_str());
    impl_->api_key = key ? key : "";
    impl_->config = std::move(config);
}

RemoteProvider::~RemoteProvider() = default;

std::string RemoteProvider::complete(const GenerationRequest& request) {
    if (request.prompt.empty()) throw Error(ErrorKind::EmptyInput, "prompt must be non-empty");
    json messages = json::array();
    if (request.system) messages.push_back({{"role", "system"}, {"content", *request.system}});
    messages.push_back({{"role", "user"}, {"content", request.prompt}});
    json body = {{"model", impl_->config.model},
                 {"messages", std::move(messages)},
                 {"temperature", request.temperature},
                 {"max_tokens", std::max(16, request.max_output_chars / 4)}};
    json res = impl_->post_with_retries("/v1/chat/completions", body);
    try {
        return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::TransportError, std::string("unexpected completion payload: ") + e.what());
    }
}

std::vector<EmbeddingVector> RemoteProvider::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw Error(ErrorKind::EmptyInput, "embed requires at least one text");
    json body = {{"model", impl_->config.embed_model}, {"input", texts}};
    json res = impl_->post_with_retries("/v1/embeddings", body);
    std::vector<EmbeddingVector> out(texts.size());
    try {
        const auto& data = res.at("data");
        if (data.size() != texts.size()) {
            throw Error(ErrorKind::TransportError, "embedding count mismatch");
        }
        for (size_t i = 0; i < data.size(); ++i) {
            size_t index = data[i].contains("index") ? data[i].at("index").get<size_t>() : i;
            if (index >= out.size()) throw Error(ErrorKind::TransportError, "embedding index out of range");
            out[index].values = data[i].at("embedding").get<std::vector<double>>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::TransportError, std::string("unexpected embedding payload: ") + e.what());
    }
    for (const auto& v : out) {
        if (v.dim() != out.front().dim()) {
            throw Error(ErrorKind::DimensionMismatch, "backend returned inconsistent embedding dimensions");
        }
    }
    return out;
}

std::vector<double> RemoteProvider::score_pairs(const std::string& query, const std::vector<std::string>& candidates) {
    if (candidates.empty()) throw Error(ErrorKind::EmptyInput, "score_pairs requires at least one candidate");
    json body = {{"model", impl_->config.rerank_model}, {"query", query}, {"documents", candidates}};
    json res = impl_->post_with_retries("/v1/rerank", body);
    std::vector<double> out(candidates.size(), 0.0);
    try {
        for (const auto& item : res.at("results")) {
            size_t index = item.at("index").get<size_t>();
            if (index >= out.size()) throw Error(ErrorKind::TransportError, "rerank index out of range");
            out[index] = item.at("relevance_score").get<double>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::TransportError, std::string("unexpected rerank payload: ") + e.what());
    }
    return out;
}

} // namespace derivare
