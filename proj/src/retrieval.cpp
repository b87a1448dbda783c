#include "derivare/retrieval.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace derivare {

using nlohmann::json;

EmbeddingIndex build_index(const std::vector<Chunk>& chunks, Provider& embedder) {
    if (chunks.empty()) throw Error(ErrorKind::EmptyInput, "cannot index zero chunks");

    std::vector<Chunk> ordered = chunks;
    std::sort(ordered.begin(), ordered.end(), [](const Chunk& a, const Chunk& b) { return a.chunk_id < b.chunk_id; });

    std::vector<std::string> texts;
    texts.reserve(ordered.size());
    for (const auto& chunk : ordered) texts.push_back(chunk.text);
    auto vectors = embedder.embed(texts);
    if (vectors.size() != ordered.size()) {
        throw Error(ErrorKind::DimensionMismatch, "embedder returned " + std::to_string(vectors.size()) +
                                                      " vectors for " + std::to_string(ordered.size()) + " chunks");
    }

    EmbeddingIndex index;
    index.dim = vectors.empty() ? 0 : vectors.front().dim();
    for (size_t i = 0; i < ordered.size(); ++i) {
        if (vectors[i].dim() != index.dim) {
            throw Error(ErrorKind::DimensionMismatch, "inconsistent embedding dimension for " + ordered[i].chunk_id);
        }
        index.entries.push_back({ordered[i].chunk_id, std::move(vectors[i])});
        index.chunk_lookup.emplace(ordered[i].chunk_id, ordered[i]);
    }
    return index;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorKind::DimensionMismatch,
                    "dims " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
    }
    double dot = 0.0, norm_a = 0.0, norm_b = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        norm_a += a.values[i] * a.values[i];
        norm_b += b.values[i] * b.values[i];
    }
    if (norm_a == 0.0 || norm_b == 0.0) throw Error(ErrorKind::ZeroVector, "cosine of an all-zero vector");
    return std::clamp(dot / (std::sqrt(norm_a) * std::sqrt(norm_b)), -1.0, 1.0);
}

namespace {

// Descending score, ties by chunk_id ascending.
void sort_scored(std::vector<std::pair<double, const IndexEntry*>>& scored) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->chunk_id < b.second->chunk_id;
    });
}

} // namespace

std::vector<ScoredChunk> retrieve_top_k(const EmbeddingIndex& index, const std::string& query,
                                        const RetrievalConfig& cfg, Provider& embedder, Provider* scorer) {
    if (index.entries.empty()) throw Error(ErrorKind::EmptyInput, "index is empty");
    if (cfg.k < 1) throw Error(ErrorKind::InvalidConfig, "k must be >= 1");
    if (cfg.rerank && cfg.rerank_pool < cfg.k) {
        throw Error(ErrorKind::InvalidConfig, "rerank_pool must be >= k");
    }
    if (cfg.rerank && !scorer) {
        throw Error(ErrorKind::InvalidConfig, "rerank enabled but no pair scorer configured");
    }

    EmbeddingVector query_vector = embedder.embed({query}).front();
    std::vector<std::pair<double, const IndexEntry*>> scored;
    scored.reserve(index.entries.size());
    for (const auto& entry : index.entries) {
        scored.emplace_back(cosine_similarity(query_vector, entry.vector), &entry);
    }
    sort_scored(scored);

    auto take = [&](const std::vector<std::pair<double, const IndexEntry*>>& ranked, size_t count) {
        std::vector<ScoredChunk> out;
        for (size_t i = 0; i < ranked.size() && i < count; ++i) {
            auto it = index.chunk_lookup.find(ranked[i].second->chunk_id);
            if (it == index.chunk_lookup.end()) {
                throw Error(ErrorKind::InvalidConfig, "index entry without chunk: " + ranked[i].second->chunk_id);
            }
            out.push_back({it->second, ranked[i].first});
        }
        return out;
    };

    if (!cfg.rerank) return take(scored, static_cast<size_t>(cfg.k));

    scored.resize(std::min(scored.size(), static_cast<size_t>(cfg.rerank_pool)));
    std::vector<std::string> pool_texts;
    for (const auto& [score, entry] : scored) {
        pool_texts.push_back(index.chunk_lookup.at(entry->chunk_id).text);
    }
    auto rerank_scores = scorer->score_pairs(query, pool_texts);
    if (rerank_scores.size() != scored.size()) {
        throw Error(ErrorKind::DimensionMismatch, "pair scorer returned " + std::to_string(rerank_scores.size()) +
                                                      " scores for " + std::to_string(scored.size()) + " candidates");
    }
    for (size_t i = 0; i < scored.size(); ++i) scored[i].first = rerank_scores[i];
    sort_scored(scored);
    return take(scored, static_cast<size_t>(cfg.k));
}

void save_index(const EmbeddingIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
    out << json{{"dim", index.dim}}.dump() << "\n";
    for (const auto& entry : index.entries) {
        out << json{{"chunk_id", entry.chunk_id}, {"vector", entry.vector.values}}.dump() << "\n";
    }
}

EmbeddingIndex load_index(const std::string& path, const std::vector<Chunk>& chunks) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path);

    std::map<std::string, Chunk> by_id;
    for (const auto& chunk : chunks) by_id.emplace(chunk.chunk_id, chunk);

    EmbeddingIndex index;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::IoError, "index file is empty: " + path);
    index.dim = json::parse(line).at("dim").get<int>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json doc = json::parse(line);
        IndexEntry entry;
        entry.chunk_id = doc.at("chunk_id").get<std::string>();
        entry.vector.values = doc.at("vector").get<std::vector<double>>();
        if (entry.vector.dim() != index.dim) {
            throw Error(ErrorKind::DimensionMismatch, "entry " + entry.chunk_id + " has dim " +
                                                          std::to_string(entry.vector.dim()) + ", header says " +
                                                          std::to_string(index.dim));
        }
        auto it = by_id.find(entry.chunk_id);
        if (it == by_id.end()) {
            throw Error(ErrorKind::InvalidConfig, "index references unknown chunk " + entry.chunk_id);
        }
        index.chunk_lookup.emplace(entry.chunk_id, it->second);
        index.entries.push_back(std::move(entry));
    }
    std::sort(index.entries.begin(), index.entries.end(),
              [](const IndexEntry& a, const IndexEntry& b) { return a.chunk_id < b.chunk_id; });
    return index;
}

} // namespace derivare
