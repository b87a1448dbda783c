#pragma once

#include "derivare/ingest.hpp"
#include "derivare/provider.hpp"

#include <map>
#include <string>
#include <vector>

namespace derivare {

struct IndexEntry {
    std::string chunk_id;
    EmbeddingVector vector;

    bool operator==(const IndexEntry&) const = default;
};

struct EmbeddingIndex {
    std::vector<IndexEntry> entries; // ordered by chunk_id
    int dim = 0;
    std::map<std::string, Chunk> chunk_lookup;

    bool operator==(const EmbeddingIndex&) const = default;
};

struct ScoredChunk {
    Chunk chunk;
    double score = 0.0;

    bool operator==(const ScoredChunk&) const = default;
};

struct RetrievalConfig {
    int k = 3;
    bool rerank = false;
    int rerank_pool = 10; // must be >= k
};

// Embeds every chunk (one provider call) and builds the index.
// Throws EmptyInput for zero chunks, DimensionMismatch on inconsistent dims.
EmbeddingIndex build_index(const std::vector<Chunk>& chunks, Provider& embedder);

// dot(a,b) / (|a||b|), in [-1, 1].
// Throws DimensionMismatch, ZeroVector.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

// The k most relevant chunks, descending score, ties broken by chunk_id
// ascending. With cfg.rerank, the rerank_pool best cosine candidates are
// rescored via scorer->score_pairs and the top k by that score returned.
// k larger than the index returns every entry.
std::vector<ScoredChunk> retrieve_top_k(const EmbeddingIndex& index, const std::string& query,
                                        const RetrievalConfig& cfg, Provider& embedder, Provider* scorer = nullptr);

// Index persistence: JSONL with a {"dim": n} header line, then one
// {"chunk_id", "vector"} line per entry. Chunks travel separately in the
// chunk store.
void save_index(const EmbeddingIndex& index, const std::string& path);
EmbeddingIndex load_index(const std::string& path, const std::vector<Chunk>& chunks);

} // namespace derivare
