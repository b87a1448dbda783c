#pragma once

#include "derivare/error.hpp"

#include <string>
#include <vector>

namespace derivare {

struct Document {
    std::string doc_id; // path relative to the corpus root
    std::string text;
    std::string source_uri; // optional, empty when unknown

    bool operator==(const Document&) const = default;
};

struct Chunk {
    std::string chunk_id; // doc_id + "#" + ordinal
    std::string doc_id;
    std::string text; // contiguous substring of the document at char_offset
    size_t char_offset = 0;

    bool operator==(const Chunk&) const = default;
};

struct CorpusLoad {
    std::vector<Document> documents; // sorted by doc_id
    std::vector<std::string> skipped; // non-text files, one warning each
};

struct ChunkingConfig {
    size_t max_chars = 1000;
    size_t overlap_chars = 200;
};

// Reads every markdown/plain-text file under `path` (recursively).
// Throws IoError when the path is unreadable, EmptyCorpus when no document
// is found.
CorpusLoad load_corpus(const std::string& path);

// Sliding-window chunks with stride (max_chars - overlap_chars); the last
// chunk may be short, and every document character lands in at least one
// chunk. Empty documents yield no chunks.
// Throws InvalidConfig when overlap_chars >= max_chars.
std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg = {});

std::vector<Chunk> chunk_corpus(const std::vector<Document>& docs, const ChunkingConfig& cfg = {});

// Chunk store persistence: JSONL, one chunk object per line.
void save_chunks(const std::vector<Chunk>& chunks, const std::string& path);
std::vector<Chunk> load_chunks(const std::string& path);

} // namespace derivare
