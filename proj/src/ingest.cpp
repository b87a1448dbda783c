#include "derivare/ingest.hpp"

#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace derivare {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_text_file(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".md" || ext == ".markdown" || ext == ".txt";
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace

CorpusLoad load_corpus(const std::string& path) {
    std::error_code ec;
    if (!fs::exists(path, ec) || ec) {
        throw Error(ErrorKind::IoError, "corpus path does not exist: " + path);
    }
    if (!fs::is_directory(path, ec) || ec) {
        throw Error(ErrorKind::IoError, "corpus path is not a directory: " + path);
    }

    CorpusLoad load;
    for (auto it = fs::recursive_directory_iterator(path, ec); !ec && it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        std::string rel = fs::relative(it->path(), path).generic_string();
        if (!is_text_file(it->path())) {
            load.skipped.push_back("skipped non-text file: " + rel);
            continue;
        }
        load.documents.push_back({rel, read_file(it->path()), ""});
    }
    if (ec) throw Error(ErrorKind::IoError, "while scanning " + path + ": " + ec.message());

    std::sort(load.documents.begin(), load.documents.end(),
              [](const Document& a, const Document& b) { return a.doc_id < b.doc_id; });
    std::sort(load.skipped.begin(), load.skipped.end());
    if (load.documents.empty()) {
        throw Error(ErrorKind::EmptyCorpus, "no markdown or text documents under " + path);
    }
    return load;
}

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg) {
    if (cfg.max_chars == 0 || cfg.overlap_chars >= cfg.max_chars) {
        throw Error(ErrorKind::InvalidConfig, "overlap_chars must be smaller than max_chars");
    }
    std::vector<Chunk> chunks;
    const size_t len = doc.text.size();
    const size_t stride = cfg.max_chars - cfg.overlap_chars;
    for (size_t offset = 0; offset < len; offset += stride) {
        Chunk chunk;
        chunk.chunk_id = doc.doc_id + "#" + std::to_string(chunks.size());
        chunk.doc_id = doc.doc_id;
        chunk.char_offset = offset;
        chunk.text = doc.text.substr(offset, cfg.max_chars);
        chunks.push_back(std::move(chunk));
        if (offset + cfg.max_chars >= len) break; // window already reached the end
    }
    return chunks;
}

std::vector<Chunk> chunk_corpus(const std::vector<Document>& docs, const ChunkingConfig& cfg) {
    std::vector<Chunk> all;
    for (const auto& doc : docs) {
        auto chunks = chunk_document(doc, cfg);
        all.insert(all.end(), std::make_move_iterator(chunks.begin()), std::make_move_iterator(chunks.end()));
    }
    return all;
}

void save_chunks(const std::vector<Chunk>& chunks, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
    for (const auto& chunk : chunks) {
        json line = {{"chunk_id", chunk.chunk_id},
                     {"doc_id", chunk.doc_id},
                     {"char_offset", chunk.char_offset},
                     {"text", chunk.text}};
        out << line.dump() << "\n";
    }
}

std::vector<Chunk> load_chunks(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot read " + path);
    std::vector<Chunk> chunks;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json doc = json::parse(line);
        Chunk chunk;
        chunk.chunk_id = doc.at("chunk_id").get<std::string>();
        chunk.doc_id = doc.at("doc_id").get<std::string>();
        chunk.char_offset = doc.at("char_offset").get<size_t>();
        chunk.text = doc.at("text").get<std::string>();
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

} // namespace derivare
