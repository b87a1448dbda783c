#pragma once

#include "derivare/core.hpp"
#include "derivare/engine.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace derivare {

// Everything a command needs, loadable from an INI-style config file and
// overridable flag by flag (flags win).
struct AppConfig {
    std::string corpus_dir = "corpus";
    std::string chunks_path = "chunks.jsonl";
    std::string index_path = "index.jsonl";
    // chunking
    int max_chars = 1000;
    int overlap_chars = 200;
    // retrieval
    int k = 3;
    bool rerank = false;
    int rerank_pool = 10;
    // engine
    DerivationMode mode = DerivationMode::WholeDerivation;
    int max_steps = 12;
    Language language = Language::En;
    std::string few_shots_path;  // bundled set when empty
    std::string templates_dir;   // bundled templates when empty
    // provider
    std::string provider_kind = "mock"; // mock | remote
    std::string endpoint;
    std::string model;
    std::string embed_model;
    std::string rerank_model;
    std::string mock_script_path;
    int embedding_dim = 64;
    // eval
    std::string rubric_path; // bundled rubric when empty
    int parallelism = 4;
};

// Parses an INI-style config file (sections, key = value, # comments).
// Throws IoError, InvalidConfig on unknown keys or bad values.
AppConfig load_app_config(const std::string& path);

// Throws InvalidConfig when ranges or enum values are off.
void validate_app_config(const AppConfig& cfg);

// Runs one subcommand (ingest, index, ask, render, eval) with the given
// arguments (program name excluded). Returns the process exit code:
// 0 success, 1 user/config error, 2 provider/transport failure.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace derivare
