#pragma once

#include "derivare/core.hpp"

// Data compiled into the library from data/: few-shot example sets and the
// default prompt templates, per language.
namespace derivare::bundled {

const char* few_shots_json(Language lang);
const char* whole_derivation_template(Language lang);
const char* one_step_template(Language lang);
const char* rag_template(Language lang);
const char* long_context_template(Language lang);

} // namespace derivare::bundled
