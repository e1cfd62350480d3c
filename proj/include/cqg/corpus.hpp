#pragma once

// Canonical in-memory form of ingested QA corpora: articles of paragraphs,
// each paragraph carrying its sentence segmentation and QA pairs with
// resolved answer-sentence indices.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cqg/text.hpp"

namespace cqg {
namespace corpus {

enum class Origin { standard, conversational };

struct QAPair {
  std::string question;
  std::string answer_text;
  Span answer_span;                 // into the paragraph raw_text, code points
  int answer_sentence_index = -1;   // index of s_a
  std::optional<int> turn_index;    // dialogue position, conversational data only
};

struct Paragraph {
  std::string raw_text;
  std::vector<Sentence> sentences;
  std::vector<QAPair> qa_pairs;
};

struct Article {
  std::string id;
  std::string title;
  std::vector<Paragraph> paragraphs;
};

struct Corpus {
  std::vector<Article> articles;
  Origin origin = Origin::standard;
  std::string split_name = "train";  // train | validation | test

  size_t paragraph_count() const;
  size_t qa_count() const;
};

// One rejected input record, with the 1-based line number and a reason.
struct RecordError {
  int line = 0;
  std::string reason;
};

struct LoadReport {
  int records_read = 0;
  int records_rejected = 0;
  std::vector<RecordError> errors;
};

// Index of the sentence whose span contains the start of `span`.
// Throws std::out_of_range when the start falls outside every sentence.
int locate_answer_sentence(const Paragraph& paragraph, Span span);

// Load canonical JSONL (one paragraph record per line, fields article_id,
// title, paragraph, qas:[{question, answer_text, answer_start, answer_end,
// turn_index?}]). Malformed or contract-violating records are rejected and
// counted in `report`; the rest form the corpus.
Corpus load_standard_qa(const std::string& path, LoadReport* report = nullptr);
Corpus load_conversational_qa(const std::string& path, LoadReport* report = nullptr);

// Importers for the native nested-JSON release formats; emit canonical JSONL.
// `conversational` selects the dialogue-style reading (turn_index from the
// per-paragraph question order). Returns the number of paragraph records
// written.
int import_native_qa(const std::string& in_path, const std::string& out_path,
                     bool conversational, LoadReport* report = nullptr);

// Serialize a corpus back to canonical JSONL (used by tests and fixtures).
void write_canonical_jsonl(const Corpus& corpus, const std::string& path);

}  // namespace corpus
}  // namespace cqg
