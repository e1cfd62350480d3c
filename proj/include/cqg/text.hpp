#pragma once

// Code-point aware text utilities shared by the whole pipeline: span
// arithmetic, tokenization and rule-based sentence segmentation.
// All offsets in this codebase are Unicode code-point offsets, never bytes.

#include <cstdint>
#include <string>
#include <vector>

namespace cqg {

// Half-open [begin, end) span in code-point offsets.
struct Span {
  int begin = 0;
  int end = 0;

  int length() const { return end - begin; }
  bool contains(int pos) const { return begin <= pos && pos < end; }
  bool operator==(const Span& o) const { return begin == o.begin && end == o.end; }
};

struct Sentence {
  std::string text;
  Span span;  // into the owning paragraph's raw_text
};

// A surface token together with its code-point span in the original text.
struct Token {
  std::string text;
  Span span;
};

namespace text {

// Byte offset of each code point, plus one past-the-end entry.
// Invalid UTF-8 bytes are treated as single-byte code points.
std::vector<size_t> code_point_offsets(const std::string& s);

int code_point_count(const std::string& s);

// Slice by code-point offsets; clamps to the valid range.
std::string slice(const std::string& s, int cp_begin, int cp_end);
std::string slice(const std::string& s, Span span);

std::string ascii_lower(const std::string& s);

// Case-preserving tokenizer: every ASCII punctuation character becomes a
// standalone token, runs of everything else split on whitespace.
std::vector<Token> tokenize_spans(const std::string& s);

// Metric tokenization: tokenize_spans + ASCII lowercasing.
std::vector<std::string> metric_tokenize(const std::string& s);

// Rule-based sentence segmentation. Splits after '.', '?' or '!' when
// followed by whitespace and an uppercase ASCII letter or digit; a fixed
// abbreviation list suppresses splits after '.'.
// Spans cover all non-whitespace text, ordered and non-overlapping.
std::vector<Sentence> segment_sentences(const std::string& raw_text);

}  // namespace text
}  // namespace cqg
