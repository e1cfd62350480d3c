#include "cqg/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <unordered_set>

namespace cqg {
namespace text {

std::vector<size_t> code_point_offsets(const std::string& s) {
  std::vector<size_t> offsets;
  offsets.reserve(s.size() + 1);
  size_t i = 0;
  while (i < s.size()) {
    offsets.push_back(i);
    unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if (c >= 0xF0)
      len = 4;
    else if (c >= 0xE0)
      len = 3;
    else if (c >= 0xC0)
      len = 2;
    // continuation bytes must actually be present, otherwise fall back to 1
    if (i + len > s.size()) len = 1;
    for (size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    i += len;
  }
  offsets.push_back(s.size());
  return offsets;
}

int code_point_count(const std::string& s) {
  return static_cast<int>(code_point_offsets(s).size()) - 1;
}

std::string slice(const std::string& s, int cp_begin, int cp_end) {
  const auto offs = code_point_offsets(s);
  const int n = static_cast<int>(offs.size()) - 1;
  cp_begin = std::clamp(cp_begin, 0, n);
  cp_end = std::clamp(cp_end, cp_begin, n);
  return s.substr(offs[cp_begin], offs[cp_end] - offs[cp_begin]);
}

std::string slice(const std::string& s, Span span) { return slice(s, span.begin, span.end); }

std::string ascii_lower(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

namespace {

bool is_ascii_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

bool is_upper_or_digit(unsigned char c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9'); }

// Abbreviations whose trailing '.' does not end a sentence. "May" is left
// out on purpose: the month name never appears in its abbreviated form.
const std::unordered_set<std::string>& abbreviations() {
  static const std::unordered_set<std::string> kAbbrev = {
      "Mr",  "Mrs", "Ms",  "Dr",   "Prof", "Sr",  "Jr",  "St",  "Mt",  "Gen", "Col",
      "no",  "No",  "vs",  "etc",  "Inc",  "Ltd", "Co",  "Corp", "Fig", "Eq",  "approx",
      "U.S", "U.K", "E.U", "a.m",  "p.m",  "i.e", "e.g", "cf",
      "Jan", "Feb", "Mar", "Apr",  "Jun",  "Jul", "Aug", "Sep", "Sept", "Oct", "Nov", "Dec"};
  return kAbbrev;
}

}  // namespace

std::vector<Token> tokenize_spans(const std::string& s) {
  const auto offs = code_point_offsets(s);
  const int n = static_cast<int>(offs.size()) - 1;
  std::vector<Token> tokens;
  int i = 0;
  while (i < n) {
    const size_t b = offs[i];
    const unsigned char c = static_cast<unsigned char>(s[b]);
    if (c < 128 && is_ascii_space(c)) {
      ++i;
      continue;
    }
    if (is_ascii_punct(c)) {
      tokens.push_back({s.substr(b, offs[i + 1] - b), {i, i + 1}});
      ++i;
      continue;
    }
    // word run: anything that is neither ASCII whitespace nor ASCII punctuation
    int j = i;
    while (j < n) {
      const unsigned char cj = static_cast<unsigned char>(s[offs[j]]);
      if (cj < 128 && (is_ascii_space(cj) || is_ascii_punct(cj))) break;
      ++j;
    }
    tokens.push_back({s.substr(offs[i], offs[j] - offs[i]), {i, j}});
    i = j;
  }
  return tokens;
}

std::vector<std::string> metric_tokenize(const std::string& s) {
  std::vector<std::string> out;
  for (const Token& t : tokenize_spans(s)) out.push_back(ascii_lower(t.text));
  return out;
}

std::vector<Sentence> segment_sentences(const std::string& raw_text) {
  const auto offs = code_point_offsets(raw_text);
  const int n = static_cast<int>(offs.size()) - 1;

  auto cp_at = [&](int i) -> unsigned char { return static_cast<unsigned char>(raw_text[offs[i]]); };
  auto is_space_cp = [&](int i) { return offs[i + 1] - offs[i] == 1 && is_ascii_space(cp_at(i)); };

  // word immediately preceding position i (letters and '.' runs), used for
  // the abbreviation check
  auto preceding_word = [&](int end_cp) {
    int b = end_cp;
    while (b > 0) {
      const int k = b - 1;
      if (offs[k + 1] - offs[k] != 1) break;
      const unsigned char c = cp_at(k);
      if (std::isalpha(c) || c == '.') {
        --b;
        continue;
      }
      break;
    }
    return slice(raw_text, b, end_cp);
  };

  std::vector<int> boundaries;  // code-point index one past each sentence end
  for (int i = 0; i < n; ++i) {
    if (offs[i + 1] - offs[i] != 1) continue;
    const unsigned char c = cp_at(i);
    if (c != '.' && c != '?' && c != '!') continue;
    // must be followed by whitespace and then an uppercase letter or digit
    int j = i + 1;
    if (j >= n || !is_space_cp(j)) continue;
    while (j < n && is_space_cp(j)) ++j;
    if (j >= n) continue;
    if (!(offs[j + 1] - offs[j] == 1 && is_upper_or_digit(cp_at(j)))) continue;
    if (c == '.') {
      std::string word = preceding_word(i);
      while (!word.empty() && word.front() == '.') word.erase(word.begin());
      if (abbreviations().count(word)) continue;
    }
    boundaries.push_back(i + 1);
  }
  boundaries.push_back(n);

  std::vector<Sentence> sentences;
  int cursor = 0;
  for (int boundary : boundaries) {
    int b = cursor;
    while (b < boundary && is_space_cp(b)) ++b;
    int e = boundary;
    while (e > b && is_space_cp(e - 1)) --e;
    if (b < e) sentences.push_back({slice(raw_text, b, e), {b, e}});
    cursor = boundary;
  }
  return sentences;
}

}  // namespace text
}  // namespace cqg
