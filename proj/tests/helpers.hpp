#pragma once

// Shared fixtures for the unit and acceptance suites: the Tesla paragraph,
// seeded synthetic corpora, a hand-built toy decoding table and a
// finite-difference gradient checker.

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cqg/corpus.hpp"
#include "cqg/model.hpp"
#include "cqg/training.hpp"

namespace cqg {
namespace testutil {

inline std::string tesla_paragraph() {
  return "Tesla was the fourth of five children. He had an older brother named Dane and three "
         "sisters, Milka, Angelina and Marica. Dane was killed in a horse-riding accident when "
         "Nikola was five. In 1861, Tesla attended the \"Lower\" or \"Primary\" School in Smiljan "
         "where he studied German, arithmetic, and religion. In 1862, the Tesla family moved to "
         "Gospi\xC4\x87, Austrian Empire, where Tesla's father worked as a pastor. Nikola "
         "completed \"Lower\" or \"Primary\" School, followed by the \"Lower Real Gymnasium\" or "
         "\"Normal School.\"";
}

// byte offset -> code-point offset within a UTF-8 string
inline int to_code_point_offset(const std::string& s, size_t byte_offset) {
  const auto offsets = text::code_point_offsets(s);
  for (size_t i = 0; i + 1 < offsets.size(); ++i)
    if (offsets[i] == byte_offset) return static_cast<int>(i);
  throw std::runtime_error("byte offset does not start a code point");
}

inline Span span_of(const std::string& haystack, const std::string& needle) {
  const size_t pos = haystack.find(needle);
  if (pos == std::string::npos) throw std::runtime_error("substring not found: " + needle);
  const int begin = to_code_point_offset(haystack, pos);
  return {begin, begin + text::code_point_count(needle)};
}

// the Tesla fixture with the two questions discussed alongside it
inline corpus::Corpus tesla_corpus() {
  corpus::Corpus c;
  c.origin = corpus::Origin::standard;

  corpus::Paragraph p;
  p.raw_text = tesla_paragraph();
  p.sentences = text::segment_sentences(p.raw_text);

  corpus::QAPair q1;
  q1.question = "What happened to Dane?";
  q1.answer_text = "killed in a horse-riding accident";
  q1.answer_span = span_of(p.raw_text, q1.answer_text);
  q1.answer_sentence_index = corpus::locate_answer_sentence(p, q1.answer_span);

  corpus::QAPair q2;
  q2.question = "What was Tesla's brother's name?";
  q2.answer_text = "Dane";
  q2.answer_span = span_of(p.raw_text, "Dane and three sisters");
  q2.answer_span.end = q2.answer_span.begin + text::code_point_count("Dane");
  q2.answer_sentence_index = corpus::locate_answer_sentence(p, q2.answer_span);

  p.qa_pairs = {q1, q2};
  c.articles.push_back({"tesla", "Nikola Tesla", {p}});
  return c;
}

inline std::string temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("cqg_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir.string();
}

// ---------------------------------------------------------------------------
// seeded synthetic corpora for the derivation property suite

struct SyntheticPools {
  std::vector<std::string> names = {"Alice", "Bruno", "Carla", "Dmitri", "Elena", "Farid"};
  std::vector<std::string> places = {"Paris", "London", "Turin", "Madrid", "Kyoto"};
  std::vector<std::string> nouns = {"river", "school", "album", "engine", "bridge", "garden"};
  std::vector<std::string> verbs = {"visited", "painted", "repaired", "measured", "crossed"};
};

inline corpus::Corpus synthetic_corpus(int n_paragraphs, uint64_t seed, corpus::Origin origin) {
  SyntheticPools pools;
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& {
    return v[rng() % v.size()];
  };

  corpus::Corpus c;
  c.origin = origin;
  for (int pi = 0; pi < n_paragraphs; ++pi) {
    corpus::Paragraph p;
    const int n_sentences = 2 + static_cast<int>(rng() % 5);
    std::vector<std::pair<std::string, std::string>> facts;  // (name, noun) per sentence
    for (int si = 0; si < n_sentences; ++si) {
      const std::string& name = pick(pools.names);
      const std::string& noun = pick(pools.nouns);
      const int year = 1850 + static_cast<int>(rng() % 120);
      std::string sentence;
      if (rng() % 2 == 0)
        sentence = "In " + std::to_string(year) + ", " + name + " " + pick(pools.verbs) + " the " +
                   noun + " near " + pick(pools.places) + ".";
      else
        sentence = name + " " + pick(pools.verbs) + " the " + noun + " in " + std::to_string(year) + ".";
      if (!p.raw_text.empty()) p.raw_text += " ";
      p.raw_text += sentence;
      facts.emplace_back(name, noun);
    }
    p.sentences = text::segment_sentences(p.raw_text);
    if (static_cast<int>(p.sentences.size()) != n_sentences)
      throw std::runtime_error("synthetic paragraph segmented unexpectedly");

    const int n_questions = 1 + static_cast<int>(rng() % 3);
    for (int qi = 0; qi < n_questions; ++qi) {
      const int a = static_cast<int>(rng() % n_sentences);
      corpus::QAPair qa;
      // the answer is the noun token of sentence a
      const auto& noun = facts[static_cast<size_t>(a)].second;
      const auto sentence_text = p.sentences[static_cast<size_t>(a)].text;
      const size_t local = sentence_text.find(noun);
      const int begin = p.sentences[static_cast<size_t>(a)].span.begin +
                        to_code_point_offset(sentence_text, local);
      qa.answer_text = noun;
      qa.answer_span = {begin, begin + text::code_point_count(noun)};
      qa.answer_sentence_index = a;
      switch (rng() % 3) {
        case 0: qa.question = "What did " + facts[static_cast<size_t>(a)].first + " do ?"; break;
        case 1: qa.question = "Who went near " + pick(pools.places) + " ?"; break;
        default: qa.question = "What happened to the " + pick(pools.nouns) + " ?"; break;
      }
      if (origin == corpus::Origin::conversational) qa.turn_index = qi;
      p.qa_pairs.push_back(std::move(qa));
    }
    c.articles.push_back({"article_" + std::to_string(pi), "Article " + std::to_string(pi), {p}});
  }
  return c;
}

// ---------------------------------------------------------------------------
// hand-built toy next-token table for the decoder oracle tests

class ToyDistribution : public model::SequenceDistribution {
 public:
  // eos is token 0; unknown prefixes fall back to `fallback`
  ToyDistribution(int vocab, std::map<std::vector<int>, std::vector<double>> table,
                  std::vector<double> fallback)
      : vocab_(vocab), table_(std::move(table)), fallback_(std::move(fallback)) {}

  int extended_vocab_size() const override { return vocab_; }
  int eos_id() const override { return 0; }

  std::vector<double> next_distribution(const std::vector<int>& prefix) const override {
    const auto it = table_.find(prefix);
    return it != table_.end() ? it->second : fallback_;
  }

 private:
  int vocab_;
  std::map<std::vector<int>, std::vector<double>> table_;
  std::vector<double> fallback_;
};

// exhaustive decode oracle enumerating every sequence that ends at the first
// EOS or reaches max_len. Finished (EOS-terminated) sequences are preferred
// over unfinished ones regardless of score, matching the decoder contract;
// within a class, best by (probability, then lexicographic ids).
struct OracleBest {
  std::vector<int> seq;
  double log_prob = -std::numeric_limits<double>::infinity();
  bool has = false;
};

struct OraclePools {
  OracleBest finished;
  OracleBest unfinished;
};

inline void oracle_walk(const model::SequenceDistribution& dist, std::vector<int>& prefix,
                        double log_prob, int max_len, OraclePools& pools) {
  auto consider = [&](OracleBest& slot, const std::vector<int>& seq, double lp) {
    if (!slot.has || lp > slot.log_prob || (lp == slot.log_prob && seq < slot.seq))
      slot = {seq, lp, true};
  };
  if (!prefix.empty() && prefix.back() == dist.eos_id()) {
    consider(pools.finished, prefix, log_prob);
    return;
  }
  if (static_cast<int>(prefix.size()) == max_len) {
    consider(pools.unfinished, prefix, log_prob);
    return;
  }
  const auto d = dist.next_distribution(prefix);
  for (int tok = 0; tok < static_cast<int>(d.size()); ++tok) {
    if (tok == dist.pad_id() || d[static_cast<size_t>(tok)] <= 0.0) continue;
    prefix.push_back(tok);
    oracle_walk(dist, prefix, log_prob + std::log(d[static_cast<size_t>(tok)]), max_len, pools);
    prefix.pop_back();
  }
}

inline OracleBest oracle_best(const model::SequenceDistribution& dist, int max_len) {
  OraclePools pools;
  std::vector<int> prefix;
  oracle_walk(dist, prefix, 0.0, max_len, pools);
  return pools.finished.has ? pools.finished : pools.unfinished;
}

// ---------------------------------------------------------------------------
// finite-difference gradient check for loss_ml

struct GradCheckOutcome {
  int checked = 0;
  double max_rel_err = 0.0;
};

inline GradCheckOutcome gradient_check_loss_ml(model::TransformerQG& m,
                                               const train::TrainingBatch& batch, int n_coords,
                                               uint64_t seed, double step = 1e-5) {
  ad::Tape tape(/*grad_enabled=*/true);
  const ad::Var loss = train::loss_ml_graph(m, tape, batch);
  tape.backward(loss);

  std::mt19937_64 rng(seed);
  GradCheckOutcome outcome;
  while (outcome.checked < n_coords) {
    auto& param = m.parameters()[rng() % m.parameters().size()];
    const size_t coord = rng() % param.value.v.size();
    const double analytic = tape.grad(tape.param(&param.value)).v[coord];

    const double saved = param.value.v[coord];
    param.value.v[coord] = saved + step;
    const double plus = train::loss_ml(m, batch);
    param.value.v[coord] = saved - step;
    const double minus = train::loss_ml(m, batch);
    param.value.v[coord] = saved;

    const double numeric = (plus - minus) / (2.0 * step);
    if (std::fabs(analytic) < 1e-10 && std::fabs(numeric) < 1e-10) continue;  // dead coordinate
    const double rel = std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
    outcome.max_rel_err = std::max(outcome.max_rel_err, rel);
    ++outcome.checked;
  }
  return outcome;
}

// toy triplet corpora for the training tests
inline std::vector<deriv::CuriosityTriplet> toy_triplets(int n, uint64_t seed) {
  SyntheticPools pools;
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const std::vector<std::string>& v) -> const std::string& {
    return v[rng() % v.size()];
  };
  std::vector<deriv::CuriosityTriplet> out;
  for (int i = 0; i < n; ++i) {
    deriv::CuriosityTriplet t;
    const std::string noun = pools.nouns[static_cast<size_t>(i) % pools.nouns.size()];
    const std::string name = pools.names[static_cast<size_t>(i / 2) % pools.names.size()];
    t.source = name + " " + pick(pools.verbs) + " the " + noun + " in " +
               std::to_string(1850 + (i * 7) % 100) + " .";
    t.context = "the " + pick(pools.nouns) + " near " + pick(pools.places) + " was famous .";
    t.target = "what did " + name + " do with the " + noun + " ?";
    t.meta.article_id = "toy_" + std::to_string(i);
    out.push_back(std::move(t));
  }
  return out;
}

inline std::string run_cli(const std::string& args, int* exit_code = nullptr) {
  const std::string cmd = std::string(CQG_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string output;
  char buf[4096];
  while (size_t n = ::fread(buf, 1, sizeof(buf), pipe)) output.append(buf, n);
  const int status = ::pclose(pipe);
  if (exit_code) *exit_code = WEXITSTATUS(status);
  return output;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
}  // namespace cqg
