#include "cqg/derivation.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace cqg {
namespace deriv {

using nlohmann::json;

std::string to_string(ConstraintMode mode) {
  switch (mode) {
    case ConstraintMode::conversational: return "conversational";
    case ConstraintMode::unconstrained: return "unconstrained";
    case ConstraintMode::ner_constrained: return "ner_constrained";
  }
  return "unconstrained";
}

ConstraintMode constraint_mode_from_string(const std::string& s) {
  if (s == "conversational") return ConstraintMode::conversational;
  if (s == "ner_constrained") return ConstraintMode::ner_constrained;
  if (s == "unconstrained") return ConstraintMode::unconstrained;
  throw std::invalid_argument("unknown constraint mode: " + s);
}

namespace {

bool is_capitalized(const std::string& tok) {
  return !tok.empty() && tok[0] >= 'A' && tok[0] <= 'Z';
}

bool has_digit(const std::string& tok) {
  return std::any_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool is_year_like(const std::string& tok) {
  if (tok.size() != 4) return false;
  for (char c : tok)
    if (c < '0' || c > '9') return false;
  const int v = std::stoi(tok);
  return v >= 1000 && v <= 2100;
}

// Surfaces of capitalized tokens seen mid-sentence anywhere in the pool.
std::unordered_set<std::string> midsentence_capitalized(const std::vector<std::string>& texts) {
  std::unordered_set<std::string> seen;
  for (const auto& t : texts) {
    for (const auto& sentence : text::segment_sentences(t)) {
      const auto tokens = text::tokenize_spans(sentence.text);
      for (size_t i = 1; i < tokens.size(); ++i)
        if (is_capitalized(tokens[i].text) && !has_digit(tokens[i].text)) seen.insert(tokens[i].text);
    }
  }
  return seen;
}

}  // namespace

std::vector<Entity> HeuristicTagger::tag(const std::string& input,
                                         const std::vector<std::string>& pool) const {
  std::vector<std::string> full_pool = pool;
  full_pool.push_back(input);
  const auto recurring = midsentence_capitalized(full_pool);

  std::vector<Entity> entities;
  for (const auto& sentence : text::segment_sentences(input)) {
    const auto tokens = text::tokenize_spans(sentence.text);
    size_t i = 0;
    while (i < tokens.size()) {
      const auto& tok = tokens[i];
      if (has_digit(tok.text)) {
        Span span{sentence.span.begin + tok.span.begin, sentence.span.begin + tok.span.end};
        entities.push_back({tok.text, span, EntityLabel::NUMBER});
        if (is_year_like(tok.text)) entities.push_back({tok.text, span, EntityLabel::DATE_TOKEN});
        ++i;
        continue;
      }
      const bool eligible =
          is_capitalized(tok.text) && (i > 0 || recurring.count(tok.text) > 0);
      if (!eligible) {
        ++i;
        continue;
      }
      size_t j = i;
      while (j + 1 < tokens.size() && is_capitalized(tokens[j + 1].text) && !has_digit(tokens[j + 1].text))
        ++j;
      Span span{sentence.span.begin + tokens[i].span.begin, sentence.span.begin + tokens[j].span.end};
      entities.push_back({text::slice(input, span), span, EntityLabel::NAME});
      i = j + 1;
    }
  }
  return entities;
}

std::vector<Entity> extract_entities(const std::string& input) {
  return HeuristicTagger().tag(input, {});
}

std::string build_stripped_context(const corpus::Paragraph& paragraph, int answer_sentence) {
  const int n = static_cast<int>(paragraph.sentences.size());
  if (answer_sentence < 0 || answer_sentence >= n)
    throw std::out_of_range("answer sentence index out of range");
  if (n == 1) throw std::invalid_argument("single-sentence paragraph yields an empty context");
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i == answer_sentence) continue;
    if (!out.empty()) out += " ";
    out += paragraph.sentences[i].text;
  }
  return out;
}

std::vector<CuriosityTriplet> derive_conversational(const corpus::Corpus& corpus, DeriveStats* stats) {
  if (corpus.origin != corpus::Origin::conversational)
    throw std::invalid_argument("derive_conversational requires a conversational corpus");
  DeriveStats local;
  DeriveStats& st = stats ? *stats : local;

  std::vector<CuriosityTriplet> triplets;
  for (const auto& article : corpus.articles) {
    for (size_t pi = 0; pi < article.paragraphs.size(); ++pi) {
      const auto& paragraph = article.paragraphs[pi];
      for (const auto& qa : paragraph.qa_pairs) {
        ++st.qa_pairs_seen;
        const int a = qa.answer_sentence_index;
        if (a <= 0) {
          ++st.skipped;
          continue;
        }
        CuriosityTriplet t;
        for (int x = 0; x < a; ++x) {
          if (x > 0) t.source += " ";
          t.source += paragraph.sentences[x].text;
          t.meta.source_sentence_indices.push_back(x);
        }
        t.context = build_stripped_context(paragraph, a);
        t.target = qa.question;
        t.meta.article_id = article.id;
        t.meta.paragraph_index = static_cast<int>(pi);
        t.meta.answer_sentence_index = a;
        t.meta.constraint_mode = ConstraintMode::conversational;
        triplets.push_back(std::move(t));
        ++st.triplets_emitted;
      }
    }
  }
  return triplets;
}

std::vector<CuriosityTriplet> derive_standard(const corpus::Corpus& corpus, bool constrained,
                                              const EntityTagger& tagger, DeriveStats* stats) {
  if (corpus.origin != corpus::Origin::standard)
    throw std::invalid_argument("derive_standard requires a standard corpus");
  DeriveStats local;
  DeriveStats& st = stats ? *stats : local;

  std::vector<CuriosityTriplet> triplets;
  for (const auto& article : corpus.articles) {
    for (size_t pi = 0; pi < article.paragraphs.size(); ++pi) {
      const auto& paragraph = article.paragraphs[pi];
      const int n = static_cast<int>(paragraph.sentences.size());

      std::vector<std::string> pool{paragraph.raw_text};
      for (const auto& qa : paragraph.qa_pairs) pool.push_back(qa.question);

      // entity surfaces per sentence, computed once per paragraph
      std::vector<std::vector<std::string>> sentence_surfaces;
      if (constrained) {
        sentence_surfaces.resize(n);
        for (int x = 0; x < n; ++x)
          for (const auto& e : tagger.tag(paragraph.sentences[x].text, pool))
            sentence_surfaces[x].push_back(text::ascii_lower(e.surface));
      }

      for (const auto& qa : paragraph.qa_pairs) {
        ++st.qa_pairs_seen;
        if (n < 2) {
          ++st.skipped;
          continue;
        }
        std::vector<std::string> question_surfaces;
        if (constrained)
          for (const auto& e : tagger.tag(qa.question, pool))
            question_surfaces.push_back(text::ascii_lower(e.surface));

        const int a = qa.answer_sentence_index;
        for (int x = 0; x < n; ++x) {
          if (x == a) continue;
          if (constrained) {
            const auto& have = sentence_surfaces[x];
            const bool subset = std::all_of(
                question_surfaces.begin(), question_surfaces.end(), [&](const std::string& s) {
                  return std::find(have.begin(), have.end(), s) != have.end();
                });
            if (!subset) {
              ++st.filtered_by_ner;
              continue;
            }
          }
          CuriosityTriplet t;
          t.source = paragraph.sentences[x].text;
          t.context = build_stripped_context(paragraph, a);
          t.target = qa.question;
          t.meta.article_id = article.id;
          t.meta.paragraph_index = static_cast<int>(pi);
          t.meta.source_sentence_indices = {x};
          t.meta.answer_sentence_index = a;
          t.meta.constraint_mode =
              constrained ? ConstraintMode::ner_constrained : ConstraintMode::unconstrained;
          triplets.push_back(std::move(t));
          ++st.triplets_emitted;
        }
      }
    }
  }
  return triplets;
}

std::pair<corpus::Corpus, corpus::Corpus> make_article_split(const corpus::Corpus& corpus,
                                                             int n_articles, uint64_t seed) {
  const int total = static_cast<int>(corpus.articles.size());
  if (n_articles >= total) throw std::invalid_argument("holdout size must be below the article count");
  if (n_articles < 0) throw std::invalid_argument("holdout size must be non-negative");

  // hand-rolled Fisher-Yates so the partition is stable across stdlibs
  std::vector<int> order(total);
  for (int i = 0; i < total; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (int i = total - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  std::unordered_set<int> held(order.begin(), order.begin() + n_articles);

  corpus::Corpus remaining, held_out;
  remaining.origin = held_out.origin = corpus.origin;
  remaining.split_name = corpus.split_name;
  held_out.split_name = "validation";
  for (int i = 0; i < total; ++i)
    (held.count(i) ? held_out : remaining).articles.push_back(corpus.articles[i]);
  return {std::move(remaining), std::move(held_out)};
}

void write_triplets_jsonl(const std::vector<CuriosityTriplet>& triplets, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write triplet file: " + path);
  for (const auto& t : triplets) {
    json rec = {{"source", t.source},
                {"context", t.context},
                {"target", t.target},
                {"meta",
                 {{"article_id", t.meta.article_id},
                  {"paragraph_index", t.meta.paragraph_index},
                  {"source_sentence_indices", t.meta.source_sentence_indices},
                  {"answer_sentence_index", t.meta.answer_sentence_index},
                  {"constraint_mode", to_string(t.meta.constraint_mode)}}}};
    out << rec.dump() << "\n";
  }
}

std::vector<CuriosityTriplet> read_triplets_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open triplet file: " + path);
  std::vector<CuriosityTriplet> triplets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json rec = json::parse(line);
    CuriosityTriplet t;
    t.source = rec.at("source").get<std::string>();
    t.context = rec.at("context").get<std::string>();
    t.target = rec.at("target").get<std::string>();
    const auto& m = rec.at("meta");
    t.meta.article_id = m.value("article_id", "");
    t.meta.paragraph_index = m.value("paragraph_index", 0);
    t.meta.source_sentence_indices = m.value("source_sentence_indices", std::vector<int>{});
    t.meta.answer_sentence_index = m.value("answer_sentence_index", 0);
    t.meta.constraint_mode = constraint_mode_from_string(m.value("constraint_mode", "unconstrained"));
    triplets.push_back(std::move(t));
  }
  return triplets;
}

void write_stats_sidecar(const DeriveStats& stats, const std::string& split_name,
                         ConstraintMode mode, const std::string& path) {
  json rec = {{"schema_version", 1},
              {"split_name", split_name},
              {"constraint_mode", to_string(mode)},
              {"qa_pairs", stats.qa_pairs_seen},
              {"triplets", stats.triplets_emitted},
              {"skipped", stats.skipped},
              {"filtered_by_ner", stats.filtered_by_ner}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write stats sidecar: " + path);
  out << rec.dump(2) << "\n";
}

}  // namespace deriv
}  // namespace cqg
