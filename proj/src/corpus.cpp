#include "cqg/corpus.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace cqg {
namespace corpus {

using nlohmann::json;

size_t Corpus::paragraph_count() const {
  size_t n = 0;
  for (const auto& a : articles) n += a.paragraphs.size();
  return n;
}

size_t Corpus::qa_count() const {
  size_t n = 0;
  for (const auto& a : articles)
    for (const auto& p : a.paragraphs) n += p.qa_pairs.size();
  return n;
}

int locate_answer_sentence(const Paragraph& paragraph, Span span) {
  for (size_t i = 0; i < paragraph.sentences.size(); ++i)
    if (paragraph.sentences[i].span.contains(span.begin)) return static_cast<int>(i);
  throw std::out_of_range("answer span starts outside every sentence");
}

namespace {

struct PendingRecord {
  std::string article_id;
  std::string title;
  Paragraph paragraph;
};

// Parse one canonical JSONL record into a Paragraph; throws on any
// contract violation so the caller can reject the record.
PendingRecord parse_record(const json& rec, bool conversational) {
  PendingRecord out;
  out.article_id = rec.at("article_id").get<std::string>();
  out.title = rec.value("title", out.article_id);
  out.paragraph.raw_text = rec.at("paragraph").get<std::string>();
  out.paragraph.sentences = text::segment_sentences(out.paragraph.raw_text);

  for (const auto& q : rec.at("qas")) {
    QAPair qa;
    qa.question = q.at("question").get<std::string>();
    qa.answer_text = q.at("answer_text").get<std::string>();
    qa.answer_span = {q.at("answer_start").get<int>(), q.at("answer_end").get<int>()};
    if (qa.answer_span.begin < 0 || qa.answer_span.end < qa.answer_span.begin ||
        qa.answer_span.end > text::code_point_count(out.paragraph.raw_text))
      throw std::runtime_error("answer span out of paragraph bounds");
    if (text::slice(out.paragraph.raw_text, qa.answer_span) != qa.answer_text)
      throw std::runtime_error("answer span slice does not match answer_text");
    if (conversational) {
      if (!q.contains("turn_index")) throw std::runtime_error("missing turn_index");
      qa.turn_index = q.at("turn_index").get<int>();
    } else if (q.contains("turn_index") && !q.at("turn_index").is_null()) {
      qa.turn_index = q.at("turn_index").get<int>();
    }
    qa.answer_sentence_index = locate_answer_sentence(out.paragraph, qa.answer_span);
    out.paragraph.qa_pairs.push_back(std::move(qa));
  }
  return out;
}

Corpus load_canonical(const std::string& path, bool conversational, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);

  Corpus corpus;
  corpus.origin = conversational ? Origin::conversational : Origin::standard;
  LoadReport local;
  LoadReport& rep = report ? *report : local;

  std::map<std::string, size_t> article_index;  // id -> position, first-seen order
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++rep.records_read;
    try {
      PendingRecord rec = parse_record(json::parse(line), conversational);
      auto it = article_index.find(rec.article_id);
      if (it == article_index.end()) {
        article_index[rec.article_id] = corpus.articles.size();
        corpus.articles.push_back({rec.article_id, rec.title, {}});
        it = article_index.find(rec.article_id);
      }
      corpus.articles[it->second].paragraphs.push_back(std::move(rec.paragraph));
    } catch (const std::exception& e) {
      ++rep.records_rejected;
      rep.errors.push_back({line_no, e.what()});
    }
  }
  return corpus;
}

json qa_to_json(const QAPair& qa) {
  json q = {{"question", qa.question},
            {"answer_text", qa.answer_text},
            {"answer_start", qa.answer_span.begin},
            {"answer_end", qa.answer_span.end}};
  if (qa.turn_index) q["turn_index"] = *qa.turn_index;
  return q;
}

}  // namespace

Corpus load_standard_qa(const std::string& path, LoadReport* report) {
  return load_canonical(path, /*conversational=*/false, report);
}

Corpus load_conversational_qa(const std::string& path, LoadReport* report) {
  return load_canonical(path, /*conversational=*/true, report);
}

void write_canonical_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& article : corpus.articles) {
    for (const auto& paragraph : article.paragraphs) {
      json rec = {{"article_id", article.id}, {"title", article.title}, {"paragraph", paragraph.raw_text}};
      rec["qas"] = json::array();
      for (const auto& qa : paragraph.qa_pairs) rec["qas"].push_back(qa_to_json(qa));
      out << rec.dump() << "\n";
    }
  }
}

int import_native_qa(const std::string& in_path, const std::string& out_path, bool conversational,
                     LoadReport* report) {
  std::ifstream in(in_path);
  if (!in) throw std::runtime_error("cannot open input file: " + in_path);
  json root;
  in >> root;

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot write output file: " + out_path);

  LoadReport local;
  LoadReport& rep = report ? *report : local;

  int written = 0;
  int article_seq = 0;
  for (const auto& article : root.at("data")) {
    const std::string title = article.value("title", "article_" + std::to_string(article_seq));
    const std::string article_id = title;
    ++article_seq;
    for (const auto& para : article.at("paragraphs")) {
      ++rep.records_read;
      try {
        const std::string context = para.at("context").get<std::string>();
        // native answer offsets are byte offsets into the UTF-8 context;
        // the canonical schema wants code points
        const auto cp_offsets = text::code_point_offsets(context);
        auto byte_to_cp = [&](size_t byte_off) {
          const auto it = std::lower_bound(cp_offsets.begin(), cp_offsets.end(), byte_off);
          return static_cast<int>(it - cp_offsets.begin());
        };

        json rec = {{"article_id", article_id}, {"title", title}, {"paragraph", context}};
        rec["qas"] = json::array();
        int turn = 0;
        for (const auto& q : para.at("qas")) {
          const auto& answers = q.contains("orig_answer") ? json::array({q.at("orig_answer")}) : q.at("answers");
          if (answers.empty()) {
            ++turn;
            continue;  // unanswerable entries carry nothing to locate
          }
          const auto& ans = answers[0];
          const std::string answer_text = ans.at("text").get<std::string>();
          const size_t byte_start = ans.at("answer_start").get<size_t>();
          const int cp_start = byte_to_cp(byte_start);
          const int cp_end = cp_start + text::code_point_count(answer_text);
          json jq = {{"question", q.at("question").get<std::string>()},
                     {"answer_text", answer_text},
                     {"answer_start", cp_start},
                     {"answer_end", cp_end}};
          if (conversational) jq["turn_index"] = turn;
          rec["qas"].push_back(std::move(jq));
          ++turn;
        }
        out << rec.dump() << "\n";
        ++written;
      } catch (const std::exception& e) {
        ++rep.records_rejected;
        rep.errors.push_back({rep.records_read, e.what()});
      }
    }
  }
  return written;
}

}  // namespace corpus
}  // namespace cqg
