#include "cqg/qa_scorer.hpp"

#include <algorithm>
#include <chrono>
#include <semaphore>
#include <thread>
#include <unordered_set>

#include <httplib.h>
#include <json.hpp>

namespace cqg {
namespace qa {

using nlohmann::json;

std::vector<BatchResult> Scorer::score_batch(const std::vector<BatchItem>& items) const {
  if (items.empty()) throw std::invalid_argument("score_batch requires a non-empty batch");
  std::vector<BatchResult> results;
  results.reserve(items.size());
  for (const auto& item : items) {
    BatchResult r;
    try {
      r.score = score(item.question, item.context);
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    results.push_back(std::move(r));
  }
  return results;
}

const std::vector<std::string>& StubScorer::stopwords() {
  static const std::vector<std::string> kStopwords = {
      "the",  "and",  "was",  "were", "are",  "is",    "what", "who",  "when", "where",
      "why",  "how",  "did",  "does", "do",   "which", "for",  "with", "that", "this",
      "his",  "her",  "its",  "they", "them", "there", "have", "has",  "had",  "about"};
  return kStopwords;
}

std::vector<std::string> StubScorer::content_words(const std::string& question) {
  static const std::unordered_set<std::string> stop(stopwords().begin(), stopwords().end());
  std::vector<std::string> words;
  for (const auto& tok : text::metric_tokenize(question)) {
    if (text::code_point_count(tok) < 3) continue;
    if (stop.count(tok)) continue;
    if (std::find(words.begin(), words.end(), tok) == words.end()) words.push_back(tok);
  }
  return words;
}

QAScore StubScorer::score(const std::string& question, const std::string& context) const {
  if (question.empty()) throw std::invalid_argument("empty question");
  QAScore out;
  if (context.empty()) {
    out.probability = 0.0;  // nothing retrievable
    return out;
  }
  const auto words = content_words(question);
  if (words.empty()) {
    out.probability = 0.5;  // uninformative question
    return out;
  }
  const std::unordered_set<std::string> wanted(words.begin(), words.end());

  const auto ctx_tokens = text::tokenize_spans(context);
  std::vector<bool> matched(ctx_tokens.size(), false);
  std::unordered_set<std::string> found;
  for (size_t i = 0; i < ctx_tokens.size(); ++i) {
    const std::string low = text::ascii_lower(ctx_tokens[i].text);
    if (wanted.count(low)) {
      matched[i] = true;
      found.insert(low);
    }
  }
  out.probability = static_cast<double>(found.size()) / static_cast<double>(words.size());

  // answer = longest contiguous run of matched tokens, first run on ties
  size_t best_begin = 0, best_len = 0;
  size_t i = 0;
  while (i < matched.size()) {
    if (!matched[i]) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < matched.size() && matched[j]) ++j;
    if (j - i > best_len) {
      best_len = j - i;
      best_begin = i;
    }
    i = j;
  }
  if (best_len > 0) {
    Span span{ctx_tokens[best_begin].span.begin, ctx_tokens[best_begin + best_len - 1].span.end};
    out.answer_span = span;
    out.answer_text = text::slice(context, span);
  }
  return out;
}

// ---------------------------------------------------------------------------
// HTTP client

struct HttpScorer::Impl {
  HttpScorerConfig config;
  mutable std::counting_semaphore<256> in_flight;

  explicit Impl(HttpScorerConfig cfg)
      : config(std::move(cfg)), in_flight(std::max(1, config.max_in_flight)) {}

  json post(const std::string& path, const json& body) const {
    in_flight.acquire();
    struct Release {
      const Impl* self;
      ~Release() { self->in_flight.release(); }
    } release{this};

    std::string last_error;
    for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
      if (attempt > 0) {
        const double backoff =
            std::min(config.backoff_cap_seconds, 0.1 * static_cast<double>(1 << (attempt - 1)));
        std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      }
      httplib::Client client(config.endpoint);
      client.set_connection_timeout(std::chrono::duration<double>(config.timeout_seconds));
      client.set_read_timeout(std::chrono::duration<double>(config.timeout_seconds));
      auto res = client.Post(path, body.dump(), "application/json");
      if (!res) {
        last_error = "connection failure: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status < 200 || res->status >= 300) {
        last_error = "http status " + std::to_string(res->status);
        continue;
      }
      try {
        return json::parse(res->body);
      } catch (const std::exception& e) {
        last_error = std::string("bad response body: ") + e.what();
      }
    }
    throw TransportError("POST " + path + " failed: " + last_error);
  }
};

namespace {

QAScore score_from_json(const json& j) {
  QAScore s;
  s.probability = j.at("probability").get<double>();
  s.answer_text = j.value("answer", "");
  const int start = j.value("start", -1);
  const int end = j.value("end", -1);
  if (start >= 0 && end >= start) s.answer_span = Span{start, end};
  return s;
}

json score_to_json(const QAScore& s) {
  return {{"probability", s.probability},
          {"answer", s.answer_text},
          {"start", s.answer_span ? s.answer_span->begin : -1},
          {"end", s.answer_span ? s.answer_span->end : -1}};
}

}  // namespace

HttpScorer::HttpScorer(HttpScorerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
HttpScorer::~HttpScorer() = default;

QAScore HttpScorer::score(const std::string& question, const std::string& context) const {
  if (question.empty()) throw std::invalid_argument("empty question");
  const json res = impl_->post("/score", json{{"question", question}, {"context", context}});
  return score_from_json(res);
}

std::vector<BatchResult> HttpScorer::score_batch(const std::vector<BatchItem>& items) const {
  if (items.empty()) throw std::invalid_argument("score_batch requires a non-empty batch");
  json body;
  body["items"] = json::array();
  for (const auto& item : items)
    body["items"].push_back({{"question", item.question}, {"context", item.context}});

  const json res = impl_->post("/score_batch", body);
  const auto& results = res.at("results");
  if (results.size() != items.size())
    throw TransportError("score_batch result count mismatch");

  std::vector<BatchResult> out;
  out.reserve(items.size());
  for (const auto& r : results) {
    BatchResult br;
    if (r.contains("error")) {
      br.ok = false;
      br.error = r.at("error").get<std::string>();
    } else {
      br.ok = true;
      br.score = score_from_json(r);
    }
    out.push_back(std::move(br));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loopback stub server

struct StubScorerServer::Impl {
  StubScorer stub;
  httplib::Server server;
  std::thread worker;
  int port = 0;

  Impl() {
    server.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body);
        const QAScore s =
            stub.score(body.at("question").get<std::string>(), body.at("context").get<std::string>());
        res.set_content(score_to_json(s).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      }
    });
    server.Post("/score_batch", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const json body = json::parse(req.body);
        json results = json::array();
        for (const auto& item : body.at("items")) {
          try {
            const QAScore s = stub.score(item.at("question").get<std::string>(),
                                         item.at("context").get<std::string>());
            results.push_back(score_to_json(s));
          } catch (const std::exception& e) {
            results.push_back({{"error", e.what()}});
          }
        }
        res.set_content(json{{"results", results}}.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      }
    });

    port = server.bind_to_any_port("127.0.0.1");
    if (port <= 0) throw std::runtime_error("cannot bind loopback scorer server");
    worker = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~Impl() {
    server.stop();
    if (worker.joinable()) worker.join();
  }
};

StubScorerServer::StubScorerServer() : impl_(std::make_unique<Impl>()) {}
StubScorerServer::~StubScorerServer() = default;

int StubScorerServer::port() const { return impl_->port; }

std::string StubScorerServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

}  // namespace qa
}  // namespace cqg
