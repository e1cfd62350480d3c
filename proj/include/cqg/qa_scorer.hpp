#pragma once

// QA answerability backends: the probability a question-answering system
// assigns to its retrieved answer for (question, context). Two
// implementations share one contract: a deterministic offline stub and an
// HTTP client for a remote extractive-QA service.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cqg/text.hpp"

namespace cqg {
namespace qa {

struct QAScore {
  double probability = 0.0;  // in [0, 1]
  std::string answer_text;
  std::optional<Span> answer_span;  // code points into the scored context
};

struct BatchItem {
  std::string question;
  std::string context;
};

// Per-item batch outcome; failures never abort the batch.
struct BatchResult {
  bool ok = false;
  QAScore score;
  std::string error;
};

// Raised by the remote client on timeouts, connection failures and non-2xx
// responses.
class TransportError : public std::runtime_error {
 public:
  explicit TransportError(const std::string& what) : std::runtime_error(what) {}
};

class Scorer {
 public:
  virtual ~Scorer() = default;

  // Empty question violates the precondition; empty context scores 0.0.
  // Implementations must be safe for concurrent calls.
  virtual QAScore score(const std::string& question, const std::string& context) const = 0;

  // Element i corresponds to input i; semantically equal to mapping score.
  virtual std::vector<BatchResult> score_batch(const std::vector<BatchItem>& items) const;
};

// Deterministic offline scorer. Content-words are the metric-tokenized
// question tokens of length >= 3 minus a fixed 30-word stopword list;
// probability = |content-words found in context| / |content-words|. An empty
// content-word set scores 0.5; an empty context scores 0.0. The answer is
// the longest contiguous run of matched context tokens.
class StubScorer : public Scorer {
 public:
  QAScore score(const std::string& question, const std::string& context) const override;

  static const std::vector<std::string>& stopwords();
  static std::vector<std::string> content_words(const std::string& question);
};

struct HttpScorerConfig {
  std::string endpoint = "http://127.0.0.1:8765";  // scheme://host:port
  double timeout_seconds = 10.0;
  int max_in_flight = 4;
  int max_retries = 2;
  double backoff_cap_seconds = 2.0;
};

// Client for the wire protocol: POST /score {"question","context"} ->
// {"probability","answer","start","end"}, POST /score_batch
// {"items":[...]} -> {"results":[...]}. Bounds in-flight requests and
// retries idempotently with capped exponential backoff.
class HttpScorer : public Scorer {
 public:
  explicit HttpScorer(HttpScorerConfig config);
  ~HttpScorer() override;

  QAScore score(const std::string& question, const std::string& context) const override;
  std::vector<BatchResult> score_batch(const std::vector<BatchItem>& items) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Loopback HTTP server exposing the stub scorer over the wire protocol;
// used by tests and by the scorer self-check. Listens on 127.0.0.1 at an
// OS-assigned port.
class StubScorerServer {
 public:
  StubScorerServer();
  ~StubScorerServer();

  int port() const;
  std::string endpoint() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace qa
}  // namespace cqg
