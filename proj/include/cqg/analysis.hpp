#pragma once

// Diagnostic analyses over generated questions: first-token distributions,
// degenerate-prefix rates, beam-size divergence tables and the
// metric-vs-human-rating correlation matrix.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cqg/metrics.hpp"
#include "cqg/model.hpp"

namespace cqg {
namespace analysis {

struct TokenHistogram {
  std::vector<std::pair<std::string, double>> frequencies;  // token -> relative frequency
  long total_count = 0;
};

// First metric-token of each question, lowercased; tokens beyond the top_k
// most frequent collapse into an "<other>" bucket.
TokenHistogram first_token_histogram(const std::vector<std::string>& questions, int top_k);

// Fraction of questions whose metric tokenization begins with the tokenized
// prefix (case-insensitive). An empty prefix is an error.
double prefix_rate(const std::vector<std::string>& questions, const std::string& prefix);

struct HumanRatingRecord {
  std::string sample_id;
  std::string system_name;
  int answerability = 0;
  int correctness = 0;
  int external_knowledge = 0;
  int relevance = 0;
  int soundness = 0;
  std::map<std::string, double> extra;
};

struct RatingLoadReport {
  int rows_read = 0;
  int rows_rejected = 0;
  std::vector<std::pair<int, std::string>> errors;  // line number, reason
};

// CSV with header sample_id,system,answerability,correctness,
// external_knowledge,relevance,soundness[,extras...]; out-of-range core
// ratings reject the row.
std::vector<HumanRatingRecord> load_ratings(const std::string& path,
                                            RatingLoadReport* report = nullptr);

// Per-system means over the five core dimensions, in a fixed column order.
std::string render_rating_table(const std::vector<HumanRatingRecord>& records);
void write_rating_csv(const std::vector<HumanRatingRecord>& records, const std::string& path);

struct CorrelationCell {
  double rho = 0.0;
  double p_value = 1.0;
  bool defined = false;
};

struct CorrelationMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<CorrelationCell>> cells;  // symmetric

  // significance stars: * for p < .05, ** for p < .005
  static std::string stars(const CorrelationCell& cell);
};

// Pairwise Spearman correlation over the union of the named columns.
// Constant columns yield undefined cells rather than fabricated values.
CorrelationMatrix correlation_matrix(
    const std::vector<std::pair<std::string, std::vector<double>>>& columns);

void write_correlation_csv(const CorrelationMatrix& matrix, const std::string& path);
std::string render_correlation(const CorrelationMatrix& matrix);

// Decode every triplet source at each beam size and compute the full metric
// report, one column per k.
std::vector<metrics::MetricReport> beam_divergence_report(
    const model::TransformerQG& model, const std::vector<deriv::CuriosityTriplet>& triplets,
    const std::vector<int>& k_values, const qa::Scorer& scorer,
    const metrics::BleuConfig& bleu_config = {}, uint64_t self_bleu_seed = 0);

void write_histogram_csv(const TokenHistogram& histogram, const std::string& path);

}  // namespace analysis
}  // namespace cqg
