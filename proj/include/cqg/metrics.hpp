#pragma once

// Evaluation metrics: corpus BLEU-N, Self-BLEU diversity, QA-answerability
// scores with the balanced reward derived from them, and Spearman rank
// correlation for the human-judgment analysis.
//
// All scores live on the [0, 1] scale internally; report emission multiplies
// by 100.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cqg/qa_scorer.hpp"

namespace cqg {
namespace metrics {

struct BleuConfig {
  int max_n = 4;
  double smoothing_epsilon = 1e-9;  // sentence-level only, applied when enabled
  bool smooth_sentence_level = false;
};

using TokenSeq = std::vector<std::string>;

// Corpus-level BLEU-n: geometric mean of clipped k-gram precisions for
// k = 1..n pooled over all pairs, times the brevity penalty
// min(1, exp(1 - r/c)).
double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                   int n);

// Sentence-level BLEU against one or more references. Clipping uses the
// per-gram maximum over references; the brevity penalty uses the reference
// length closest to the hypothesis (ties toward the shorter). A negative
// epsilon disables smoothing.
double sentence_bleu(const TokenSeq& hypothesis, const std::vector<TokenSeq>& references, int n,
                     double smoothing_epsilon = -1.0);

// Mean over evaluated sentences of sentence_bleu(s_i, all others). Lists
// larger than `cap` are subsampled with the seeded generator.
double self_bleu(const std::vector<TokenSeq>& sentences, int n, int cap, uint64_t seed,
                 const BleuConfig& config = {});

// QA answerability of the question against the curiosity source / context.
double qa_source(const std::string& question, const std::string& source, const qa::Scorer& scorer);
double qa_context(const std::string& question, const std::string& context, const qa::Scorer& scorer);

// Balanced reward: qa_context - qa_source, in [-1, 1].
double curiosity_reward(const std::string& question, const std::string& source,
                        const std::string& context, const qa::Scorer& scorer);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;
};

// Rank correlation with average ranks for ties; the p-value uses the
// t-distribution approximation with n-2 degrees of freedom. Throws on
// mismatched lengths, n < 3 or a constant input vector.
SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y);

struct MetricReport {
  std::string system_name;
  std::map<int, double> bleu;       // n -> score in [0, 1]; may be empty (human row)
  std::map<int, double> self_bleu;  // n -> score in [0, 1]
  double qa_source = 0.0;
  double qa_context = 0.0;
  bool has_qa = false;
  int sample_count = 0;
};

// Row-per-metric table over systems, scores scaled by 100.
std::string render_metric_table(const std::vector<MetricReport>& reports);
void write_metric_csv(const std::vector<MetricReport>& reports, const std::string& path);

}  // namespace metrics
}  // namespace cqg
