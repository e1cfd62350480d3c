#include "cqg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <boost/math/distributions/students_t.hpp>

namespace cqg {
namespace metrics {

namespace {

// n-grams keyed as tokens joined on an unlikely separator
using NgramCounts = std::unordered_map<std::string, long>;

NgramCounts count_ngrams(const TokenSeq& tokens, int k) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < k) return counts;
  for (size_t i = 0; i + k <= tokens.size(); ++i) {
    std::string key;
    for (int j = 0; j < k; ++j) {
      if (j) key += '\x1f';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

void validate_n(int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("BLEU order must be in [1, 4]");
}

}  // namespace

double corpus_bleu(const std::vector<TokenSeq>& hypotheses, const std::vector<TokenSeq>& references,
                   int n) {
  validate_n(n);
  if (hypotheses.empty()) throw std::invalid_argument("corpus_bleu requires at least one hypothesis");
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("hypothesis/reference count mismatch");

  long total_hyp_len = 0, total_ref_len = 0;
  std::vector<long> matches(n, 0), totals(n, 0);
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    total_hyp_len += static_cast<long>(hypotheses[i].size());
    total_ref_len += static_cast<long>(references[i].size());
    for (int k = 1; k <= n; ++k) {
      const auto hyp_counts = count_ngrams(hypotheses[i], k);
      const auto ref_counts = count_ngrams(references[i], k);
      for (const auto& [gram, count] : hyp_counts) {
        totals[k - 1] += count;
        const auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) matches[k - 1] += std::min(count, it->second);
      }
    }
  }

  if (total_hyp_len == 0) return 0.0;
  double log_precision_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    if (totals[k] == 0 || matches[k] == 0) return 0.0;
    log_precision_sum += std::log(static_cast<double>(matches[k]) / static_cast<double>(totals[k]));
  }
  const double bp =
      std::min(1.0, std::exp(1.0 - static_cast<double>(total_ref_len) / static_cast<double>(total_hyp_len)));
  return bp * std::exp(log_precision_sum / n);
}

double sentence_bleu(const TokenSeq& hypothesis, const std::vector<TokenSeq>& references, int n,
                     double smoothing_epsilon) {
  validate_n(n);
  if (references.empty()) throw std::invalid_argument("sentence_bleu requires at least one reference");

  const long hyp_len = static_cast<long>(hypothesis.size());
  if (hyp_len == 0) return 0.0;

  // effective reference length: closest to the hypothesis, ties to shorter
  long ref_len = static_cast<long>(references[0].size());
  for (const auto& ref : references) {
    const long len = static_cast<long>(ref.size());
    const long best_diff = std::labs(ref_len - hyp_len);
    const long diff = std::labs(len - hyp_len);
    if (diff < best_diff || (diff == best_diff && len < ref_len)) ref_len = len;
  }

  double log_precision_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const auto hyp_counts = count_ngrams(hypothesis, k);
    NgramCounts clip;
    for (const auto& ref : references)
      for (const auto& [gram, count] : count_ngrams(ref, k)) clip[gram] = std::max(clip[gram], count);

    long total = 0, matched = 0;
    for (const auto& [gram, count] : hyp_counts) {
      total += count;
      const auto it = clip.find(gram);
      if (it != clip.end()) matched += std::min(count, it->second);
    }
    double precision;
    if (total == 0)
      precision = smoothing_epsilon >= 0.0 ? smoothing_epsilon : 0.0;
    else if (matched == 0)
      precision = smoothing_epsilon >= 0.0 ? smoothing_epsilon / static_cast<double>(total) : 0.0;
    else
      precision = static_cast<double>(matched) / static_cast<double>(total);
    if (precision <= 0.0) return 0.0;
    log_precision_sum += std::log(precision);
  }
  const double bp =
      std::min(1.0, std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)));
  return bp * std::exp(log_precision_sum / n);
}

double self_bleu(const std::vector<TokenSeq>& sentences, int n, int cap, uint64_t seed,
                 const BleuConfig& config) {
  if (sentences.size() < 2) throw std::invalid_argument("self_bleu requires at least 2 sentences");
  validate_n(n);
  if (cap < 1) throw std::invalid_argument("self_bleu cap must be positive");

  std::vector<size_t> eval_indices(sentences.size());
  std::iota(eval_indices.begin(), eval_indices.end(), size_t{0});
  if (static_cast<int>(sentences.size()) > cap) {
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < static_cast<size_t>(cap); ++i) {
      const size_t j = i + static_cast<size_t>(rng() % (eval_indices.size() - i));
      std::swap(eval_indices[i], eval_indices[j]);
    }
    eval_indices.resize(static_cast<size_t>(cap));
  }

  const double eps = config.smooth_sentence_level ? config.smoothing_epsilon : -1.0;
  double sum = 0.0;
  for (const size_t i : eval_indices) {
    std::vector<TokenSeq> others;
    others.reserve(sentences.size() - 1);
    for (size_t j = 0; j < sentences.size(); ++j)
      if (j != i) others.push_back(sentences[j]);
    sum += sentence_bleu(sentences[i], others, n, eps);
  }
  return sum / static_cast<double>(eval_indices.size());
}

namespace {

std::string clip_for_message(const std::string& s) {
  return s.size() <= 48 ? s : s.substr(0, 48) + "...";
}

double scored_probability(const std::string& question, const std::string& context,
                          const qa::Scorer& scorer) {
  try {
    return scorer.score(question, context).probability;
  } catch (const std::exception& e) {
    throw std::runtime_error("qa scorer failed for \"" + clip_for_message(question) + "\": " + e.what());
  }
}

}  // namespace

double qa_source(const std::string& question, const std::string& source, const qa::Scorer& scorer) {
  if (question.empty() || source.empty())
    throw std::invalid_argument("qa_source requires non-empty question and source");
  return scored_probability(question, source, scorer);
}

double qa_context(const std::string& question, const std::string& context, const qa::Scorer& scorer) {
  if (question.empty() || context.empty())
    throw std::invalid_argument("qa_context requires non-empty question and context");
  return scored_probability(question, context, scorer);
}

double curiosity_reward(const std::string& question, const std::string& source,
                        const std::string& context, const qa::Scorer& scorer) {
  return qa_context(question, context, scorer) - qa_source(question, source, scorer);
}

namespace {

// average ranks (1-based) with ties sharing the mean rank
std::vector<double> average_ranks(const std::vector<double>& values) {
  const size_t n = values.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
    i = j + 1;
  }
  return ranks;
}

bool is_constant(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman inputs must have equal length");
  const size_t n = x.size();
  if (n < 3) throw std::invalid_argument("spearman requires at least 3 observations");
  if (is_constant(x) || is_constant(y))
    throw std::invalid_argument("spearman undefined for a constant input vector");

  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);

  double mean_x = 0.0, mean_y = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_x += rx[i];
    mean_y += ry[i];
  }
  mean_x /= static_cast<double>(n);
  mean_y /= static_cast<double>(n);

  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = rx[i] - mean_x;
    const double dy = ry[i] - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  SpearmanResult result;
  result.rho = sxy / std::sqrt(sxx * syy);
  result.rho = std::clamp(result.rho, -1.0, 1.0);

  const double df = static_cast<double>(n) - 2.0;
  const double denom = 1.0 - result.rho * result.rho;
  if (denom <= 1e-15) {
    result.p_value = 0.0;
  } else {
    const double t = result.rho * std::sqrt(df / denom);
    const boost::math::students_t dist(df);
    result.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  }
  return result;
}

namespace {

std::string format_score(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", value * 100.0);
  return buf;
}

std::vector<std::pair<std::string, std::vector<std::string>>> table_rows(
    const std::vector<MetricReport>& reports) {
  int max_n = 0;
  for (const auto& r : reports) {
    for (const auto& [k, _] : r.bleu) max_n = std::max(max_n, k);
    for (const auto& [k, _] : r.self_bleu) max_n = std::max(max_n, k);
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
  auto add_row = [&](const std::string& name, auto getter) {
    std::vector<std::string> cells;
    for (const auto& r : reports) cells.push_back(getter(r));
    rows.emplace_back(name, std::move(cells));
  };
  for (int k = 1; k <= max_n; ++k)
    add_row("BLEU" + std::to_string(k), [k](const MetricReport& r) {
      const auto it = r.bleu.find(k);
      return it == r.bleu.end() ? std::string("-") : format_score(it->second);
    });
  for (int k = 1; k <= max_n; ++k)
    add_row("Self-B" + std::to_string(k), [k](const MetricReport& r) {
      const auto it = r.self_bleu.find(k);
      return it == r.self_bleu.end() ? std::string("-") : format_score(it->second);
    });
  add_row("QA_source",
          [](const MetricReport& r) { return r.has_qa ? format_score(r.qa_source) : std::string("-"); });
  add_row("QA_context",
          [](const MetricReport& r) { return r.has_qa ? format_score(r.qa_context) : std::string("-"); });
  return rows;
}

}  // namespace

std::string render_metric_table(const std::vector<MetricReport>& reports) {
  const auto rows = table_rows(reports);
  std::vector<size_t> widths{10};
  for (const auto& r : reports) widths.push_back(std::max<size_t>(r.system_name.size(), 8));
  for (const auto& [name, cells] : rows) {
    widths[0] = std::max(widths[0], name.size());
    for (size_t i = 0; i < cells.size(); ++i) widths[i + 1] = std::max(widths[i + 1], cells[i].size());
  }

  std::ostringstream out;
  auto pad = [&](const std::string& s, size_t w) {
    out << s << std::string(w - s.size() + 2, ' ');
  };
  pad("metric", widths[0]);
  for (size_t i = 0; i < reports.size(); ++i) pad(reports[i].system_name, widths[i + 1]);
  out << "\n";
  for (const auto& [name, cells] : rows) {
    pad(name, widths[0]);
    for (size_t i = 0; i < cells.size(); ++i) pad(cells[i], widths[i + 1]);
    out << "\n";
  }
  return out.str();
}

void write_metric_csv(const std::vector<MetricReport>& reports, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metric csv: " + path);
  out << "metric";
  for (const auto& r : reports) out << "," << r.system_name;
  out << "\n";
  for (const auto& [name, cells] : table_rows(reports)) {
    out << name;
    for (const auto& c : cells) out << "," << c;
    out << "\n";
  }
  out << "sample_count";
  for (const auto& r : reports) out << "," << r.sample_count;
  out << "\n";
}

}  // namespace metrics
}  // namespace cqg
