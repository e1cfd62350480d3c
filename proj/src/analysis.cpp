#include "cqg/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace cqg {
namespace analysis {

TokenHistogram first_token_histogram(const std::vector<std::string>& questions, int top_k) {
  if (questions.empty()) throw std::invalid_argument("first_token_histogram requires questions");
  if (top_k < 1) throw std::invalid_argument("top_k must be positive");

  std::unordered_map<std::string, long> counts;
  long total = 0;
  for (const auto& q : questions) {
    const auto tokens = text::metric_tokenize(q);
    if (tokens.empty()) continue;
    ++counts[tokens.front()];
    ++total;
  }
  if (total == 0) throw std::invalid_argument("no tokenizable questions");

  std::vector<std::pair<std::string, long>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  TokenHistogram hist;
  hist.total_count = total;
  long other = 0;
  for (size_t i = 0; i < entries.size(); ++i) {
    if (static_cast<int>(i) < top_k)
      hist.frequencies.emplace_back(entries[i].first,
                                    static_cast<double>(entries[i].second) / static_cast<double>(total));
    else
      other += entries[i].second;
  }
  if (other > 0)
    hist.frequencies.emplace_back("<other>", static_cast<double>(other) / static_cast<double>(total));
  return hist;
}

double prefix_rate(const std::vector<std::string>& questions, const std::string& prefix) {
  if (questions.empty()) throw std::invalid_argument("prefix_rate requires questions");
  const auto prefix_tokens = text::metric_tokenize(prefix);
  if (prefix_tokens.empty()) throw std::invalid_argument("prefix_rate requires a non-empty prefix");

  long hits = 0;
  for (const auto& q : questions) {
    const auto tokens = text::metric_tokenize(q);
    if (tokens.size() < prefix_tokens.size()) continue;
    if (std::equal(prefix_tokens.begin(), prefix_tokens.end(), tokens.begin())) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(questions.size());
}

namespace {

// minimal CSV reader: quoted fields with embedded commas and doubled quotes
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

}  // namespace

std::vector<HumanRatingRecord> load_ratings(const std::string& path, RatingLoadReport* report) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ratings file: " + path);

  RatingLoadReport local;
  RatingLoadReport& rep = report ? *report : local;

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("ratings file is empty: " + path);
  const auto header = split_csv_line(line);
  const std::vector<std::string> required = {"sample_id",          "system",    "answerability",
                                             "correctness",        "external_knowledge",
                                             "relevance",          "soundness"};
  std::unordered_map<std::string, size_t> column;
  for (size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const auto& name : required)
    if (!column.count(name)) throw std::runtime_error("ratings file missing column: " + name);

  std::vector<std::string> extra_names;
  for (const auto& name : header)
    if (std::find(required.begin(), required.end(), name) == required.end()) extra_names.push_back(name);

  std::vector<HumanRatingRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++rep.rows_read;
    const auto fields = split_csv_line(line);
    try {
      if (fields.size() < header.size()) throw std::runtime_error("short row");
      auto rating = [&](const std::string& name) {
        const std::string& raw = fields[column.at(name)];
        size_t pos = 0;
        const int v = std::stoi(raw, &pos);
        if (pos != raw.size() || v < 1 || v > 5)
          throw std::runtime_error(name + " rating out of range: " + raw);
        return v;
      };
      HumanRatingRecord rec;
      rec.sample_id = fields[column.at("sample_id")];
      rec.system_name = fields[column.at("system")];
      rec.answerability = rating("answerability");
      rec.correctness = rating("correctness");
      rec.external_knowledge = rating("external_knowledge");
      rec.relevance = rating("relevance");
      rec.soundness = rating("soundness");
      for (const auto& name : extra_names) {
        const std::string& raw = fields[column.at(name)];
        if (!raw.empty()) rec.extra[name] = std::stod(raw);
      }
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      ++rep.rows_rejected;
      rep.errors.emplace_back(line_no, e.what());
    }
  }
  return records;
}

namespace {

struct SystemMeans {
  std::string system;
  double answerability = 0, correctness = 0, external_knowledge = 0, relevance = 0, soundness = 0;
  int count = 0;
};

std::vector<SystemMeans> per_system_means(const std::vector<HumanRatingRecord>& records) {
  std::vector<SystemMeans> means;
  for (const auto& rec : records) {
    auto it = std::find_if(means.begin(), means.end(),
                           [&](const SystemMeans& m) { return m.system == rec.system_name; });
    if (it == means.end()) {
      means.push_back({rec.system_name});
      it = means.end() - 1;
    }
    it->answerability += rec.answerability;
    it->correctness += rec.correctness;
    it->external_knowledge += rec.external_knowledge;
    it->relevance += rec.relevance;
    it->soundness += rec.soundness;
    ++it->count;
  }
  for (auto& m : means) {
    m.answerability /= m.count;
    m.correctness /= m.count;
    m.external_knowledge /= m.count;
    m.relevance /= m.count;
    m.soundness /= m.count;
  }
  return means;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::string render_rating_table(const std::vector<HumanRatingRecord>& records) {
  const auto means = per_system_means(records);
  std::ostringstream out;
  out << "system        answerability  correctness  external_knowledge  relevance  soundness\n";
  for (const auto& m : means) {
    out << m.system;
    for (size_t i = m.system.size(); i < 14; ++i) out << ' ';
    out << fixed2(m.answerability) << "           " << fixed2(m.correctness) << "         "
        << fixed2(m.external_knowledge) << "                " << fixed2(m.relevance) << "       "
        << fixed2(m.soundness) << "\n";
  }
  return out.str();
}

void write_rating_csv(const std::vector<HumanRatingRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write rating csv: " + path);
  out << "system,answerability,correctness,external_knowledge,relevance,soundness,count\n";
  for (const auto& m : per_system_means(records))
    out << m.system << "," << m.answerability << "," << m.correctness << "," << m.external_knowledge
        << "," << m.relevance << "," << m.soundness << "," << m.count << "\n";
}

std::string CorrelationMatrix::stars(const CorrelationCell& cell) {
  if (!cell.defined) return "";
  if (cell.p_value < 0.005) return "**";
  if (cell.p_value < 0.05) return "*";
  return "";
}

CorrelationMatrix correlation_matrix(
    const std::vector<std::pair<std::string, std::vector<double>>>& columns) {
  if (columns.size() < 2) throw std::invalid_argument("correlation_matrix requires >= 2 columns");
  const size_t n = columns[0].second.size();
  if (n < 3) throw std::invalid_argument("correlation_matrix requires >= 3 rows");
  for (const auto& [name, values] : columns)
    if (values.size() != n) throw std::invalid_argument("column length mismatch: " + name);

  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };

  CorrelationMatrix matrix;
  for (const auto& [name, _] : columns) matrix.names.push_back(name);
  matrix.cells.assign(columns.size(), std::vector<CorrelationCell>(columns.size()));
  for (size_t i = 0; i < columns.size(); ++i) {
    for (size_t j = i; j < columns.size(); ++j) {
      CorrelationCell cell;
      if (constant(columns[i].second) || constant(columns[j].second)) {
        cell.defined = false;  // undefined, not fabricated
      } else if (i == j) {
        cell = {1.0, 0.0, true};
      } else {
        const auto res = metrics::spearman(columns[i].second, columns[j].second);
        cell = {res.rho, res.p_value, true};
      }
      matrix.cells[i][j] = cell;
      matrix.cells[j][i] = cell;
    }
  }
  return matrix;
}

void write_correlation_csv(const CorrelationMatrix& matrix, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write correlation csv: " + path);
  out << "column";
  for (const auto& name : matrix.names) out << "," << name << "," << name << "_p";
  out << "\n";
  for (size_t i = 0; i < matrix.names.size(); ++i) {
    out << matrix.names[i];
    for (size_t j = 0; j < matrix.names.size(); ++j) {
      const auto& cell = matrix.cells[i][j];
      if (cell.defined)
        out << "," << cell.rho << "," << cell.p_value;
      else
        out << ",na,na";
    }
    out << "\n";
  }
}

std::string render_correlation(const CorrelationMatrix& matrix) {
  std::ostringstream out;
  size_t w = 12;
  for (const auto& name : matrix.names) w = std::max(w, name.size() + 2);
  auto pad = [&](const std::string& s) { out << s << std::string(w - s.size(), ' '); };

  pad("");
  for (const auto& name : matrix.names) pad(name);
  out << "\n";
  for (size_t i = 0; i < matrix.names.size(); ++i) {
    pad(matrix.names[i]);
    for (size_t j = 0; j < matrix.names.size(); ++j) {
      const auto& cell = matrix.cells[i][j];
      if (!cell.defined) {
        pad("na");
        continue;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f%s", cell.rho, CorrelationMatrix::stars(cell).c_str());
      pad(buf);
    }
    out << "\n";
  }
  out << "significance: * p<.05, ** p<.005\n";
  return out.str();
}

std::vector<metrics::MetricReport> beam_divergence_report(
    const model::TransformerQG& model, const std::vector<deriv::CuriosityTriplet>& triplets,
    const std::vector<int>& k_values, const qa::Scorer& scorer,
    const metrics::BleuConfig& bleu_config, uint64_t self_bleu_seed) {
  if (k_values.empty()) throw std::invalid_argument("beam_divergence_report requires beam sizes");
  if (triplets.empty()) throw std::invalid_argument("beam_divergence_report requires triplets");

  std::vector<metrics::MetricReport> reports;
  for (const int k : k_values) {
    metrics::MetricReport report;
    report.system_name = "beam" + std::to_string(k);
    report.sample_count = static_cast<int>(triplets.size());

    std::vector<metrics::TokenSeq> hyps, refs;
    double qa_src_sum = 0.0, qa_ctx_sum = 0.0;
    for (const auto& t : triplets) {
      const auto src = model.encode_source(t.source);
      const auto gen = k == 1 ? model.greedy(src) : model.beam(src, k);
      hyps.push_back(text::metric_tokenize(gen.text));
      refs.push_back(text::metric_tokenize(t.target));
      if (!gen.text.empty()) {
        qa_src_sum += metrics::qa_source(gen.text, t.source, scorer);
        qa_ctx_sum += metrics::qa_context(gen.text, t.context, scorer);
      }
    }
    for (int n = 1; n <= bleu_config.max_n; ++n) {
      report.bleu[n] = metrics::corpus_bleu(hyps, refs, n);
      if (hyps.size() >= 2) report.self_bleu[n] = metrics::self_bleu(hyps, n, 1000, self_bleu_seed, bleu_config);
    }
    report.qa_source = qa_src_sum / static_cast<double>(triplets.size());
    report.qa_context = qa_ctx_sum / static_cast<double>(triplets.size());
    report.has_qa = true;
    reports.push_back(std::move(report));
  }
  return reports;
}

void write_histogram_csv(const TokenHistogram& histogram, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write histogram csv: " + path);
  out << "token,frequency\n";
  for (const auto& [token, freq] : histogram.frequencies) out << token << "," << freq << "\n";
  out << "total_count," << histogram.total_count << "\n";
}

}  // namespace analysis
}  // namespace cqg
