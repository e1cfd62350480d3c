#include "cqg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>

#include <json.hpp>

#include "cqg/text.hpp"

namespace cqg {
namespace model {

using ad::Mat;
using ad::Tape;
using ad::Var;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Vocabulary

namespace {
const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return kReserved;
}
}  // namespace

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4 || tokens_[0] != "<pad>" || tokens_[1] != "<bos>" || tokens_[2] != "<eos>" ||
      tokens_[3] != "<unk>")
    throw std::invalid_argument("vocabulary must start with the reserved tokens");
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token: " + tokens_[i]);
  }
}

Vocabulary Vocabulary::build_from_texts(const std::vector<std::string>& texts, int min_freq,
                                        int max_size) {
  std::map<std::string, long> freq;  // ordered keys make ties deterministic
  for (const auto& t : texts)
    for (const auto& tok : text::metric_tokenize(t)) ++freq[tok];

  std::vector<std::pair<std::string, long>> entries(freq.begin(), freq.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens = reserved_tokens();
  for (const auto& [tok, count] : entries) {
    if (count < min_freq) continue;
    if (static_cast<int>(tokens.size()) >= max_size) break;
    tokens.push_back(tok);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::build(const std::vector<deriv::CuriosityTriplet>& data, int min_freq,
                             int max_size) {
  std::vector<std::string> texts;
  texts.reserve(data.size() * 2);
  for (const auto& t : data) {
    texts.push_back(t.source);
    texts.push_back(t.target);
  }
  return build_from_texts(texts, min_freq, max_size);
}

int Vocabulary::id_of(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary id out of range");
  return tokens_[static_cast<size_t>(id)];
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  if (num_blocks < 1 || d_model < 1 || d_ff < 1 || num_heads < 1 || vocab_size < 5 ||
      max_source_len < 1 || max_target_len < 1)
    throw std::invalid_argument("model dimensions must be positive");
  if (d_model % num_heads != 0)
    throw std::invalid_argument("d_model must be divisible by the head count");
}

ModelConfig large_preset(ModelConfig base) {
  base.num_blocks = 6;
  base.d_model = 512;
  base.d_ff = 2048;
  base.num_heads = 8;
  return base;
}

std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::greedy: return "greedy";
    case DecodeMode::beam: return "beam";
    case DecodeMode::sample: return "sample";
  }
  return "greedy";
}

// ---------------------------------------------------------------------------
// Transformer

TransformerQG::TransformerQG(ModelConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size())
    throw std::invalid_argument("config vocab_size disagrees with the vocabulary");
  config_.validate();

  const int d = config_.d_model;
  add_param("embed", config_.vocab_size, d);
  for (int b = 0; b < config_.num_blocks; ++b) {
    const std::string e = "enc" + std::to_string(b) + ".";
    for (const char* w : {"self.wq", "self.wk", "self.wv", "self.wo"}) add_param(e + w, d, d);
    add_param(e + "ln1.g", 1, d);
    add_param(e + "ln1.b", 1, d);
    add_param(e + "ff.w1", d, config_.d_ff);
    add_param(e + "ff.b1", 1, config_.d_ff);
    add_param(e + "ff.w2", config_.d_ff, d);
    add_param(e + "ff.b2", 1, d);
    add_param(e + "ln2.g", 1, d);
    add_param(e + "ln2.b", 1, d);
  }
  for (int b = 0; b < config_.num_blocks; ++b) {
    const std::string dd = "dec" + std::to_string(b) + ".";
    for (const char* w : {"self.wq", "self.wk", "self.wv", "self.wo"}) add_param(dd + w, d, d);
    add_param(dd + "ln1.g", 1, d);
    add_param(dd + "ln1.b", 1, d);
    for (const char* w : {"cross.wq", "cross.wk", "cross.wv", "cross.wo"}) add_param(dd + w, d, d);
    add_param(dd + "ln2.g", 1, d);
    add_param(dd + "ln2.b", 1, d);
    add_param(dd + "ff.w1", d, config_.d_ff);
    add_param(dd + "ff.b1", 1, config_.d_ff);
    add_param(dd + "ff.w2", config_.d_ff, d);
    add_param(dd + "ff.b2", 1, d);
    add_param(dd + "ln3.g", 1, d);
    add_param(dd + "ln3.b", 1, d);
  }
  add_param("out.w", d, config_.vocab_size);
  add_param("out.b", 1, config_.vocab_size);
  add_param("gate.w", d, 1);
  add_param("gate.b", 1, 1);

  init_params();

  const int pe_rows = std::max(config_.max_source_len, config_.max_target_len + 1);
  positional_ = Mat(pe_rows, d);
  for (int pos = 0; pos < pe_rows; ++pos)
    for (int i = 0; i < d; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      positional_.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
}

Parameter& TransformerQG::add_param(const std::string& name, int rows, int cols) {
  param_index_[name] = static_cast<int>(params_.size());
  params_.push_back({name, Mat(rows, cols), Mat(rows, cols), Mat(rows, cols)});
  return params_.back();
}

const Mat& TransformerQG::p(const std::string& name) const {
  return params_[param_index_.at(name)].value;
}

void TransformerQG::init_params() {
  std::mt19937_64 rng(config_.seed);
  auto uniform = [&rng]() { return (rng() >> 11) * (1.0 / 9007199254740992.0); };
  for (auto& param : params_) {
    const auto& name = param.name;
    const bool is_gain = name.size() > 2 && name.substr(name.size() - 2) == ".g" &&
                         name.find("ln") != std::string::npos;
    const bool is_bias = (name.size() > 2 && name.substr(name.size() - 2) == ".b") ||
                         name.find(".b1") != std::string::npos || name.find(".b2") != std::string::npos;
    if (is_gain) {
      param.value.fill(1.0);
      continue;
    }
    if (is_bias) continue;  // zero-initialized
    const double a = std::sqrt(6.0 / (param.value.rows + param.value.cols));
    for (double& v : param.value.v) v = (2.0 * uniform() - 1.0) * a;
  }
}

EncodedSource TransformerQG::encode_source(const std::string& input) const {
  EncodedSource out;
  out.tokens = text::metric_tokenize(input);
  if (static_cast<int>(out.tokens.size()) > config_.max_source_len)
    out.tokens.resize(static_cast<size_t>(config_.max_source_len));
  for (const auto& tok : out.tokens) {
    const int id = vocab_.id_of(tok);
    out.ids.push_back(id);
    if (id != Vocabulary::kUnk) {
      out.ext_ids.push_back(id);
      continue;
    }
    int ext = -1;
    for (size_t i = 0; i < out.oov_surfaces.size(); ++i)
      if (out.oov_surfaces[i] == tok) ext = config_.vocab_size + static_cast<int>(i);
    if (ext < 0) {
      ext = config_.vocab_size + static_cast<int>(out.oov_surfaces.size());
      out.oov_surfaces.push_back(tok);
    }
    out.ext_ids.push_back(ext);
  }
  return out;
}

std::vector<int> TransformerQG::encode_target(const EncodedSource& src, const std::string& input) const {
  auto tokens = text::metric_tokenize(input);
  if (static_cast<int>(tokens.size()) > config_.max_target_len - 1)
    tokens.resize(static_cast<size_t>(config_.max_target_len - 1));
  std::vector<int> ids;
  for (const auto& tok : tokens) {
    int id = vocab_.id_of(tok);
    if (id == Vocabulary::kUnk) {
      for (size_t i = 0; i < src.oov_surfaces.size(); ++i)
        if (src.oov_surfaces[i] == tok) id = config_.vocab_size + static_cast<int>(i);
    }
    ids.push_back(id);
  }
  ids.push_back(Vocabulary::kEos);
  return ids;
}

std::string TransformerQG::decode_text(const EncodedSource& src, const std::vector<int>& ext_ids) const {
  std::string out;
  for (const int id : ext_ids) {
    std::string tok;
    if (id >= config_.vocab_size) {
      const size_t oov = static_cast<size_t>(id - config_.vocab_size);
      if (oov >= src.oov_surfaces.size()) throw std::out_of_range("extended id beyond source OOVs");
      tok = src.oov_surfaces[oov];
    } else {
      if (id == Vocabulary::kEos || id == Vocabulary::kBos || id == Vocabulary::kPad) continue;
      tok = vocab_.token_of(id);
    }
    if (!out.empty()) out += " ";
    out += tok;
  }
  return out;
}

namespace {

struct AttentionOut {
  Var output;
  Var mean_attention;
};

// multi-head scaled dot-product attention; mask01 restricts key positions
AttentionOut attend(Tape& t, Var queries_in, Var keys_in, const Mat* mask01, const Mat& wq,
                    const Mat& wk, const Mat& wv, const Mat& wo, int num_heads) {
  const int d = wq.cols;
  const int dk = d / num_heads;
  const Var Q = t.matmul(queries_in, t.param(&wq));
  const Var K = t.matmul(keys_in, t.param(&wk));
  const Var V = t.matmul(keys_in, t.param(&wv));

  std::vector<Var> contexts;
  Var attn_sum{-1};
  for (int h = 0; h < num_heads; ++h) {
    const Var qh = t.slice_cols(Q, h * dk, (h + 1) * dk);
    const Var kh = t.slice_cols(K, h * dk, (h + 1) * dk);
    const Var vh = t.slice_cols(V, h * dk, (h + 1) * dk);
    const Var scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dk)));
    const Var attn = mask01 ? t.softmax_rows(scores, *mask01) : t.softmax_rows(scores);
    contexts.push_back(t.matmul(attn, vh));
    attn_sum = attn_sum.valid() ? t.add(attn_sum, attn) : attn;
  }
  AttentionOut out;
  out.output = t.matmul(t.concat_cols(contexts), t.param(&wo));
  out.mean_attention = t.scale(attn_sum, 1.0 / num_heads);
  return out;
}

Mat causal_mask(int n) {
  Mat m(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) m.at(r, c) = 1.0;
  return m;
}

}  // namespace

TransformerQG::GraphOutput TransformerQG::build_graph(Tape& t, const std::vector<int>& source_ids,
                                                      const std::vector<int>& decoder_input_ids,
                                                      std::optional<double> gate_override) const {
  if (source_ids.empty() || decoder_input_ids.empty())
    throw std::invalid_argument("source and decoder input must be non-empty");
  if (static_cast<int>(source_ids.size()) > config_.max_source_len)
    throw std::invalid_argument("source exceeds max_source_len");
  if (static_cast<int>(decoder_input_ids.size()) > config_.max_target_len + 1)
    throw std::invalid_argument("target exceeds max_target_len");
  for (const int id : source_ids)
    if (id < 0 || id >= config_.vocab_size) throw std::invalid_argument("source id out of range");
  for (const int id : decoder_input_ids)
    if (id < 0 || id >= config_.vocab_size) throw std::invalid_argument("decoder input id out of range");

  const int S = static_cast<int>(source_ids.size());
  const int T = static_cast<int>(decoder_input_ids.size());
  const double emb_scale = std::sqrt(static_cast<double>(config_.d_model));

  auto pe_rows = [&](int n) {
    Mat pe(n, config_.d_model);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < config_.d_model; ++c) pe.at(r, c) = positional_.at(r, c);
    return pe;
  };

  const Var embed = t.param(&p("embed"));

  // encoder
  Var x = t.add(t.scale(t.gather_rows(embed, source_ids), emb_scale), t.constant(pe_rows(S)));
  for (int b = 0; b < config_.num_blocks; ++b) {
    const std::string e = "enc" + std::to_string(b) + ".";
    const auto self = attend(t, x, x, nullptr, p(e + "self.wq"), p(e + "self.wk"), p(e + "self.wv"),
                             p(e + "self.wo"), config_.num_heads);
    x = t.layer_norm(t.add(x, self.output), t.param(&p(e + "ln1.g")), t.param(&p(e + "ln1.b")));
    const Var ff = t.add_rowvec(
        t.matmul(t.relu(t.add_rowvec(t.matmul(x, t.param(&p(e + "ff.w1"))), t.param(&p(e + "ff.b1")))),
                 t.param(&p(e + "ff.w2"))),
        t.param(&p(e + "ff.b2")));
    x = t.layer_norm(t.add(x, ff), t.param(&p(e + "ln2.g")), t.param(&p(e + "ln2.b")));
  }
  const Var encoder_out = x;

  // decoder
  const Mat causal = causal_mask(T);
  Var y = t.add(t.scale(t.gather_rows(embed, decoder_input_ids), emb_scale), t.constant(pe_rows(T)));
  Var cross_attention{-1};
  for (int b = 0; b < config_.num_blocks; ++b) {
    const std::string d = "dec" + std::to_string(b) + ".";
    const auto self = attend(t, y, y, &causal, p(d + "self.wq"), p(d + "self.wk"), p(d + "self.wv"),
                             p(d + "self.wo"), config_.num_heads);
    y = t.layer_norm(t.add(y, self.output), t.param(&p(d + "ln1.g")), t.param(&p(d + "ln1.b")));
    const auto cross = attend(t, y, encoder_out, nullptr, p(d + "cross.wq"), p(d + "cross.wk"),
                              p(d + "cross.wv"), p(d + "cross.wo"), config_.num_heads);
    y = t.layer_norm(t.add(y, cross.output), t.param(&p(d + "ln2.g")), t.param(&p(d + "ln2.b")));
    cross_attention = cross.mean_attention;
    const Var ff = t.add_rowvec(
        t.matmul(t.relu(t.add_rowvec(t.matmul(y, t.param(&p(d + "ff.w1"))), t.param(&p(d + "ff.b1")))),
                 t.param(&p(d + "ff.w2"))),
        t.param(&p(d + "ff.b2")));
    y = t.layer_norm(t.add(y, ff), t.param(&p(d + "ln3.g")), t.param(&p(d + "ln3.b")));
  }

  GraphOutput out;
  out.vocab_probs = t.softmax_rows(t.add_rowvec(t.matmul(y, t.param(&p("out.w"))), t.param(&p("out.b"))));
  out.copy_attention = cross_attention;
  if (gate_override) {
    Mat g(T, 1);
    g.fill(*gate_override);
    out.gate = t.constant(std::move(g));
  } else {
    out.gate = t.sigmoid(t.add_rowvec(t.matmul(y, t.param(&p("gate.w"))), t.param(&p("gate.b"))));
  }
  return out;
}

std::vector<std::vector<double>> TransformerQG::forward(const EncodedSource& src,
                                                        const std::vector<int>& target_prefix_ext,
                                                        std::optional<double> gate_override) const {
  const int ext_size = config_.vocab_size + static_cast<int>(src.oov_surfaces.size());
  std::vector<int> decoder_input{Vocabulary::kBos};
  for (const int id : target_prefix_ext) {
    if (id < 0 || id >= ext_size) throw std::invalid_argument("target prefix id out of range");
    decoder_input.push_back(id < config_.vocab_size ? id : Vocabulary::kUnk);
  }

  Tape t(/*grad_enabled=*/false);
  const auto g = build_graph(t, src.ids, decoder_input, gate_override);
  const Mat& pv = t.val(g.vocab_probs);
  const Mat& attn = t.val(g.copy_attention);
  const Mat& gate = t.val(g.gate);

  std::vector<std::vector<double>> dists;
  dists.reserve(static_cast<size_t>(pv.rows));
  for (int r = 0; r < pv.rows; ++r) {
    std::vector<double> dist(static_cast<size_t>(ext_size), 0.0);
    const double gr = gate.at(r, 0);
    for (int cvocab = 0; cvocab < config_.vocab_size; ++cvocab)
      dist[static_cast<size_t>(cvocab)] = gr * pv.at(r, cvocab);
    for (int i = 0; i < attn.cols; ++i)
      dist[static_cast<size_t>(src.ext_ids[static_cast<size_t>(i)])] += (1.0 - gr) * attn.at(r, i);
    dists.push_back(std::move(dist));
  }
  return dists;
}

namespace {

class ConditionedDistribution : public SequenceDistribution {
 public:
  ConditionedDistribution(const TransformerQG& model, EncodedSource src,
                          std::optional<double> gate_override)
      : model_(model), src_(std::move(src)), gate_override_(gate_override) {}

  int extended_vocab_size() const override {
    return model_.config().vocab_size + static_cast<int>(src_.oov_surfaces.size());
  }
  int eos_id() const override { return Vocabulary::kEos; }
  int pad_id() const override { return Vocabulary::kPad; }

  std::vector<double> next_distribution(const std::vector<int>& prefix) const override {
    return model_.forward(src_, prefix, gate_override_).back();
  }

 private:
  const TransformerQG& model_;
  EncodedSource src_;
  std::optional<double> gate_override_;
};

}  // namespace

std::unique_ptr<SequenceDistribution> TransformerQG::conditioned(
    const EncodedSource& src, std::optional<double> gate_override) const {
  return std::make_unique<ConditionedDistribution>(*this, src, gate_override);
}

GenerationResult TransformerQG::greedy(const EncodedSource& src) const {
  auto res = greedy_decode(*conditioned(src), config_.max_target_len);
  res.text = decode_text(src, res.token_ids);
  return res;
}

GenerationResult TransformerQG::beam(const EncodedSource& src, int k) const {
  auto res = beam_search(*conditioned(src), k, config_.max_target_len);
  res.text = decode_text(src, res.token_ids);
  return res;
}

GenerationResult TransformerQG::sample(const EncodedSource& src, uint64_t seed) const {
  auto res = sample_sequence(*conditioned(src), config_.max_target_len, seed);
  res.text = decode_text(src, res.token_ids);
  return res;
}

// ---------------------------------------------------------------------------
// Decoders

GenerationResult greedy_decode(const SequenceDistribution& dist, int max_len) {
  GenerationResult result;
  result.decode_mode = DecodeMode::greedy;
  result.beam_size = 1;
  const int pad = dist.pad_id();
  for (int step = 0; step < max_len; ++step) {
    const auto d = dist.next_distribution(result.token_ids);
    int best = -1;
    for (int tok = 0; tok < static_cast<int>(d.size()); ++tok) {
      if (tok == pad) continue;
      if (best < 0 || d[static_cast<size_t>(tok)] > d[static_cast<size_t>(best)]) best = tok;
    }
    result.token_ids.push_back(best);
    result.log_prob += std::log(d[static_cast<size_t>(best)]);
    if (best == dist.eos_id()) break;
  }
  return result;
}

namespace {

struct Hypothesis {
  std::vector<int> seq;
  double score = 0.0;
};

bool hyp_better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.seq < b.seq;
}

}  // namespace

GenerationResult beam_search(const SequenceDistribution& dist, int k, int max_len) {
  if (k < 1) throw std::invalid_argument("beam size must be at least 1");
  const int pad = dist.pad_id();
  const int eos = dist.eos_id();

  std::vector<Hypothesis> beams{{{}, 0.0}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < max_len && !beams.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(beams.size() * 8);
    for (const auto& beam : beams) {
      const auto d = dist.next_distribution(beam.seq);
      for (int tok = 0; tok < static_cast<int>(d.size()); ++tok) {
        if (tok == pad) continue;
        const double prob = d[static_cast<size_t>(tok)];
        if (prob <= 0.0) continue;
        Hypothesis h;
        h.seq = beam.seq;
        h.seq.push_back(tok);
        h.score = beam.score + std::log(prob);
        candidates.push_back(std::move(h));
      }
    }
    if (candidates.empty()) break;
    std::sort(candidates.begin(), candidates.end(), hyp_better);
    if (static_cast<int>(candidates.size()) > k) candidates.resize(static_cast<size_t>(k));

    beams.clear();
    for (auto& cand : candidates) {
      if (cand.seq.back() == eos)
        finished.push_back(std::move(cand));
      else
        beams.push_back(std::move(cand));
    }
    // unnormalized scores never increase, so a finished hypothesis strictly
    // above every live beam cannot be overtaken
    if (!finished.empty() && !beams.empty()) {
      const auto best_fin = std::min_element(finished.begin(), finished.end(),
                                             [](const auto& a, const auto& b) { return hyp_better(a, b); });
      const auto best_live = std::min_element(beams.begin(), beams.end(),
                                              [](const auto& a, const auto& b) { return hyp_better(a, b); });
      if (best_fin->score > best_live->score) beams.clear();
    }
  }

  std::vector<Hypothesis> pool = std::move(finished);
  // fall back to unfinished hypotheses only when nothing finished
  if (pool.empty()) pool = std::move(beams);
  if (pool.empty()) return GenerationResult{{}, "", 0.0, DecodeMode::beam, k};
  const auto best =
      std::min_element(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return hyp_better(a, b); });

  GenerationResult result;
  result.token_ids = best->seq;
  result.log_prob = best->score;
  result.decode_mode = DecodeMode::beam;
  result.beam_size = k;
  return result;
}

GenerationResult sample_sequence(const SequenceDistribution& dist, int max_len, uint64_t seed) {
  GenerationResult result;
  result.decode_mode = DecodeMode::sample;
  result.beam_size = 1;
  std::mt19937_64 rng(seed);
  auto uniform = [&rng]() { return (rng() >> 11) * (1.0 / 9007199254740992.0); };
  const int pad = dist.pad_id();

  for (int step = 0; step < max_len; ++step) {
    const auto d = dist.next_distribution(result.token_ids);
    double total = 0.0;
    for (int tok = 0; tok < static_cast<int>(d.size()); ++tok)
      if (tok != pad) total += d[static_cast<size_t>(tok)];
    const double threshold = uniform() * total;

    int chosen = -1;
    double acc = 0.0;
    for (int tok = 0; tok < static_cast<int>(d.size()); ++tok) {
      if (tok == pad) continue;
      const double prob = d[static_cast<size_t>(tok)];
      if (prob <= 0.0) continue;
      acc += prob;
      chosen = tok;
      if (acc > threshold) break;
    }
    if (chosen < 0) throw std::runtime_error("sample_sequence: degenerate distribution");
    result.token_ids.push_back(chosen);
    result.log_prob += std::log(d[static_cast<size_t>(chosen)]);
    if (chosen == dist.eos_id()) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kMagic[8] = {'C', 'Q', 'G', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kVersion = 1;

json config_to_json(const ModelConfig& c) {
  return {{"num_blocks", c.num_blocks},   {"d_model", c.d_model},
          {"d_ff", c.d_ff},               {"num_heads", c.num_heads},
          {"vocab_size", c.vocab_size},   {"max_source_len", c.max_source_len},
          {"max_target_len", c.max_target_len}, {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.num_blocks = j.at("num_blocks").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_source_len = j.at("max_source_len").get<int>();
  c.max_target_len = j.at("max_target_len").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const TransformerQG& model, const std::string& path,
                     const TrainingPosition* position) {
  json header;
  header["format"] = "cqg-checkpoint";
  header["version"] = kVersion;
  header["config"] = config_to_json(model.config());
  header["vocab"] = model.vocab().tokens();
  header["params"] = json::array();
  for (const auto& param : model.parameters())
    header["params"].push_back({{"name", param.name}, {"rows", param.value.rows}, {"cols", param.value.cols}});
  header["position"] = {{"has_optimizer", position && position->has_optimizer},
                        {"epoch", position ? position->epoch : 0},
                        {"step_in_epoch", position ? position->step_in_epoch : 0},
                        {"global_step", position ? position->global_step : 0}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  const std::string head = header.dump();
  const uint64_t head_len = head.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  auto write_mat = [&out](const Mat& m) {
    out.write(reinterpret_cast<const char*>(m.v.data()),
              static_cast<std::streamsize>(m.v.size() * sizeof(double)));
  };
  for (const auto& param : model.parameters()) write_mat(param.value);
  if (position && position->has_optimizer) {
    for (const auto& param : model.parameters()) write_mat(param.adam_m);
    for (const auto& param : model.parameters()) write_mat(param.adam_v);
  }
  if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

TransformerQG load_checkpoint(const std::string& path, TrainingPosition* position) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint64_t head_len = 0;
  in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
  std::string head(head_len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head_len));
  const json header = json::parse(head);
  if (header.at("version").get<uint32_t>() != kVersion)
    throw std::runtime_error("unsupported checkpoint version");

  TransformerQG model(config_from_json(header.at("config")),
                      Vocabulary(header.at("vocab").get<std::vector<std::string>>()));

  const auto& params_meta = header.at("params");
  if (params_meta.size() != model.parameters().size())
    throw std::runtime_error("checkpoint parameter list mismatch");
  auto read_mat = [&in, &path](Mat& m) {
    in.read(reinterpret_cast<char*>(m.v.data()), static_cast<std::streamsize>(m.v.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  };
  for (size_t i = 0; i < model.parameters().size(); ++i) {
    auto& param = model.parameters()[i];
    const auto& meta = params_meta[i];
    if (meta.at("name").get<std::string>() != param.name ||
        meta.at("rows").get<int>() != param.value.rows || meta.at("cols").get<int>() != param.value.cols)
      throw std::runtime_error("checkpoint parameter layout mismatch at " + param.name);
    read_mat(param.value);
  }
  const auto& pos = header.at("position");
  const bool has_optimizer = pos.at("has_optimizer").get<bool>();
  if (has_optimizer) {
    for (auto& param : model.parameters()) read_mat(param.adam_m);
    for (auto& param : model.parameters()) read_mat(param.adam_v);
  }
  if (position) {
    position->has_optimizer = has_optimizer;
    position->epoch = pos.at("epoch").get<long>();
    position->step_in_epoch = pos.at("step_in_epoch").get<long>();
    position->global_step = pos.at("global_step").get<long>();
  }
  return model;
}

}  // namespace model
}  // namespace cqg
