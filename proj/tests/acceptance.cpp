// Acceptance suite: one check per criterion, one pass/fail line each.
// Returns a nonzero exit code when any criterion fails.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "cqg/analysis.hpp"
#include "cqg/metrics.hpp"
#include "cqg/training.hpp"
#include "helpers.hpp"

using namespace cqg;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

void require_close(double a, double b, double tol, const std::string& what) {
  if (!(std::fabs(a - b) <= tol)) {
    std::ostringstream ss;
    ss << what << " (got " << a << ", want " << b << " within " << tol << ")";
    throw Failure(ss.str());
  }
}

metrics::TokenSeq toks(const std::string& s) { return text::metric_tokenize(s); }

// ---------------------------------------------------------------------------

void criterion_bleu_oracle() {
  require_close(metrics::corpus_bleu({toks("the cat")}, {toks("the cat sat")}, 1), std::exp(-0.5),
                1e-9, "short-hypothesis brevity penalty");
  require_close(metrics::corpus_bleu({toks("a b c d e")}, {toks("a b c d e")}, 4), 1.0, 1e-9,
                "identity");
  require_close(metrics::corpus_bleu({toks("x y z")}, {toks("a b c")}, 1), 0.0, 1e-9, "disjoint");
  require_close(metrics::corpus_bleu({toks("the the the")}, {toks("the cat")}, 1), 1.0 / 3.0, 1e-9,
                "count clipping");
  require_close(metrics::corpus_bleu({toks("the cat sat")}, {toks("the cat sat on")}, 2),
                std::exp(1.0 - 4.0 / 3.0), 1e-9, "bigram with penalty");
  require_close(metrics::corpus_bleu({toks("a b"), toks("c")}, {toks("a b"), toks("c d")}, 1),
                std::exp(1.0 - 4.0 / 3.0), 1e-9, "corpus pooling");
  require_close(metrics::corpus_bleu({toks("a a b")}, {toks("a b b")}, 2), std::sqrt(1.0 / 3.0),
                1e-9, "clipped bigram mix");
}

void criterion_self_bleu() {
  const std::vector<metrics::TokenSeq> identical(10, toks("what is the meaning of this"));
  require_close(metrics::self_bleu(identical, 4, 1000, 0), 1.0, 1e-12, "identical set");

  const std::vector<metrics::TokenSeq> disjoint = {toks("a b c"), toks("d e f"), toks("g h i"),
                                                   toks("j k l")};
  require_close(metrics::self_bleu(disjoint, 2, 1000, 0), 0.0, 1e-12, "disjoint set, unsmoothed");

  std::vector<metrics::TokenSeq> base = {toks("the cat sat"),     toks("a dog ran fast"),
                                         toks("the cat ran"),     toks("birds fly south"),
                                         toks("a cat and a dog"), toks("fish swim"),
                                         toks("the dog sat")};
  const double reference_score = metrics::self_bleu(base, 2, 1000, 0);
  std::mt19937_64 rng(2024);
  for (int shuffle = 0; shuffle < 20; ++shuffle) {
    auto permuted = base;
    for (size_t i = permuted.size(); i > 1; --i) std::swap(permuted[i - 1], permuted[rng() % i]);
    require_close(metrics::self_bleu(permuted, 2, 1000, 0), reference_score, 1e-12,
                  "permutation invariance");
  }
}

void criterion_derivation_properties() {
  deriv::HeuristicTagger tagger;
  int paragraphs_seen = 0;
  for (const uint64_t seed : {11u, 12u}) {
    const auto conv = testutil::synthetic_corpus(100, seed, corpus::Origin::conversational);
    paragraphs_seen += static_cast<int>(conv.paragraph_count());
    for (const auto& t : deriv::derive_conversational(conv))
      require(*std::max_element(t.meta.source_sentence_indices.begin(),
                                t.meta.source_sentence_indices.end()) < t.meta.answer_sentence_index,
              "conversational constraint violated");

    const auto std_corpus = testutil::synthetic_corpus(100, seed, corpus::Origin::standard);
    const auto unconstrained = deriv::derive_standard(std_corpus, false, tagger);
    size_t expected = 0;
    for (const auto& a : std_corpus.articles)
      for (const auto& p : a.paragraphs)
        if (p.sentences.size() >= 2) expected += p.qa_pairs.size() * (p.sentences.size() - 1);
    require(unconstrained.size() == expected, "unconstrained count identity");

    const auto constrained = deriv::derive_standard(std_corpus, true, tagger);
    std::set<std::tuple<std::string, int, std::vector<int>, std::string>> all;
    for (const auto& t : unconstrained)
      all.insert({t.meta.article_id, t.meta.paragraph_index, t.meta.source_sentence_indices, t.target});
    for (const auto& t : constrained) {
      require(all.count({t.meta.article_id, t.meta.paragraph_index, t.meta.source_sentence_indices,
                         t.target}) == 1,
              "constrained not a subset of unconstrained");

      const corpus::Article* article = nullptr;
      for (const auto& a : std_corpus.articles)
        if (a.id == t.meta.article_id) article = &a;
      const auto& p = article->paragraphs[static_cast<size_t>(t.meta.paragraph_index)];
      std::vector<std::string> pool{p.raw_text};
      for (const auto& qa : p.qa_pairs) pool.push_back(qa.question);
      std::set<std::string> source_surfaces;
      for (const auto& e : tagger.tag(t.source, pool))
        source_surfaces.insert(text::ascii_lower(e.surface));
      for (const auto& e : tagger.tag(t.target, pool))
        require(source_surfaces.count(text::ascii_lower(e.surface)) == 1,
                "kept triplet violates the entity-subset property");
    }
  }
  require(paragraphs_seen == 200, "expected 200 synthetic paragraphs");
}

void criterion_tesla_fixture() {
  const auto corpus = testutil::tesla_corpus();
  deriv::HeuristicTagger tagger;
  const auto kept = deriv::derive_standard(corpus, true, tagger);

  bool dane_filtered_from_s0 = true;
  bool brother_kept_from_s0 = false;
  for (const auto& t : kept) {
    if (t.target == "What happened to Dane?" && t.meta.source_sentence_indices == std::vector<int>{0})
      dane_filtered_from_s0 = false;
    if (t.target == "What was Tesla's brother's name?" &&
        t.meta.source_sentence_indices == std::vector<int>{0})
      brother_kept_from_s0 = true;
  }
  require(dane_filtered_from_s0, "the context-dependent question must be filtered");
  require(brother_kept_from_s0, "the entity-covered question must be kept");
}

void criterion_reward_identity() {
  const qa::StubScorer scorer;
  std::mt19937_64 rng(31337);
  const std::vector<std::string> words = {"tesla",  "bridge", "london", "physics", "album",
                                          "1879",   "battle", "engine", "school",  "harbor",
                                          "winter", "garden", "violin", "comet"};
  auto make_text = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += (i ? " " : "") + words[rng() % words.size()];
    return s;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::string q = "what about " + make_text(4) + " ?";
    const std::string src = make_text(6);
    const std::string ctx = make_text(8);
    const double reward = metrics::curiosity_reward(q, src, ctx, scorer);
    const double expected = metrics::qa_context(q, ctx, scorer) - metrics::qa_source(q, src, scorer);
    require(std::fabs(reward - expected) <= 1e-12, "reward must equal the score difference");
    require(reward >= -1.0 && reward <= 1.0, "reward out of bounds");
  }
}

void criterion_gradient_check() {
  // tiny model: V <= 20, d_model <= 8
  std::vector<deriv::CuriosityTriplet> data;
  for (const char* t : {"a b c|d e f ?", "b c a|e d ?", "c a|f e d ?", "a c b|d f ?"}) {
    deriv::CuriosityTriplet triplet;
    const std::string s(t);
    triplet.source = s.substr(0, s.find('|'));
    triplet.target = s.substr(s.find('|') + 1);
    triplet.context = "g h";
    data.push_back(triplet);
  }
  const auto vocab = model::Vocabulary::build(data, 1, 20);
  require(vocab.size() <= 20, "gradient-check vocabulary too large");

  model::ModelConfig cfg;
  cfg.num_blocks = 1;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.num_heads = 2;
  cfg.vocab_size = vocab.size();
  cfg.max_source_len = 8;
  cfg.max_target_len = 8;
  cfg.seed = 4242;
  model::TransformerQG m(cfg, vocab);

  const auto batch = train::make_batch(m, data, {0, 1, 2});
  const auto outcome = testutil::gradient_check_loss_ml(m, batch, 25, 2025);
  require(outcome.checked >= 20, "not enough parameters checked");
  std::ostringstream ss;
  ss << "max relative error " << outcome.max_rel_err;
  require(outcome.max_rel_err <= 1e-3, ss.str());
}

void criterion_mixed_loss() {
  const auto data = testutil::toy_triplets(6, 91);
  const auto vocab = model::Vocabulary::build(data, 1, 500);
  model::ModelConfig cfg;
  cfg.num_blocks = 1;
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.num_heads = 2;
  cfg.vocab_size = vocab.size();
  cfg.max_source_len = 24;
  cfg.max_target_len = 12;
  cfg.seed = 7;
  const model::TransformerQG m(cfg, vocab);
  const auto batch = train::make_batch(m, data, {0, 1, 2, 3, 4, 5});
  const qa::StubScorer scorer;
  const uint64_t step_seed = 5150;

  const double ml = train::loss_ml(m, batch);
  const double rl = train::loss_rl(m, batch, scorer, step_seed);
  require(train::loss_mixed(m, batch, &scorer, 0.0, step_seed) == ml,
          "gamma = 0 must be bit-identical to the supervised loss");
  require(train::loss_mixed(m, batch, &scorer, 1.0, step_seed) == rl,
          "gamma = 1 must be bit-identical to the reinforcement loss");
  for (const double gamma : {0.15, 0.3, 0.5, 0.75, 0.9})
    require_close(train::loss_mixed(m, batch, &scorer, gamma, step_seed),
                  gamma * rl + (1.0 - gamma) * ml, 1e-9, "linearity in gamma");
}

void criterion_reinforce_sign() {
  auto one_step = [](double reward_greedy, double reward_sampled) {
    ad::Mat theta(1, 1);
    theta.at(0, 0) = -0.2;
    ad::Tape tape(true);
    const ad::Var p = tape.sigmoid(tape.param(&theta));
    const double before = std::log(tape.val(p).at(0, 0));
    tape.backward(train::reinforce_term(tape, tape.log_elem(p), reward_greedy, reward_sampled));
    theta.at(0, 0) -= 0.25 * tape.grad(tape.param(&theta)).at(0, 0);
    return std::make_pair(before, std::log(1.0 / (1.0 + std::exp(-theta.at(0, 0)))));
  };
  const qa::StubScorer scorer;
  const std::string source = "alice visited paris";
  const std::string context = "bruno built the bridge in london";
  const double r_good = metrics::curiosity_reward("who built the bridge ?", source, context, scorer);
  const double r_bad = metrics::curiosity_reward("who visited paris ?", source, context, scorer);
  require(r_good > r_bad, "stub rewards must order the two probes");

  const auto [before_up, after_up] = one_step(r_bad, r_good);
  require(after_up > before_up, "r(sampled) > r(greedy) must raise log p(sampled)");
  const auto [before_down, after_down] = one_step(r_good, r_bad);
  require(after_down < before_down, "r(sampled) < r(greedy) must lower log p(sampled)");
}

void criterion_decoding() {
  // beam k=1 equals greedy on 50 seeded random models and inputs
  const std::vector<std::string> toks_pool = {"alice", "bruno", "river", "school", "zzz",  "what",
                                              "did",   "the",   "in",    "1890",   "yyy",  "do"};
  std::mt19937_64 rng(60601);
  std::vector<std::string> vocab_tokens = {"<pad>", "<bos>", "<eos>", "<unk>"};
  vocab_tokens.insert(vocab_tokens.end(), toks_pool.begin(), toks_pool.begin() + 10);
  for (int trial = 0; trial < 50; ++trial) {
    model::ModelConfig cfg;
    cfg.num_blocks = 1;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.num_heads = 2;
    cfg.vocab_size = static_cast<int>(vocab_tokens.size());
    cfg.max_source_len = 12;
    cfg.max_target_len = 6;
    cfg.seed = rng();
    const model::TransformerQG m(cfg, model::Vocabulary(vocab_tokens));
    std::string source;
    for (int w = 0; w < 3 + static_cast<int>(rng() % 5); ++w)
      source += (w ? " " : "") + toks_pool[rng() % toks_pool.size()];
    const auto src = m.encode_source(source);
    const auto greedy = m.greedy(src);
    const auto beam = m.beam(src, 1);
    require(greedy.token_ids == beam.token_ids, "beam k=1 sequence must equal greedy");
    require(std::fabs(greedy.log_prob - beam.log_prob) <= 1e-12,
            "beam k=1 log_prob must equal greedy");
  }

  // beam k=3 against exhaustive enumeration on the hand-built 3-step table
  std::map<std::vector<int>, std::vector<double>> table;
  table[{}] = {0.00, 0.45, 0.35, 0.20};
  table[{1}] = {0.10, 0.30, 0.30, 0.30};
  table[{2}] = {0.95, 0.02, 0.02, 0.01};
  table[{3}] = {0.50, 0.20, 0.20, 0.10};
  const testutil::ToyDistribution toy(4, table, {0.40, 0.20, 0.20, 0.20});
  const auto beam = model::beam_search(toy, 3, 3);
  const auto oracle = testutil::oracle_best(toy, 3);
  require(beam.token_ids == oracle.seq, "beam k=3 must match the enumeration oracle");
  require(std::fabs(beam.log_prob - oracle.log_prob) <= 1e-12, "beam k=3 log_prob mismatch");
  require(beam.token_ids == std::vector<int>{2, 0}, "expected the peaked path");
}

// shared by criteria 10 and 11
train::TrainOptions overfit_options(const std::string& dir, int epochs, uint64_t seed) {
  train::TrainOptions opts;
  opts.config.batch_size = 8;
  opts.config.epochs = epochs;
  opts.config.adam.lr = 3e-3;
  opts.config.seed = seed;
  opts.config.patience = 0;
  opts.config.log_every = 0;
  opts.out_dir = dir;
  return opts;
}

model::TransformerQG overfit_model(const std::vector<deriv::CuriosityTriplet>& data, uint64_t seed,
                                   int d_model = 32) {
  const auto vocab = model::Vocabulary::build(data, 1, 2000);
  model::ModelConfig cfg;
  cfg.num_blocks = 2;
  cfg.d_model = d_model;
  cfg.d_ff = 2 * d_model;
  cfg.num_heads = 2;
  cfg.vocab_size = vocab.size();
  cfg.max_source_len = 24;
  cfg.max_target_len = 12;
  cfg.seed = seed;
  return model::TransformerQG(cfg, vocab);
}

void criterion_overfit_capacity() {
  const auto data = testutil::toy_triplets(32, 4096);

  auto run_once = [&](const std::string& tag) {
    auto m = overfit_model(data, 1848);
    train::train_supervised(m, data, {}, overfit_options(testutil::temp_dir("overfit_" + tag), 200, 11));
    std::vector<metrics::TokenSeq> hyps, refs;
    std::vector<std::string> texts;
    for (const auto& t : data) {
      const auto gen = m.greedy(m.encode_source(t.source));
      texts.push_back(gen.text);
      hyps.push_back(toks(gen.text));
      refs.push_back(toks(t.target));
    }
    return std::make_pair(metrics::corpus_bleu(hyps, refs, 4), texts);
  };

  const auto [bleu1, texts1] = run_once("a");
  std::ostringstream ss;
  ss << "training-set greedy BLEU-4 " << bleu1 << " below 0.9";
  require(bleu1 >= 0.9, ss.str());

  const auto [bleu2, texts2] = run_once("b");
  require(bleu1 == bleu2 && texts1 == texts2, "overfit run must be deterministic under the seed");
}

void criterion_beam_divergence() {
  // 10 families of identical sources; 30% of targets share a fixed 5-token
  // prefix (one degenerate question), the rest are family-unique questions
  const std::string degenerate = "are there any other interesting aspects about this ?";
  const std::string prefix = "are there any other interesting";
  const std::vector<std::string> uniques = {"garden", "bridge", "harbor", "violin", "comet",
                                            "engine", "winter"};
  std::vector<deriv::CuriosityTriplet> data;
  std::vector<std::string> family_sources;
  for (int f = 0; f < 10; ++f) {
    const std::string source = "chapter " + std::to_string(f) + " about topic " + std::to_string(f);
    family_sources.push_back(source);
    for (int i = 0; i < 10; ++i) {
      deriv::CuriosityTriplet t;
      t.source = source;
      t.context = "shared background text for every family .";
      t.target = i < 3 ? degenerate
                       : "what was the name of the " + uniques[static_cast<size_t>(i - 3)] + " " +
                             std::to_string(f) + " ?";
      data.push_back(std::move(t));
    }
  }

  auto m = overfit_model(data, 777);
  train::train_supervised(m, data, {},
                          overfit_options(testutil::temp_dir("divergence"), 150, 17));

  std::vector<std::string> k1_questions, k5_questions;
  for (const auto& source : family_sources) {
    const auto src = m.encode_source(source);
    k1_questions.push_back(m.beam(src, 1).text);
    k5_questions.push_back(m.beam(src, 5).text);
  }
  const double rate_k1 = analysis::prefix_rate(k1_questions, prefix);
  const double rate_k5 = analysis::prefix_rate(k5_questions, prefix);
  std::ostringstream ss;
  ss << "prefix rate at k=5 (" << rate_k5 << ") must exceed k=1 (" << rate_k1 << ")";
  require(rate_k5 > rate_k1, ss.str());
}

void criterion_spearman() {
  const auto worked = metrics::spearman({1, 2, 3}, {3, 1, 2});
  require_close(worked.rho, -0.5, 1e-9, "worked example");

  std::mt19937_64 rng(515);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 3 + rng() % 28;
    std::vector<double> x(n), y(n);
    do {
      for (size_t i = 0; i < n; ++i) {
        x[i] = static_cast<double>(rng() % 7);
        y[i] = static_cast<double>(rng() % 7);
      }
    } while (std::equal(x.begin() + 1, x.end(), x.begin()) ||
             std::equal(y.begin() + 1, y.end(), y.begin()));

    // brute-force oracle: counting ranks, direct Pearson
    auto ranks = [n](const std::vector<double>& v) {
      std::vector<double> r(n);
      for (size_t i = 0; i < n; ++i) {
        int less = 0, equal = 0;
        for (size_t j = 0; j < n; ++j) {
          if (v[j] < v[i]) ++less;
          if (v[j] == v[i]) ++equal;
        }
        r[i] = less + (equal + 1) / 2.0;
      }
      return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
      sx += rx[i];
      sy += ry[i];
      sxx += rx[i] * rx[i];
      syy += ry[i] * ry[i];
      sxy += rx[i] * ry[i];
    }
    const double oracle = (n * sxy - sx * sy) /
                          std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
    require_close(metrics::spearman(x, y).rho, oracle, 1e-9, "oracle mismatch");
  }
}

void criterion_stub_scorer() {
  // determinism across processes via the CLI
  int code = 0;
  const auto out1 = testutil::run_cli("stub-scorer-check --n 150 --seed 9", &code);
  require(code == 0, "scorer check must exit cleanly");
  const auto out2 = testutil::run_cli("stub-scorer-check --n 150 --seed 9", &code);
  require(code == 0, "scorer check must exit cleanly");
  require(out1 == out2 && out1.find("digest=") != std::string::npos,
          "stub scorer output must be identical across processes");

  // monotonicity under context extension on 500 seeded cases
  const qa::StubScorer stub;
  std::mt19937_64 rng(808);
  const std::vector<std::string> words = {"tesla",  "bridge", "london", "physics", "album",
                                          "1879",   "battle", "engine", "school",  "harbor"};
  auto make_text = [&](int n) {
    std::string s;
    for (int i = 0; i < n; ++i) s += (i ? " " : "") + words[rng() % words.size()];
    return s;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const std::string q = "what about " + make_text(3) + " ?";
    const std::string ctx = make_text(5);
    const double base = stub.score(q, ctx).probability;
    const double extended = stub.score(q, ctx + " " + make_text(4)).probability;
    require(extended >= base, "context extension must not lower the stub probability");
  }

  // wire-protocol round-trip against the loopback server
  const qa::StubScorerServer server;
  qa::HttpScorerConfig cfg;
  cfg.endpoint = server.endpoint();
  cfg.max_retries = 0;
  const qa::HttpScorer client(cfg);
  const std::vector<qa::BatchItem> cases = {
      {"who founded AAAI in 1979", "AAAI was founded in 1979"},
      {"where is the tesla bridge", "noise tesla noise bridge london end"},
      {"what is it", "no content words here"},
      {"what about tesla", ""}};
  for (const auto& item : cases) {
    const auto remote = client.score(item.question, item.context);
    const auto local = stub.score(item.question, item.context);
    require(remote.probability == local.probability && remote.answer_text == local.answer_text,
            "/score round-trip mismatch");
  }
  const auto remote_batch = client.score_batch(cases);
  const auto local_batch = stub.score_batch(cases);
  for (size_t i = 0; i < cases.size(); ++i)
    require(remote_batch[i].ok == local_batch[i].ok &&
                remote_batch[i].score.probability == local_batch[i].score.probability,
            "/score_batch round-trip mismatch");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    std::function<void()> body;
  };
  const std::vector<Criterion> criteria = {
      {1, "BLEU oracle cases", criterion_bleu_oracle},
      {2, "Self-BLEU extremes and permutation invariance", criterion_self_bleu},
      {3, "derivation properties on 200 synthetic paragraphs", criterion_derivation_properties},
      {4, "Tesla fixture keep/filter outcome", criterion_tesla_fixture},
      {5, "balanced reward identity on 1000 stub cases", criterion_reward_identity},
      {6, "analytic vs numeric gradients of the supervised loss", criterion_gradient_check},
      {7, "mixed-loss degeneracies and linearity", criterion_mixed_loss},
      {8, "REINFORCE sign check on a one-parameter policy", criterion_reinforce_sign},
      {9, "beam/greedy equivalence and enumeration oracle", criterion_decoding},
      {10, "overfit capacity: greedy BLEU-4 >= 0.9 on the toy corpus", criterion_overfit_capacity},
      {11, "beam divergence on shared-prefix targets", criterion_beam_divergence},
      {12, "Spearman against the brute-force rank oracle", criterion_spearman},
      {13, "stub scorer determinism, monotonicity, wire round-trip", criterion_stub_scorer},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string error;
    try {
      criterion.body();
    } catch (const std::exception& e) {
      error = e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    char line[256];
    if (error.empty()) {
      std::snprintf(line, sizeof(line), "[PASS] %2d. %s (%.2fs)", criterion.id,
                    criterion.name.c_str(), seconds);
    } else {
      std::snprintf(line, sizeof(line), "[FAIL] %2d. %s (%.2fs): %s", criterion.id,
                    criterion.name.c_str(), seconds, error.c_str());
      ++failures;
    }
    std::cout << line << std::endl;
  }
  if (failures > 0) std::cout << failures << " criterion(s) failed" << std::endl;
  return failures == 0 ? 0 : 1;
}
