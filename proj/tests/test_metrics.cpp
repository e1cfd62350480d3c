#include <doctest.h>

#include <cmath>
#include <random>

#include "cqg/metrics.hpp"
#include "helpers.hpp"

using namespace cqg;
using metrics::TokenSeq;

namespace {

TokenSeq toks(const std::string& s) { return text::metric_tokenize(s); }

// brute-force rank oracle: counting-based average ranks + direct Pearson
double spearman_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
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
  const double num = n * sxy - sx * sy;
  const double den = std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  return num / den;
}

}  // namespace

TEST_CASE("corpus_bleu hand-derived oracle cases") {
  // identical hypothesis and reference
  CHECK(metrics::corpus_bleu({toks("the cat sat on the mat")}, {toks("the cat sat on the mat")}, 4) ==
        doctest::Approx(1.0).epsilon(1e-12));

  // short hypothesis: precision 1, brevity penalty exp(1 - 3/2)
  CHECK(metrics::corpus_bleu({toks("the cat")}, {toks("the cat sat")}, 1) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-9));

  // clipping: "the the the" against "the cat" gives 1/3, no penalty (c > r)
  CHECK(metrics::corpus_bleu({toks("the the the")}, {toks("the cat")}, 1) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-9));

  // bigram case: precisions 1, penalty exp(1 - 4/3)
  CHECK(metrics::corpus_bleu({toks("the cat sat")}, {toks("the cat sat on")}, 2) ==
        doctest::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(1e-9));

  // corpus pooling across two pairs: p1 = 1, r = 4, c = 3
  CHECK(metrics::corpus_bleu({toks("a b"), toks("c")}, {toks("a b"), toks("c d")}, 1) ==
        doctest::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(1e-9));

  // mixed clipping with bigrams: p1 = 2/3, p2 = 1/2, BP = 1
  CHECK(metrics::corpus_bleu({toks("a a b")}, {toks("a b b")}, 2) ==
        doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-9));

  // zero n-gram overlap
  CHECK(metrics::corpus_bleu({toks("x y z")}, {toks("a b c")}, 1) == 0.0);
}

TEST_CASE("corpus_bleu errors and bounds") {
  CHECK_THROWS_AS(metrics::corpus_bleu({}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(metrics::corpus_bleu({toks("a")}, {}, 1), std::invalid_argument);
  CHECK_THROWS_AS(metrics::corpus_bleu({toks("a")}, {toks("a")}, 0), std::invalid_argument);
  CHECK_THROWS_AS(metrics::corpus_bleu({toks("a")}, {toks("a")}, 5), std::invalid_argument);

  std::mt19937_64 rng(4);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e"};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<TokenSeq> hyps, refs;
    for (int i = 0; i < 4; ++i) {
      TokenSeq h, r;
      for (int j = 0; j < 3 + static_cast<int>(rng() % 5); ++j) h.push_back(vocab[rng() % 5]);
      for (int j = 0; j < 3 + static_cast<int>(rng() % 5); ++j) r.push_back(vocab[rng() % 5]);
      hyps.push_back(h);
      refs.push_back(r);
    }
    for (int n = 1; n <= 3; ++n) {
      const double score = metrics::corpus_bleu(hyps, refs, n);
      CHECK(score >= 0.0);
      CHECK(score <= 1.0);
      // identity on hypotheses of length >= n
      CHECK(metrics::corpus_bleu(hyps, hyps, n) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("bleu is invariant under consistent token relabeling") {
  std::mt19937_64 rng(17);
  const std::vector<std::string> vocab = {"a", "b", "c", "d"};
  const std::vector<std::string> relabeled = {"w", "x", "y", "z"};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenSeq> hyps, refs, hyps2, refs2;
    for (int i = 0; i < 3; ++i) {
      TokenSeq h, r, h2, r2;
      for (int j = 0; j < 4 + static_cast<int>(rng() % 4); ++j) {
        const size_t k = rng() % vocab.size();
        h.push_back(vocab[k]);
        h2.push_back(relabeled[k]);
      }
      for (int j = 0; j < 4 + static_cast<int>(rng() % 4); ++j) {
        const size_t k = rng() % vocab.size();
        r.push_back(vocab[k]);
        r2.push_back(relabeled[k]);
      }
      hyps.push_back(h);
      refs.push_back(r);
      hyps2.push_back(h2);
      refs2.push_back(r2);
    }
    for (int n = 1; n <= 4; ++n)
      CHECK(metrics::corpus_bleu(hyps, refs, n) == metrics::corpus_bleu(hyps2, refs2, n));
  }
}

TEST_CASE("self_bleu extremes and invariances") {
  std::vector<TokenSeq> identical(10, toks("what is the meaning of this"));
  CHECK(metrics::self_bleu(identical, 4, 1000, 0) == doctest::Approx(1.0).epsilon(1e-12));

  // pairwise-disjoint vocabularies, unsmoothed
  std::vector<TokenSeq> disjoint = {toks("a b c"), toks("d e f"), toks("g h i")};
  CHECK(metrics::self_bleu(disjoint, 1, 1000, 0) == 0.0);

  CHECK_THROWS_AS(metrics::self_bleu({toks("only one")}, 1, 1000, 0), std::invalid_argument);

  // permutation invariance when the cap covers the list
  std::mt19937_64 rng(23);
  std::vector<TokenSeq> base = {toks("the cat sat"),       toks("a dog ran fast"),
                                toks("the cat ran"),       toks("birds fly south"),
                                toks("a cat and a dog"),   toks("fish swim")};
  const double reference_score = metrics::self_bleu(base, 2, 1000, 0);
  for (int shuffle = 0; shuffle < 20; ++shuffle) {
    auto permuted = base;
    for (size_t i = permuted.size(); i > 1; --i)
      std::swap(permuted[i - 1], permuted[rng() % i]);
    CHECK(metrics::self_bleu(permuted, 2, 1000, 0) == doctest::Approx(reference_score).epsilon(1e-12));
  }

  // capped evaluation is deterministic under the seed
  std::vector<TokenSeq> many;
  for (int i = 0; i < 50; ++i) many.push_back(toks("sentence number " + std::to_string(i % 7)));
  CHECK(metrics::self_bleu(many, 2, 10, 99) == metrics::self_bleu(many, 2, 10, 99));

  // smoothing keeps zero-overlap scores positive but tiny
  metrics::BleuConfig smooth;
  smooth.smooth_sentence_level = true;
  const double smoothed = metrics::self_bleu(disjoint, 1, 1000, 0, smooth);
  CHECK(smoothed > 0.0);
  CHECK(smoothed < 1e-6);
}

TEST_CASE("qa metrics against the stub scorer") {
  const qa::StubScorer scorer;

  // all content words present
  CHECK(metrics::qa_source("who founded AAAI in 1979", "AAAI was founded in 1979", scorer) == 1.0);
  // no overlap
  CHECK(metrics::qa_source("who founded AAAI in 1979", "the weather is nice", scorer) == 0.0);
  // 2 of 4 content words
  CHECK(metrics::qa_context("who founded the AAAI organization in 1979", "aaai 1979", scorer) == 0.5);

  CHECK_THROWS_AS(metrics::qa_source("", "text", scorer), std::invalid_argument);
  CHECK_THROWS_AS(metrics::qa_context("q", "", scorer), std::invalid_argument);
}

TEST_CASE("curiosity reward equals the score difference exactly") {
  const qa::StubScorer scorer;
  CHECK(metrics::curiosity_reward("who founded AAAI in 1979", "the weather is nice",
                                  "AAAI was founded in 1979", scorer) == 1.0);
  CHECK(metrics::curiosity_reward("who founded AAAI in 1979", "AAAI was founded in 1979",
                                  "the weather is nice", scorer) == -1.0);

  std::mt19937_64 rng(31);
  const std::vector<std::string> words = {"tesla", "bridge", "london", "physics", "album",
                                          "1879",  "battle", "engine", "school",  "harbor"};
  for (int trial = 0; trial < 200; ++trial) {
    auto make_text = [&](int n) {
      std::string s;
      for (int i = 0; i < n; ++i) s += (i ? " " : "") + words[rng() % words.size()];
      return s;
    };
    const std::string q = "what about " + make_text(4) + " ?";
    const std::string src = make_text(6);
    const std::string ctx = make_text(8);
    const double reward = metrics::curiosity_reward(q, src, ctx, scorer);
    const double expected = metrics::qa_context(q, ctx, scorer) - metrics::qa_source(q, src, scorer);
    CHECK(reward == doctest::Approx(expected).epsilon(1e-15));
    CHECK(reward >= -1.0);
    CHECK(reward <= 1.0);
  }
}

TEST_CASE("spearman worked examples and errors") {
  const auto perfect = metrics::spearman({1, 2, 3, 4}, {10, 20, 30, 40});
  CHECK(perfect.rho == doctest::Approx(1.0).epsilon(1e-12));

  const auto reversed = metrics::spearman({1, 2, 3, 4}, {4, 3, 2, 1});
  CHECK(reversed.rho == doctest::Approx(-1.0).epsilon(1e-12));

  const auto worked = metrics::spearman({1, 2, 3}, {3, 1, 2});
  CHECK(worked.rho == doctest::Approx(-0.5).epsilon(1e-9));
  // with df = 1 the t-distribution is Cauchy: p = 2 (1 - (1/2 + atan(t)/pi))
  const double t = -0.5 * std::sqrt(1.0 / (1.0 - 0.25));
  const double expected_p = 2.0 * (0.5 - std::atan(std::fabs(t)) / M_PI);
  CHECK(worked.p_value == doctest::Approx(expected_p).epsilon(1e-9));

  CHECK_THROWS_AS(metrics::spearman({1, 2}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(metrics::spearman({1, 2, 3}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(metrics::spearman({5, 5, 5}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("spearman matches the brute-force oracle on seeded vectors with ties") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 3 + rng() % 28;
    std::vector<double> x(n), y(n);
    do {
      for (size_t i = 0; i < n; ++i) {
        x[i] = static_cast<double>(rng() % 8);  // small range forces ties
        y[i] = static_cast<double>(rng() % 8);
      }
    } while (std::equal(x.begin() + 1, x.end(), x.begin()) ||
             std::equal(y.begin() + 1, y.end(), y.begin()));
    const auto result = metrics::spearman(x, y);
    CHECK(result.rho == doctest::Approx(spearman_oracle(x, y)).epsilon(1e-9));
    CHECK(result.p_value >= 0.0);
    CHECK(result.p_value <= 1.0);
  }
}

TEST_CASE("spearman respects monotone maps and symmetry") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(12), y(12);
    for (auto& v : x) v = static_cast<double>(rng() % 1000) / 10.0;
    for (auto& v : y) v = static_cast<double>(rng() % 1000) / 10.0;
    if (std::equal(x.begin() + 1, x.end(), x.begin())) continue;

    std::vector<double> fx;
    for (const double v : x) fx.push_back(std::exp(v / 50.0) + 3.0 * v);  // strictly increasing
    CHECK(metrics::spearman(x, fx).rho == doctest::Approx(1.0).epsilon(1e-12));

    const auto ab = metrics::spearman(x, y);
    const auto ba = metrics::spearman(y, x);
    CHECK(ab.rho == doctest::Approx(ba.rho).epsilon(1e-12));
    CHECK(ab.p_value == doctest::Approx(ba.p_value).epsilon(1e-12));
  }
}

TEST_CASE("metric table rendering scales by 100") {
  metrics::MetricReport r;
  r.system_name = "base";
  r.bleu = {{1, 0.3194}, {2, 0.1445}};
  r.self_bleu = {{1, 0.9984}, {2, 0.9964}};
  r.qa_source = 0.4886;
  r.qa_context = 0.4832;
  r.has_qa = true;
  r.sample_count = 10;

  const std::string table = metrics::render_metric_table({r});
  CHECK(table.find("31.94") != std::string::npos);
  CHECK(table.find("99.84") != std::string::npos);
  CHECK(table.find("48.86") != std::string::npos);
  CHECK(table.find("BLEU1") != std::string::npos);
  CHECK(table.find("Self-B2") != std::string::npos);
  CHECK(table.find("QA_context") != std::string::npos);

  const auto dir = testutil::temp_dir("metric_csv");
  metrics::write_metric_csv({r}, dir + "/m.csv");
  const auto csv = testutil::read_file(dir + "/m.csv");
  CHECK(csv.find("metric,base") != std::string::npos);
  CHECK(csv.find("sample_count,10") != std::string::npos);
}
