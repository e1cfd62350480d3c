#pragma once

// Construction of curiosity triplets {source sentence(s), stripped context,
// target question} from a corpus, under the conversational (x < a) or the
// standard (x != a, optionally entity-constrained) regime.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cqg/corpus.hpp"

namespace cqg {
namespace deriv {

enum class ConstraintMode { conversational, unconstrained, ner_constrained };

std::string to_string(ConstraintMode mode);
ConstraintMode constraint_mode_from_string(const std::string& s);

struct TripletMeta {
  std::string article_id;
  int paragraph_index = 0;
  std::vector<int> source_sentence_indices;
  int answer_sentence_index = 0;
  ConstraintMode constraint_mode = ConstraintMode::unconstrained;
};

struct CuriosityTriplet {
  std::string source;   // s_x, possibly a concatenation of sentences
  std::string context;  // P', the paragraph stripped of s_a
  std::string target;   // y, the reference question
  TripletMeta meta;
};

enum class EntityLabel { NAME, NUMBER, DATE_TOKEN };

struct Entity {
  std::string surface;
  Span span;  // into the tagged text
  EntityLabel label = EntityLabel::NAME;
};

// Pluggable tagger. `pool` carries sibling texts (paragraph plus its
// questions) consulted by context-sensitive rules; the tagged text itself is
// always part of its own pool.
class EntityTagger {
 public:
  virtual ~EntityTagger() = default;
  virtual std::vector<Entity> tag(const std::string& text,
                                  const std::vector<std::string>& pool) const = 0;
};

// Built-in deterministic tagger. An entity is a maximal run of capitalized
// tokens away from sentence starts (a sentence-initial token joins only if it
// recurs capitalized mid-sentence somewhere in the pool), or any token
// containing a digit. Digit tokens are labeled NUMBER; 4-digit values in
// [1000, 2100] additionally emit a DATE_TOKEN entity over the same span.
class HeuristicTagger : public EntityTagger {
 public:
  std::vector<Entity> tag(const std::string& text,
                          const std::vector<std::string>& pool) const override;
};

// Convenience wrapper over the built-in tagger with an empty pool.
std::vector<Entity> extract_entities(const std::string& text);

struct DeriveStats {
  int qa_pairs_seen = 0;
  int triplets_emitted = 0;
  int skipped = 0;           // degenerate inputs: a == 0, single-sentence paragraphs
  int filtered_by_ner = 0;   // constrained mode only
};

// Concatenation of all sentences except s_a, original order, single-space
// joined. Throws std::invalid_argument for single-sentence paragraphs and
// std::out_of_range for a bad index.
std::string build_stripped_context(const corpus::Paragraph& paragraph, int answer_sentence);

// Conversational regime: one triplet per QA pair with answer_sentence_index
// > 0, source = sentences 0..a-1 joined by single spaces.
std::vector<CuriosityTriplet> derive_conversational(const corpus::Corpus& corpus,
                                                    DeriveStats* stats = nullptr);

// Standard regime: one triplet per (QA pair, sentence x != a). When
// `constrained`, keep only triplets where every entity surface of the
// question also occurs among the entity surfaces of the source sentence
// (case-insensitive full-surface match).
std::vector<CuriosityTriplet> derive_standard(const corpus::Corpus& corpus, bool constrained,
                                              const EntityTagger& tagger,
                                              DeriveStats* stats = nullptr);

// Deterministic article-level split: returns (remaining, held_out) where
// held_out has exactly n_articles articles. Original article order is
// preserved on both sides.
std::pair<corpus::Corpus, corpus::Corpus> make_article_split(const corpus::Corpus& corpus,
                                                             int n_articles, uint64_t seed);

// Triplet JSONL round-trip: {source, context, target, meta{...}} per line.
void write_triplets_jsonl(const std::vector<CuriosityTriplet>& triplets, const std::string& path);
std::vector<CuriosityTriplet> read_triplets_jsonl(const std::string& path);

// Stats sidecar in the per-split count layout.
void write_stats_sidecar(const DeriveStats& stats, const std::string& split_name,
                         ConstraintMode mode, const std::string& path);

}  // namespace deriv
}  // namespace cqg
