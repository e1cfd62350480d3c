#pragma once

// Copy-augmented Transformer encoder-decoder for question generation, plus
// greedy, beam and ancestral-sampling decoders. Decoders are written against
// an abstract next-token distribution so they can be exercised on hand-built
// tables as well as on the trained model.

#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cqg/autograd.hpp"
#include "cqg/derivation.hpp"

namespace cqg {
namespace model {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);  // full list incl. reserved

  // Frequency-ordered vocabulary over the metric-tokenized sources and
  // targets; tokens below min_freq are dropped and the list is capped.
  static Vocabulary build(const std::vector<deriv::CuriosityTriplet>& data, int min_freq = 2,
                          int max_size = 30000);
  static Vocabulary build_from_texts(const std::vector<std::string>& texts, int min_freq = 2,
                                     int max_size = 30000);

  int id_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_of(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ModelConfig {
  int num_blocks = 2;
  int d_model = 256;
  int d_ff = 512;
  int num_heads = 2;
  int vocab_size = 0;
  int max_source_len = 200;
  int max_target_len = 40;
  uint64_t seed = 0;

  void validate() const;
};

// The original larger preset reported to behave equivalently.
ModelConfig large_preset(ModelConfig base);

// A source string encoded for the model. Out-of-vocabulary source tokens get
// per-sample extended ids vocab_size, vocab_size + 1, ... in order of first
// occurrence.
struct EncodedSource {
  std::vector<int> ids;                   // embedding ids (OOV -> kUnk)
  std::vector<int> ext_ids;               // extended-vocabulary ids
  std::vector<std::string> oov_surfaces;  // surface per extended id beyond V
  std::vector<std::string> tokens;
};

enum class DecodeMode { greedy, beam, sample };
std::string to_string(DecodeMode m);

struct GenerationResult {
  std::vector<int> token_ids;  // extended ids; includes the terminal EOS when emitted
  std::string text;
  double log_prob = 0.0;
  DecodeMode decode_mode = DecodeMode::greedy;
  int beam_size = 1;
};

// Next-token distribution over an extended vocabulary, conditioned on the
// emitted prefix (without BOS).
class SequenceDistribution {
 public:
  virtual ~SequenceDistribution() = default;
  virtual int extended_vocab_size() const = 0;
  virtual int eos_id() const = 0;
  virtual int pad_id() const { return -1; }  // negative: nothing to exclude
  virtual std::vector<double> next_distribution(const std::vector<int>& prefix) const = 0;
};

// Argmax decoding, ties broken toward the lowest token id. Never emits PAD.
GenerationResult greedy_decode(const SequenceDistribution& dist, int max_len);

// Length-unnormalized beam search over summed log-probabilities. Finished
// hypotheses are held aside; returns the best finished hypothesis, else the
// best unfinished one at max_len. Ties break by score, then lexicographic
// token-id sequence.
GenerationResult beam_search(const SequenceDistribution& dist, int k, int max_len);

// One token at a time from the per-step distribution, reproducible under the
// seed. The recorded log-probability is taken from the unmodified
// distribution.
GenerationResult sample_sequence(const SequenceDistribution& dist, int max_len, uint64_t seed);

struct Parameter {
  std::string name;
  ad::Mat value;
  ad::Mat adam_m;
  ad::Mat adam_v;
};

class TransformerQG {
 public:
  TransformerQG(ModelConfig config, Vocabulary vocab);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  EncodedSource encode_source(const std::string& text) const;
  // Token ids in the extended space, EOS-terminated, truncated to the
  // configured maximum.
  std::vector<int> encode_target(const EncodedSource& src, const std::string& text) const;
  std::string decode_text(const EncodedSource& src, const std::vector<int>& ext_ids) const;

  struct GraphOutput {
    ad::Var vocab_probs;     // T x V, rows sum to 1
    ad::Var copy_attention;  // T x S, rows sum to 1 (final block, head-averaged)
    ad::Var gate;            // T x 1 in (0, 1)
  };
  // Teacher-forced forward pass; decoder_input_ids are embedding-space ids
  // (BOS-prefixed). Row t scores the token following decoder_input_ids[0..t].
  GraphOutput build_graph(ad::Tape& tape, const std::vector<int>& source_ids,
                          const std::vector<int>& decoder_input_ids,
                          std::optional<double> gate_override = {}) const;

  // Per-step distributions over the extended vocabulary for BOS + prefix;
  // returns prefix.size() + 1 rows of size V + #OOV.
  std::vector<std::vector<double>> forward(const EncodedSource& src,
                                           const std::vector<int>& target_prefix_ext,
                                           std::optional<double> gate_override = {}) const;

  // Distribution view bound to one source, feeding the generic decoders.
  std::unique_ptr<SequenceDistribution> conditioned(const EncodedSource& src,
                                                    std::optional<double> gate_override = {}) const;

  GenerationResult greedy(const EncodedSource& src) const;
  GenerationResult beam(const EncodedSource& src, int k) const;
  GenerationResult sample(const EncodedSource& src, uint64_t seed) const;

 private:
  Parameter& add_param(const std::string& name, int rows, int cols);
  void init_params();

  ModelConfig config_;
  Vocabulary vocab_;
  std::vector<Parameter> params_;
  ad::Mat positional_;  // precomputed sinusoidal table

  // parameter lookup by name, filled by add_param
  std::unordered_map<std::string, int> param_index_;
  const ad::Mat& p(const std::string& name) const;
};

// Checkpoint files carry the config, vocabulary and parameters, versioned
// with a format tag; optimizer state rides along when a training position is
// given.
struct TrainingPosition {
  bool has_optimizer = false;
  long epoch = 0;
  long step_in_epoch = 0;
  long global_step = 0;
};

void save_checkpoint(const TransformerQG& model, const std::string& path,
                     const TrainingPosition* position = nullptr);
TransformerQG load_checkpoint(const std::string& path, TrainingPosition* position = nullptr);

}  // namespace model
}  // namespace cqg
