#pragma once

// Supervised teacher-forcing training, mixed supervised+REINFORCE training
// with the curiosity reward, and the pretrain-then-finetune schedule. All
// stochasticity derives from (seed, epoch, step), so runs are reproducible
// and checkpoint resume is exact.

#include <optional>
#include <string>
#include <vector>

#include "cqg/autograd.hpp"
#include "cqg/metrics.hpp"
#include "cqg/model.hpp"

namespace cqg {
namespace train {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  int batch_size = 64;
  AdamConfig adam;
  double gamma = 0.99;  // RL share of the mixed loss
  int epochs = 20;
  int pretrain_epochs = 5;
  std::optional<double> grad_clip_norm = 1.0;
  uint64_t seed = 0;
  int checkpoint_every = 0;  // steps; 0 keeps only per-epoch checkpoints
  int patience = 5;          // early stopping on validation loss
  int log_every = 10;
  bool abort_on_scorer_failure = false;

  void validate() const;
};

// A batch in padded matrix form plus the exact per-sample encodings the
// model consumes. PAD positions are excluded from every loss via the masks.
struct TrainingBatch {
  std::vector<model::EncodedSource> sources;
  std::vector<std::vector<int>> targets_ext;  // EOS-terminated, extended ids
  std::vector<std::string> source_texts;      // s_x, for the reward
  std::vector<std::string> context_texts;     // P', for the reward

  std::vector<std::vector<int>> source_padded;
  std::vector<std::vector<int>> target_padded;
  std::vector<std::vector<uint8_t>> source_mask;
  std::vector<std::vector<uint8_t>> target_mask;

  size_t size() const { return sources.size(); }
};

TrainingBatch make_batch(const model::TransformerQG& model,
                         const std::vector<deriv::CuriosityTriplet>& triplets,
                         const std::vector<size_t>& indices);

// Negative log-likelihood under teacher forcing, summed over non-PAD target
// positions and averaged over the batch. gate_override mirrors the forward
// hook (1 forces the vocabulary softmax, 0 forces pure copying).
ad::Var loss_ml_graph(const model::TransformerQG& model, ad::Tape& tape, const TrainingBatch& batch,
                      std::optional<double> gate_override = {});
double loss_ml(const model::TransformerQG& model, const TrainingBatch& batch,
               std::optional<double> gate_override = {});

// The self-critical REINFORCE objective for one sequence:
//   (reward_greedy - reward_sampled) * sum_log_prob
// Rewards are constants with respect to gradients.
ad::Var reinforce_term(ad::Tape& tape, ad::Var sum_log_prob, double reward_greedy,
                       double reward_sampled);

// Raised when the reward scorer fails for a batch; the training loop skips
// the batch or aborts depending on configuration.
class ScorerFailure : public std::runtime_error {
 public:
  explicit ScorerFailure(const std::string& what) : std::runtime_error(what) {}
};

struct RlOutcome {
  ad::Var loss;  // valid only when built on a gradient tape
  double value = 0.0;
  double mean_reward_greedy = 0.0;
  double mean_reward_sampled = 0.0;
};

RlOutcome loss_rl_graph(const model::TransformerQG& model, ad::Tape& tape,
                        const TrainingBatch& batch, const qa::Scorer& scorer, uint64_t step_seed);
double loss_rl(const model::TransformerQG& model, const TrainingBatch& batch,
               const qa::Scorer& scorer, uint64_t step_seed);

struct MixedOutcome {
  ad::Var loss;
  double value = 0.0;
  double ml_value = 0.0;
  double rl_value = 0.0;
  double mean_reward_greedy = 0.0;
  double mean_reward_sampled = 0.0;
};

// gamma * L_rl + (1 - gamma) * L_ml; the endpoints short-circuit to the pure
// losses so the degenerate cases are bit-identical.
MixedOutcome loss_mixed_graph(const model::TransformerQG& model, ad::Tape& tape,
                              const TrainingBatch& batch, const qa::Scorer* scorer, double gamma,
                              uint64_t step_seed);
double loss_mixed(const model::TransformerQG& model, const TrainingBatch& batch,
                  const qa::Scorer* scorer, double gamma, uint64_t step_seed);

// Global-norm gradient clip followed by one Adam update; `t` is the 1-based
// update count used for bias correction.
void apply_update(std::vector<model::Parameter>& params, const std::vector<const ad::Mat*>& grads,
                  const AdamConfig& adam, long t, std::optional<double> clip_norm);

struct TrainOptions {
  TrainConfig config;
  std::string out_dir;
  std::string phase_name = "main";
  std::string resume_from;  // checkpoint path; empty starts fresh
};

struct TrainSummary {
  std::string last_checkpoint;
  std::string best_checkpoint;
  double best_val_loss = 0.0;
  bool has_validation = false;
  long global_steps = 0;
  int epochs_run = 0;
  double final_train_loss = 0.0;
  std::vector<double> epoch_mean_rewards_greedy;  // RL runs only
};

// Mixed training; scorer may be null when config.gamma == 0.
TrainSummary train_mixed(model::TransformerQG& model,
                         const std::vector<deriv::CuriosityTriplet>& train_set,
                         const std::vector<deriv::CuriosityTriplet>& validation_set,
                         const qa::Scorer* scorer, const TrainOptions& options);

TrainSummary train_supervised(model::TransformerQG& model,
                              const std::vector<deriv::CuriosityTriplet>& train_set,
                              const std::vector<deriv::CuriosityTriplet>& validation_set,
                              const TrainOptions& options);

// Phase 1: supervised on traditional QG pairs (source = the answer
// sentence). Phase 2: optimizer state reset, then mixed training on the
// curiosity triplets. The phase boundary is recorded in the metrics log.
TrainSummary pretrain_then_finetune(model::TransformerQG& model,
                                    const std::vector<deriv::CuriosityTriplet>& standard_pairs,
                                    const std::vector<deriv::CuriosityTriplet>& curiosity_set,
                                    const std::vector<deriv::CuriosityTriplet>& curiosity_validation,
                                    const qa::Scorer* scorer, const TrainOptions& options);

// Traditional QG pairs from a standard corpus: source = s_a, target = q.
std::vector<deriv::CuriosityTriplet> standard_qg_pairs(const corpus::Corpus& corpus);

// Deterministic seed mixing for per-(epoch, step, sample) randomness.
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace train
}  // namespace cqg
