#include "cqg/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>

namespace cqg {
namespace train {

using ad::Mat;
using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must lie in [0, 1]");
  if (epochs < 0 || pretrain_epochs < 0) throw std::invalid_argument("epoch counts must be non-negative");
  if (adam.lr <= 0.0) throw std::invalid_argument("learning rate must be positive");
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  // splitmix64 over the combined words
  uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

TrainingBatch make_batch(const model::TransformerQG& m,
                         const std::vector<deriv::CuriosityTriplet>& triplets,
                         const std::vector<size_t>& indices) {
  TrainingBatch batch;
  size_t max_src = 0, max_tgt = 0;
  for (const size_t idx : indices) {
    const auto& t = triplets.at(idx);
    model::EncodedSource src = m.encode_source(t.source);
    if (src.ids.empty()) src = m.encode_source("<unk>");  // degenerate but non-empty
    std::vector<int> tgt = m.encode_target(src, t.target);
    max_src = std::max(max_src, src.ids.size());
    max_tgt = std::max(max_tgt, tgt.size());
    batch.sources.push_back(std::move(src));
    batch.targets_ext.push_back(std::move(tgt));
    batch.source_texts.push_back(t.source);
    batch.context_texts.push_back(t.context);
  }
  for (size_t i = 0; i < batch.sources.size(); ++i) {
    std::vector<int> sp(max_src, model::Vocabulary::kPad);
    std::vector<uint8_t> sm(max_src, 0);
    for (size_t j = 0; j < batch.sources[i].ext_ids.size(); ++j) {
      sp[j] = batch.sources[i].ext_ids[j];
      sm[j] = 1;
    }
    std::vector<int> tp(max_tgt, model::Vocabulary::kPad);
    std::vector<uint8_t> tm(max_tgt, 0);
    for (size_t j = 0; j < batch.targets_ext[i].size(); ++j) {
      tp[j] = batch.targets_ext[i][j];
      tm[j] = 1;
    }
    batch.source_padded.push_back(std::move(sp));
    batch.source_mask.push_back(std::move(sm));
    batch.target_padded.push_back(std::move(tp));
    batch.target_mask.push_back(std::move(tm));
  }
  return batch;
}

namespace {

// decoder input ids (embedding space) for an EOS-terminated extended target
std::vector<int> decoder_input_for(const model::TransformerQG& m, const std::vector<int>& target_ext) {
  std::vector<int> input{model::Vocabulary::kBos};
  for (size_t i = 0; i + 1 < target_ext.size(); ++i)
    input.push_back(target_ext[i] < m.config().vocab_size ? target_ext[i] : model::Vocabulary::kUnk);
  return input;
}

// sum over steps of log p(target_ext[t]) under teacher forcing
Var sequence_log_prob(const model::TransformerQG& m, Tape& tape, const model::EncodedSource& src,
                      const std::vector<int>& target_ext,
                      std::optional<double> gate_override = {}) {
  const auto g = m.build_graph(tape, src.ids, decoder_input_for(m, target_ext), gate_override);
  std::vector<Var> log_probs;
  log_probs.reserve(target_ext.size());
  for (size_t r = 0; r < target_ext.size(); ++r) {
    const Var prob = tape.mixture_pick(g.vocab_probs, g.copy_attention, g.gate, static_cast<int>(r),
                                       src.ext_ids, target_ext[r], m.config().vocab_size);
    log_probs.push_back(tape.log_elem(prob));
  }
  return tape.sum_scalars(log_probs);
}

}  // namespace

Var loss_ml_graph(const model::TransformerQG& m, Tape& tape, const TrainingBatch& batch,
                  std::optional<double> gate_override) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  std::vector<Var> per_sample;
  per_sample.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    if (batch.targets_ext[i].empty()) throw std::invalid_argument("empty target sequence");
    per_sample.push_back(tape.scale(
        sequence_log_prob(m, tape, batch.sources[i], batch.targets_ext[i], gate_override), -1.0));
  }
  return tape.scale(tape.sum_scalars(per_sample), 1.0 / static_cast<double>(batch.size()));
}

double loss_ml(const model::TransformerQG& m, const TrainingBatch& batch,
               std::optional<double> gate_override) {
  Tape tape(/*grad_enabled=*/false);
  return tape.val(loss_ml_graph(m, tape, batch, gate_override)).at(0, 0);
}

Var reinforce_term(Tape& tape, Var sum_log_prob, double reward_greedy, double reward_sampled) {
  return tape.scale(sum_log_prob, reward_greedy - reward_sampled);
}

namespace {

double reward_for(const std::string& question, const std::string& source, const std::string& context,
                  const qa::Scorer& scorer) {
  if (question.empty() || source.empty() || context.empty()) return 0.0;
  return metrics::curiosity_reward(question, source, context, scorer);
}

}  // namespace

RlOutcome loss_rl_graph(const model::TransformerQG& m, Tape& tape, const TrainingBatch& batch,
                        const qa::Scorer& scorer, uint64_t step_seed) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  RlOutcome out;
  std::vector<Var> per_sample;
  per_sample.reserve(batch.size());
  double sum_rg = 0.0, sum_rs = 0.0;

  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& src = batch.sources[i];
    const auto greedy = m.greedy(src);
    const auto sampled = m.sample(src, mix_seed(step_seed, i));

    double reward_greedy, reward_sampled;
    try {
      reward_greedy = reward_for(greedy.text, batch.source_texts[i], batch.context_texts[i], scorer);
      reward_sampled = reward_for(sampled.text, batch.source_texts[i], batch.context_texts[i], scorer);
    } catch (const std::exception& e) {
      throw ScorerFailure(e.what());
    }
    sum_rg += reward_greedy;
    sum_rs += reward_sampled;

    // token_ids from sampling are already EOS-terminated unless cut at max_len
    per_sample.push_back(reinforce_term(
        tape, sequence_log_prob(m, tape, src, sampled.token_ids), reward_greedy, reward_sampled));
  }
  out.loss = tape.scale(tape.sum_scalars(per_sample), 1.0 / static_cast<double>(batch.size()));
  out.value = tape.val(out.loss).at(0, 0);
  out.mean_reward_greedy = sum_rg / static_cast<double>(batch.size());
  out.mean_reward_sampled = sum_rs / static_cast<double>(batch.size());
  return out;
}

double loss_rl(const model::TransformerQG& m, const TrainingBatch& batch, const qa::Scorer& scorer,
               uint64_t step_seed) {
  Tape tape(/*grad_enabled=*/false);
  return loss_rl_graph(m, tape, batch, scorer, step_seed).value;
}

MixedOutcome loss_mixed_graph(const model::TransformerQG& m, Tape& tape, const TrainingBatch& batch,
                              const qa::Scorer* scorer, double gamma, uint64_t step_seed) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must lie in [0, 1]");
  MixedOutcome out;
  if (gamma == 0.0) {
    out.loss = loss_ml_graph(m, tape, batch);
    out.ml_value = tape.val(out.loss).at(0, 0);
    out.value = out.ml_value;
    return out;
  }
  if (!scorer) throw std::invalid_argument("mixed loss with gamma > 0 requires a scorer");
  if (gamma == 1.0) {
    const auto rl = loss_rl_graph(m, tape, batch, *scorer, step_seed);
    out.loss = rl.loss;
    out.rl_value = rl.value;
    out.value = rl.value;
    out.mean_reward_greedy = rl.mean_reward_greedy;
    out.mean_reward_sampled = rl.mean_reward_sampled;
    return out;
  }
  const Var ml = loss_ml_graph(m, tape, batch);
  const auto rl = loss_rl_graph(m, tape, batch, *scorer, step_seed);
  out.loss = tape.add(tape.scale(rl.loss, gamma), tape.scale(ml, 1.0 - gamma));
  out.ml_value = tape.val(ml).at(0, 0);
  out.rl_value = rl.value;
  out.value = tape.val(out.loss).at(0, 0);
  out.mean_reward_greedy = rl.mean_reward_greedy;
  out.mean_reward_sampled = rl.mean_reward_sampled;
  return out;
}

double loss_mixed(const model::TransformerQG& m, const TrainingBatch& batch, const qa::Scorer* scorer,
                  double gamma, uint64_t step_seed) {
  Tape tape(/*grad_enabled=*/false);
  return loss_mixed_graph(m, tape, batch, scorer, gamma, step_seed).value;
}

void apply_update(std::vector<model::Parameter>& params, const std::vector<const Mat*>& grads,
                  const AdamConfig& adam, long t, std::optional<double> clip_norm) {
  if (params.size() != grads.size()) throw std::invalid_argument("parameter/gradient count mismatch");

  double scale = 1.0;
  if (clip_norm) {
    double sq = 0.0;
    for (const Mat* g : grads)
      for (const double v : g->v) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > *clip_norm && norm > 0.0) scale = *clip_norm / norm;
  }

  const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const Mat& g = *grads[i];
    for (size_t j = 0; j < p.value.v.size(); ++j) {
      const double gv = g.v[j] * scale;
      p.adam_m.v[j] = adam.beta1 * p.adam_m.v[j] + (1.0 - adam.beta1) * gv;
      p.adam_v.v[j] = adam.beta2 * p.adam_v.v[j] + (1.0 - adam.beta2) * gv * gv;
      const double mhat = p.adam_m.v[j] / bc1;
      const double vhat = p.adam_v.v[j] / bc2;
      p.value.v[j] -= adam.lr * mhat / (std::sqrt(vhat) + adam.epsilon);
    }
  }
}

namespace {

std::vector<size_t> epoch_order(size_t n, uint64_t seed, long epoch) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, 0x5Eu + static_cast<uint64_t>(epoch)));
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

struct MetricsLog {
  std::ofstream out;

  explicit MetricsLog(const std::string& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out.open(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open metrics log: " + path);
    if (fresh)
      out << "phase,global_step,epoch,loss,loss_ml,loss_rl,reward_greedy,reward_sampled,"
             "val_loss,val_bleu4\n";
  }

  void row(const std::string& phase, long step, long epoch, const MixedOutcome& o,
           const std::string& val_loss = "", const std::string& val_bleu = "") {
    out << phase << "," << step << "," << epoch << "," << o.value << "," << o.ml_value << ","
        << o.rl_value << "," << o.mean_reward_greedy << "," << o.mean_reward_sampled << ","
        << val_loss << "," << val_bleu << "\n";
    out.flush();
  }
};

double validation_loss(const model::TransformerQG& m,
                       const std::vector<deriv::CuriosityTriplet>& val, int batch_size) {
  double total = 0.0;
  size_t count = 0;
  for (size_t begin = 0; begin < val.size(); begin += static_cast<size_t>(batch_size)) {
    std::vector<size_t> idx;
    for (size_t i = begin; i < std::min(val.size(), begin + static_cast<size_t>(batch_size)); ++i)
      idx.push_back(i);
    const auto batch = make_batch(m, val, idx);
    total += loss_ml(m, batch) * static_cast<double>(idx.size());
    count += idx.size();
  }
  return total / static_cast<double>(count);
}

double validation_bleu4(const model::TransformerQG& m,
                        const std::vector<deriv::CuriosityTriplet>& val) {
  std::vector<metrics::TokenSeq> hyps, refs;
  for (const auto& t : val) {
    const auto src = m.encode_source(t.source);
    hyps.push_back(text::metric_tokenize(m.greedy(src).text));
    refs.push_back(text::metric_tokenize(t.target));
  }
  return metrics::corpus_bleu(hyps, refs, 4);
}

void dump_diagnostics(const std::string& out_dir, long step, const MixedOutcome& o,
                      const std::vector<model::Parameter>& params) {
  std::ofstream dump(out_dir + "/diagnostics.txt");
  dump << "non-finite loss at step " << step << "\n"
       << "loss=" << o.value << " ml=" << o.ml_value << " rl=" << o.rl_value << "\n";
  for (const auto& p : params) {
    double mx = 0.0;
    for (const double v : p.value.v) mx = std::max(mx, std::fabs(v));
    dump << p.name << " max_abs=" << mx << "\n";
  }
}

}  // namespace

TrainSummary train_mixed(model::TransformerQG& m, const std::vector<deriv::CuriosityTriplet>& train_set,
                         const std::vector<deriv::CuriosityTriplet>& validation_set,
                         const qa::Scorer* scorer, const TrainOptions& options) {
  const TrainConfig& cfg = options.config;
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("training set is empty");
  if (cfg.gamma > 0.0 && !scorer) throw std::invalid_argument("gamma > 0 requires a scorer");
  std::filesystem::create_directories(options.out_dir);

  long start_epoch = 0, start_step_in_epoch = 0, global_step = 0;
  if (!options.resume_from.empty()) {
    model::TrainingPosition pos;
    m = model::load_checkpoint(options.resume_from, &pos);
    start_epoch = pos.epoch;
    start_step_in_epoch = pos.step_in_epoch;
    global_step = pos.global_step;
  }

  MetricsLog log(options.out_dir + "/training_log.csv");
  TrainSummary summary;
  summary.has_validation = !validation_set.empty();
  if (!summary.has_validation)
    std::cerr << "[train] warning: empty validation set, validation skipped\n";

  double best_val = std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;

  auto save = [&](const std::string& name, long epoch, long step_in_epoch) {
    model::TrainingPosition pos;
    pos.has_optimizer = true;
    pos.epoch = epoch;
    pos.step_in_epoch = step_in_epoch;
    pos.global_step = global_step;
    const std::string path = options.out_dir + "/" + name;
    model::save_checkpoint(m, path, &pos);
    return path;
  };

  const size_t n = train_set.size();
  const long steps_per_epoch =
      static_cast<long>((n + static_cast<size_t>(cfg.batch_size) - 1) / static_cast<size_t>(cfg.batch_size));

  for (long epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n, cfg.seed, epoch);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    double epoch_reward_greedy = 0.0;
    long rl_batches = 0;
    MixedOutcome last_outcome;

    const long first_step = (epoch == start_epoch) ? start_step_in_epoch : 0;
    for (long step = first_step; step < steps_per_epoch; ++step) {
      std::vector<size_t> idx;
      for (size_t i = static_cast<size_t>(step) * cfg.batch_size;
           i < std::min(n, (static_cast<size_t>(step) + 1) * cfg.batch_size); ++i)
        idx.push_back(order[i]);
      const auto batch = make_batch(m, train_set, idx);

      Tape tape(/*grad_enabled=*/true);
      MixedOutcome outcome;
      try {
        outcome = loss_mixed_graph(m, tape, batch, scorer, cfg.gamma, mix_seed(cfg.seed, global_step));
      } catch (const ScorerFailure& e) {
        if (cfg.abort_on_scorer_failure) throw;
        std::cerr << "[train] warning: scorer failure, batch skipped: " << e.what() << "\n";
        ++global_step;
        continue;
      }
      if (!std::isfinite(outcome.value)) {
        dump_diagnostics(options.out_dir, global_step, outcome, m.parameters());
        throw std::runtime_error("non-finite loss; diagnostics written to " + options.out_dir);
      }
      tape.backward(outcome.loss);

      std::vector<Var> leaves;
      leaves.reserve(m.parameters().size());
      for (auto& param : m.parameters()) leaves.push_back(tape.param(&param.value));
      std::vector<const Mat*> grads;
      grads.reserve(leaves.size());
      for (const Var v : leaves) grads.push_back(&tape.grad(v));
      apply_update(m.parameters(), grads, cfg.adam, global_step + 1, cfg.grad_clip_norm);

      ++global_step;
      ++epoch_batches;
      epoch_loss += outcome.value;
      last_outcome = outcome;
      if (cfg.gamma > 0.0) {
        epoch_reward_greedy += outcome.mean_reward_greedy;
        ++rl_batches;
      }
      if (cfg.log_every > 0 && global_step % cfg.log_every == 0)
        log.row(options.phase_name, global_step, epoch, outcome);
      if (cfg.checkpoint_every > 0 && global_step % cfg.checkpoint_every == 0)
        save("checkpoint_step_" + std::to_string(global_step) + ".cqgm", epoch, step + 1);
    }

    summary.epochs_run = static_cast<int>(epoch - start_epoch) + 1;
    summary.final_train_loss = epoch_batches > 0 ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
    if (rl_batches > 0)
      summary.epoch_mean_rewards_greedy.push_back(epoch_reward_greedy /
                                                  static_cast<double>(rl_batches));

    std::string val_loss_str, val_bleu_str;
    if (summary.has_validation) {
      const double vloss = validation_loss(m, validation_set, cfg.batch_size);
      const double vbleu = validation_bleu4(m, validation_set);
      val_loss_str = std::to_string(vloss);
      val_bleu_str = std::to_string(vbleu);
      if (vloss < best_val) {
        best_val = vloss;
        epochs_without_improvement = 0;
        summary.best_checkpoint = save("checkpoint_best.cqgm", epoch + 1, 0);
        summary.best_val_loss = vloss;
      } else {
        ++epochs_without_improvement;
      }
    }
    log.row(options.phase_name, global_step, epoch, last_outcome, val_loss_str, val_bleu_str);
    summary.last_checkpoint = save("checkpoint_last.cqgm", epoch + 1, 0);

    if (summary.has_validation && cfg.patience > 0 && epochs_without_improvement >= cfg.patience) {
      std::cerr << "[train] early stop after " << epochs_without_improvement
                << " epochs without validation improvement\n";
      break;
    }
  }
  if (summary.last_checkpoint.empty()) summary.last_checkpoint = save("checkpoint_last.cqgm", cfg.epochs, 0);
  if (summary.best_checkpoint.empty()) summary.best_checkpoint = summary.last_checkpoint;
  summary.global_steps = global_step;
  return summary;
}

TrainSummary train_supervised(model::TransformerQG& m,
                              const std::vector<deriv::CuriosityTriplet>& train_set,
                              const std::vector<deriv::CuriosityTriplet>& validation_set,
                              const TrainOptions& options) {
  TrainOptions opts = options;
  opts.config.gamma = 0.0;
  return train_mixed(m, train_set, validation_set, nullptr, opts);
}

TrainSummary pretrain_then_finetune(model::TransformerQG& m,
                                    const std::vector<deriv::CuriosityTriplet>& standard_pairs,
                                    const std::vector<deriv::CuriosityTriplet>& curiosity_set,
                                    const std::vector<deriv::CuriosityTriplet>& curiosity_validation,
                                    const qa::Scorer* scorer, const TrainOptions& options) {
  options.config.validate();
  if (options.config.pretrain_epochs > 0) {
    TrainOptions phase1 = options;
    phase1.phase_name = "pretrain";
    phase1.config.gamma = 0.0;
    phase1.config.epochs = options.config.pretrain_epochs;
    phase1.resume_from.clear();
    train_mixed(m, standard_pairs, {}, nullptr, phase1);
    // finetuning restarts the optimizer from scratch
    for (auto& p : m.parameters()) {
      p.adam_m.fill(0.0);
      p.adam_v.fill(0.0);
    }
  }
  TrainOptions phase2 = options;
  phase2.phase_name = "finetune";
  return train_mixed(m, curiosity_set, curiosity_validation, scorer, phase2);
}

std::vector<deriv::CuriosityTriplet> standard_qg_pairs(const corpus::Corpus& corpus) {
  std::vector<deriv::CuriosityTriplet> pairs;
  for (const auto& article : corpus.articles) {
    for (size_t pi = 0; pi < article.paragraphs.size(); ++pi) {
      const auto& paragraph = article.paragraphs[pi];
      for (const auto& qa : paragraph.qa_pairs) {
        deriv::CuriosityTriplet t;
        const int a = qa.answer_sentence_index;
        t.source = paragraph.sentences.at(static_cast<size_t>(a)).text;
        t.context = paragraph.sentences.size() > 1 ? deriv::build_stripped_context(paragraph, a) : "";
        t.target = qa.question;
        t.meta.article_id = article.id;
        t.meta.paragraph_index = static_cast<int>(pi);
        t.meta.source_sentence_indices = {a};
        t.meta.answer_sentence_index = a;
        pairs.push_back(std::move(t));
      }
    }
  }
  return pairs;
}

}  // namespace train
}  // namespace cqg
