// cqg: curiosity-driven question generation pipeline.
//
// Subcommands cover the full flow: import native QA releases to canonical
// JSONL, derive curiosity triplets, train (supervised / mixed RL /
// pretrain+finetune), generate, evaluate and analyze.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cqg/analysis.hpp"
#include "cqg/corpus.hpp"
#include "cqg/derivation.hpp"
#include "cqg/metrics.hpp"
#include "cqg/model.hpp"
#include "cqg/qa_scorer.hpp"
#include "cqg/run_config.hpp"
#include "cqg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cqg;

namespace {

// ---------------------------------------------------------------------------
// shared helpers

struct ScorerOptions {
  std::string kind = "stub";  // stub | http
  std::string endpoint;
  double timeout = 10.0;
  int max_in_flight = 4;
};

void add_scorer_options(CLI::App* cmd, ScorerOptions& opts) {
  cmd->add_option("--scorer", opts.kind, "QA scorer backend: stub or http")
      ->check(CLI::IsMember({"stub", "http"}));
  cmd->add_option("--endpoint", opts.endpoint, "HTTP scorer endpoint")->envname("CQG_SCORER_ENDPOINT");
  cmd->add_option("--scorer-timeout", opts.timeout, "HTTP scorer timeout in seconds");
  cmd->add_option("--scorer-max-in-flight", opts.max_in_flight, "bound on concurrent scorer requests");
}

std::unique_ptr<qa::Scorer> make_scorer(const ScorerOptions& opts) {
  if (opts.kind == "stub") return std::make_unique<qa::StubScorer>();
  qa::HttpScorerConfig cfg;
  if (!opts.endpoint.empty()) cfg.endpoint = opts.endpoint;
  cfg.timeout_seconds = opts.timeout;
  cfg.max_in_flight = opts.max_in_flight;
  return std::make_unique<qa::HttpScorer>(cfg);
}

std::string apply_data_root(const std::string& path, const std::string& data_root) {
  if (data_root.empty() || path.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(data_root) / path).string();
}

struct GenerationRow {
  std::string id;
  std::string text;
  double log_prob = 0.0;
  std::string decode_mode;
  int k = 1;
};

void write_generations(const std::vector<GenerationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write generations: " + path);
  for (const auto& r : rows)
    out << json{{"id", r.id}, {"text", r.text}, {"log_prob", r.log_prob},
                {"decode_mode", r.decode_mode}, {"k", r.k}}
               .dump()
        << "\n";
}

std::vector<GenerationRow> read_generations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open generations: " + path);
  std::vector<GenerationRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json rec = json::parse(line);
    rows.push_back({rec.at("id").get<std::string>(), rec.at("text").get<std::string>(),
                    rec.value("log_prob", 0.0), rec.value("decode_mode", "greedy"), rec.value("k", 1)});
  }
  return rows;
}

std::pair<std::string, std::string> parse_named_path(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 >= arg.size())
    throw CLI::ValidationError("--generations expects name=path, got: " + arg);
  return {arg.substr(0, eq), arg.substr(eq + 1)};
}

metrics::MetricReport report_for_system(const std::string& name,
                                        const std::vector<std::string>& questions,
                                        const std::vector<deriv::CuriosityTriplet>& triplets,
                                        const std::vector<size_t>& triplet_index, bool with_bleu,
                                        const qa::Scorer& scorer, int self_bleu_cap,
                                        uint64_t self_bleu_seed,
                                        const metrics::BleuConfig& bleu_config = {}) {
  metrics::MetricReport report;
  report.system_name = name;
  report.sample_count = static_cast<int>(questions.size());

  std::vector<metrics::TokenSeq> hyps, refs;
  for (size_t i = 0; i < questions.size(); ++i) {
    hyps.push_back(text::metric_tokenize(questions[i]));
    refs.push_back(text::metric_tokenize(triplets[triplet_index[i]].target));
  }
  if (with_bleu)
    for (int n = 1; n <= 4; ++n) report.bleu[n] = metrics::corpus_bleu(hyps, refs, n);
  if (questions.size() >= 2)
    for (int n = 1; n <= 4; ++n)
      report.self_bleu[n] = metrics::self_bleu(hyps, n, self_bleu_cap, self_bleu_seed, bleu_config);

  double qa_src = 0.0, qa_ctx = 0.0;
  for (size_t i = 0; i < questions.size(); ++i) {
    const auto& t = triplets[triplet_index[i]];
    if (questions[i].empty() || t.source.empty() || t.context.empty()) continue;
    qa_src += metrics::qa_source(questions[i], t.source, scorer);
    qa_ctx += metrics::qa_context(questions[i], t.context, scorer);
  }
  report.qa_source = qa_src / static_cast<double>(questions.size());
  report.qa_context = qa_ctx / static_cast<double>(questions.size());
  report.has_qa = true;
  return report;
}

// map generation rows onto triplet indices via their id field
std::vector<size_t> align_to_triplets(const std::vector<GenerationRow>& rows, size_t n_triplets) {
  std::vector<size_t> index;
  index.reserve(rows.size());
  for (const auto& r : rows) {
    const size_t idx = static_cast<size_t>(std::stoul(r.id));
    if (idx >= n_triplets) throw std::runtime_error("generation id out of range: " + r.id);
    index.push_back(idx);
  }
  return index;
}

// ---------------------------------------------------------------------------
// subcommand bodies

int cmd_import(const std::string& format, const std::string& in, const std::string& out,
               uint64_t seed) {
  corpus::LoadReport report;
  const int written = corpus::import_native_qa(in, out, format == "conversational", &report);
  runcfg::RunConfig rc;
  rc.set("command", std::string("import"));
  rc.set("format", format);
  rc.set("in", in);
  rc.set("out", out);
  rc.set("seed", static_cast<long>(seed));
  rc.write_beside(out);
  std::cout << "wrote " << written << " paragraph records to " << out << "\n";
  if (report.records_rejected > 0)
    std::cerr << "rejected_records=" << report.records_rejected << "\n";
  return 0;
}

int cmd_derive(const std::string& mode, bool constrained, const std::string& in,
               const std::string& out, const std::string& split, int holdout_articles,
               const std::string& holdout_out, uint64_t seed) {
  corpus::LoadReport load_report;
  corpus::Corpus corpus = mode == "conversational" ? corpus::load_conversational_qa(in, &load_report)
                                                   : corpus::load_standard_qa(in, &load_report);
  corpus.split_name = split;
  if (load_report.records_rejected > 0) {
    std::cerr << "rejected_records=" << load_report.records_rejected << "\n";
    for (const auto& err : load_report.errors)
      std::cerr << "  line " << err.line << ": " << err.reason << "\n";
  }

  corpus::Corpus held_out;
  if (holdout_articles > 0) {
    auto [remaining, held] = deriv::make_article_split(corpus, holdout_articles, seed);
    corpus = std::move(remaining);
    held_out = std::move(held);
  }

  deriv::HeuristicTagger tagger;
  auto derive_one = [&](const corpus::Corpus& c, const std::string& path) {
    deriv::DeriveStats stats;
    std::vector<deriv::CuriosityTriplet> triplets;
    deriv::ConstraintMode cmode;
    if (mode == "conversational") {
      triplets = deriv::derive_conversational(c, &stats);
      cmode = deriv::ConstraintMode::conversational;
    } else {
      triplets = deriv::derive_standard(c, constrained, tagger, &stats);
      cmode = constrained ? deriv::ConstraintMode::ner_constrained
                          : deriv::ConstraintMode::unconstrained;
    }
    deriv::write_triplets_jsonl(triplets, path);
    deriv::write_stats_sidecar(stats, c.split_name, cmode, path + ".stats.json");
    std::cout << "wrote " << stats.triplets_emitted << " triplets to " << path << " (skipped "
              << stats.skipped << ", ner-filtered " << stats.filtered_by_ner << ")\n";
  };
  derive_one(corpus, out);
  if (holdout_articles > 0 && !holdout_out.empty()) {
    held_out.split_name = "validation";
    derive_one(held_out, holdout_out);
  }

  runcfg::RunConfig rc;
  rc.set("command", std::string("derive"));
  rc.set("mode", mode);
  rc.set("constrained", std::string(constrained ? "true" : "false"));
  rc.set("in", in);
  rc.set("out", out);
  rc.set("split", split);
  rc.set("holdout_articles", static_cast<long>(holdout_articles));
  rc.set("seed", static_cast<long>(seed));
  rc.write_beside(out);
  return 0;
}

struct ModelOptions {
  int num_blocks = 2, d_model = 256, d_ff = 512, num_heads = 2;
  int max_source_len = 200, max_target_len = 40;
  int vocab_min_freq = 2, vocab_max_size = 30000;
  bool large = false;
};

void add_model_options(CLI::App* cmd, ModelOptions& opts) {
  cmd->add_option("--num-blocks", opts.num_blocks, "transformer blocks per stack");
  cmd->add_option("--d-model", opts.d_model, "hidden state dimension");
  cmd->add_option("--d-ff", opts.d_ff, "feed-forward dimension");
  cmd->add_option("--num-heads", opts.num_heads, "attention heads");
  cmd->add_option("--max-source-len", opts.max_source_len, "source token limit");
  cmd->add_option("--max-target-len", opts.max_target_len, "target token limit");
  cmd->add_option("--vocab-min-freq", opts.vocab_min_freq, "vocabulary frequency cutoff");
  cmd->add_option("--vocab-max-size", opts.vocab_max_size, "vocabulary size cap");
  cmd->add_flag("--large", opts.large, "use the large architecture preset");
}

struct TrainCliOptions {
  train::TrainConfig config;
  std::string data, val, out, resume, init_checkpoint;
};

void add_train_options(CLI::App* cmd, TrainCliOptions& opts) {
  cmd->add_option("--data", opts.data, "training triplets JSONL")->required();
  cmd->add_option("--val", opts.val, "validation triplets JSONL");
  cmd->add_option("--out", opts.out, "output directory")->required();
  cmd->add_option("--batch-size", opts.config.batch_size, "mini-batch size");
  cmd->add_option("--lr", opts.config.adam.lr, "Adam learning rate");
  cmd->add_option("--epochs", opts.config.epochs, "training epochs");
  cmd->add_option("--patience", opts.config.patience, "early-stopping patience (0 disables)");
  cmd->add_option("--grad-clip", opts.config.grad_clip_norm, "global gradient-norm clip")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--checkpoint-every", opts.config.checkpoint_every, "checkpoint every N steps");
  cmd->add_option("--log-every", opts.config.log_every, "log every N steps");
  cmd->add_option("--resume", opts.resume, "resume from a checkpoint");
  cmd->add_option("--init-checkpoint", opts.init_checkpoint, "initialize parameters from a checkpoint");
}

model::TransformerQG build_or_load_model(const TrainCliOptions& train_opts, const ModelOptions& mopts,
                                         const std::vector<deriv::CuriosityTriplet>& vocab_data,
                                         uint64_t seed) {
  if (!train_opts.init_checkpoint.empty()) return model::load_checkpoint(train_opts.init_checkpoint);
  const model::Vocabulary vocab =
      model::Vocabulary::build(vocab_data, mopts.vocab_min_freq, mopts.vocab_max_size);
  model::ModelConfig mc;
  mc.num_blocks = mopts.num_blocks;
  mc.d_model = mopts.d_model;
  mc.d_ff = mopts.d_ff;
  mc.num_heads = mopts.num_heads;
  mc.max_source_len = mopts.max_source_len;
  mc.max_target_len = mopts.max_target_len;
  mc.vocab_size = vocab.size();
  mc.seed = seed;
  if (mopts.large) mc = model::large_preset(mc);
  return model::TransformerQG(mc, vocab);
}

void write_train_run_config(const TrainCliOptions& opts, const ModelOptions& mopts,
                            const std::string& command, double gamma, uint64_t seed) {
  runcfg::RunConfig rc;
  rc.set("command", command);
  rc.set("data", opts.data);
  rc.set("val", opts.val);
  rc.set("out", opts.out);
  rc.set("batch_size", static_cast<long>(opts.config.batch_size));
  rc.set("lr", opts.config.adam.lr);
  rc.set("gamma", gamma);
  rc.set("epochs", static_cast<long>(opts.config.epochs));
  rc.set("patience", static_cast<long>(opts.config.patience));
  rc.set("grad_clip", opts.config.grad_clip_norm ? *opts.config.grad_clip_norm : 0.0);
  rc.set("num_blocks", static_cast<long>(mopts.num_blocks));
  rc.set("d_model", static_cast<long>(mopts.d_model));
  rc.set("d_ff", static_cast<long>(mopts.d_ff));
  rc.set("num_heads", static_cast<long>(mopts.num_heads));
  rc.set("max_source_len", static_cast<long>(mopts.max_source_len));
  rc.set("max_target_len", static_cast<long>(mopts.max_target_len));
  rc.set("seed", static_cast<long>(seed));
  rc.write_to_dir(opts.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"curiosity-driven question generation pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value configuration file; CLI flags take precedence");

  uint64_t seed = 0;
  std::string data_root;
  app.add_option("--seed", seed, "global random seed")->configurable(true);
  app.add_option("--data-root", data_root, "prefix for relative data paths")->envname("CQG_DATA_ROOT");

  // import
  auto* import_cmd = app.add_subcommand("import", "convert a native QA release to canonical JSONL");
  std::string import_format, import_in, import_out;
  import_cmd->add_option("--format", import_format, "standard or conversational")
      ->required()
      ->check(CLI::IsMember({"standard", "conversational"}));
  import_cmd->add_option("--in", import_in, "native nested-JSON file")->required();
  import_cmd->add_option("--out", import_out, "canonical JSONL output")->required();

  // derive
  auto* derive_cmd = app.add_subcommand("derive", "derive curiosity triplets from a canonical corpus");
  std::string derive_mode, derive_in, derive_out, derive_split = "train", derive_holdout_out;
  bool derive_constrained = false;
  int derive_holdout = 0;
  derive_cmd->add_option("--mode", derive_mode, "conversational or standard")
      ->required()
      ->check(CLI::IsMember({"conversational", "standard"}));
  derive_cmd->add_flag("--constrained", derive_constrained, "apply the entity constraint (standard mode)");
  derive_cmd->add_option("--in", derive_in, "canonical JSONL corpus")->required();
  derive_cmd->add_option("--out", derive_out, "triplet JSONL output")->required();
  derive_cmd->add_option("--split", derive_split, "split name recorded in the stats sidecar");
  derive_cmd->add_option("--holdout-articles", derive_holdout, "drop N articles into a held-out set");
  derive_cmd->add_option("--holdout-out", derive_holdout_out, "triplet JSONL for the held-out articles");

  // train
  auto* train_cmd = app.add_subcommand("train", "supervised training");
  TrainCliOptions train_opts;
  ModelOptions train_mopts;
  add_train_options(train_cmd, train_opts);
  add_model_options(train_cmd, train_mopts);

  // rl-finetune
  auto* rl_cmd = app.add_subcommand("rl-finetune", "mixed supervised + REINFORCE training");
  TrainCliOptions rl_opts;
  ModelOptions rl_mopts;
  ScorerOptions rl_scorer;
  double rl_gamma = 0.99;
  add_train_options(rl_cmd, rl_opts);
  add_model_options(rl_cmd, rl_mopts);
  add_scorer_options(rl_cmd, rl_scorer);
  rl_cmd->add_option("--gamma", rl_gamma, "RL share of the mixed loss")
      ->check(CLI::Range(0.0, 1.0));

  // pretrain-finetune
  auto* pt_cmd = app.add_subcommand("pretrain-finetune",
                                    "pretrain on traditional QG pairs, then finetune on curiosity data");
  TrainCliOptions pt_opts;
  ModelOptions pt_mopts;
  ScorerOptions pt_scorer;
  std::string pt_pretrain_data;
  double pt_gamma = 0.0;
  int pt_epochs = 5;
  add_train_options(pt_cmd, pt_opts);
  add_model_options(pt_cmd, pt_mopts);
  add_scorer_options(pt_cmd, pt_scorer);
  pt_cmd->add_option("--pretrain-data", pt_pretrain_data, "canonical JSONL standard corpus")->required();
  pt_cmd->add_option("--pretrain-epochs", pt_epochs, "phase-1 epochs (0 skips pretraining)");
  pt_cmd->add_option("--gamma", pt_gamma, "RL share during finetuning")->check(CLI::Range(0.0, 1.0));

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "decode questions for every triplet source");
  std::string gen_checkpoint, gen_data, gen_out, gen_mode = "beam";
  int gen_k = 5;
  gen_cmd->add_option("--checkpoint", gen_checkpoint, "model checkpoint")->required();
  gen_cmd->add_option("--data", gen_data, "triplets JSONL")->required();
  gen_cmd->add_option("--out", gen_out, "generations JSONL output")->required();
  gen_cmd->add_option("--mode", gen_mode, "greedy, beam or sample")
      ->check(CLI::IsMember({"greedy", "beam", "sample"}));
  gen_cmd->add_option("-k,--beam-size", gen_k, "beam size");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "metric table for one or more generation files");
  std::vector<std::string> eval_generations;
  std::string eval_data, eval_out;
  ScorerOptions eval_scorer;
  bool eval_include_human = false;
  bool eval_smooth_self_bleu = false;
  int eval_self_bleu_cap = 1000;
  eval_cmd->add_option("--generations", eval_generations, "name=path generation JSONL (repeatable)")
      ->required();
  eval_cmd->add_option("--data", eval_data, "triplets JSONL with references")->required();
  eval_cmd->add_option("--out", eval_out, "report directory")->required();
  eval_cmd->add_flag("--include-human", eval_include_human, "add a column for the reference questions");
  eval_cmd->add_option("--self-bleu-cap", eval_self_bleu_cap, "Self-BLEU sample cap");
  eval_cmd->add_flag("--smooth-self-bleu", eval_smooth_self_bleu,
                     "epsilon-smooth the sentence BLEU inside Self-BLEU");
  add_scorer_options(eval_cmd, eval_scorer);

  // analyze
  auto* an_cmd = app.add_subcommand("analyze", "report bundle: histograms, ratings, correlations");
  std::vector<std::string> an_generations;
  std::string an_data, an_out, an_ratings, an_prefix, an_checkpoint, an_beams = "1,3,5";
  ScorerOptions an_scorer;
  int an_top_k = 10;
  bool an_per_system_mean = false;
  an_cmd->add_option("--generations", an_generations, "name=path generation JSONL (repeatable)");
  an_cmd->add_option("--data", an_data, "triplets JSONL with references")->required();
  an_cmd->add_option("--out", an_out, "report bundle directory")->required();
  an_cmd->add_option("--ratings", an_ratings, "human ratings CSV");
  an_cmd->add_option("--prefix", an_prefix, "prefix whose rate is reported per system");
  an_cmd->add_option("--top-k", an_top_k, "first-token histogram size");
  an_cmd->add_option("--divergence-checkpoint", an_checkpoint, "checkpoint for the beam divergence table");
  an_cmd->add_option("--beams", an_beams, "comma-separated beam sizes for the divergence table");
  an_cmd->add_flag("--per-system-mean", an_per_system_mean,
                   "correlate per-system means instead of per-item values");
  add_scorer_options(an_cmd, an_scorer);

  // stub-scorer-check
  auto* stub_cmd = app.add_subcommand("stub-scorer-check", "deterministic stub scorer battery");
  int stub_n = 200;
  stub_cmd->add_option("--n", stub_n, "number of synthetic cases");

  // global options (--seed, --data-root, --config) remain usable after the
  // subcommand name
  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*import_cmd)
      return cmd_import(import_format, apply_data_root(import_in, data_root), import_out, seed);

    if (*derive_cmd)
      return cmd_derive(derive_mode, derive_constrained, apply_data_root(derive_in, data_root),
                        derive_out, derive_split, derive_holdout, derive_holdout_out, seed);

    if (*train_cmd || *rl_cmd) {
      TrainCliOptions& opts = *train_cmd ? train_opts : rl_opts;
      ModelOptions& mopts = *train_cmd ? train_mopts : rl_mopts;
      const double gamma = *train_cmd ? 0.0 : rl_gamma;
      opts.config.gamma = gamma;
      opts.config.seed = seed;

      const auto data = deriv::read_triplets_jsonl(apply_data_root(opts.data, data_root));
      std::vector<deriv::CuriosityTriplet> val;
      if (!opts.val.empty()) val = deriv::read_triplets_jsonl(apply_data_root(opts.val, data_root));

      model::TransformerQG model = build_or_load_model(opts, mopts, data, seed);
      write_train_run_config(opts, mopts, *train_cmd ? "train" : "rl-finetune", gamma, seed);

      train::TrainOptions topts;
      topts.config = opts.config;
      topts.out_dir = opts.out;
      topts.resume_from = opts.resume;

      std::unique_ptr<qa::Scorer> scorer;
      if (gamma > 0.0) scorer = make_scorer(*train_cmd ? ScorerOptions{} : rl_scorer);
      const auto summary = train::train_mixed(model, data, val, scorer.get(), topts);
      std::cout << "trained " << summary.epochs_run << " epochs, " << summary.global_steps
                << " steps; last checkpoint: " << summary.last_checkpoint << "\n";
      if (summary.has_validation)
        std::cout << "best validation loss " << summary.best_val_loss << " at "
                  << summary.best_checkpoint << "\n";
      return 0;
    }

    if (*pt_cmd) {
      pt_opts.config.gamma = pt_gamma;
      pt_opts.config.seed = seed;
      pt_opts.config.pretrain_epochs = pt_epochs;

      const auto curiosity = deriv::read_triplets_jsonl(apply_data_root(pt_opts.data, data_root));
      std::vector<deriv::CuriosityTriplet> val;
      if (!pt_opts.val.empty()) val = deriv::read_triplets_jsonl(apply_data_root(pt_opts.val, data_root));
      const auto standard_corpus =
          corpus::load_standard_qa(apply_data_root(pt_pretrain_data, data_root));
      const auto standard_pairs = train::standard_qg_pairs(standard_corpus);

      // the two phases share one vocabulary built on the union
      std::vector<deriv::CuriosityTriplet> union_data = curiosity;
      union_data.insert(union_data.end(), standard_pairs.begin(), standard_pairs.end());
      model::TransformerQG model = build_or_load_model(pt_opts, pt_mopts, union_data, seed);
      if (!pt_opts.init_checkpoint.empty()) {
        const auto expected = model::Vocabulary::build(union_data, pt_mopts.vocab_min_freq,
                                                       pt_mopts.vocab_max_size);
        if (!(model.vocab() == expected))
          throw std::runtime_error("vocabulary mismatch: checkpoint vocabulary differs from the "
                                   "union vocabulary of both datasets");
      }
      write_train_run_config(pt_opts, pt_mopts, "pretrain-finetune", pt_gamma, seed);

      train::TrainOptions topts;
      topts.config = pt_opts.config;
      topts.out_dir = pt_opts.out;

      std::unique_ptr<qa::Scorer> scorer;
      if (pt_gamma > 0.0) scorer = make_scorer(pt_scorer);
      const auto summary =
          train::pretrain_then_finetune(model, standard_pairs, curiosity, val, scorer.get(), topts);
      std::cout << "pretrain+finetune done; last checkpoint: " << summary.last_checkpoint << "\n";
      return 0;
    }

    if (*gen_cmd) {
      const auto model = model::load_checkpoint(gen_checkpoint);
      const auto triplets = deriv::read_triplets_jsonl(apply_data_root(gen_data, data_root));
      std::vector<GenerationRow> rows;
      for (size_t i = 0; i < triplets.size(); ++i) {
        const auto src = model.encode_source(triplets[i].source);
        model::GenerationResult gen;
        if (gen_mode == "greedy")
          gen = model.greedy(src);
        else if (gen_mode == "beam")
          gen = model.beam(src, gen_k);
        else
          gen = model.sample(src, train::mix_seed(seed, i));
        rows.push_back({std::to_string(i), gen.text, gen.log_prob, model::to_string(gen.decode_mode),
                        gen.beam_size});
      }
      write_generations(rows, gen_out);
      runcfg::RunConfig rc;
      rc.set("command", std::string("generate"));
      rc.set("checkpoint", gen_checkpoint);
      rc.set("data", gen_data);
      rc.set("mode", gen_mode);
      rc.set("k", static_cast<long>(gen_k));
      rc.set("seed", static_cast<long>(seed));
      rc.write_beside(gen_out);
      std::cout << "wrote " << rows.size() << " generations to " << gen_out << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto triplets = deriv::read_triplets_jsonl(apply_data_root(eval_data, data_root));
      const auto scorer = make_scorer(eval_scorer);
      metrics::BleuConfig bleu_config;
      bleu_config.smooth_sentence_level = eval_smooth_self_bleu;
      std::vector<metrics::MetricReport> reports;
      if (eval_include_human) {
        std::vector<std::string> questions;
        std::vector<size_t> index;
        for (size_t i = 0; i < triplets.size(); ++i) {
          questions.push_back(triplets[i].target);
          index.push_back(i);
        }
        reports.push_back(report_for_system("human", questions, triplets, index, /*with_bleu=*/false,
                                            *scorer, eval_self_bleu_cap, seed, bleu_config));
      }
      for (const auto& arg : eval_generations) {
        const auto [name, path] = parse_named_path(arg);
        const auto rows = read_generations(apply_data_root(path, data_root));
        const auto index = align_to_triplets(rows, triplets.size());
        std::vector<std::string> questions;
        for (const auto& r : rows) questions.push_back(r.text);
        reports.push_back(report_for_system(name, questions, triplets, index, /*with_bleu=*/true,
                                            *scorer, eval_self_bleu_cap, seed, bleu_config));
      }
      fs::create_directories(eval_out);
      metrics::write_metric_csv(reports, eval_out + "/table_metrics.csv");
      const std::string table = metrics::render_metric_table(reports);
      std::ofstream(eval_out + "/metrics.txt") << table;
      std::cout << table;
      runcfg::RunConfig rc;
      rc.set("command", std::string("evaluate"));
      rc.set("data", eval_data);
      rc.set("scorer", eval_scorer.kind);
      rc.set("self_bleu_cap", static_cast<long>(eval_self_bleu_cap));
      rc.set("self_bleu_smoothing", std::string(eval_smooth_self_bleu ? "epsilon" : "none"));
      rc.set("seed", static_cast<long>(seed));
      rc.write_to_dir(eval_out);
      return 0;
    }

    if (*an_cmd) {
      const auto triplets = deriv::read_triplets_jsonl(apply_data_root(an_data, data_root));
      const auto scorer = make_scorer(an_scorer);
      fs::create_directories(an_out);
      std::ofstream report_md(an_out + "/report.md");
      report_md << "# analysis report\n\n";

      struct SystemGenerations {
        std::string name;
        std::vector<GenerationRow> rows;
        std::vector<size_t> index;
      };
      std::vector<SystemGenerations> systems;
      for (const auto& arg : an_generations) {
        const auto [name, path] = parse_named_path(arg);
        SystemGenerations sg;
        sg.name = name;
        sg.rows = read_generations(apply_data_root(path, data_root));
        sg.index = align_to_triplets(sg.rows, triplets.size());
        systems.push_back(std::move(sg));
      }

      // first-token histograms per system, plus the references
      auto histogram_for = [&](const std::string& name, const std::vector<std::string>& questions) {
        const auto hist = analysis::first_token_histogram(questions, an_top_k);
        analysis::write_histogram_csv(hist, an_out + "/first_tokens_" + name + ".csv");
        report_md << "## first tokens: " << name << "\n\n";
        for (const auto& [tok, freq] : hist.frequencies)
          report_md << "- `" << tok << "` " << freq << "\n";
        report_md << "\n";
        if (!an_prefix.empty())
          report_md << "prefix rate of \"" << an_prefix
                    << "\": " << analysis::prefix_rate(questions, an_prefix) << "\n\n";
      };
      {
        std::vector<std::string> refs;
        for (const auto& t : triplets) refs.push_back(t.target);
        histogram_for("human", refs);
      }
      for (const auto& sg : systems) {
        std::vector<std::string> questions;
        for (const auto& r : sg.rows) questions.push_back(r.text);
        histogram_for(sg.name, questions);
      }

      // beam divergence table from a checkpoint
      if (!an_checkpoint.empty()) {
        std::vector<int> ks;
        std::stringstream ss(an_beams);
        for (std::string part; std::getline(ss, part, ',');) ks.push_back(std::stoi(part));
        const auto model = model::load_checkpoint(an_checkpoint);
        const auto reports = analysis::beam_divergence_report(model, triplets, ks, *scorer, {}, seed);
        metrics::write_metric_csv(reports, an_out + "/table_metrics.csv");
        report_md << "## beam divergence\n\n```\n"
                  << metrics::render_metric_table(reports) << "```\n\n";
      }

      // ratings and the correlation matrix
      if (!an_ratings.empty()) {
        analysis::RatingLoadReport rating_report;
        const auto records = analysis::load_ratings(apply_data_root(an_ratings, data_root), &rating_report);
        if (rating_report.rows_rejected > 0)
          std::cerr << "rejected_rating_rows=" << rating_report.rows_rejected << "\n";
        analysis::write_rating_csv(records, an_out + "/table_ratings.csv");
        report_md << "## human ratings\n\n```\n" << analysis::render_rating_table(records) << "```\n\n";

        // per-(sample, system) metric columns joined against the ratings
        std::vector<double> col_bleu, col_self, col_qsrc, col_qctx;
        std::vector<double> col_ans, col_corr, col_ext, col_rel, col_sound;
        for (const auto& rec : records) {
          const auto sys = std::find_if(systems.begin(), systems.end(),
                                        [&](const auto& s) { return s.name == rec.system_name; });
          if (sys == systems.end()) continue;
          const auto row = std::find_if(sys->rows.begin(), sys->rows.end(),
                                        [&](const GenerationRow& r) { return r.id == rec.sample_id; });
          if (row == sys->rows.end()) continue;
          const size_t t_idx = sys->index[static_cast<size_t>(row - sys->rows.begin())];
          const auto& triplet = triplets[t_idx];

          const auto hyp = text::metric_tokenize(row->text);
          // smoothed sentence BLEU for the per-item analysis only
          col_bleu.push_back(
              metrics::sentence_bleu(hyp, {text::metric_tokenize(triplet.target)}, 4, 1e-9));
          std::vector<metrics::TokenSeq> others;
          for (const auto& other : sys->rows)
            if (&other != &*row) others.push_back(text::metric_tokenize(other.text));
          col_self.push_back(others.empty() ? 0.0 : metrics::sentence_bleu(hyp, others, 4, 1e-9));
          col_qsrc.push_back(row->text.empty() || triplet.source.empty()
                                 ? 0.0
                                 : metrics::qa_source(row->text, triplet.source, *scorer));
          col_qctx.push_back(row->text.empty() || triplet.context.empty()
                                 ? 0.0
                                 : metrics::qa_context(row->text, triplet.context, *scorer));
          col_ans.push_back(rec.answerability);
          col_corr.push_back(rec.correctness);
          col_ext.push_back(rec.external_knowledge);
          col_rel.push_back(rec.relevance);
          col_sound.push_back(rec.soundness);
        }
        if (col_bleu.size() >= 3) {
          std::vector<std::pair<std::string, std::vector<double>>> columns = {
              {"BLEU", col_bleu},       {"Self-BLEU", col_self},       {"QA_source", col_qsrc},
              {"QA_context", col_qctx}, {"answerability", col_ans},    {"correctness", col_corr},
              {"external_knowledge", col_ext}, {"relevance", col_rel}, {"soundness", col_sound}};
          if (an_per_system_mean) {
            // aggregate each column per system before correlating
            std::map<std::string, std::vector<size_t>> by_system;
            size_t item = 0;
            for (const auto& rec : records) {
              const auto sys = std::find_if(systems.begin(), systems.end(),
                                            [&](const auto& s) { return s.name == rec.system_name; });
              if (sys == systems.end()) continue;
              const auto row = std::find_if(sys->rows.begin(), sys->rows.end(),
                                            [&](const GenerationRow& r) { return r.id == rec.sample_id; });
              if (row == sys->rows.end()) continue;
              by_system[rec.system_name].push_back(item++);
            }
            std::vector<std::pair<std::string, std::vector<double>>> means;
            for (auto& [name, values] : columns) {
              std::vector<double> agg;
              for (const auto& [sys_name, idxs] : by_system) {
                double sum = 0.0;
                for (const size_t i : idxs) sum += values[i];
                agg.push_back(sum / static_cast<double>(idxs.size()));
              }
              means.emplace_back(name, std::move(agg));
            }
            columns = std::move(means);
          }
          const auto matrix = analysis::correlation_matrix(columns);
          analysis::write_correlation_csv(matrix, an_out + "/correlation.csv");
          report_md << "## metric / rating correlation\n\n```\n"
                    << analysis::render_correlation(matrix) << "```\n\n";
        } else {
          report_md << "## metric / rating correlation\n\nnot enough joined rows\n\n";
        }
      }

      runcfg::RunConfig rc;
      rc.set("command", std::string("analyze"));
      rc.set("data", an_data);
      rc.set("ratings", an_ratings);
      rc.set("top_k", static_cast<long>(an_top_k));
      rc.set("seed", static_cast<long>(seed));
      rc.write_to_dir(an_out);
      std::cout << "report bundle written to " << an_out << "\n";
      return 0;
    }

    if (*stub_cmd) {
      // deterministic battery over seeded synthetic question/context pairs
      qa::StubScorer stub;
      std::mt19937_64 rng(seed);
      const std::vector<std::string> words = {"tesla",  "questions", "founded", "school", "river",
                                              "battle", "album",     "1879",    "spector", "london",
                                              "music",  "engine",    "physics", "professor"};
      uint64_t digest = 1469598103934665603ULL;  // FNV offset basis
      auto mix_into_digest = [&digest](const std::string& s) {
        for (const unsigned char c : s) {
          digest ^= c;
          digest *= 1099511628211ULL;
        }
      };
      for (int i = 0; i < stub_n; ++i) {
        std::string question = "what about";
        std::string context;
        for (int w = 0; w < 4; ++w) question += " " + words[rng() % words.size()];
        for (int w = 0; w < 10; ++w) context += (w ? " " : "") + words[rng() % words.size()];
        const auto score = stub.score(question + " ?", context);
        char line[160];
        std::snprintf(line, sizeof(line), "case %d prob=%.12f answer=%s", i, score.probability,
                      score.answer_text.c_str());
        mix_into_digest(line);
        if (i < 5) std::cout << line << "\n";
      }
      std::cout << "cases=" << stub_n << " digest=" << std::hex << digest << std::dec << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
