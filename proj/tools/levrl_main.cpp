#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <memory>

#include "levrl/commands.hpp"

using namespace levrl;

namespace {

// Options that override fields of a RunConfig, applied only when given on
// the command line (or, for --threads, through LEVRL_THREADS).
class Overrides {
 public:
  template <class T, class Set>
  CLI::Option* add(CLI::App* app, const std::string& name, const std::string& help, Set set) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    apply_.push_back([opt, value, set](RunConfig& c) {
      if (opt->count() > 0) set(c, *value);
    });
    return opt;
  }

  template <class Set>
  CLI::Option* flag(CLI::App* app, const std::string& name, const std::string& help, Set set) {
    auto value = std::make_shared<bool>(false);
    CLI::Option* opt = app->add_flag(name, *value, help);
    apply_.push_back([value, set](RunConfig& c) {
      if (*value) set(c);
    });
    return opt;
  }

  RunConfig resolve(const std::string& config_path) const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& f : apply_) f(c);
    return c;
  }

 private:
  std::vector<std::function<void(RunConfig&)>> apply_;
};

void add_common(CLI::App* app, Overrides& o, std::string& config_path) {
  app->add_option("--config", config_path, "JSON run configuration; flags override its values")
      ->check(CLI::ExistingFile);
  o.add<std::uint64_t>(app, "--seed", "Root seed", [](RunConfig& c, std::uint64_t v) { c.seed = v; });
  o.add<std::string>(app, "--out-dir", "Output directory", [](RunConfig& c, const std::string& v) { c.out_dir = v; });
  o.add<int>(app, "--threads", "Worker threads for evaluation", [](RunConfig& c, int v) { c.threads = v; })
      ->envname("LEVRL_THREADS");
}

void add_data_dir(CLI::App* app, Overrides& o) {
  o.add<std::string>(app, "--data-dir", "Dataset directory written by `gen`",
                     [](RunConfig& c, const std::string& v) { c.data_dir = v; });
}

void add_checkpoint(CLI::App* app, Overrides& o, const std::string& help) {
  o.add<std::string>(app, "--checkpoint", help, [](RunConfig& c, const std::string& v) { c.checkpoint = v; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Levenshtein Transformer workbench: synthetic data, supervised pretraining and RL fine-tuning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "levrl 0.1.0");

  // gen
  std::string gen_config;
  Overrides gen_o;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(gen, gen_o, gen_config);
  gen_o.add<std::string>(gen, "--task", "copy | reverse | sort | lexmap",
                         [](RunConfig& c, const std::string& v) { c.data.task = parse_task(v); });
  gen_o.add<int>(gen, "--vocab-size", "Number of content symbols", [](RunConfig& c, int v) { c.data.vocab_size = v; });
  gen_o.add<int>(gen, "--min-len", "Shortest source", [](RunConfig& c, int v) { c.data.min_len = v; });
  gen_o.add<int>(gen, "--max-len", "Longest source", [](RunConfig& c, int v) { c.data.max_len = v; });
  gen_o.add<std::size_t>(gen, "--n-train", "Training pairs", [](RunConfig& c, std::size_t v) { c.data.n_train = v; });
  gen_o.add<std::size_t>(gen, "--n-valid", "Validation pairs", [](RunConfig& c, std::size_t v) { c.data.n_valid = v; });
  gen_o.add<std::size_t>(gen, "--n-test", "Test pairs", [](RunConfig& c, std::size_t v) { c.data.n_test = v; });

  // pretrain
  std::string pt_config;
  bool resume = false;
  Overrides pt_o;
  auto* pt = app.add_subcommand("pretrain", "Supervised imitation-learning pretraining");
  add_common(pt, pt_o, pt_config);
  add_data_dir(pt, pt_o);
  add_checkpoint(pt, pt_o, "Checkpoint to write (default <out-dir>/model.ckpt)");
  pt->add_flag("--resume", resume, "Continue from the checkpoint");
  pt_o.add<long>(pt, "--steps", "Training steps", [](RunConfig& c, long v) { c.pretrain.steps = v; });
  pt_o.add<int>(pt, "--batch", "Examples per step", [](RunConfig& c, int v) { c.pretrain.batch = v; });
  pt_o.add<double>(pt, "--lr", "Learning rate", [](RunConfig& c, double v) { c.pretrain.lr = v; });
  pt_o.add<long>(pt, "--warmup", "Linear warmup steps", [](RunConfig& c, long v) { c.pretrain.warmup = v; });
  pt_o.add<std::string>(pt, "--optimizer", "adam | sgd",
                        [](RunConfig& c, const std::string& v) { c.pretrain.optimizer = parse_optimizer(v); });
  pt_o.add<double>(pt, "--clip", "Gradient norm clip (<= 0 disables)",
                   [](RunConfig& c, double v) { c.pretrain.clip = v; });
  pt_o.add<int>(pt, "--max-placeholders", "Largest placeholder count per gap",
                [](RunConfig& c, int v) { c.model.max_placeholders = v; });
  pt_o.add<int>(pt, "--d-model", "Model width", [](RunConfig& c, int v) { c.model.d_model = v; });
  pt_o.add<int>(pt, "--n-heads", "Attention heads", [](RunConfig& c, int v) { c.model.n_heads = v; });
  pt_o.add<int>(pt, "--encoder-layers", "Encoder layers", [](RunConfig& c, int v) { c.model.n_encoder_layers = v; });
  pt_o.add<int>(pt, "--decoder-layers", "Decoder layers", [](RunConfig& c, int v) { c.model.n_decoder_layers = v; });
  pt_o.add<int>(pt, "--ffn-dim", "Feed-forward width", [](RunConfig& c, int v) { c.model.ffn_dim = v; });
  pt_o.add<int>(pt, "--max-seq-len", "Longest hypothesis", [](RunConfig& c, int v) { c.model.max_seq_len = v; });
  pt_o.add<long>(pt, "--log-every", "Steps per metrics record", [](RunConfig& c, long v) { c.pretrain.log_every = v; });
  pt_o.add<long>(pt, "--eval-every", "Steps between held-out evaluations (0: end only)",
                 [](RunConfig& c, long v) { c.pretrain.eval_every = v; });
  pt_o.add<std::size_t>(pt, "--eval-examples", "Validation pairs per evaluation",
                        [](RunConfig& c, std::size_t v) { c.pretrain.eval_examples = v; });
  pt_o.add<long>(pt, "--checkpoint-every", "Steps between checkpoints (0: end only)",
                 [](RunConfig& c, long v) { c.pretrain.checkpoint_every = v; });

  // rl
  std::string rl_config;
  Overrides rl_o;
  auto* rl = app.add_subcommand("rl", "Reinforcement-learning fine-tuning of a pretrained model");
  add_common(rl, rl_o, rl_config);
  add_data_dir(rl, rl_o);
  add_checkpoint(rl, rl_o, "Pretrained checkpoint to start from");
  rl_o.add<long>(rl, "--steps", "Update steps", [](RunConfig& c, long v) { c.rl.steps = v; });
  rl_o.add<int>(rl, "--batch", "Sources per update", [](RunConfig& c, int v) { c.rl.batch = v; });
  rl_o.add<double>(rl, "--lr", "Learning rate", [](RunConfig& c, double v) { c.rl.lr = v; });
  rl_o.add<std::string>(rl, "--approach", "stepwise | episodic",
                        [](RunConfig& c, const std::string& v) { c.rl.approach = parse_approach(v); })
      ->check(CLI::IsMember({"stepwise", "episodic"}));
  rl_o.add<int>(rl, "--k", "Samples per source (default 5)", [](RunConfig& c, int v) { c.rl.k = v; });
  rl_o.add<int>(rl, "--iterations", "Refinement iterations per rollout (default 3)",
                [](RunConfig& c, int v) { c.rl.iterations = v; });
  rl_o.add<std::string>(rl, "--schedule", "constant | anneal-down | anneal-up",
                        [](RunConfig& c, const std::string& v) { c.rl.schedule = parse_schedule(v); })
      ->check(CLI::IsMember({"constant", "anneal-down", "anneal-up"}));
  rl_o.add<double>(rl, "--tau0", "Initial temperature", [](RunConfig& c, double v) { c.rl.tau0 = v; });
  rl_o.add<double>(rl, "--tauT", "Final temperature", [](RunConfig& c, double v) { c.rl.tauT = v; });
  rl_o.add<long>(rl, "--anneal-steps", "Schedule length T (default: --steps)",
                 [](RunConfig& c, long v) { c.rl.anneal_steps = v; });
  rl_o.add<std::string>(rl, "--reward-smoothing", "none | addone",
                        [](RunConfig& c, const std::string& v) { c.rl.reward_smoothing = parse_smoothing(v); })
      ->check(CLI::IsMember({"none", "addone"}));
  rl_o.add<std::string>(rl, "--optimizer", "sgd | adam",
                        [](RunConfig& c, const std::string& v) { c.rl.optimizer = parse_optimizer(v); });
  rl_o.add<double>(rl, "--clip", "Gradient norm clip (<= 0 disables)", [](RunConfig& c, double v) { c.rl.clip = v; });
  rl_o.flag(rl, "--sweep", "Run the five temperature settings and write one comparison table",
            [](RunConfig& c) { c.rl.sweep = true; });
  rl_o.add<long>(rl, "--log-every", "Steps per progress line", [](RunConfig& c, long v) { c.rl.log_every = v; });
  rl_o.add<long>(rl, "--eval-every", "Steps between held-out evaluations (0: end only)",
                 [](RunConfig& c, long v) { c.rl.eval_every = v; });
  rl_o.add<std::size_t>(rl, "--eval-examples", "Validation pairs per evaluation",
                        [](RunConfig& c, std::size_t v) { c.rl.eval_examples = v; });
  rl_o.add<long>(rl, "--trace-every", "Steps between trace records (0: none)",
                 [](RunConfig& c, long v) { c.rl.trace_every = v; });

  // decode
  DecodeRequest dec;
  auto* decode = app.add_subcommand("decode", "Greedy decoding of a source file");
  decode->add_option("--checkpoint", dec.checkpoint, "Trained model")->required();
  decode->add_option("--input", dec.input, "JSONL file with \"src\" arrays")->required();
  decode->add_option("--output", dec.output, "Output JSONL (default stdout)");
  decode->add_option("--max-iters", dec.max_iters, "Refinement iterations")->check(CLI::PositiveNumber);
  decode->add_option("--threads", dec.threads, "Worker threads")->envname("LEVRL_THREADS")->check(CLI::PositiveNumber);
  decode->add_flag("--text", dec.text, "Print surface strings instead of JSON");

  // eval
  EvalRequest ev;
  auto* eval = app.add_subcommand("eval", "Corpus BLEU x100 of hypotheses against references");
  eval->add_option("--hyp", ev.hyp, "JSONL with \"hyp\" arrays (as written by decode)");
  eval->add_option("--ref", ev.ref, "JSONL with \"tgt\" arrays");
  eval->add_option("--checkpoint", ev.checkpoint, "Model to decode --input with");
  eval->add_option("--input", ev.input, "JSONL pairs to decode and score");
  eval->add_option("--max-iters", ev.max_iters, "Refinement iterations")->check(CLI::PositiveNumber);
  eval->add_option("--threads", ev.threads, "Worker threads")->envname("LEVRL_THREADS")->check(CLI::PositiveNumber);

  // stats
  std::filesystem::path stats_input;
  auto* stats = app.add_subcommand("stats", "Render report tables of a run");
  stats->add_option("--input,input", stats_input, "CSV/JSONL report or run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      RunConfig c = gen_o.resolve(gen_config);
      if (gen->count("--seed") > 0) c.data.seed = c.seed;
      return cmd_gen(c, std::cout);
    }
    if (*pt) {
      return cmd_pretrain(pt_o.resolve(pt_config), resume, std::cout);
    }
    if (*rl) return cmd_rl(rl_o.resolve(rl_config), std::cout);
    if (*decode) return cmd_decode(dec, std::cout);
    if (*eval) return cmd_eval(ev, std::cout);
    if (*stats) return cmd_stats(stats_input, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "levrl: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "levrl: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
