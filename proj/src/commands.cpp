#include "levrl/commands.hpp"

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "levrl/bleu.hpp"
#include "levrl/edit.hpp"
#include "levrl/jsonl.hpp"

LEVRL_NAMESPACE_BEGIN

namespace fs = std::filesystem;

namespace {

std::string percent(double bleu) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100 * bleu;
  return os.str();
}

fs::path require_dir(const std::string& dir, const char* flag, const char* command) {
  if (dir.empty()) throw ConfigError(std::string(command) + " needs " + flag);
  return dir;
}

Dataset load_data(const RunConfig& config, const char* command) {
  const fs::path dir = require_dir(config.data_dir, "--data-dir", command);
  if (!fs::exists(dir / "dataset.json")) {
    throw IoError("no dataset in " + dir.string() + " (expected " + (dir / "dataset.json").string() +
                  "); create one with `levrl gen --out-dir " + dir.string() + "`");
  }
  return load_dataset(dir);
}

// The dataset decides the model vocabulary.
RunConfig bind_dataset(RunConfig config, const Dataset& data) {
  config.data = data.spec;
  config.model.vocab_size = data.spec.model_vocab_size();
  config.validate();
  return config;
}

std::vector<TokenSeq> token_field(const std::vector<nlohmann::json>& records, const char* field,
                                  const fs::path& path) {
  std::vector<TokenSeq> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.is_object() || !r.contains(field) || !r[field].is_array()) {
      throw IoError(path.string() + ": record " + std::to_string(i + 1) + " has no '" + field + "' array");
    }
    out.push_back(r[field].get<TokenSeq>());
  }
  return out;
}

std::vector<Example> read_sources(const fs::path& path, int model_vocab) {
  if (!fs::exists(path)) throw IoError("input file not found: " + path.string());
  auto pairs = read_pairs(path, model_vocab);
  if (pairs.empty()) throw IoError("no sources in " + path.string() + ": the file is empty");
  return pairs;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& csv) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(std::move(cells));
  }
  return rows;
}

void metrics_summary(const fs::path& path, std::ostream& out) {
  const auto records = read_jsonl(path);
  out << "metrics: " << records.size() << " records in " << path.string() << "\n";
  std::vector<std::pair<long, double>> heldout;
  for (const auto& r : records) {
    if (r.contains("heldout_bleu") && r["heldout_bleu"].is_number()) {
      heldout.emplace_back(r.value("step", 0L), r["heldout_bleu"].get<double>());
    }
  }
  if (!heldout.empty()) {
    out << "  held-out BLEU: first " << percent(heldout.front().second) << " (step " << heldout.front().first
        << "), last " << percent(heldout.back().second) << " (step " << heldout.back().first << ")\n";
  }
}

void trace_summary(const fs::path& path, std::ostream& out) {
  const auto records = read_jsonl(path);
  double reward = 0;
  std::size_t clamped = 0, steps = 0;
  for (const auto& r : records) {
    reward += r.value("reward", 0.0);
    clamped += r.value("clamped", false) ? 1 : 0;
    if (r.contains("steps") && r["steps"].is_array()) steps += r["steps"].size();
  }
  out << "traces: " << records.size() << " in " << path.string();
  if (!records.empty()) {
    out << ", mean final reward " << std::fixed << std::setprecision(4) << reward / double(records.size())
        << std::defaultfloat << ", mean edits " << std::setprecision(3) << double(steps) / double(records.size())
        << ", clamped " << clamped;
  }
  out << "\n";
}

}  // namespace

fs::path require_checkpoint(const fs::path& path, const std::string& hint) {
  if (path.empty()) throw ConfigError("no checkpoint given: pass --checkpoint (" + hint + ")");
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string() + " (" + hint + ")");
  return path;
}

int cmd_gen(const RunConfig& config, std::ostream& out) {
  config.data.validate();
  const fs::path dir = require_dir(config.out_dir, "--out-dir", "gen");
  const Dataset data = generate_dataset(config.data);
  write_dataset(data, dir);
  out << "wrote " << to_string(data.spec.task) << " dataset to " << dir.string() << ": " << data.train.size()
      << " train, " << data.valid.size() << " valid, " << data.test.size() << " test pairs\n";
  return 0;
}

int cmd_pretrain(const RunConfig& requested, bool resume, std::ostream& out) {
  const Dataset data = load_data(requested, "pretrain");
  const RunConfig config = bind_dataset(requested, data);
  const fs::path dir = require_dir(config.out_dir, "--out-dir", "pretrain");
  const fs::path ckpt = config.checkpoint.empty() ? dir / "model.ckpt" : fs::path(config.checkpoint);
  fs::create_directories(dir);
  config.save(dir / "config.json");

  PretrainOptions options = config.pretrain_options();
  options.checkpoint = ckpt;
  options.metrics = dir / "metrics.jsonl";
  options.log = &out;

  std::optional<LoadedTraining> loaded;
  if (resume) {
    require_checkpoint(ckpt, "resume needs the checkpoint of an earlier pretrain run");
    loaded.emplace(load_training_checkpoint(ckpt, config.pretrain.optimizer));
    if (!(loaded->model.config() == config.model)) {
      throw ConfigError("checkpoint " + ckpt.string() + " was trained with model config " +
                        loaded->model.config().to_json().dump() + ", not " + config.model.to_json().dump());
    }
    out << "resuming from " << ckpt.string() << " at step " << loaded->state.step << "\n";
  } else {
    LevtModel model(config.model, config.init_seed());
    TrainingState state = fresh_training_state(model, config.pretrain.optimizer);
    loaded.emplace(LoadedTraining{std::move(model), std::move(state), {}});
  }
  const PretrainResult result = pretrain(loaded->model, loaded->state, data.train, data.valid, options);
  out << "pretrain finished at step " << result.last_step << ": held-out BLEU " << percent(result.final_bleu)
      << "\ncheckpoint: " << ckpt.string() << "\n";
  return 0;
}

int cmd_rl(const RunConfig& requested, std::ostream& out) {
  const Dataset data = load_data(requested, "rl");
  RunConfig config = bind_dataset(requested, data);
  const fs::path dir = require_dir(config.out_dir, "--out-dir", "rl");
  const fs::path ckpt =
      require_checkpoint(config.checkpoint, "rl starts from a pretrained model; run `levrl pretrain --data-dir " +
                                                config.data_dir + " --out-dir <dir>` and pass <dir>/model.ckpt");
  LevtModel model = LevtModel::load(ckpt);
  if (model.config().vocab_size != data.spec.model_vocab_size()) {
    throw ConfigError("checkpoint " + ckpt.string() + " has vocabulary " + std::to_string(model.config().vocab_size) +
                      " but the dataset needs " + std::to_string(data.spec.model_vocab_size()));
  }
  config.model = model.config();
  fs::create_directories(dir);
  config.save(dir / "config.json");

  RlOptions options = config.rl_options();
  options.log = &out;
  options.traces = dir / "traces.jsonl";
  if (config.rl.sweep) {
    const auto rows = run_sweep(model, data.train, data.valid, options, dir);
    out << "\n" << render_csv_table(sweep_csv(rows));
    bool ok = true;
    for (const auto& row : rows) {
      if (!row.trajectory_ok) {
        out << "temperature trajectory of " << row.schedule.label() << " is not monotone\n";
        ok = false;
      }
    }
    out << "table: " << (dir / "temperature_sweep.csv").string() << "\n";
    return ok ? 0 : 1;
  }

  options.checkpoint = dir / "model.ckpt";
  options.metrics = dir / "metrics.jsonl";
  options.advantage_csv = dir / "advantage_sd.csv";
  const RlResult result = rl_finetune(model, data.train, data.valid, options);
  nlohmann::json summary{{"approach", to_string(config.rl.approach)},
                         {"schedule", options.schedule.label()},
                         {"steps", config.rl.steps},
                         {"initial_bleu", result.initial_bleu},
                         {"final_bleu", result.final_bleu},
                         {"trajectory_valid", trajectory_valid(options.schedule, result.taus)}};
  if (config.rl.approach == Approach::Stepwise) summary["advantage_sd"] = result.stats.to_json();
  write_text_file(dir / "summary.json", summary.dump(2) + "\n");
  out << "held-out BLEU " << percent(result.initial_bleu) << " -> " << percent(result.final_bleu) << "\n";
  if (config.rl.approach == Approach::Stepwise) out << "\n" << render_csv_table(result.stats.to_csv());
  out << "checkpoint: " << options.checkpoint.string() << "\n";
  return 0;
}

int cmd_decode(const DecodeRequest& request, std::ostream& out) {
  require_checkpoint(request.checkpoint, "decode needs a trained model");
  const LevtModel model = LevtModel::load(request.checkpoint);
  const auto sources = read_sources(request.input, model.config().vocab_size);
  const auto hyps = decode_all(model, sources, request.max_iters, request.threads);

  std::ofstream file;
  std::ostream* sink = &out;
  if (!request.output.empty()) {
    if (request.output.has_parent_path()) fs::create_directories(request.output.parent_path());
    file.open(request.output);
    if (!file) throw IoError("cannot write " + request.output.string());
    sink = &file;
  }
  const auto words = vocabulary_strings(model.config().vocab_size - vocab::kFirstContent);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (request.text) {
      for (std::size_t j = 0; j < hyps[i].size(); ++j) {
        *sink << (j ? " " : "") << words[std::size_t(hyps[i][j])];
      }
      *sink << "\n";
    } else {
      nlohmann::json j{{"src", sources[i].src}, {"hyp", hyps[i]}};
      if (!sources[i].tgt.empty()) j["tgt"] = sources[i].tgt;
      *sink << j.dump() << "\n";
    }
  }
  sink->flush();
  if (!*sink) throw IoError("failed writing decoded output");
  return 0;
}

int cmd_eval(const EvalRequest& request, std::ostream& out) {
  std::vector<TokenPair> pairs;
  if (!request.hyp.empty()) {
    if (request.ref.empty()) throw ConfigError("eval with --hyp also needs --ref");
    for (const auto& p : {request.hyp, request.ref}) {
      if (!fs::exists(p)) throw IoError("file not found: " + p.string());
    }
    const auto hyps = token_field(read_jsonl(request.hyp), "hyp", request.hyp);
    const auto refs = token_field(read_jsonl(request.ref), "tgt", request.ref);
    if (hyps.size() != refs.size()) {
      throw IoError("eval: " + std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) +
                    " references");
    }
    for (std::size_t i = 0; i < hyps.size(); ++i) pairs.emplace_back(hyps[i], refs[i]);
  } else {
    require_checkpoint(request.checkpoint, "eval needs --hyp/--ref or a model and --input");
    const LevtModel model = LevtModel::load(request.checkpoint);
    const auto examples = read_sources(request.input, model.config().vocab_size);
    const auto hyps = decode_all(model, examples, request.max_iters, request.threads);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (examples[i].tgt.empty()) {
        throw IoError(request.input.string() + ": record " + std::to_string(i + 1) + " has no 'tgt' reference");
      }
      pairs.emplace_back(hyps[i], examples[i].tgt);
    }
  }
  if (pairs.empty()) throw IoError("eval: nothing to score");
  out << percent(corpus_bleu(pairs)) << "\n";
  return 0;
}

std::string render_csv_table(const std::string& csv) {
  const auto rows = parse_csv(csv);
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      os << rows[r][c];
      if (c + 1 < rows[r].size()) os << std::string(width[c] - rows[r][c].size() + 2, ' ');
    }
    os << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c + 1 < width.size() ? 2 : 0);
      os << std::string(total, '-') << "\n";
    }
  }
  return os.str();
}

int cmd_stats(const fs::path& input, std::ostream& out) {
  if (input.empty()) throw ConfigError("stats needs --input (a CSV report or a run directory)");
  if (!fs::exists(input)) throw IoError("not found: " + input.string());
  if (!fs::is_directory(input)) {
    if (input.extension() == ".jsonl") {
      if (input.filename() == "traces.jsonl") trace_summary(input, out);
      else metrics_summary(input, out);
    } else {
      out << render_csv_table(read_text_file(input));
    }
    return 0;
  }
  bool any = false;
  if (fs::exists(input / "advantage_sd.csv")) {
    out << "advantage SD per merged operation\n" << render_csv_table(read_text_file(input / "advantage_sd.csv"))
        << "\n";
    any = true;
  }
  if (fs::exists(input / "temperature_sweep.csv")) {
    out << "temperature sweep\n" << render_csv_table(read_text_file(input / "temperature_sweep.csv")) << "\n";
    any = true;
  }
  if (fs::exists(input / "metrics.jsonl")) {
    metrics_summary(input / "metrics.jsonl", out);
    any = true;
  }
  if (fs::exists(input / "traces.jsonl")) {
    trace_summary(input / "traces.jsonl", out);
    any = true;
  }
  if (!any) throw IoError("no reports in " + input.string());
  return 0;
}

LEVRL_NAMESPACE_END
