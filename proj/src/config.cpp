#include "levrl/config.hpp"

#include <cmath>
#include <functional>
#include <map>

#include "levrl/jsonl.hpp"
#include "levrl/rng.hpp"

LEVRL_NAMESPACE_BEGIN

namespace {

using nlohmann::json;

// Reads one JSON object into named fields, collecting unknown keys and type
// errors instead of stopping at the first.
class Section {
 public:
  Section(const json& j, std::string prefix, std::vector<std::string>& errors)
      : j_(j), prefix_(std::move(prefix)), errors_(errors) {
    if (!j.is_object()) errors_.push_back(name("") + " must be an object");
  }

  template <class T>
  Section& field(const std::string& key, T& out) {
    setters_[key] = [&out](const json& v) { out = v.template get<T>(); };
    return *this;
  }

  template <class T, class Parse>
  Section& parsed(const std::string& key, T& out, Parse parse) {
    setters_[key] = [&out, parse](const json& v) { out = parse(v.template get<std::string>()); };
    return *this;
  }

  Section& custom(const std::string& key, std::function<void(const json&)> set) {
    setters_[key] = std::move(set);
    return *this;
  }

  void read() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items()) {
      const auto it = setters_.find(key);
      if (it == setters_.end()) {
        errors_.push_back("unknown key '" + name(key) + "'");
        continue;
      }
      try {
        it->second(value);
      } catch (const json::exception&) {
        errors_.push_back("key '" + name(key) + "' has the wrong type");
      } catch (const Error& e) {
        errors_.push_back("key '" + name(key) + "': " + e.what());
      }
    }
  }

 private:
  std::string name(const std::string& key) const {
    if (prefix_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

  const json& j_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::map<std::string, std::function<void(const json&)>> setters_;
};

void check(std::vector<std::string>& out, bool ok, const std::string& what) {
  if (!ok) out.push_back(what);
}

bool is_rate(double x) { return x >= 0 && x <= 1; }
bool is_lr(double x) { return std::isfinite(x) && x >= 0; }

}  // namespace

TemperatureSchedule RlConfig::temperature() const {
  TemperatureSchedule s;
  s.kind = schedule;
  s.tau0 = tau0;
  s.tauT = schedule == ScheduleKind::Constant ? tau0 : tauT;
  s.total_steps = anneal_steps > 0 ? anneal_steps : steps;
  return s;
}

RunConfig::RunConfig() { model.vocab_size = data.model_vocab_size(); }

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  for (const auto& p : data.problems()) out.push_back("data: " + p);
  for (const auto& p : model.problems()) out.push_back("model: " + p);
  check(out, model.vocab_size == data.model_vocab_size(),
        "model.vocab_size (" + std::to_string(model.vocab_size) + ") must equal data.vocab_size + 5 (" +
            std::to_string(data.model_vocab_size()) + ")");
  check(out, data.max_len + 2 <= model.max_seq_len, "data.max_len plus the two sentinels must fit model.max_seq_len");
  check(out, threads >= 1, "threads must be at least 1");
  check(out, max_decode_iters >= 1, "max_decode_iters must be at least 1");

  const auto& p = pretrain;
  check(out, p.steps >= 1, "pretrain.steps must be at least 1");
  check(out, p.batch >= 1, "pretrain.batch must be at least 1");
  check(out, is_lr(p.lr), "pretrain.lr must be finite and non-negative");
  check(out, p.warmup >= 0, "pretrain.warmup must be non-negative");
  check(out, std::isfinite(p.clip), "pretrain.clip must be finite");
  check(out, is_rate(p.rollin.drop_rate), "pretrain.drop_rate must lie in [0, 1]");
  check(out, is_rate(p.rollin.null_rate), "pretrain.null_rate must lie in [0, 1]");
  check(out, is_rate(p.rollin.self_rate), "pretrain.self_rate must lie in [0, 1]");
  check(out, is_rate(p.rollin.noise_rate), "pretrain.noise_rate must lie in [0, 1]");
  check(out, p.rollin.null_rate + p.rollin.self_rate <= 1, "pretrain.null_rate + pretrain.self_rate must not exceed 1");
  check(out, p.self_rollin_after >= 0, "pretrain.self_rollin_after must be non-negative");
  check(out, p.log_every >= 1, "pretrain.log_every must be at least 1");
  check(out, p.eval_every >= 0, "pretrain.eval_every must be non-negative");
  check(out, p.checkpoint_every >= 0, "pretrain.checkpoint_every must be non-negative");

  const auto& r = rl;
  check(out, r.steps >= 1, "rl.steps must be at least 1");
  check(out, r.batch >= 1, "rl.batch must be at least 1");
  check(out, r.k >= 2, "rl.k must be at least 2");
  check(out, r.iterations >= 1, "rl.iterations must be at least 1");
  check(out, is_lr(r.lr), "rl.lr must be finite and non-negative");
  check(out, std::isfinite(r.clip), "rl.clip must be finite");
  check(out, r.tau0 > 0 && std::isfinite(r.tau0), "rl.tau0 must be positive");
  if (r.schedule != ScheduleKind::Constant) {
    check(out, r.tauT > 0 && std::isfinite(r.tauT), "rl.tauT must be positive");
    check(out, r.schedule != ScheduleKind::AnnealDown || r.tau0 >= r.tauT, "anneal-down needs rl.tau0 >= rl.tauT");
    check(out, r.schedule != ScheduleKind::AnnealUp || r.tau0 <= r.tauT, "anneal-up needs rl.tau0 <= rl.tauT");
  }
  check(out, r.anneal_steps >= 0, "rl.anneal_steps must be non-negative");
  check(out, r.log_every >= 1, "rl.log_every must be at least 1");
  check(out, r.eval_every >= 0, "rl.eval_every must be non-negative");
  check(out, r.trace_every >= 0, "rl.trace_every must be non-negative");
  return out;
}

void RunConfig::validate() const {
  const auto found = problems();
  if (found.empty()) return;
  std::string msg = "invalid configuration (" + std::to_string(found.size()) + " problem" +
                    (found.size() == 1 ? "" : "s") + "):";
  for (const auto& p : found) msg += "\n  - " + p;
  throw ConfigError(msg);
}

nlohmann::json RunConfig::to_json() const {
  const auto& p = pretrain;
  const auto& r = rl;
  return {
      {"seed", seed},
      {"threads", threads},
      {"max_decode_iters", max_decode_iters},
      {"data_dir", data_dir},
      {"out_dir", out_dir},
      {"checkpoint", checkpoint},
      {"data", data.to_json()},
      {"model", model.to_json()},
      {"pretrain",
       {{"steps", p.steps},
        {"batch", p.batch},
        {"lr", p.lr},
        {"warmup", p.warmup},
        {"clip", p.clip},
        {"optimizer", to_string(p.optimizer)},
        {"drop_rate", p.rollin.drop_rate},
        {"null_rate", p.rollin.null_rate},
        {"self_rate", p.rollin.self_rate},
        {"noise_rate", p.rollin.noise_rate},
        {"self_rollin_after", p.self_rollin_after},
        {"log_every", p.log_every},
        {"eval_every", p.eval_every},
        {"eval_examples", p.eval_examples},
        {"checkpoint_every", p.checkpoint_every}}},
      {"rl",
       {{"approach", to_string(r.approach)},
        {"steps", r.steps},
        {"batch", r.batch},
        {"k", r.k},
        {"iterations", r.iterations},
        {"lr", r.lr},
        {"clip", r.clip},
        {"optimizer", to_string(r.optimizer)},
        {"schedule", to_string(r.schedule)},
        {"tau0", r.tau0},
        {"tauT", r.tauT},
        {"anneal_steps", r.anneal_steps},
        {"reward_smoothing", to_string(r.reward_smoothing)},
        {"log_every", r.log_every},
        {"eval_every", r.eval_every},
        {"eval_examples", r.eval_examples},
        {"trace_every", r.trace_every},
        {"sweep", r.sweep}}},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  std::vector<std::string> errors;
  bool model_vocab_given = false;
  json data_j = json::object(), model_j = json::object(), pretrain_j = json::object(), rl_j = json::object();

  Section(j, "", errors)
      .field("seed", c.seed)
      .field("threads", c.threads)
      .field("max_decode_iters", c.max_decode_iters)
      .field("data_dir", c.data_dir)
      .field("out_dir", c.out_dir)
      .field("checkpoint", c.checkpoint)
      .field("data", data_j)
      .field("model", model_j)
      .field("pretrain", pretrain_j)
      .field("rl", rl_j)
      .read();

  if (!data_j.is_object()) errors.push_back("data must be an object");
  else {
    try {
      c.data = DatasetSpec::from_json(data_j);
    } catch (const std::exception& e) {
      errors.push_back(std::string("data: ") + e.what());
    }
  }
  c.model.vocab_size = c.data.model_vocab_size();
  if (!model_j.is_object()) errors.push_back("model must be an object");
  else {
    model_vocab_given = model_j.contains("vocab_size");
    try {
      json merged = c.model.to_json();
      merged.update(model_j);
      c.model = ModelConfig::from_json(merged);
    } catch (const std::exception& e) {
      errors.push_back(std::string("model: ") + e.what());
    }
  }
  if (!model_vocab_given) c.model.vocab_size = c.data.model_vocab_size();

  auto& p = c.pretrain;
  Section(pretrain_j, "pretrain", errors)
      .field("steps", p.steps)
      .field("batch", p.batch)
      .field("lr", p.lr)
      .field("warmup", p.warmup)
      .field("clip", p.clip)
      .parsed("optimizer", p.optimizer, parse_optimizer)
      .field("drop_rate", p.rollin.drop_rate)
      .field("null_rate", p.rollin.null_rate)
      .field("self_rate", p.rollin.self_rate)
      .field("noise_rate", p.rollin.noise_rate)
      .field("self_rollin_after", p.self_rollin_after)
      .field("log_every", p.log_every)
      .field("eval_every", p.eval_every)
      .field("eval_examples", p.eval_examples)
      .field("checkpoint_every", p.checkpoint_every)
      .read();

  auto& r = c.rl;
  Section(rl_j, "rl", errors)
      .parsed("approach", r.approach, parse_approach)
      .field("steps", r.steps)
      .field("batch", r.batch)
      .field("k", r.k)
      .field("iterations", r.iterations)
      .field("lr", r.lr)
      .field("clip", r.clip)
      .parsed("optimizer", r.optimizer, parse_optimizer)
      .parsed("schedule", r.schedule, parse_schedule)
      .field("tau0", r.tau0)
      .field("tauT", r.tauT)
      .field("anneal_steps", r.anneal_steps)
      .parsed("reward_smoothing", r.reward_smoothing, parse_smoothing)
      .field("log_every", r.log_every)
      .field("eval_every", r.eval_every)
      .field("eval_examples", r.eval_examples)
      .field("trace_every", r.trace_every)
      .field("sweep", r.sweep)
      .read();

  if (!errors.empty()) {
    std::string msg = "invalid configuration file:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON: " + e.what());
  }
  try {
    return from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void RunConfig::save(const std::filesystem::path& path) const { write_text_file(path, to_json().dump(2) + "\n"); }

std::uint64_t RunConfig::init_seed() const { return derive_seed(seed, "init"); }

PretrainOptions RunConfig::pretrain_options() const {
  PretrainOptions o;
  o.steps = pretrain.steps;
  o.batch = pretrain.batch;
  o.lr = pretrain.lr;
  o.warmup = pretrain.warmup;
  o.clip = pretrain.clip;
  o.optimizer = pretrain.optimizer;
  o.rollin = pretrain.rollin;
  o.self_rollin_after = pretrain.self_rollin_after;
  o.log_every = pretrain.log_every;
  o.eval_every = pretrain.eval_every;
  o.eval_examples = pretrain.eval_examples;
  o.checkpoint_every = pretrain.checkpoint_every;
  o.seed = seed;
  o.threads = threads;
  return o;
}

RlOptions RunConfig::rl_options() const {
  RlOptions o;
  o.approach = rl.approach;
  o.schedule = rl.temperature();
  o.steps = rl.steps;
  o.batch = rl.batch;
  o.update.k = rl.k;
  o.update.iterations = rl.iterations;
  o.update.tau = Real(o.schedule.tau0);
  o.update.lr = rl.lr;
  o.update.clip = rl.clip;
  o.update.smoothing = rl.reward_smoothing;
  o.optimizer = rl.optimizer;
  o.seed = seed;
  o.log_every = rl.log_every;
  o.eval_every = rl.eval_every;
  o.eval_examples = rl.eval_examples;
  o.threads = threads;
  o.trace_every = rl.trace_every;
  return o;
}

LEVRL_NAMESPACE_END
