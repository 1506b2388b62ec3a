#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "levrl/dataset.hpp"
#include "levrl/model.hpp"
#include "levrl/rl.hpp"
#include "levrl/supervised.hpp"

LEVRL_NAMESPACE_BEGIN

struct PretrainConfig {
  long steps = 10000;
  int batch = 32;
  double lr = 3e-4;
  long warmup = 500;
  double clip = 1.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  RollInOptions rollin;
  long self_rollin_after = 500;
  long log_every = 100;
  long eval_every = 1000;
  std::size_t eval_examples = 200;
  long checkpoint_every = 1000;
};

struct RlConfig {
  Approach approach = Approach::Episodic;
  long steps = 5000;
  int batch = 8;
  int k = 5;
  int iterations = 3;
  double lr = 0.01;
  double clip = 1.0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  ScheduleKind schedule = ScheduleKind::Constant;
  double tau0 = 1.0;
  double tauT = 1.0;
  long anneal_steps = 0;  // 0: same as steps
  BleuSmoothing reward_smoothing = BleuSmoothing::AddOne;
  long log_every = 50;
  long eval_every = 500;
  std::size_t eval_examples = 200;
  long trace_every = 100;
  bool sweep = false;

  TemperatureSchedule temperature() const;
};

/// Every knob of a run. Model vocabulary follows the dataset.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  int max_decode_iters = 10;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
  DatasetSpec data;
  ModelConfig model;
  PretrainConfig pretrain;
  RlConfig rl;

  RunConfig();

  /// Every violated constraint, empty when valid.
  std::vector<std::string> problems() const;
  /// Throws ConfigError listing every violated constraint.
  void validate() const;

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are a ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::uint64_t init_seed() const;
  PretrainOptions pretrain_options() const;
  RlOptions rl_options() const;
};

LEVRL_NAMESPACE_END
