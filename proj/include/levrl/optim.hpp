#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "levrl/checkpoint.hpp"
#include "levrl/tensor.hpp"

LEVRL_NAMESPACE_BEGIN

/// A named trainable tensor. The tensor handle is shared with the layer that
/// uses it, so updates through either are visible to both.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// value -= lr * grad for every parameter, then clears the gradients.
/// Throws PreconditionError if any parameter has no gradient.
void sgd_step(std::span<Parameter> params, Real lr);

/// Global L2 norm of all gradients (missing gradients count as zero).
double grad_norm(std::span<const Parameter> params);

/// Rescales gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter> params, double max_norm);

/// Gives every parameter without a gradient an all-zero one.
void fill_missing_grads(std::span<Parameter> params);

void zero_grads(std::span<Parameter> params);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double regardless of the
/// library precision.
class Adam {
 public:
  Adam() = default;
  Adam(std::span<const Parameter> params, AdamOptions options = {});

  /// Applies one update with learning rate `lr` and clears the gradients.
  void step(std::span<Parameter> params, double lr);

  void reset();
  long steps_taken() const { return steps_; }
  const AdamOptions& options() const { return options_; }

  // Checkpoint access.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(long steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  AdamOptions options_;
  long steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

/// Either plain gradient descent or Adam behind one interface.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, std::span<const Parameter> params);

  OptimizerKind kind() const { return kind_; }
  void step(std::span<Parameter> params, double lr);
  long steps_taken() const { return steps_; }
  void reset();

  /// Adds "optim.*" arrays and an "optimizer" header entry.
  void save_state(CheckpointData& data) const;
  /// Restores what save_state wrote; throws ConfigError on a mismatch.
  void load_state(const CheckpointData& data);

 private:
  OptimizerKind kind_ = OptimizerKind::Sgd;
  long steps_ = 0;
  Adam adam_;
  std::vector<std::string> names_;
  std::vector<std::size_t> sizes_;
};

/// Linear warmup from lr/warmup to lr over `warmup` steps (1-based step).
double warmup_lr(double lr, long step, long warmup);

LEVRL_NAMESPACE_END
