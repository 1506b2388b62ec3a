#include "levrl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

LEVRL_NAMESPACE_BEGIN

void sgd_step(std::span<Parameter> params, Real lr) {
  if (!(lr >= 0)) throw InvalidArgument("sgd_step: learning rate must be non-negative");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw PreconditionError("sgd_step: parameter '" + p.name + "' has no gradient");
  }
  for (auto& p : params) {
    auto values = p.tensor.mutable_values();
    auto grad = p.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
    p.tensor.zero_grad();
  }
}

double grad_norm(std::span<const Parameter> params) {
  double total = 0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (Real g : p.tensor.grad()) total += double(g) * double(g);
  }
  return std::sqrt(total);
}

double clip_grad_norm(std::span<Parameter> params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (Real& g : p.tensor.mutable_grad()) g = Real(double(g) * factor);
    }
  }
  return norm;
}

void fill_missing_grads(std::span<Parameter> params) {
  for (auto& p : params) {
    if (!p.tensor.has_grad()) p.tensor.mutable_grad();
  }
}

void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

Adam::Adam(std::span<const Parameter> params, AdamOptions options) : options_(options) {
  for (const auto& p : params) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step(std::span<Parameter> params, double lr) {
  if (params.size() != m_.size()) throw InvalidArgument("Adam: parameter list changed size");
  if (!(lr >= 0)) throw InvalidArgument("Adam: learning rate must be non-negative");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw PreconditionError("Adam: parameter '" + p.name + "' has no gradient");
  }
  ++steps_;
  const double c1 = 1.0 - std::pow(options_.beta1, double(steps_));
  const double c2 = 1.0 - std::pow(options_.beta2, double(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].tensor.mutable_values();
    auto grad = params[k].tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = options_.beta1 * m[i] + (1 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1 - options_.beta2) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      values[i] = Real(double(values[i]) - update);
    }
    params[k].tensor.zero_grad();
  }
}

void Adam::reset() {
  steps_ = 0;
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
}

void Adam::restore(long steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("Adam::restore: moment count mismatch");
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (m[k].size() != m_[k].size() || v[k].size() != v_[k].size()) {
      throw ShapeError("Adam::restore: moment shape mismatch");
    }
  }
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd|adam)");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, std::span<const Parameter> params) : kind_(kind) {
  if (kind_ == OptimizerKind::Adam) adam_ = Adam(params);
  for (const auto& p : params) {
    names_.push_back(p.name);
    sizes_.push_back(p.tensor.size());
  }
}

void Optimizer::step(std::span<Parameter> params, double lr) {
  if (params.size() != names_.size()) throw InvalidArgument("Optimizer: parameter list changed size");
  if (kind_ == OptimizerKind::Adam) {
    adam_.step(params, lr);
  } else {
    sgd_step(params, Real(lr));
  }
  ++steps_;
}

void Optimizer::reset() {
  steps_ = 0;
  adam_.reset();
}

void Optimizer::save_state(CheckpointData& data) const {
  data.header["optimizer"] = {{"kind", to_string(kind_)}, {"steps", steps_}, {"adam_steps", adam_.steps_taken()}};
  if (kind_ != OptimizerKind::Adam) return;
  for (std::size_t k = 0; k < names_.size(); ++k) {
    data.arrays.push_back({"optim.m." + names_[k], {sizes_[k]}, adam_.first_moments()[k], StorageType::Float64});
    data.arrays.push_back({"optim.v." + names_[k], {sizes_[k]}, adam_.second_moments()[k], StorageType::Float64});
  }
}

void Optimizer::load_state(const CheckpointData& data) {
  if (!data.header.contains("optimizer")) throw ConfigError("checkpoint holds no optimizer state");
  const auto& h = data.header.at("optimizer");
  if (parse_optimizer(h.at("kind").get<std::string>()) != kind_) {
    throw ConfigError("checkpoint optimizer is " + h.at("kind").get<std::string>() + ", run uses " +
                      std::string(to_string(kind_)));
  }
  steps_ = h.at("steps").get<long>();
  if (kind_ != OptimizerKind::Adam) return;
  std::vector<std::vector<double>> m, v;
  for (std::size_t k = 0; k < names_.size(); ++k) {
    const NamedArray* a = data.find("optim.m." + names_[k]);
    const NamedArray* b = data.find("optim.v." + names_[k]);
    if (!a || !b) throw ConfigError("checkpoint lacks optimizer moments for '" + names_[k] + "'");
    m.push_back(a->values);
    v.push_back(b->values);
  }
  adam_.restore(h.at("adam_steps").get<long>(), std::move(m), std::move(v));
}

double warmup_lr(double lr, long step, long warmup) {
  if (warmup <= 0 || step >= warmup) return lr;
  return lr * double(std::max(step, 1L)) / double(warmup);
}

LEVRL_NAMESPACE_END
