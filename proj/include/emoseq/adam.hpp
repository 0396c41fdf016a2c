#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "emoseq/errors.hpp"
#include "emoseq/tensor.hpp"

namespace emoseq {

/// Named trainable tensor with its gradient accumulator.
template <std::floating_point T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  mutable Tensor<T> grad;  // accumulator, not part of the parameter's value

  Parameter(std::string name_, Tensor<T> value_)
      : name(std::move(name_)), value(std::move(value_)), grad(value.shape()) {}

  void zero_grad() const { grad.fill(T(0)); }
};

template <std::floating_point T>
void zero_grad(std::span<Parameter<T>> params) {
  for (auto& p : params) p.zero_grad();
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates per parameter plus the step counter.
template <std::floating_point T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::size_t step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

/// One bias-corrected Adam update of `values` using `grads`. Moments are
/// allocated on the first call and must keep matching shapes afterwards.
template <std::floating_point T>
void adam_step(std::span<Tensor<T>* const> values, std::span<const Tensor<T>* const> grads, AdamState<T>& state) {
  if (values.size() != grads.size()) throw ContractError("adam_step: one gradient per parameter required");
  if (state.first_moment.empty()) {
    for (const auto* v : values) {
      state.first_moment.emplace_back(v->shape());
      state.second_moment.emplace_back(v->shape());
    }
  }
  if (state.first_moment.size() != values.size()) {
    throw ContractError("adam_step: parameter count changed between steps");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i]->shape() != grads[i]->shape() || values[i]->shape() != state.first_moment[i].shape()) {
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                          to_string(values[i]->shape()) + " vs grad " + to_string(grads[i]->shape()));
    }
  }
  ++state.step;
  const auto& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto p = values[i]->data();
    auto g = grads[i]->data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= static_cast<T>(c.lr * m_hat / (std::sqrt(v_hat) + c.epsilon));
    }
  }
}

template <std::floating_point T>
void adam_step(std::span<Parameter<T>> params, AdamState<T>& state) {
  std::vector<Tensor<T>*> values;
  std::vector<const Tensor<T>*> grads;
  for (auto& p : params) {
    values.push_back(&p.value);
    grads.push_back(&p.grad);
  }
  adam_step<T>(std::span<Tensor<T>* const>(values), std::span<const Tensor<T>* const>(grads), state);
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <std::floating_point T>
double clip_grad_norm(std::span<Parameter<T>> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad.data()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& p : params)
      for (auto& g : p.grad.data()) g *= f;
  }
  return norm;
}

}  // namespace emoseq
