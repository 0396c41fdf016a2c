#pragma once

#include <unordered_map>
#include <utility>

#include "emoseq/adam.hpp"
#include "emoseq/autodiff.hpp"

namespace emoseq {

/// Context for one forward computation. With a tape, parameters become
/// gradient-tracked leaves and dropout is active (when training); without
/// one the same code runs as pure inference.
template <std::floating_point T>
class Pass {
 public:
  Pass() = default;
  Pass(Tape<T>& tape, Rng& rng, bool training = true) : tape_(&tape), rng_(&rng), training_(training) {}

  Var<T> bind(const Parameter<T>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var<T> v = tape_ ? tape_->parameter(p.value, p.grad) : Var<T>::view(p.value);
    bound_.emplace(&p, v);
    return v;
  }

  Var<T> dropout(const Var<T>& x, double drop_probability) {
    if (!training_ || drop_probability == 0.0) return x;
    return emoseq::dropout(x, drop_probability, *rng_, true);
  }

  bool training() const noexcept { return training_; }
  Tape<T>* tape() const noexcept { return tape_; }

 private:
  Tape<T>* tape_ = nullptr;
  Rng* rng_ = nullptr;
  bool training_ = false;
  std::unordered_map<const Parameter<T>*, Var<T>> bound_;
};

/// One LSTM step. `weight` is [(in + rec) × 4D] over the concatenated
/// [input; recurrent] vector with gate blocks ordered input, forget,
/// output, candidate; `bias` is [4D]. Inputs are batched row-wise.
template <std::floating_point T>
std::pair<Var<T>, Var<T>> lstm_cell(const Var<T>& weight, const Var<T>& bias, const Var<T>& input,
                                    const Var<T>& recurrent, const Var<T>& cell) {
  const auto& ws = weight.shape();
  if (ws.size() != 2 || ws[1] % 4 != 0) throw DimensionError("lstm_cell: weight must be [(in+rec) x 4D], got " + to_string(ws));
  const std::size_t D = ws[1] / 4;
  if (input.shape().size() != 2 || recurrent.shape().size() != 2 || cell.shape().size() != 2 ||
      input.dim(1) + recurrent.dim(1) != ws[0] || cell.dim(1) != D || input.dim(0) != recurrent.dim(0) ||
      input.dim(0) != cell.dim(0) || bias.value().numel() != 4 * D) {
    throw DimensionError("lstm_cell: input " + to_string(input.shape()) + ", recurrent " +
                         to_string(recurrent.shape()) + ", cell " + to_string(cell.shape()) +
                         " incompatible with weight " + to_string(ws));
  }
  Var<T> z = add_row(matmul(concat<T>({input, recurrent}, 1), weight), bias);
  Var<T> i = sigmoid(slice(z, 1, 0, D));
  Var<T> f = sigmoid(slice(z, 1, D, 2 * D));
  Var<T> o = sigmoid(slice(z, 1, 2 * D, 3 * D));
  Var<T> g = tanh(slice(z, 1, 3 * D, 4 * D));
  Var<T> c_next = add(mul(f, cell), mul(i, g));
  Var<T> h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

/// Parameters of one LSTM cell, stored in a model's parameter list.
template <std::floating_point T>
struct LstmCellParams {
  const Parameter<T>* weight = nullptr;
  const Parameter<T>* bias = nullptr;

  std::pair<Var<T>, Var<T>> step(Pass<T>& pass, const Var<T>& input, const Var<T>& recurrent, const Var<T>& cell) const {
    return lstm_cell(pass.bind(*weight), pass.bind(*bias), input, recurrent, cell);
  }
};

}  // namespace emoseq
