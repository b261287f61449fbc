#pragma once

// Minimal reverse-mode differentiation over row-major double matrices.
//
// A Tape records every operation of one forward pass. Each recorded node keeps
// its value, an accumulated adjoint and a closure that pushes the adjoint to
// the node's inputs. Parameters live outside the tape in Tensor2 objects; the
// tape only references them and adds into Tensor2::grad on backward().
//
// The operation set is exactly what the controller needs: dense layers, a
// fused LSTM cell, embedding lookup, masked pooling, dropout and the two
// losses.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "seminas/rng.hpp"

namespace seminas::grad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_string(const Matrix& m);

// A learnable parameter: value and gradient of identical shape.
struct Tensor2 {
  Tensor2() = default;
  Tensor2(std::string name, std::size_t rows, std::size_t cols);

  std::size_t rows() const { return static_cast<std::size_t>(value.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(value.cols()); }
  void zero_grad() { grad.setZero(); }

  std::string name;
  Matrix value;
  Matrix grad;
};

// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Tensor2& p);

  const Matrix& value(Var v) const;
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const;

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var bias);  // bias is 1 x cols, broadcast over rows
  Var mul(Var a, Var b);         // elementwise
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var concat_cols(Var a, Var b);
  Var sum(Var a);  // 1 x 1

  // Rows of `table` selected by `ids`.
  Var embedding(Var table, std::span<const int> ids);

  // Inverted dropout: kept entries are scaled by 1/keep_prob.
  Var dropout(Var a, double keep_prob, Rng& rng);

  // One LSTM step on a batch. Gates are packed [input, forget, cell, output]
  // along the columns of w_input (in x 4H), w_hidden (H x 4H) and bias (1 x 4H).
  std::pair<Var, Var> lstm_step(Var x, Var h, Var c, Var w_input, Var w_hidden, Var bias);

  // Per-row mean of `steps[t]` over the positions where mask(row, t) != 0.
  Var masked_mean(std::span<const Var> steps, const Matrix& mask);

  // mean((pred - target)^2), pred and target B x 1.
  Var mse(Var pred, const Matrix& target);

  // Sum over rows of -log softmax(logits restricted to `legal`)[target].
  // `legal` holds one flag per column shared by all rows, or rows * cols
  // flags (row-major) for per-row masks.
  Var cross_entropy_sum(Var logits, std::span<const int> targets, std::span<const char> legal);

  // sum_i weights[i] * terms[i] for 1 x 1 terms.
  Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

  // Seeds d(loss)/d(loss) = 1 and propagates to every node and parameter.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Tensor2* param = nullptr;
    std::function<void(Tape&)> back;
  };

  Var push(Matrix value, std::function<void(Tape&)> back = {});
  Matrix& g(Var v) { return nodes_[v.id].grad; }

  std::vector<Node> nodes_;
};

struct AdamState {
  std::size_t step = 0;
  Matrix first_moment;
  Matrix second_moment;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam on one parameter. Throws NumericError naming the
// parameter if its gradient is not finite.
void adam_update(Tensor2& param, AdamState& state);

class Adam {
 public:
  Adam(std::vector<Tensor2*> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8);

  void step();
  void zero_grad();
  std::size_t steps() const { return states_.empty() ? 0 : states_.front().step; }
  const std::vector<AdamState>& states() const { return states_; }
  std::vector<AdamState>& states() { return states_; }

 private:
  std::vector<Tensor2*> params_;
  std::vector<AdamState> states_;
};

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor2* const> params, double max_norm);

// Scalar function of the parameters. When `with_grad` is set it must also
// leave d(value)/d(param) in every Tensor2::grad (grads are zeroed first).
using Objective = std::function<double(bool with_grad)>;

struct GradCheck {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
};

// Central finite differences against the analytic gradient; the error per
// entry is |a - n| / max(1, |a| + |n|). `max_entries_per_param` > 0 limits the
// check to an evenly strided subset of each parameter.
GradCheck backward_check(const Objective& f, std::span<Tensor2* const> params, double step = 1e-4,
                         std::size_t max_entries_per_param = 0);

}  // namespace seminas::grad
