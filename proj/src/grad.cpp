#include "seminas/grad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "seminas/errors.hpp"

namespace seminas::grad {

namespace {

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

Matrix sigmoid_of(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

}  // namespace

std::string shape_string(const Matrix& m) {
  std::ostringstream os;
  os << '[' << m.rows() << 'x' << m.cols() << ']';
  return os.str();
}

Tensor2::Tensor2(std::string name, std::size_t rows, std::size_t cols)
    : name(std::move(name)),
      value(Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))),
      grad(Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols))) {}

Var Tape::push(Matrix value, std::function<void(Tape&)> back) {
  Node n;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value)); }

Var Tape::param(Tensor2& p) {
  Node n;
  n.param = &p;
  n.grad = Matrix::Zero(p.value.rows(), p.value.cols());
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.param ? n.param->value : n.value;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw DimensionError("scalar: expected [1x1], got " + shape_string(m));
  return m(0, 0);
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.cols() == bv.rows(), "matmul", av, bv);
  return push(av * bv, [a, b, out = Var{nodes_.size()}](Tape& t) {
    const Matrix& go = t.g(out);
    t.g(a).noalias() += go * t.value(b).transpose();
    t.g(b).noalias() += t.value(a).transpose() * go;
  });
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add", av, bv);
  return push(av + bv, [a, b, out = Var{nodes_.size()}](Tape& t) {
    t.g(a) += t.g(out);
    t.g(b) += t.g(out);
  });
}

Var Tape::add_row(Var a, Var bias) {
  const Matrix& av = value(a);
  const Matrix& bv = value(bias);
  require(bv.rows() == 1 && bv.cols() == av.cols(), "add_row", av, bv);
  Matrix out = av;
  out.rowwise() += bv.row(0);
  return push(std::move(out), [a, bias, out = Var{nodes_.size()}](Tape& t) {
    t.g(a) += t.g(out);
    t.g(bias) += t.g(out).colwise().sum();
  });
}

Var Tape::mul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "mul", av, bv);
  return push(av.cwiseProduct(bv), [a, b, out = Var{nodes_.size()}](Tape& t) {
    t.g(a) += t.g(out).cwiseProduct(t.value(b));
    t.g(b) += t.g(out).cwiseProduct(t.value(a));
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, [a, s, out = Var{nodes_.size()}](Tape& t) { t.g(a) += t.g(out) * s; });
}

Var Tape::sigmoid(Var a) {
  return push(sigmoid_of(value(a)), [a, out = Var{nodes_.size()}](Tape& t) {
    const auto y = t.value(out).array();
    t.g(a).array() += t.g(out).array() * y * (1.0 - y);
  });
}

Var Tape::tanh(Var a) {
  return push(value(a).array().tanh().matrix(), [a, out = Var{nodes_.size()}](Tape& t) {
    const auto y = t.value(out).array();
    t.g(a).array() += t.g(out).array() * (1.0 - y.square());
  });
}

Var Tape::relu(Var a) {
  return push(value(a).cwiseMax(0.0), [a, out = Var{nodes_.size()}](Tape& t) {
    t.g(a).array() += (t.value(a).array() > 0.0).select(t.g(out).array(), 0.0);
  });
}

Var Tape::concat_cols(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  require(av.rows() == bv.rows(), "concat_cols", av, bv);
  Matrix out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const auto ac = av.cols();
  const auto bc = bv.cols();
  return push(std::move(out), [a, b, ac, bc, out = Var{nodes_.size()}](Tape& t) {
    t.g(a) += t.g(out).leftCols(ac);
    t.g(b) += t.g(out).rightCols(bc);
  });
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), [a, out = Var{nodes_.size()}](Tape& t) { t.g(a).array() += t.g(out)(0, 0); });
}

Var Tape::embedding(Var table, std::span<const int> ids) {
  const Matrix& tv = value(table);
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= tv.rows()) {
      throw DimensionError("embedding: id " + std::to_string(ids[r]) + " outside table " + shape_string(tv));
    }
    out.row(static_cast<Eigen::Index>(r)) = tv.row(ids[r]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return push(std::move(out), [table, idv = std::move(idv), out = Var{nodes_.size()}](Tape& t) {
    Matrix& gt = t.g(table);
    const Matrix& go = t.g(out);
    for (std::size_t r = 0; r < idv.size(); ++r) gt.row(idv[r]) += go.row(static_cast<Eigen::Index>(r));
  });
}

Var Tape::dropout(Var a, double keep_prob, Rng& rng) {
  if (keep_prob >= 1.0) return a;
  const Matrix& av = value(a);
  Matrix mask(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.bernoulli(keep_prob) ? 1.0 / keep_prob : 0.0;
  Matrix out = av.cwiseProduct(mask);
  return push(std::move(out), [a, mask = std::move(mask), out = Var{nodes_.size()}](Tape& t) {
    t.g(a) += t.g(out).cwiseProduct(mask);
  });
}

std::pair<Var, Var> Tape::lstm_step(Var x, Var h, Var c, Var w_input, Var w_hidden, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& hv = value(h);
  const Matrix& cv = value(c);
  const Matrix& wi = value(w_input);
  const Matrix& wh = value(w_hidden);
  const Matrix& bv = value(bias);
  const Eigen::Index hs = hv.cols();
  require(xv.cols() == wi.rows(), "lstm_step input", xv, wi);
  require(hv.cols() == wh.rows() && wh.cols() == 4 * hs && wi.cols() == 4 * hs, "lstm_step hidden", hv, wh);
  require(cv.rows() == hv.rows() && cv.cols() == hs && xv.rows() == hv.rows(), "lstm_step state", hv, cv);
  require(bv.rows() == 1 && bv.cols() == 4 * hs, "lstm_step bias", bv, wh);

  Matrix pre = xv * wi;
  pre.noalias() += hv * wh;
  pre.rowwise() += bv.row(0);

  // Activated gates, same packing as `pre`.
  Matrix gates(pre.rows(), pre.cols());
  gates.leftCols(2 * hs) = sigmoid_of(pre.leftCols(2 * hs));
  gates.middleCols(2 * hs, hs) = pre.middleCols(2 * hs, hs).array().tanh().matrix();
  gates.rightCols(hs) = sigmoid_of(pre.rightCols(hs));

  const auto ig = gates.leftCols(hs).array();
  const auto fg = gates.middleCols(hs, hs).array();
  const auto cg = gates.middleCols(2 * hs, hs).array();
  const auto og = gates.rightCols(hs).array();
  Matrix c_next = (fg * cv.array() + ig * cg).matrix();
  Matrix tanh_c = c_next.array().tanh().matrix();
  Matrix h_next = (og * tanh_c.array()).matrix();

  const Var h_out = push(std::move(h_next));
  const Var c_out{nodes_.size()};
  push(std::move(c_next), [=, gates = std::move(gates), tanh_c = std::move(tanh_c)](Tape& t) {
    const auto ig = gates.leftCols(hs).array();
    const auto fg = gates.middleCols(hs, hs).array();
    const auto cg = gates.middleCols(2 * hs, hs).array();
    const auto og = gates.rightCols(hs).array();
    const auto dh = t.g(h_out).array();
    const auto tc = tanh_c.array();

    const Matrix dc = (t.g(c_out).array() + dh * og * (1.0 - tc.square())).matrix();
    Matrix dpre(gates.rows(), gates.cols());
    dpre.leftCols(hs) = (dc.array() * cg * ig * (1.0 - ig)).matrix();
    dpre.middleCols(hs, hs) = (dc.array() * t.value(c).array() * fg * (1.0 - fg)).matrix();
    dpre.middleCols(2 * hs, hs) = (dc.array() * ig * (1.0 - cg.square())).matrix();
    dpre.rightCols(hs) = (dh * tc * og * (1.0 - og)).matrix();

    t.g(c).array() += dc.array() * fg;
    t.g(x).noalias() += dpre * t.value(w_input).transpose();
    t.g(h).noalias() += dpre * t.value(w_hidden).transpose();
    t.g(w_input).noalias() += t.value(x).transpose() * dpre;
    t.g(w_hidden).noalias() += t.value(h).transpose() * dpre;
    t.g(bias) += dpre.colwise().sum();
  });
  return {h_out, c_out};
}

Var Tape::masked_mean(std::span<const Var> steps, const Matrix& mask) {
  if (steps.empty()) throw DimensionError("masked_mean: no steps");
  const Matrix& first = value(steps.front());
  if (mask.rows() != first.rows() || mask.cols() != static_cast<Eigen::Index>(steps.size())) {
    throw DimensionError("masked_mean: mask " + shape_string(mask) + " vs " + std::to_string(steps.size()) +
                         " steps of " + shape_string(first));
  }
  Eigen::VectorXd inv = mask.rowwise().sum();
  for (Eigen::Index r = 0; r < inv.size(); ++r) inv[r] = inv[r] > 0.0 ? 1.0 / inv[r] : 0.0;
  Matrix out = Matrix::Zero(first.rows(), first.cols());
  for (std::size_t s = 0; s < steps.size(); ++s) {
    const Matrix& v = value(steps[s]);
    require(v.rows() == first.rows() && v.cols() == first.cols(), "masked_mean", first, v);
    out += (mask.col(static_cast<Eigen::Index>(s)).cwiseProduct(inv)).asDiagonal() * v;
  }
  std::vector<Var> ids(steps.begin(), steps.end());
  return push(std::move(out), [ids = std::move(ids), mask, inv, out = Var{nodes_.size()}](Tape& t) {
    const Matrix& go = t.g(out);
    for (std::size_t s = 0; s < ids.size(); ++s) {
      t.g(ids[s]) += (mask.col(static_cast<Eigen::Index>(s)).cwiseProduct(inv)).asDiagonal() * go;
    }
  });
}

Var Tape::mse(Var pred, const Matrix& target) {
  const Matrix& pv = value(pred);
  require(pv.rows() == target.rows() && pv.cols() == target.cols(), "mse", pv, target);
  const double n = static_cast<double>(pv.size());
  Matrix diff = pv - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return push(std::move(out), [pred, diff = std::move(diff), n, out = Var{nodes_.size()}](Tape& t) {
    t.g(pred) += (2.0 / n) * t.g(out)(0, 0) * diff;
  });
}

Var Tape::cross_entropy_sum(Var logits, std::span<const int> targets, std::span<const char> legal) {
  const Matrix& lv = value(logits);
  const auto rows = static_cast<std::size_t>(lv.rows());
  const auto cols = static_cast<std::size_t>(lv.cols());
  const bool per_row = legal.size() == rows * cols && rows != 1;
  if (targets.size() != rows || (legal.size() != cols && !per_row)) {
    throw DimensionError("cross_entropy_sum: logits " + shape_string(lv) + " with " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(legal.size()) + " legal flags");
  }
  // Softmax restricted to legal columns; illegal columns get probability 0.
  Matrix prob = Matrix::Zero(lv.rows(), lv.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const char* ok = legal.data() + (per_row ? r * cols : 0);
    const auto ri = static_cast<Eigen::Index>(r);
    const int tgt = targets[r];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= cols || !ok[tgt]) {
      throw DomainError("cross_entropy_sum: target " + std::to_string(tgt) + " is not a legal class");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < cols; ++k)
      if (ok[k]) mx = std::max(mx, lv(ri, static_cast<Eigen::Index>(k)));
    double z = 0.0;
    for (std::size_t k = 0; k < cols; ++k) {
      if (ok[k]) {
        const auto ki = static_cast<Eigen::Index>(k);
        prob(ri, ki) = std::exp(lv(ri, ki) - mx);
        z += prob(ri, ki);
      }
    }
    prob.row(ri) /= z;
    total -= (lv(ri, tgt) - mx) - std::log(z);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<int> tv(targets.begin(), targets.end());
  return push(std::move(out), [logits, prob = std::move(prob), tv = std::move(tv), out = Var{nodes_.size()}](Tape& t) {
    const double go = t.g(out)(0, 0);
    Matrix d = prob;
    for (std::size_t r = 0; r < tv.size(); ++r) d(static_cast<Eigen::Index>(r), tv[r]) -= 1.0;
    t.g(logits) += go * d;
  });
}

Var Tape::weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw DimensionError("weighted_sum: terms and weights differ in length");
  Matrix out = Matrix::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) out(0, 0) += weights[i] * scalar(terms[i]);
  std::vector<Var> tv(terms.begin(), terms.end());
  std::vector<double> wv(weights.begin(), weights.end());
  return push(std::move(out), [tv = std::move(tv), wv = std::move(wv), out = Var{nodes_.size()}](Tape& t) {
    const double go = t.g(out)(0, 0);
    for (std::size_t i = 0; i < tv.size(); ++i) t.g(tv[i])(0, 0) += wv[i] * go;
  });
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1) throw DimensionError("backward: loss must be [1x1], got " + shape_string(value(loss)));
  g(loss)(0, 0) += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back) n.back(*this);
    if (n.param) n.param->grad += n.grad;
  }
}

void adam_update(Tensor2& param, AdamState& state) {
  if (state.first_moment.rows() != param.value.rows() || state.first_moment.cols() != param.value.cols()) {
    if (state.step != 0) {
      throw DimensionError("adam_update: moments " + shape_string(state.first_moment) + " vs parameter " +
                           param.name + ' ' + shape_string(param.value));
    }
    state.first_moment = Matrix::Zero(param.value.rows(), param.value.cols());
    state.second_moment = Matrix::Zero(param.value.rows(), param.value.cols());
  }
  if (param.grad.rows() != param.value.rows() || param.grad.cols() != param.value.cols()) {
    throw DimensionError("adam_update: gradient " + shape_string(param.grad) + " vs parameter " + param.name + ' ' +
                         shape_string(param.value));
  }
  if (!param.grad.allFinite()) throw NumericError("adam_update: non-finite gradient in parameter " + param.name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * param.grad;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * param.grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  param.value.array() -= state.learning_rate * (state.first_moment.array() / c1) /
                         ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

Adam::Adam(std::vector<Tensor2*> params, double learning_rate, double beta1, double beta2, double epsilon)
    : params_(std::move(params)) {
  states_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    AdamState& s = states_[i];
    s.learning_rate = learning_rate;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.epsilon = epsilon;
    s.first_moment = Matrix::Zero(params_[i]->value.rows(), params_[i]->value.cols());
    s.second_moment = Matrix::Zero(params_[i]->value.rows(), params_[i]->value.cols());
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) adam_update(*params_[i], states_[i]);
}

void Adam::zero_grad() {
  for (Tensor2* p : params_) p->zero_grad();
}

double clip_grad_norm(std::span<Tensor2* const> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor2* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("clip_grad_norm: non-finite gradient norm");
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (Tensor2* p : params) p->grad *= s;
  }
  return norm;
}

GradCheck backward_check(const Objective& f, std::span<Tensor2* const> params, double step,
                         std::size_t max_entries_per_param) {
  for (Tensor2* p : params) p->zero_grad();
  const double base = f(true);
  if (!std::isfinite(base)) throw NumericError("backward_check: objective is not finite");
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Tensor2* p : params) analytic.push_back(p->grad);

  GradCheck result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor2& p = *params[pi];
    const auto n = static_cast<std::size_t>(p.value.size());
    const std::size_t stride =
        max_entries_per_param == 0 || n <= max_entries_per_param ? 1 : (n + max_entries_per_param - 1) / max_entries_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      double& w = p.value.data()[i];
      const double saved = w;
      w = saved + step;
      const double up = f(false);
      w = saved - step;
      const double down = f(false);
      w = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("backward_check: objective not finite when perturbing " + p.name);
      }
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi].data()[i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      if (err > result.max_relative_error || result.worst_parameter.empty()) {
        result.max_relative_error = err;
        result.worst_parameter = p.name;
        result.worst_index = i;
      }
    }
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return result;
}

}  // namespace seminas::grad
