#include <cmath>
#include <vector>

#include "doctest.h"
#include "seminas/errors.hpp"
#include "seminas/grad.hpp"
#include "seminas/rng.hpp"

using namespace seminas;
using namespace seminas::grad;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
  Tape t;
  return t.value(t.add_row(t.matmul(t.constant(x), t.constant(w)), t.constant(b)));
}

void fill_random(Tensor2& p, Rng& rng, double scale = 0.5) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = rng.uniform(-scale, scale);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("linear layer") {
  CHECK(linear(mat({{1, 2}}), mat({{1, 0}, {0, 1}}), mat({{0, 0}})) == mat({{1, 2}}));
  CHECK(linear(mat({{1, 1}}), mat({{2, 3}, {4, 5}}), mat({{1, 1}})) == mat({{7, 9}}));
  CHECK(linear(mat({{0, 0}}), mat({{2, 3}, {4, 5}}), mat({{-1.5, 2.5}})) == mat({{-1.5, 2.5}}));
}

TEST_CASE("shape mismatch names both shapes") {
  Tape t;
  const Var a = t.constant(Matrix::Zero(1, 3));
  const Var b = t.constant(Matrix::Zero(2, 2));
  try {
    t.matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("lstm step with zero parameters is zero") {
  Tape t;
  const Var x = t.constant(Matrix::Constant(2, 3, 0.7));
  const Var h = t.constant(Matrix::Zero(2, 4));
  const Var c = t.constant(Matrix::Zero(2, 4));
  const auto [h1, c1] = t.lstm_step(x, h, c, t.constant(Matrix::Zero(3, 16)), t.constant(Matrix::Zero(4, 16)),
                                    t.constant(Matrix::Zero(1, 16)));
  CHECK(t.value(h1).isZero());
  CHECK(t.value(c1).isZero());
}

TEST_CASE("lstm step matches straight-line gate equations") {
  Rng rng(11);
  const int in = 3, hs = 4;
  Tensor2 wi("wi", in, 4 * hs), wh("wh", hs, 4 * hs), b("b", 1, 4 * hs);
  fill_random(wi, rng);
  fill_random(wh, rng);
  fill_random(b, rng);
  std::vector<double> x(in), h(hs), c(hs);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto& v : h) v = rng.uniform(-1, 1);
  for (auto& v : c) v = rng.uniform(-1, 1);

  // Independent scalar evaluation, gate order input, forget, candidate, output.
  std::vector<double> h_ref(hs), c_ref(hs);
  for (int j = 0; j < hs; ++j) {
    double pre[4];
    for (int g = 0; g < 4; ++g) {
      double s = b.value(0, g * hs + j);
      for (int k = 0; k < in; ++k) s += x[k] * wi.value(k, g * hs + j);
      for (int k = 0; k < hs; ++k) s += h[k] * wh.value(k, g * hs + j);
      pre[g] = s;
    }
    const double ig = sigmoid(pre[0]), fg = sigmoid(pre[1]), cg = std::tanh(pre[2]), og = sigmoid(pre[3]);
    c_ref[j] = fg * c[j] + ig * cg;
    h_ref[j] = og * std::tanh(c_ref[j]);
  }

  Tape t;
  Matrix xm(1, in), hm(1, hs), cm(1, hs);
  for (int k = 0; k < in; ++k) xm(0, k) = x[k];
  for (int k = 0; k < hs; ++k) hm(0, k) = h[k], cm(0, k) = c[k];
  const auto [h1, c1] =
      t.lstm_step(t.constant(xm), t.constant(hm), t.constant(cm), t.param(wi), t.param(wh), t.param(b));
  for (int j = 0; j < hs; ++j) {
    CHECK(t.value(h1)(0, j) == doctest::Approx(h_ref[j]).epsilon(1e-14));
    CHECK(t.value(c1)(0, j) == doctest::Approx(c_ref[j]).epsilon(1e-14));
  }
}

TEST_CASE("lstm hidden state stays inside (-1, 1)") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor2 wi("wi", 2, 12), wh("wh", 3, 12), b("b", 1, 12);
    fill_random(wi, rng, 5.0);
    fill_random(wh, rng, 5.0);
    fill_random(b, rng, 5.0);
    Tape t;
    Matrix x(4, 2), h(4, 3), c(4, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-10, 10);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.uniform(-1, 1), c.data()[i] = rng.uniform(-3, 3);
    const auto [h1, c1] = t.lstm_step(t.constant(x), t.constant(h), t.constant(c), t.param(wi), t.param(wh), t.param(b));
    CHECK(t.value(h1).cwiseAbs().maxCoeff() < 1.0);
    CHECK(t.value(c1).allFinite());
  }
}

TEST_CASE("backward_check on closed forms") {
  Tensor2 w("w", 1, 1);
  w.value(0, 0) = 3.0;
  std::vector<Tensor2*> ps = {&w};
  const Objective square = [&](bool with_grad) {
    const double v = w.value(0, 0);
    if (with_grad) w.grad(0, 0) = 2 * v;
    return v * v;
  };
  CHECK(backward_check(square, ps).max_relative_error < 1e-8);

  const Objective constant = [&](bool with_grad) {
    if (with_grad) w.grad.setZero();
    return 4.0;
  };
  const auto r = backward_check(constant, ps);
  CHECK(r.max_relative_error == 0.0);
  CHECK(w.grad(0, 0) == 0.0);

  const Objective broken = [&](bool) { return std::nan(""); };
  CHECK_THROWS_AS(backward_check(broken, ps), NumericError);
}

// One objective per layer type, all over random parameters; the tape
// gradient is compared with central differences.
TEST_CASE("every layer type passes the finite-difference check") {
  Rng rng(2024);
  for (int config = 0; config < 100; ++config) {
    const int batch = 1 + static_cast<int>(rng.below(3));
    const int in = 1 + static_cast<int>(rng.below(4));
    const int hs = 1 + static_cast<int>(rng.below(4));
    const int vocab = 3 + static_cast<int>(rng.below(3));
    Tensor2 emb("emb", vocab, in), wi("wi", in, 4 * hs), wh("wh", hs, 4 * hs), b("b", 1, 4 * hs);
    Tensor2 w1("w1", hs, 3), b1("b1", 1, 3), w2("w2", 3 + in, vocab), b2("b2", 1, vocab);
    std::vector<Tensor2*> ps = {&emb, &wi, &wh, &b, &w1, &b1, &w2, &b2};
    for (Tensor2* p : ps) fill_random(*p, rng);
    std::vector<int> ids(batch), targets(batch);
    for (auto& v : ids) v = static_cast<int>(rng.below(vocab));
    for (auto& v : targets) v = static_cast<int>(rng.below(vocab - 1));  // last class is illegal
    std::vector<char> legal(vocab, 1);
    legal.back() = 0;
    Matrix y(batch, 1);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform();
    const std::uint64_t dropout_seed = rng.next();
    Matrix mask = Matrix::Ones(batch, 2);
    mask(0, 1) = 0.0;

    const Objective f = [&](bool with_grad) {
      Rng drop(dropout_seed);
      Tape t;
      const Var x = t.embedding(t.param(emb), ids);
      const Var h0 = t.constant(Matrix::Zero(batch, hs));
      const auto [h1, c1] = t.lstm_step(x, h0, h0, t.param(wi), t.param(wh), t.param(b));
      const auto [h2, c2] = t.lstm_step(x, h1, c1, t.param(wi), t.param(wh), t.param(b));
      const Var steps[] = {h1, h2};
      const Var pooled = t.masked_mean(steps, mask);
      const Var hidden = t.dropout(t.relu(t.add_row(t.matmul(t.tanh(pooled), t.param(w1)), t.param(b1))), 0.7, drop);
      const Var feats = t.concat_cols(hidden, x);
      const Var logits = t.add_row(t.matmul(feats, t.param(w2)), t.param(b2));
      const Var ce = t.cross_entropy_sum(logits, targets, legal);
      const Var pred = t.sigmoid(t.sum(t.mul(hidden, t.scale(hidden, 0.5))));
      const Var reg = t.mse(t.add(pred, t.constant(Matrix::Zero(1, 1))), y.topRows(1));
      const Var terms[] = {ce, reg};
      const double weights[] = {0.3, 0.7};
      const Var loss = t.weighted_sum(terms, weights);
      if (with_grad) {
        for (Tensor2* p : ps) p->zero_grad();
        t.backward(loss);
      }
      return t.scalar(loss);
    };
    const auto r = backward_check(f, ps);
    CHECK_MESSAGE(r.max_relative_error < 1e-4, "config " << config << " worst " << r.worst_parameter);
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor2 p("p", 2, 2);
    p.value << 1, -2, 3, 0.5;
    const Matrix before = p.value;
    AdamState s;
    for (int i = 0; i < 5; ++i) {
      p.zero_grad();
      adam_update(p, s);
    }
    CHECK(p.value == before);
    CHECK(s.step == 5);
  }
  SUBCASE("first step moves by the learning rate") {
    Tensor2 p("p", 1, 1);
    p.value(0, 0) = 2.0;
    p.grad(0, 0) = 1.0;
    AdamState s;
    adam_update(p, s);
    // m_hat = 1, v_hat = 1 at t = 1, so the step is lr / (1 + eps).
    CHECK(p.value(0, 0) == doctest::Approx(2.0 - 0.001 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(s.step == 1);
    CHECK(s.first_moment.rows() == 1);
  }
  SUBCASE("identical gradients give identical updates") {
    Tensor2 a("a", 1, 1), b("b", 1, 1);
    a.value(0, 0) = b.value(0, 0) = 0.3;
    Adam opt({&a, &b}, 0.01);
    for (int i = 0; i < 10; ++i) {
      a.grad(0, 0) = b.grad(0, 0) = std::sin(i);
      opt.step();
    }
    CHECK(a.value == b.value);
    CHECK(opt.steps() == 10);
  }
  SUBCASE("non-finite gradient names the parameter") {
    Tensor2 p("predictor.w0", 1, 2);
    p.grad(0, 1) = std::numeric_limits<double>::infinity();
    AdamState s;
    try {
      adam_update(p, s);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("predictor.w0") != std::string::npos);
    }
  }
}

TEST_CASE("dropout") {
  Rng rng(3);
  Tape t;
  const Matrix x = Matrix::Constant(1, 100000, 2.0);
  const Var a = t.constant(x);
  CHECK(t.dropout(a, 1.0, rng).id == a.id);
  const Var d = t.dropout(a, 0.8, rng);
  CHECK(t.value(d).mean() == doctest::Approx(2.0).epsilon(0.01));
}

TEST_CASE("cross entropy rejects an illegal target") {
  Tape t;
  const Var logits = t.constant(Matrix::Zero(1, 3));
  const int target[] = {2};
  const char legal[] = {1, 1, 0};
  CHECK_THROWS_AS(t.cross_entropy_sum(logits, target, legal), DomainError);
}

TEST_CASE("gradient clipping") {
  Tensor2 a("a", 1, 2), b("b", 1, 1);
  a.grad << 3, 0;
  b.grad << 4;
  std::vector<Tensor2*> ps = {&a, &b};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
}
