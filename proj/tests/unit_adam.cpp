#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semiseg/adam.hpp"
#include "semiseg/rng.hpp"

using namespace semiseg;

static Tensor<double> scalar(double v) {
  Tensor<double> t({1});
  t.data[0] = v;
  return t;
}

TEST_CASE("one unit-gradient step moves a zero parameter by about -lr") {
  Tensor<double> p = scalar(0.0), g = scalar(1.0), m = scalar(0.0), v = scalar(0.0);
  AdamConfig cfg;
  adam_update(p, g, m, v, 1, cfg);
  // bias correction makes mhat = 1, vhat = 1: step = lr / (1 + eps)
  CHECK(p.data[0] == doctest::Approx(-0.00019999999800000004).epsilon(1e-14));
  CHECK(p.data[0] == doctest::Approx(-cfg.lr).epsilon(1e-7));
  CHECK(m.data[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(v.data[0] == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("three steps match the frozen double-precision trajectory") {
  Tensor<double> p = scalar(0.5), m = scalar(0.0), v = scalar(0.0);
  AdamConfig cfg;
  const double grads[3] = {0.3, -0.2, 0.1};
  const double expect[3] = {0.49980000000666669, 0.4997710959018572, 0.49971539412166921};
  for (int t = 0; t < 3; ++t) {
    Tensor<double> g = scalar(grads[t]);
    adam_update(p, g, m, v, t + 1, cfg);
    CHECK(p.data[0] == doctest::Approx(expect[t]).epsilon(1e-15));
  }
}

TEST_CASE("float parameters follow the double-precision math") {
  Tensor<float> p({1}), g({1}), m({1}), v({1});
  p.data[0] = 0.5f;
  g.data[0] = 0.3f;
  AdamConfig cfg;
  adam_update(p, g, m, v, 1, cfg);
  // reference computed in double from the float inputs, then rounded once
  double gd = 0.3f;
  double md = 0.1 * gd, vd = 0.001 * gd * gd;
  double expect = 0.5f - cfg.lr * (md / 0.1) / (std::sqrt(vd / 0.001) + cfg.epsilon);
  CHECK(p.data[0] == static_cast<float>(expect));
}

TEST_CASE("update validates shapes, step index and finiteness") {
  Tensor<double> p = scalar(0.0), g = scalar(1.0), m = scalar(0.0), v = scalar(0.0);
  Tensor<double> wrong({2});
  AdamConfig cfg;
  CHECK_THROWS_AS(adam_update(p, wrong, m, v, 1, cfg), ShapeError);
  CHECK_THROWS_AS(adam_update(p, g, m, v, 0, cfg), ConfigError);
  Tensor<double> ginf = scalar(std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(adam_update(p, ginf, m, v, 1, cfg), TrainingError);
}

TEST_CASE("the optimizer class steps every graph parameter") {
  Graph<double> g;
  int in = g.add_input("x", {1, 2, 2});
  int c = g.conv("c", in, 1, 1);
  int tgt = g.add_input("t", {1, 2, 2});
  int loss = g.loss_mse("loss", c, tgt);
  g.find_param("c.weight")->value.data = {1.0};
  g.find_param("c.bias")->value.data = {0.0};
  Adam<double> opt(g);
  Tensor<double> x({1, 2, 2}), t({1, 2, 2});
  x.fill(1.0);
  t.fill(0.0);
  g.set_input("x", x);
  g.set_input("t", t);
  g.forward_to(loss);
  g.backward(loss);

  // replicate by hand on copies of the tensors
  Tensor<double> pw = g.find_param("c.weight")->value, gw = g.find_param("c.weight")->grad;
  Tensor<double> pb = g.find_param("c.bias")->value, gb = g.find_param("c.bias")->grad;
  Tensor<double> mw(pw.shape), vw(pw.shape), mb(pb.shape), vb(pb.shape);
  adam_update(pw, gw, mw, vw, 1, opt.config());
  adam_update(pb, gb, mb, vb, 1, opt.config());

  opt.step(g);
  CHECK(opt.step_count() == 1);
  CHECK(g.find_param("c.weight")->value.data == pw.data);
  CHECK(g.find_param("c.bias")->value.data == pb.data);
}
