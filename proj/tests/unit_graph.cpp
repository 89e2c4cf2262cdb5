#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semiseg/gradcheck.hpp"
#include "semiseg/graph.hpp"
#include "semiseg/models.hpp"
#include "semiseg/rng.hpp"

using namespace semiseg;

static Tensor<double> rand_tensor(RandomStream& rs, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rs.uniform(lo, hi);
  return t;
}

static void set_params(Graph<double>& g, RandomStream& rs) {
  for (auto& p : g.params())
    for (auto& v : p.value.data) v = rs.uniform(-0.8, 0.8);
}

TEST_CASE("conv3x3 forward matches a brute-force loop") {
  RandomStream rs(1);
  Graph<double> g;
  int in = g.add_input("x", {2, 5, 4});
  int c = g.conv("c", in, 3, 3);
  set_params(g, rs);
  Tensor<double> x = rand_tensor(rs, {2, 5, 4});
  g.set_input("x", x);
  g.forward_to(c);

  const Tensor<double>& w = g.find_param("c.weight")->value;
  const Tensor<double>& b = g.find_param("c.bias")->value;
  const Tensor<double>& y = g.tensor_of(c);
  for (int64_t co = 0; co < 3; ++co)
    for (int64_t p = 0; p < 5; ++p)
      for (int64_t q = 0; q < 4; ++q) {
        double acc = b.data[static_cast<size_t>(co)];
        for (int64_t ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int64_t yy = p + ky - 1, xx = q + kx - 1;
              if (yy < 0 || yy >= 5 || xx < 0 || xx >= 4) continue;
              acc += w.data[static_cast<size_t>(((co * 2 + ci) * 3 + ky) * 3 + kx)] * x.at3(ci, yy, xx);
            }
        REQUIRE(y.at3(co, p, q) == doctest::Approx(acc).epsilon(1e-13));
      }
}

TEST_CASE("conv1x1 forward matches a brute-force loop") {
  RandomStream rs(2);
  Graph<double> g;
  int in = g.add_input("x", {3, 4, 4});
  int c = g.conv("c", in, 2, 1);
  set_params(g, rs);
  Tensor<double> x = rand_tensor(rs, {3, 4, 4});
  g.set_input("x", x);
  g.forward_to(c);
  const Tensor<double>& w = g.find_param("c.weight")->value;
  const Tensor<double>& b = g.find_param("c.bias")->value;
  const Tensor<double>& y = g.tensor_of(c);
  for (int64_t co = 0; co < 2; ++co)
    for (int64_t p = 0; p < 4; ++p)
      for (int64_t q = 0; q < 4; ++q) {
        double acc = b.data[static_cast<size_t>(co)];
        for (int64_t ci = 0; ci < 3; ++ci) acc += w.data[static_cast<size_t>(co * 3 + ci)] * x.at3(ci, p, q);
        REQUIRE(y.at3(co, p, q) == doctest::Approx(acc).epsilon(1e-13));
      }
}

TEST_CASE("tconv forward matches a brute-force scatter") {
  RandomStream rs(3);
  Graph<double> g;
  int in = g.add_input("x", {2, 3, 2});
  int t = g.tconv("t", in, 2);
  set_params(g, rs);
  Tensor<double> x = rand_tensor(rs, {2, 3, 2});
  g.set_input("x", x);
  g.forward_to(t);
  const Tensor<double>& w = g.find_param("t.weight")->value;
  const Tensor<double>& b = g.find_param("t.bias")->value;
  Tensor<double> expect({2, 6, 4});
  for (int64_t co = 0; co < 2; ++co)
    for (int64_t p = 0; p < 6; ++p)
      for (int64_t q = 0; q < 4; ++q) expect.at3(co, p, q) = b.data[static_cast<size_t>(co)];
  for (int64_t co = 0; co < 2; ++co)
    for (int64_t ci = 0; ci < 2; ++ci)
      for (int ky = 0; ky < 2; ++ky)
        for (int kx = 0; kx < 2; ++kx)
          for (int64_t yy = 0; yy < 3; ++yy)
            for (int64_t xx = 0; xx < 2; ++xx)
              expect.at3(co, 2 * yy + ky, 2 * xx + kx) +=
                  w.data[static_cast<size_t>(((co * 2 + ci) * 2 + ky) * 2 + kx)] * x.at3(ci, yy, xx);
  const Tensor<double>& y = g.tensor_of(t);
  REQUIRE(y.shape == expect.shape);
  for (size_t i = 0; i < y.data.size(); ++i) REQUIRE(y.data[i] == doctest::Approx(expect.data[i]).epsilon(1e-13));
}

TEST_CASE("maxpool takes window maxima; ties go to the first element") {
  Graph<double> g;
  int in = g.add_input("x", {1, 4, 4});
  int mp = g.maxpool("m", in);
  Tensor<double> x({1, 4, 4});
  // top-left window: all equal (tie); top-right: max at (0,3); bottom-left:
  // max at (3,0); bottom-right: max at (2,2)
  x.data = {7, 7, 1, 9,
            7, 7, 9, 1,
            1, 2, 8, 3,
            5, 1, 3, 4};
  g.set_input("x", x);
  g.forward_to(mp);
  const Tensor<double>& y = g.tensor_of(mp);
  CHECK(y.at3(0, 0, 0) == 7);
  CHECK(y.at3(0, 0, 1) == 9);
  CHECK(y.at3(0, 1, 0) == 5);
  CHECK(y.at3(0, 1, 1) == 8);

  // tie routing: backward sends the whole window gradient to the first max
  Graph<double> g2;
  int in2 = g2.add_input("x", {1, 2, 2});
  int mp2 = g2.maxpool("m", in2);
  int tgt = g2.add_input("t", {1, 1, 1});
  int loss = g2.loss_mse("loss", mp2, tgt);
  Tensor<double> x2({1, 2, 2});
  x2.data = {5, 5, 5, 5};  // full tie; first element is (0,0)
  Tensor<double> t2({1, 1, 1});
  t2.data = {0};
  g2.set_input("x", x2);
  g2.set_input("t", t2);
  g2.forward_to(loss);
  g2.backward(loss);
  const auto& route = g2.node(mp2).route;
  REQUIRE(route.size() == 1);
  CHECK(route[0] == 0);
}

TEST_CASE("relu, sigmoid and softmax match their formulas") {
  RandomStream rs(4);
  Graph<double> g;
  int in = g.add_input("x", {3, 2, 2});
  int r = g.relu("r", in);
  int s = g.sigmoid("s", in);
  int sm = g.softmax("sm", in);
  Tensor<double> x = rand_tensor(rs, {3, 2, 2}, -2.0, 2.0);
  g.set_input("x", x);
  g.forward_to(r);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(g.tensor_of(r).data[i] == (x.data[i] > 0 ? x.data[i] : 0.0));
  g.forward_to(s);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(g.tensor_of(s).data[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x.data[i]))).epsilon(1e-14));
  g.forward_to(sm);
  const Tensor<double>& p = g.tensor_of(sm);
  for (int64_t yy = 0; yy < 2; ++yy)
    for (int64_t xx = 0; xx < 2; ++xx) {
      double mx = std::max({x.at3(0, yy, xx), x.at3(1, yy, xx), x.at3(2, yy, xx)});
      double z = 0;
      for (int64_t c = 0; c < 3; ++c) z += std::exp(x.at3(c, yy, xx) - mx);
      double total = 0;
      for (int64_t c = 0; c < 3; ++c) {
        double e = std::exp(x.at3(c, yy, xx) - mx) / z;
        CHECK(p.at3(c, yy, xx) == doctest::Approx(e).epsilon(1e-13));
        total += p.at3(c, yy, xx);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    }
}

TEST_CASE("relu subgradient at exactly zero is zero") {
  Graph<double> g;
  int in = g.add_input("x", {1, 1, 2});
  int c = g.conv("c", in, 1, 1);
  int r = g.relu("r", c);
  int tgt = g.add_input("t", {1, 1, 2});
  int loss = g.loss_mse("loss", r, tgt);
  g.find_param("c.weight")->value.data = {1.0};
  g.find_param("c.bias")->value.data = {0.0};
  Tensor<double> x({1, 1, 2});
  x.data = {0.0, 2.0};  // conv output is exactly {0, 2}
  Tensor<double> t({1, 1, 2});
  t.data = {-1.0, 0.0};
  g.set_input("x", x);
  g.set_input("t", t);
  g.forward_to(loss);
  g.backward(loss);
  // d(loss)/d(bias) flows through relu'(0) = 0 for the first pixel and
  // relu'(2) = 1 for the second: only the second contributes
  double expect_bias_grad = 2.0 * (2.0 - 0.0) / 2.0;  // d/dy mean((y-t)^2) at y=2,t=0
  CHECK(g.find_param("c.bias")->grad.data[0] == doctest::Approx(expect_bias_grad).epsilon(1e-12));
}

TEST_CASE("concat stacks channels and add sums elementwise") {
  RandomStream rs(5);
  Graph<double> g;
  int a = g.add_input("a", {2, 3, 3});
  int b = g.add_input("b", {1, 3, 3});
  int cat = g.concat("cat", a, b);
  Tensor<double> ta = rand_tensor(rs, {2, 3, 3});
  Tensor<double> tb = rand_tensor(rs, {1, 3, 3});
  g.set_input("a", ta);
  g.set_input("b", tb);
  g.forward_to(cat);
  const Tensor<double>& y = g.tensor_of(cat);
  REQUIRE(y.shape == Shape{3, 3, 3});
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t i = 0; i < 9; ++i) CHECK(y.data[static_cast<size_t>(c * 9 + i)] == ta.data[static_cast<size_t>(c * 9 + i)]);
  for (int64_t i = 0; i < 9; ++i) CHECK(y.data[static_cast<size_t>(2 * 9 + i)] == tb.data[static_cast<size_t>(i)]);

  Graph<double> g2;
  int a2 = g2.add_input("a", {2, 2, 2});
  int b2 = g2.add_input("b", {2, 2, 2});
  int sum = g2.add("s", a2, b2);
  Tensor<double> u = rand_tensor(rs, {2, 2, 2});
  Tensor<double> v = rand_tensor(rs, {2, 2, 2});
  g2.set_input("a", u);
  g2.set_input("b", v);
  g2.forward_to(sum);
  for (size_t i = 0; i < u.data.size(); ++i) CHECK(g2.tensor_of(sum).data[i] == u.data[i] + v.data[i]);
}

// graph builder for per-op gradient checks: a conv provides the

// parameters whose gradients flow through the op under test
template <class AddOp>
static GradCheckReport check_through(uint64_t seed, Shape in_shape, AddOp&& add_op) {
  RandomStream rs(seed);
  Graph<double> g;
  int in = g.add_input("x", in_shape);
  int c = g.conv("c", in, static_cast<int>(in_shape[0]), 3);
  int out = add_op(g, c);
  Shape out_shape = g.node(out).value.shape;
  int tgt = g.add_input("t", out_shape);
  int loss = g.loss_mse("loss", out, tgt);
  set_params(g, rs);
  g.set_input("x", rand_tensor(rs, in_shape, 0.1, 1.0));
  g.set_input("t", rand_tensor(rs, out_shape, 0.0, 1.0));
  g.forward_to(loss);
  return grad_check(g, loss);
}

TEST_CASE("gradients through every op pass central-difference checks") {
  CHECK(check_through(11, {2, 4, 4}, [](Graph<double>& g, int c) { return g.relu("op", c); }).ok());
  CHECK(check_through(12, {2, 4, 4}, [](Graph<double>& g, int c) { return g.sigmoid("op", c); }).ok());
  CHECK(check_through(13, {3, 4, 4}, [](Graph<double>& g, int c) { return g.softmax("op", c); }).ok());
  CHECK(check_through(14, {2, 4, 4}, [](Graph<double>& g, int c) { return g.maxpool("op", c); }).ok());
  CHECK(check_through(15, {2, 4, 4}, [](Graph<double>& g, int c) { return g.tconv("op", c, 2); }).ok());
  CHECK(check_through(16, {2, 4, 4}, [](Graph<double>& g, int c) { return g.conv("op", c, 2, 3); }).ok());
  CHECK(check_through(17, {2, 4, 4}, [](Graph<double>& g, int c) { return g.conv("op", c, 4, 1); }).ok());
  CHECK(check_through(18, {2, 4, 4}, [](Graph<double>& g, int c) { return g.concat("op", c, c); }).ok());
  CHECK(check_through(19, {2, 4, 4}, [](Graph<double>& g, int c) { return g.add("op", c, c); }).ok());
}

TEST_CASE("gradients of every loss node pass central-difference checks") {
  auto with_loss = [](uint64_t seed, auto&& make_loss, bool simplex_target) {
    RandomStream rs(seed);
    Graph<double> g;
    int in = g.add_input("x", Shape{2, 4, 4});
    int c = g.conv("c", in, 3, 3);
    int sm = g.softmax("sm", c);
    int tgt = g.add_input("t", Shape{3, 4, 4});
    int loss = make_loss(g, sm, tgt);
    set_params(g, rs);
    g.set_input("x", rand_tensor(rs, {2, 4, 4}, 0.1, 1.0));
    Tensor<double> t({3, 4, 4});
    if (simplex_target) {
      for (int64_t i = 0; i < 16; ++i) {
        int64_t cls = static_cast<int64_t>(rs.below(3));
        t.data[static_cast<size_t>(cls * 16 + i)] = 1.0;
      }
    } else {
      for (auto& v : t.data) v = rs.uniform();
    }
    g.set_input("t", t);
    g.forward_to(loss);
    return grad_check(g, loss);
  };
  auto ce = with_loss(21, [](Graph<double>& g, int p, int t) { return g.loss_ce("loss", p, t); }, true);
  CHECK(ce.ok());
  auto ces = with_loss(22, [](Graph<double>& g, int p, int t) { return g.loss_ce("loss", p, t, Reduction::Sum); }, true);
  CHECK(ces.ok());
  auto dice = with_loss(23, [](Graph<double>& g, int p, int t) { return g.loss_dice("loss", p, t); }, true);
  CHECK(dice.ok());
  auto mse = with_loss(24, [](Graph<double>& g, int p, int t) { return g.loss_mse("loss", p, t); }, false);
  CHECK(mse.ok());
  auto l1 = with_loss(25, [](Graph<double>& g, int p, int t) { return g.loss_l1("loss", p, t); }, false);
  CHECK(l1.ok());
}

TEST_CASE("an injected gradient fault is localized to its parameter") {
  RandomStream rs(31);
  Graph<double> g;
  int in = g.add_input("x", {1, 4, 4});
  int c1 = g.conv("first", in, 2, 3);
  int r = g.relu("r", c1);
  int c2 = g.conv("second", r, 1, 3);
  int tgt = g.add_input("t", {1, 4, 4});
  int loss = g.loss_mse("loss", c2, tgt);
  set_params(g, rs);
  g.set_input("x", rand_tensor(rs, {1, 4, 4}, 0.1, 1.0));
  g.set_input("t", rand_tensor(rs, {1, 4, 4}));
  g.forward_to(loss);
  REQUIRE(grad_check(g, loss).ok());

  g.inject_grad_fault("second.weight", 0.05);
  g.forward_to(loss);
  GradCheckReport rep = grad_check(g, loss);
  REQUIRE_FALSE(rep.ok());
  auto bad = rep.failing_params();
  REQUIRE(bad.size() == 1);
  CHECK(bad[0] == "second.weight");
}

TEST_CASE("backward demands a matching forward pass") {
  Graph<double> g;
  int in = g.add_input("x", {1, 2, 2});
  int tgt = g.add_input("t", {1, 2, 2});
  int c = g.conv("c", in, 1, 1);
  int l1 = g.loss_l1("l1", c, tgt);
  int l2 = g.loss_mse("l2", c, tgt);
  g.init_params(1);
  Tensor<double> x({1, 2, 2});
  x.fill(0.5);
  g.set_input("x", x);
  g.set_input("t", x);
  CHECK_THROWS_AS(g.backward(l1), TrainingError);
  g.forward_to(l1);
  CHECK_NOTHROW(g.backward(l1));
  CHECK_THROWS_AS(g.backward(l2), TrainingError);
  g.set_input("x", x);  // invalidates the forwarded target
  CHECK_THROWS_AS(g.backward(l1), TrainingError);
  CHECK_THROWS_AS(g.backward(c), TrainingError);  // not a loss node either way
}

TEST_CASE("gradients accumulate until zero_grad") {
  Graph<double> g;
  int in = g.add_input("x", {1, 1, 1});
  int c = g.conv("c", in, 1, 1);
  int tgt = g.add_input("t", {1, 1, 1});
  int loss = g.loss_mse("loss", c, tgt);
  g.find_param("c.weight")->value.data = {2.0};
  g.find_param("c.bias")->value.data = {0.0};
  Tensor<double> x({1, 1, 1}), t({1, 1, 1});
  x.data = {1.0};
  t.data = {0.0};
  g.set_input("x", x);
  g.set_input("t", t);
  g.forward_to(loss);
  g.backward(loss);  // d/dw (w*x - t)^2 = 2*(2-0)*1 = 4
  CHECK(g.find_param("c.weight")->grad.data[0] == doctest::Approx(4.0));
  g.forward_to(loss);
  g.backward(loss, 0.5);
  CHECK(g.find_param("c.weight")->grad.data[0] == doctest::Approx(6.0));
  g.zero_grad();
  CHECK(g.find_param("c.weight")->grad.data[0] == 0.0);
}

TEST_CASE("non-finite values are rejected in the forward pass") {
  Graph<double> g;
  int in = g.add_input("x", {1, 2, 2});
  int c = g.conv("c", in, 1, 1);
  g.init_params(3);
  Tensor<double> x({1, 2, 2});
  x.data = {1.0, 2.0, std::numeric_limits<double>::infinity(), 0.0};
  g.set_input("x", x);
  CHECK_THROWS_AS(g.forward_to(c), TrainingError);
}

TEST_CASE("float and double graphs run the same architecture") {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.input_side = 8;
  cfg.head = HeadKind::Segmentation;
  Graph<float> gf = build_model<float>(cfg, 9);
  Graph<double> gd = build_model<double>(cfg, 9);
  REQUIRE(gf.total_param_scalars() == gd.total_param_scalars());
  Tensor<double> img({1, 8, 8});
  RandomStream rs(10);
  for (auto& v : img.data) v = rs.uniform();
  gf.set_input("image", tensor_cast<float>(img));
  gd.set_input("image", img);
  int hf = gf.require_node("head_act");
  int hd = gd.require_node("head_act");
  gf.forward_to(hf);
  gd.forward_to(hd);
  const auto& pf = gf.tensor_of(hf);
  const auto& pd = gd.tensor_of(hd);
  for (size_t i = 0; i < pd.data.size(); ++i)
    CHECK(static_cast<double>(pf.data[i]) == doctest::Approx(pd.data[i]).epsilon(2e-4));
}

TEST_CASE("snapshot and restore round trip parameters bitwise") {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_channels = 2;
  cfg.input_side = 8;
  Graph<double> g = build_model<double>(cfg, 77);
  auto snap = g.snapshot_params();
  for (auto& p : g.params())
    for (auto& v : p.value.data) v += 1.0;
  g.restore_params(snap);
  size_t k = 0;
  for (auto& p : g.params()) {
    CHECK(p.value.data == snap[k].data);
    ++k;
  }
}
