#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semiseg/losses.hpp"
#include "semiseg/rng.hpp"

using namespace semiseg;

TEST_CASE("frozen single-value oracles") {
  Tensor<double> p({1, 1, 2}), t({1, 1, 2});

  p.data = {0.5, 1.0};
  t.data = {0.25, 0.5};
  CHECK(l1_loss(p, t) == doctest::Approx(0.375).epsilon(1e-15));

  p.data = {1.0, 0.0};
  t.data = {0.0, 0.0};
  CHECK(mse_loss(p, t) == doctest::Approx(0.5).epsilon(1e-15));

  Tensor<double> p1({1, 1, 1}), t1({1, 1, 1});
  p1.data = {0.5};
  t1.data = {1.0};
  CHECK(ce_loss(p1, t1) == doctest::Approx(0.69314718055994529).epsilon(1e-15));
  CHECK(ce_loss(p1, t1, Reduction::Sum) == doctest::Approx(0.69314718055994529).epsilon(1e-15));

  // probabilities below the clamp floor are treated as 1e-12
  p1.data = {1e-15};
  CHECK(ce_loss(p1, t1) == doctest::Approx(27.631021115928547).epsilon(1e-15));

  p.data = {1.0, 1.0};
  t.data = {1.0, 0.0};
  CHECK(dice_loss(p, t) == doctest::Approx(0.33333322222225925).epsilon(1e-14));

  Tensor<double> p2({2, 1, 2}), t2({2, 1, 2});
  p2.data = {0.3, 0.6, 0.7, 0.4};
  t2.data = {1.0, 0.0, 0.0, 1.0};
  CHECK(dice_loss(p2, t2) == doctest::Approx(0.65162874523417735).epsilon(1e-14));
}

TEST_CASE("ce mean divides by the pixel count, not by classes") {
  Tensor<double> p({2, 1, 2}), t({2, 1, 2});
  p.data = {0.5, 0.25, 0.5, 0.75};
  t.data = {1.0, 0.0, 0.0, 1.0};
  double expect_sum = -std::log(0.5) - std::log(0.75);
  CHECK(ce_loss(p, t, Reduction::Sum) == doctest::Approx(expect_sum).epsilon(1e-15));
  CHECK(ce_loss(p, t) == doctest::Approx(expect_sum / 2.0).epsilon(1e-15));  // H*W = 2
}

static Tensor<double> random_probs(RandomStream& rs, int64_t L, int64_t h, int64_t w) {
  Tensor<double> p({L, h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    double z = 0;
    std::vector<double> e(static_cast<size_t>(L));
    for (auto& v : e) {
      v = std::exp(rs.uniform(-2, 2));
      z += v;
    }
    for (int64_t c = 0; c < L; ++c) p.data[static_cast<size_t>(c * h * w + i)] = e[static_cast<size_t>(c)] / z;
  }
  return p;
}

TEST_CASE("graph loss nodes agree with the reference losses to 1e-12") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    RandomStream rs(1000 + seed);
    int64_t L = 2 + static_cast<int64_t>(rs.below(3));
    int64_t h = 2 + static_cast<int64_t>(rs.below(3));
    int64_t w = 2 + static_cast<int64_t>(rs.below(3));
    Tensor<double> probs = random_probs(rs, L, h, w);
    ClassMask mask({h, w});
    for (auto& v : mask.data) v = static_cast<uint8_t>(rs.below(static_cast<uint64_t>(L)));
    Tensor<double> target = onehot(mask, static_cast<int>(L));
    Tensor<double> cont({L, h, w});
    for (auto& v : cont.data) v = rs.uniform();

    Graph<double> g;
    int p = g.add_input("p", {L, h, w});
    int t = g.add_input("t", {L, h, w});
    int l_l1 = g.loss_l1("l1", p, t);
    int l_ce = g.loss_ce("ce", p, t);
    int l_ces = g.loss_ce("ces", p, t, Reduction::Sum);
    int l_di = g.loss_dice("dice", p, t);
    int l_ms = g.loss_mse("mse", p, t);

    g.set_input("p", probs);
    g.set_input("t", target);
    g.forward_to(l_ce);
    CHECK(g.value_of(l_ce) == doctest::Approx(ce_loss(probs, target)).epsilon(1e-12));
    g.forward_to(l_ces);
    CHECK(g.value_of(l_ces) == doctest::Approx(ce_loss(probs, target, Reduction::Sum)).epsilon(1e-12));
    g.forward_to(l_di);
    CHECK(g.value_of(l_di) == doctest::Approx(dice_loss(probs, target)).epsilon(1e-12));

    g.set_input("t", cont);
    g.forward_to(l_l1);
    CHECK(g.value_of(l_l1) == doctest::Approx(l1_loss(probs, cont)).epsilon(1e-12));
    g.forward_to(l_ms);
    CHECK(g.value_of(l_ms) == doctest::Approx(mse_loss(probs, cont)).epsilon(1e-12));
  }
}

TEST_CASE("onehot puts a single one in the right plane") {
  ClassMask m({2, 2});
  m.data = {0, 2, 1, 1};
  Tensor<double> t = onehot(m, 3);
  REQUIRE(t.shape == Shape{3, 2, 2});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 4; ++i)
      CHECK(t.data[static_cast<size_t>(c * 4 + i)] == (m.data[static_cast<size_t>(i)] == c ? 1.0 : 0.0));
}

TEST_CASE("argmax breaks ties toward the lowest class") {
  Tensor<double> p({3, 1, 2});
  // pixel 0: classes 0 and 2 tie; pixel 1: classes 1 and 2 tie
  p.data = {0.4, 0.1,
            0.2, 0.45,
            0.4, 0.45};
  ClassMask m = argmax_mask(p);
  CHECK(m.data[0] == 0);
  CHECK(m.data[1] == 1);
}

TEST_CASE("dsc analytic cases") {
  ClassMask a({2, 2}), b({2, 2});
  a.data = {1, 1, 0, 0};
  b.data = {1, 1, 0, 0};
  CHECK(dsc_metric(a, b, 1) == 1.0);

  b.data = {0, 0, 1, 1};
  CHECK(dsc_metric(a, b, 1) == 0.0);

  // hand-counted half overlap: pred {px0, px1}, truth {px1, px2};
  // 2*1 / (2+2) = 0.5
  a.data = {1, 1, 0, 0};
  b.data = {0, 1, 1, 0};
  CHECK(dsc_metric(a, b, 1) == 0.5);

  // both empty for the class: defined as perfect agreement
  a.data = {0, 0, 0, 0};
  b.data = {0, 0, 0, 0};
  CHECK(dsc_metric(a, b, 1) == 1.0);
  CHECK(dsc_metric(a, b, 2) == 1.0);

  // one empty, one not
  b.data = {1, 0, 0, 0};
  CHECK(dsc_metric(a, b, 1) == 0.0);
}

TEST_CASE("pooled counts equal the concatenated computation") {
  RandomStream rs(77);
  ClassMask a1({3, 3}), b1({3, 3}), a2({3, 3}), b2({3, 3});
  for (auto* m : {&a1, &b1, &a2, &b2})
    for (auto& v : m->data) v = static_cast<uint8_t>(rs.below(3));

  DscCounts pooled;
  pooled.add(a1, b1, 1);
  pooled.add(a2, b2, 1);

  ClassMask acat({2 * 3, 3}), bcat({2 * 3, 3});
  std::copy(a1.data.begin(), a1.data.end(), acat.data.begin());
  std::copy(a2.data.begin(), a2.data.end(), acat.data.begin() + 9);
  std::copy(b1.data.begin(), b1.data.end(), bcat.data.begin());
  std::copy(b2.data.begin(), b2.data.end(), bcat.data.begin() + 9);
  CHECK(pooled.dsc() == dsc_metric(acat, bcat, 1));

  auto per = dsc_per_class(a1, b1, 3);
  REQUIRE(per.size() == 3);
  for (int c = 0; c < 3; ++c) CHECK(per[static_cast<size_t>(c)] == dsc_metric(a1, b1, static_cast<uint8_t>(c)));
}
