#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "test_support.hpp"
#include "thpn/init.hpp"
#include "thpn/ops.hpp"
#include "thpn/optim.hpp"
#include "thpn/rng.hpp"
#include "thpn/tensor.hpp"

using namespace thpn;
using thpn::testing::max_rel_grad_error;
using thpn::testing::random_tensor;

TEST_CASE("matmul identity and scalar cases") {
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from_values({2, 1}, {3, 4});
  Tensor out = matmul(eye, v);
  CHECK(out.at(0, 0) == doctest::Approx(3.0));
  CHECK(out.at(1, 0) == doctest::Approx(4.0));

  Tensor a = Tensor::from_values({1, 1}, {2});
  Tensor b = Tensor::from_values({1, 1}, {3});
  CHECK(matmul(a, b).at(0, 0) == doctest::Approx(6.0));

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  RngState rng(7);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  std::vector<Tensor> params = {a, b};
  double err = max_rel_grad_error(params, [&] { return sum(matmul(a, b)); });
  CHECK(err <= 1e-6);
}

TEST_CASE("masked_softmax examples") {
  Tensor z = Tensor::from_values({2}, {0, 0});
  Tensor p = masked_softmax(z, {1, 1});
  CHECK(p.at(0) == doctest::Approx(0.5));
  CHECK(p.at(1) == doctest::Approx(0.5));

  Tensor z2 = Tensor::from_values({2}, {5, 100});
  Tensor p2 = masked_softmax(z2, {1, 0});
  CHECK(p2.at(0) == 1.0);
  CHECK(p2.at(1) == 0.0);

  Tensor z3 = Tensor::from_values({3}, {1, 2, 3});
  Tensor p3 = softmax(z3);
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  const double s = e1 + e2 + e3;
  CHECK(std::abs(p3.at(0) - e1 / s) <= 1e-12);
  CHECK(std::abs(p3.at(1) - e2 / s) <= 1e-12);
  CHECK(std::abs(p3.at(2) - e3 / s) <= 1e-12);

  CHECK_THROWS_AS(masked_softmax(z, {0, 0}), DimensionError);
}

TEST_CASE("masked_softmax is a probability vector with exact zeros") {
  RngState rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(8));
    Tensor z = random_tensor({n}, rng, 3.0);
    std::vector<std::uint8_t> keep(n, 0);
    int kept = 0;
    for (int i = 0; i < n; ++i) {
      keep[i] = rng.uniform() < 0.6 ? 1 : 0;
      kept += keep[i];
    }
    if (kept == 0) keep[static_cast<int>(rng.uniform_int(n))] = 1;
    Tensor p = masked_softmax(z, keep);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      CHECK(p.at(i) >= 0.0);
      if (!keep[i]) CHECK(p.at(i) == 0.0);
      total += p.at(i);
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("masked_softmax and renorm_masked gradients") {
  RngState rng(21);
  Tensor z = random_tensor({6}, rng);
  std::vector<std::uint8_t> keep = {1, 0, 1, 1, 0, 1};
  std::vector<Tensor> params = {z};
  Tensor w = random_tensor({6}, rng);
  w.set_requires_grad(false);
  double err = max_rel_grad_error(params, [&] { return dot(masked_softmax(z, keep), w); });
  CHECK(err <= 1e-6);

  std::vector<std::uint8_t> allow = {1, 1, 0, 1, 0, 1};
  double err2 = max_rel_grad_error(
      params, [&] { return dot(renorm_masked(masked_softmax(z, keep), allow), w); });
  CHECK(err2 <= 1e-6);
}

TEST_CASE("elementwise ops") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
  CHECK(thpn::tanh(Tensor::scalar(0.0)).item() == doctest::Approx(0.0));
  Tensor a = Tensor::from_values({2}, {1, 2});
  Tensor b = Tensor::from_values({2}, {0, 0});
  Tensor m = mul(a, b);
  CHECK(m.at(0) == 0.0);
  CHECK(m.at(1) == 0.0);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST_CASE("composite gradient: sum(sigmoid(Wx))") {
  RngState rng(3);
  Tensor w = random_tensor({5, 4}, rng);
  Tensor x = random_tensor({4}, rng);
  x.set_requires_grad(false);
  std::vector<Tensor> params = {w};
  double err = max_rel_grad_error(params, [&] { return sum(sigmoid(matvec(w, x))); });
  CHECK(err <= 1e-6);
}

TEST_CASE("vecmat/dot/concat/slice gradients") {
  RngState rng(5);
  Tensor x = random_tensor({3}, rng);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor y = random_tensor({4}, rng);
  std::vector<Tensor> params = {x, a, y};
  double err = max_rel_grad_error(params, [&] {
    Tensor u = vecmat(x, a);               // (4)
    Tensor c = concat({u, y}, 0);          // (8)
    Tensor s = slice(c, 1, 6);             // (6)
    return sum(thpn::tanh(s));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("embedding_lookup semantics") {
  Tensor eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor row = embedding_lookup(eye, 1);
  CHECK(row.at(0) == 0.0);
  CHECK(row.at(1) == 1.0);
  CHECK(row.at(2) == 0.0);
  CHECK_THROWS_AS(embedding_lookup(eye, 3), DimensionError);

  // two lookups of the same row accumulate both upstream grads
  Tensor table = Tensor::from_values({2, 2}, {1, 2, 3, 4}, true);
  Tensor l1 = embedding_lookup(table, 1);
  Tensor l2 = embedding_lookup(table, 1);
  Tensor loss = add(sum(l1), sum(scale(l2, 2.0)));
  backward(loss);
  CHECK(table.grad()(1, 0) == doctest::Approx(3.0));
  CHECK(table.grad()(1, 1) == doctest::Approx(3.0));
  CHECK(table.grad()(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("embedding gradient matches finite differences") {
  RngState rng(11);
  Tensor table = random_tensor({6, 5}, rng);
  std::vector<Tensor> params = {table};
  double err = max_rel_grad_error(params, [&] {
    Tensor r = embedding_lookup(table, 2);
    Tensor b = embed_bag(table, {{0, 2, 2}, {4}});
    return add(sum(thpn::tanh(r)), sum(sigmoid(b)));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("dropout") {
  RngState rng(9);
  Tensor x = random_tensor({40}, rng);
  Tensor same = dropout(x, 0.0, true, rng);
  CHECK(same.value() == x.value());
  Tensor eval_same = dropout(x, 0.4, false, rng);
  CHECK(eval_same.value() == x.value());
  CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);

  // survivor fraction over 1e5 elements: 0.6 +/- 0.01
  Tensor big = Tensor::zeros({100000});
  big.value().setOnes();
  Tensor dropped = dropout(big, 0.4, true, rng);
  int survivors = 0;
  for (int i = 0; i < 100000; ++i)
    if (dropped.at(i) != 0.0) ++survivors;
  CHECK(std::abs(survivors / 1e5 - 0.6) <= 0.01);
}

TEST_CASE("dropout gradient with a fixed mask matches finite differences") {
  RngState rng(51);
  Tensor x = random_tensor({12}, rng);
  std::vector<Tensor> params = {x};
  // reseeding per evaluation freezes the mask, making the loss deterministic
  double err = max_rel_grad_error(params, [&] {
    RngState mask_rng(5);
    return sum(thpn::tanh(dropout(x, 0.4, true, mask_rng)));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("clip_global_norm") {
  Tensor g1 = Tensor::zeros({2}, true);
  g1.grad() << 6, 8;  // norm 10
  std::vector<Tensor> ps = {g1};
  CHECK(clip_global_norm(ps, 10.0) == doctest::Approx(10.0));
  CHECK(g1.grad()(0, 0) == doctest::Approx(6.0));

  g1.grad() << 12, 16;  // norm 20
  CHECK(clip_global_norm(ps, 10.0) == doctest::Approx(20.0));
  CHECK(g1.grad()(0, 0) == doctest::Approx(6.0));
  CHECK(g1.grad()(1, 0) == doctest::Approx(8.0));

  // idempotent
  clip_global_norm(ps, 10.0);
  CHECK(g1.grad()(0, 0) == doctest::Approx(6.0));

  // multi-tensor norm equals flattened-vector norm
  RngState rng(17);
  Tensor a = Tensor::zeros({3, 2}, true);
  Tensor b = Tensor::zeros({4}, true);
  double sq = 0.0;
  for (Eigen::Index i = 0; i < a.grad().rows(); ++i)
    for (Eigen::Index j = 0; j < a.grad().cols(); ++j) {
      a.grad()(i, j) = rng.normal(0, 2);
      sq += a.grad()(i, j) * a.grad()(i, j);
    }
  for (int i = 0; i < 4; ++i) {
    b.grad()(i, 0) = rng.normal(0, 2);
    sq += b.grad()(i, 0) * b.grad()(i, 0);
  }
  std::vector<Tensor> both = {a, b};
  CHECK(clip_global_norm(both, 1.0) == doctest::Approx(std::sqrt(sq)));
  double after = 0.0;
  after += a.grad().squaredNorm() + b.grad().squaredNorm();
  CHECK(std::sqrt(after) == doctest::Approx(1.0));
}

TEST_CASE("adam_step first step and recurrence") {
  Tensor p = Tensor::zeros({1}, true);
  p.grad()(0, 0) = 1.0;
  std::vector<Tensor> ps = {p};
  AdamState st;
  st.init(ps);
  adam_step(ps, st);
  CHECK(st.step_count == 1);
  CHECK(p.value()(0, 0) == doctest::Approx(-1e-4).epsilon(1e-6));

  // zero grad leaves the parameter where the moments push it ~0 but the step
  // count still advances; check with fresh state and zero grad: no movement.
  Tensor q = Tensor::zeros({1}, true);
  q.zero_grad();
  std::vector<Tensor> qs = {q};
  AdamState st2;
  st2.init(qs);
  adam_step(qs, st2);
  CHECK(st2.step_count == 1);
  CHECK(q.value()(0, 0) == doctest::Approx(0.0));

  // two steps with constant grad against the hand recurrence
  Tensor r = Tensor::zeros({1}, true);
  std::vector<Tensor> rs = {r};
  AdamState st3;
  st3.init(rs);
  const double g = 0.7;
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 2; ++t) {
    r.zero_grad();
    r.grad()(0, 0) = g;
    adam_step(rs, st3);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 1e-4 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(std::abs(r.value()(0, 0) - x) <= 1e-12);
  }
}

TEST_CASE("initializers") {
  Tensor z = init_zeros({3});
  CHECK(z.value().isZero());

  RngState rng(23);
  Tensor q = init_orthogonal({8, 8}, rng);
  Mat qtq = q.value().transpose() * q.value();
  CHECK((qtq - Mat::Identity(8, 8)).cwiseAbs().maxCoeff() <= 1e-8);

  Tensor tall = init_orthogonal({8, 5}, rng);
  Mat t2 = tall.value().transpose() * tall.value();
  CHECK((t2 - Mat::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-8);

  RngState rng2(29);
  Tensor n = init_normal({100000}, 0.0, 0.01, rng2);
  const double mean = n.value().mean();
  const double stddev = std::sqrt((n.value().array() - mean).square().mean());
  CHECK(std::abs(mean) <= 0.001);
  CHECK(std::abs(stddev - 0.01) <= 0.001);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));

  CHECK_THROWS_AS(backward(Tensor::zeros({3}, true)), DimensionError);

  // disconnected parameter keeps a zero grad
  Tensor y = Tensor::scalar(1.0, true);
  Tensor z = Tensor::scalar(2.0, true);
  Tensor l2 = mul(y, y);
  backward(l2);
  CHECK(z.grad()(0, 0) == 0.0);
}

TEST_CASE("rng determinism") {
  RngState a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RngState c(42), d(43);
  bool differ = false;
  for (int i = 0; i < 10; ++i) differ = differ || (c.next_u64() != d.next_u64());
  CHECK(differ);

  RngState e(7), f(7);
  Tensor x = Tensor::zeros({64});
  x.value().setOnes();
  Tensor d1 = dropout(x, 0.4, true, e);
  Tensor d2 = dropout(x, 0.4, true, f);
  CHECK(d1.value() == d2.value());
}

TEST_CASE("pick_nll") {
  Tensor p = Tensor::from_values({3}, {0.2, 0.5, 0.3}, true);
  Tensor l = pick_nll(p, 1);
  CHECK(l.item() == doctest::Approx(-std::log(0.5)));
  backward(l);
  CHECK(p.grad()(1, 0) == doctest::Approx(-2.0));
  // floor guard
  Tensor tiny = Tensor::from_values({2}, {0.0, 1.0});
  CHECK(pick_nll(tiny, 0).item() == doctest::Approx(-std::log(1e-12)));
}
