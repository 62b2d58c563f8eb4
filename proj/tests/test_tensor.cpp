#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "capgen/rng.hpp"
#include "capgen/tensor.hpp"
#include "oracles.hpp"

using namespace capgen;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-1.5, 1.5);
  return Tensor::of(std::move(shape), std::move(v), requires_grad);
}

// Reduce any tensor to a scalar through fixed random weights so every output
// coordinate influences the loss.
Tensor weighted_sum(const Tensor& t, Rng& rng) {
  std::vector<double> w(t.size());
  for (double& x : w) x = rng.uniform(0.5, 2.0);
  Tensor weights = Tensor::of(t.shape(), std::move(w));
  Tensor prod = hadamard(t, weights);
  if (prod.rank() == 2) return scalar_mul(mean_over(mean_over(prod, 0), 0), 7.0);
  if (prod.rank() == 1) return scalar_mul(mean_over(prod, 0), 7.0);
  return prod;
}

}  // namespace

TEST_CASE("matmul identity and worked examples", "[tensor]") {
  Tensor eye = Tensor::of({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::of({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  CHECK(r.values()[0] == 1.0);
  CHECK(r.values()[1] == 2.0);
  CHECK(r.values()[2] == 3.0);
  CHECK(r.values()[3] == 4.0);

  Tensor a = Tensor::of({1, 2}, {1, 2});
  Tensor b = Tensor::of({2, 1}, {3, 4});
  CHECK(matmul(a, b).values()[0] == 11.0);

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences", "[tensor]") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Rng wrng(5);
  Tensor loss = weighted_sum(matmul(a, b), wrng);
  loss.backward();

  auto f = [&]() {
    NoGradGuard ng;
    Rng wrng2(5);
    return weighted_sum(matmul(a, b), wrng2).item();
  };
  CHECK(oracles::max_rel_err(a.grad(), oracles::finite_diff_grad(f, a)) < 1e-6);
  CHECK(oracles::max_rel_err(b.grad(), oracles::finite_diff_grad(f, b)) < 1e-6);
}

TEST_CASE("elementwise examples", "[tensor]") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);

  Tensor h = hadamard(Tensor::of({3}, {1, 2, 3}), Tensor::of({3}, {0, 1, 0}));
  CHECK(h.values()[0] == 0.0);
  CHECK(h.values()[1] == 2.0);
  CHECK(h.values()[2] == 0.0);

  Tensor m = mean_over(Tensor::of({2, 2}, {1, 2, 3, 4}), 0);
  CHECK(m.values()[0] == 2.0);
  CHECK(m.values()[1] == 3.0);

  // scalar broadcast is the only allowed broadcast
  Tensor s = add(Tensor::of({2}, {1, 2}), Tensor::scalar(10.0));
  CHECK(s.values()[0] == 11.0);
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("log domain error and gradient", "[tensor]") {
  CHECK_THROWS_AS(log(Tensor::of({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log(Tensor::scalar(-3.0)), DomainError);

  Rng rng(3);
  Tensor x = Tensor::of({4}, {0.5, 1.0, 2.5, 0.1}, true);
  Rng wrng(7);
  Tensor loss = weighted_sum(log(x), wrng);
  loss.backward();
  auto f = [&]() {
    NoGradGuard ng;
    Rng wrng2(7);
    return weighted_sum(log(x), wrng2).item();
  };
  CHECK(oracles::max_rel_err(x.grad(), oracles::finite_diff_grad(f, x)) < 1e-6);
}

TEST_CASE("softmax worked examples and stability", "[tensor]") {
  Tensor s = softmax(Tensor::of({2}, {0, 0}));
  CHECK(s.values()[0] == 0.5);
  CHECK(s.values()[1] == 0.5);

  Tensor big = softmax(Tensor::of({3}, {1000, 1000, 1000}));
  for (double v : big.values()) {
    CHECK(std::isfinite(v));
    CHECK(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
  }

  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({9}, rng, false);
    Tensor sm = softmax(x);
    double sum = 0.0;
    for (double v : sm.values()) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(softmax(Tensor::of({2, 2}, {1, 2, 3, 4})), DimensionError);
}

TEST_CASE("softmax and log_softmax gradients", "[tensor]") {
  Rng rng(17);
  Tensor x = random_tensor({7}, rng);
  Rng wrng(9);
  Tensor loss = weighted_sum(softmax(x), wrng);
  loss.backward();
  auto f = [&]() {
    NoGradGuard ng;
    Rng wrng2(9);
    return weighted_sum(softmax(x), wrng2).item();
  };
  CHECK(oracles::max_rel_err(x.grad(), oracles::finite_diff_grad(f, x)) < 1e-6);

  Tensor y = random_tensor({7}, rng);
  Rng wrng3(13);
  Tensor loss2 = weighted_sum(log_softmax(y), wrng3);
  loss2.backward();
  auto f2 = [&]() {
    NoGradGuard ng;
    Rng wrng4(13);
    return weighted_sum(log_softmax(y), wrng4).item();
  };
  CHECK(oracles::max_rel_err(y.grad(), oracles::finite_diff_grad(f2, y)) < 1e-6);
}

TEST_CASE("backward basics", "[tensor]") {
  SECTION("x squared") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = hadamard(x, x);
    loss.backward();
    CHECK(x.grad()[0] == Catch::Approx(6.0));
  }
  SECTION("two branches sharing x accumulate") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor loss = add(hadamard(x, x), scalar_mul(x, 3.0));  // x^2 + 3x
    loss.backward();
    CHECK(x.grad()[0] == Catch::Approx(7.0));
  }
  SECTION("off-path tensor keeps an all-zero grad") {
    Tensor x = Tensor::scalar(1.0, true);
    Tensor unused = Tensor::of({3}, {1, 2, 3}, true);
    hadamard(unused, unused);  // recorded but not on the loss path
    Tensor loss = hadamard(x, x);
    loss.backward();
    for (double g : unused.grad()) CHECK(g == 0.0);
  }
  SECTION("non-scalar loss rejected") {
    Tensor x = Tensor::of({2}, {1, 2}, true);
    Tensor y = hadamard(x, x);
    CHECK_THROWS_AS(y.backward(), ContractError);
  }
  SECTION("one backward per graph") {
    Tensor x = Tensor::scalar(1.5, true);
    Tensor loss = hadamard(x, x);
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), ContractError);
  }
}

TEST_CASE("every differentiable op passes a composite finite-difference check", "[tensor]") {
  // One graph touching add/sub/hadamard/scalar_mul/sigmoid/tanh/exp/log/
  // mean_over(both axes)/concat/gather/gather_rows/row/slice/pick/matmul
  // in all supported rank combinations.
  Rng rng(99);
  Tensor mat = random_tensor({3, 4}, rng);
  Tensor vec = random_tensor({4}, rng);
  Tensor left = random_tensor({3}, rng);

  auto build = [&]() {
    Tensor mv = matmul(mat, vec);                       // [3]
    Tensor vm = matmul(left, mat);                      // [4]
    Tensor act = add(sigmoid(mv), tanh(scalar_mul(mv, 0.5)));
    Tensor both = concat(act, exp(scalar_mul(vm, 0.3)), 0);  // [7]
    Tensor gathered = gather(both, {0, 2, 2, 5});            // duplicates accumulate
    Tensor rows = gather_rows(mat, {2, 0});                  // [2 x 4]
    Tensor rmean = mean_over(rows, 1);                       // [2]
    Tensor cmean = mean_over(rows, 0);                       // [4]
    Tensor r1 = row(mat, 1);                                 // [4]
    Tensor sl = slice(vm, 1, 3);                             // [3]
    Tensor logpart = log(add(hadamard(cmean, cmean), Tensor::scalar(1.0)));
    Tensor joined = concat(concat(gathered, rmean, 0), concat(sl, logpart, 0), 0);
    Tensor lsm = log_softmax(joined);
    Tensor sm = softmax(sub(r1, vec));
    Tensor mixed = concat(lsm, sm, 0);
    Rng wrng(123);
    return add(weighted_sum(mixed, wrng), pick(mixed, 3));
  };

  Tensor loss = build();
  loss.backward();
  auto f = [&]() {
    NoGradGuard ng;
    return build().item();
  };
  CHECK(oracles::max_rel_err(mat.grad(), oracles::finite_diff_grad(f, mat)) < 1e-4);
  CHECK(oracles::max_rel_err(vec.grad(), oracles::finite_diff_grad(f, vec)) < 1e-4);
  CHECK(oracles::max_rel_err(left.grad(), oracles::finite_diff_grad(f, left)) < 1e-4);
}

TEST_CASE("deterministic forward and backward", "[tensor]") {
  auto run = [&]() {
    Rng rng(42);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor loss = mean_over(sigmoid(matmul(a, b)), 0);
    loss.backward();
    std::vector<double> out(loss.values().begin(), loss.values().end());
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad guard suppresses recording", "[tensor]") {
  Tensor x = Tensor::scalar(2.0, true);
  NoGradGuard ng;
  Tensor y = hadamard(x, x);
  CHECK_FALSE(y.requires_grad());
}
