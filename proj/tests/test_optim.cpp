#include <cmath>
#include <vector>

#include "doctest.h"
#include "urpca/optim.hpp"
#include "urpca/tensor.hpp"

using namespace urpca;

TEST_CASE("poly_lr follows base*(1-t/T)^0.9") {
  CHECK(poly_lr(1e-4, 0, 100) == 1e-4);
  CHECK(poly_lr(1e-4, 50, 100) == doctest::Approx(1e-4 * std::pow(0.5, 0.9)).epsilon(1e-12));
  CHECK(poly_lr(1e-4, 50, 100) == doctest::Approx(5.3588673e-5).epsilon(1e-7));
  CHECK(poly_lr(1e-4, 100, 100) == 0.0);
  CHECK(poly_lr(1e-4, 250, 100) == 0.0);  // clamped past the schedule
  CHECK_THROWS_AS(poly_lr(1e-4, 0, 0), ConfigError);
  CHECK_THROWS_AS(poly_lr(1e-4, -1, 10), ConfigError);
}

TEST_CASE("adam first step moves by ~lr against the gradient sign") {
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({p});
  p.grad_mutable()[0] = 0.5;  // any positive gradient
  opt.step(0.1);
  // mhat/(sqrt(vhat)+eps) == g/(|g|+eps) ~= 1 on the first step
  CHECK(p.item() == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(opt.step_count() == 1);
  CHECK(p.grad()[0] == 0.0);  // grads consumed by the step
}

TEST_CASE("adam ignores a zero gradient") {
  Tensor p = Tensor::scalar(3.0, true);
  Adam opt({p});
  p.grad_mutable()[0] = 0.0;
  opt.step(0.1);
  CHECK(p.item() == 3.0);
}

TEST_CASE("adam requires gradients to be present") {
  Tensor p = Tensor::scalar(1.0, true);
  Adam opt({p});
  CHECK_THROWS_AS(opt.step(0.1), Error);
}

TEST_CASE("adam descends a convex quadratic") {
  Tensor p = Tensor::from_data({2}, {4.0, -3.0}, true);
  Adam opt({p});
  auto f = [&] {
    const double a = p.data()[0] - 1.0, b = p.data()[1] - 2.0;
    return a * a + b * b;
  };
  double prev = f();
  double last = prev;
  for (int i = 0; i < 200; ++i) {
    auto g = p.grad_mutable();
    g[0] = 2.0 * (p.data()[0] - 1.0);
    g[1] = 2.0 * (p.data()[1] - 2.0);
    opt.step(0.05);
    last = f();
  }
  CHECK(last < 0.05 * prev);
}

TEST_CASE("adam moment buffers track the update count") {
  Tensor p = Tensor::scalar(0.0, true);
  Adam opt({p});
  p.grad_mutable()[0] = 1.0;
  opt.step(0.01);
  CHECK(opt.size() == 1);
  CHECK(opt.first_moment(0).size() == 1);
  CHECK(opt.first_moment(0)[0] == doctest::Approx(0.1).epsilon(1e-12));   // (1-b1)*g
  CHECK(opt.second_moment(0)[0] == doctest::Approx(0.001).epsilon(1e-12));  // (1-b2)*g^2
}
