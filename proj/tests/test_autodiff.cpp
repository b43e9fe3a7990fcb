#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "ae/commands.hpp"
#include "ae/gradcheck.hpp"
#include "ae/gradsuite.hpp"
#include "ae/ops.hpp"
#include "ae/rng.hpp"
#include "ae/tensor.hpp"

using namespace ae;

TEST_CASE("sum of squares has gradient 2x") {
  Tensor x({3}, {1.0, 2.0, 3.0});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = ops::sum_all(ops::mul(x, x));
    tape.run_backward(loss);
  }
  CHECK(x.grad_vector() == std::vector<double>{2.0, 4.0, 6.0});
}

TEST_CASE("finite_diff of a plain sum returns ones") {
  Rng rng(5);
  Tensor x = Tensor::rand_uniform({2, 3}, rng, -1.0, 1.0);
  auto f = [&] { return ops::sum_all(x).at(0); };
  const std::vector<double> g = finite_diff(f, {x});
  REQUIRE(g.size() == 6);
  for (double v : g) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("backward demands a scalar root") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = ops::mul(x, x);
  CHECK_THROWS_AS(tape.run_backward(y), ValueError);
}

TEST_CASE("a leaf that never reaches the root gets a zero gradient") {
  Tensor used({2}, {1.0, 2.0});
  Tensor unused({2}, {5.0, 6.0});
  used.set_requires_grad(true);
  unused.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor probe = ops::mul(unused, Tensor::scalar(0.0));  // tracked, contributes nothing
    Tensor loss = ops::sum_all(ops::add(ops::mul(used, used), probe));
    tape.run_backward(loss);
  }
  CHECK(used.grad_vector() == std::vector<double>{2.0, 4.0});
  CHECK(unused.grad_vector() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("gradients accumulate across fan-out") {
  Tensor x({2}, {3.0, -1.0});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    // loss = sum(x + x) so dloss/dx = 2 through two distinct paths.
    Tensor loss = ops::sum_all(ops::add(x, x));
    tape.run_backward(loss);
  }
  CHECK(x.grad_vector() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("nothing records without an active tape") {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor unused = ops::relu(x);
    (void)unused;
  }
  const size_t recorded = tape.node_count();
  Tensor y = ops::relu(x);  // outside any scope
  (void)y;
  CHECK(tape.node_count() == recorded);
  CHECK(recorded == 1);
}

TEST_CASE("every op family passes finite-difference checking across seeds") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    for (const GradCase& c : ops_cases(seed)) {
      const GradCheckResult r = run_grad_case(c);
      CAPTURE(c.name);
      CAPTURE(seed);
      CHECK(r.pass);
      CHECK(r.rel_err < 1e-4);
    }
  }
}

TEST_CASE("composite blocks pass finite-difference checking") {
  for (const GradCase& c : block_cases(9)) {
    const GradCheckResult r = run_grad_case(c);
    CAPTURE(c.name);
    CHECK(r.pass);
  }
}

TEST_CASE("a sabotaged backward is caught and named") {
  // Fixture: an op whose recorded backward is wrong by construction. The
  // report must count it as a failure and carry its name.
  GradCase bad;
  bad.name = "bad-scale";
  Tensor x({3}, {0.3, -0.7, 1.1});
  bad.leaves = {x};
  // Taped pass computes sum(6x), numeric pass sums 2x: the analytic gradient
  // of 6 disagrees with the true slope of 2, exactly how a wrong backward
  // presents to the checker.
  bad.forward = [x] {
    const double k = Tape::current() ? 6.0 : 2.0;
    return ops::sum_all(ops::scale(x, k));
  };

  std::ostringstream report;
  std::vector<std::string> failed;
  const int failures = gradcheck_report({bad}, report, &failed);
  CHECK(failures == 1);
  REQUIRE(failed.size() == 1);
  CHECK(failed[0] == "bad-scale");
  CHECK(report.str().find("bad-scale") != std::string::npos);
  CHECK(report.str().find("fail") != std::string::npos);
}

TEST_CASE("taped conv gradient matches finite differences on an asymmetric case") {
  Rng rng(31);
  Tensor x = Tensor::rand_uniform({1, 2, 5, 4}, rng, -1.0, 1.0);
  Tensor w = Tensor::rand_uniform({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor b = Tensor::rand_uniform({3}, rng, -0.1, 0.1);

  GradCase c;
  c.name = "conv-asym";
  c.leaves = {x, w, b};
  c.forward = [=] { return ops::mean_all(ops::conv2d(x, w, &b, 2, 1, 1)); };
  const GradCheckResult r = run_grad_case(c);
  CHECK(r.pass);
}

TEST_CASE("second backward pass on a fresh tape is independent") {
  Tensor x({2}, {1.5, -0.5});
  x.set_requires_grad(true);
  for (int round = 0; round < 2; ++round) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = ops::sum_all(ops::mul(x, x));
    tape.run_backward(loss);
    CHECK(x.grad_vector() == std::vector<double>{3.0, -1.0});
  }
}
