#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "ssp/autodiff.hpp"
#include "ssp/util.hpp"

using namespace ssp;
using ad::Tape;
using ad::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.normal() * scale;
  return t;
}

using GraphBuilder = std::function<int(Tape&, const std::vector<int>&)>;

double run_graph(const std::vector<Tensor>& params, const GraphBuilder& build) {
  Tape tape;
  std::vector<int> ids;
  for (const Tensor& p : params) ids.push_back(tape.param(p));
  return tape.value(build(tape, ids)).data[0];
}

/// Central-difference check of every parameter element.
double fd_max_rel_err(std::vector<Tensor> params, const GraphBuilder& build,
                      double h = 1e-5) {
  Tape tape;
  std::vector<int> ids;
  for (const Tensor& p : params) ids.push_back(tape.param(p));
  tape.backward(build(tape, ids));

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& analytic = tape.grad(ids[p]);
    for (Eigen::Index i = 0; i < params[p].size(); ++i) {
      const double keep = params[p].data[i];
      params[p].data[i] = keep + h;
      const double up = run_graph(params, build);
      params[p].data[i] = keep - h;
      const double down = run_graph(params, build);
      params[p].data[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double g = analytic.data[i];
      const double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("linear layer") {
  Rng rng(1);
  SUBCASE("identity weights pass the input through") {
    Tape tape;
    const Tensor x = random_tensor({3, 3}, rng);
    Tensor w = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) w.data[i * 3 + i] = 1.0;
    const int y = tape.linear(tape.constant(x), tape.constant(w),
                              tape.constant(Tensor::zeros({3})));
    CHECK((tape.value(y).data - x.data).abs().maxCoeff() == 0.0);
  }
  SUBCASE("hand product") {
    Tape tape;
    Tensor x = Tensor::zeros({1, 2});
    x.data << 1, 2;
    Tensor w = Tensor::zeros({2, 1});
    w.data << 1, 1;
    const int y = tape.linear(tape.constant(x), tape.constant(w),
                              tape.constant(Tensor::zeros({1})));
    CHECK(tape.value(y).data[0] == 3.0);
  }
  SUBCASE("gradients match finite differences on a 3x4 case") {
    const Tensor label = random_tensor({12}, rng);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      const int y = t.linear(ids[0], ids[1], ids[2]);
      return t.rmse(t.reshape(y, {12}), t.constant(label));
    };
    const double err = fd_max_rel_err(
        {random_tensor({3, 4}, rng), random_tensor({4, 4}, rng), random_tensor({4}, rng)},
        build);
    CHECK(err <= 1e-6);
  }
  SUBCASE("shape mismatch is rejected") {
    Tape tape;
    const int x = tape.constant(random_tensor({3, 4}, rng));
    const int w = tape.constant(random_tensor({5, 2}, rng));
    const int b = tape.constant(Tensor::zeros({2}));
    CHECK_THROWS(tape.linear(x, w, b));
  }
}

TEST_CASE("softmax rows") {
  Rng rng(2);
  SUBCASE("equal scores give a uniform row") {
    Tape tape;
    Tensor x = Tensor::zeros({1, 4});
    x.data.setConstant(0.7);
    const int y = tape.softmax_rows(tape.constant(x));
    for (int i = 0; i < 4; ++i) {
      CHECK(tape.value(y).data[i] == doctest::Approx(0.25).epsilon(1e-14));
    }
  }
  SUBCASE("closed form for a two-entry row") {
    Tape tape;
    Tensor x = Tensor::zeros({1, 2});
    x.data << 0.0, std::log(3.0);
    const int y = tape.softmax_rows(tape.constant(x));
    CHECK(tape.value(y).data[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(tape.value(y).data[1] == doctest::Approx(0.75).epsilon(1e-14));
  }
  SUBCASE("rows sum to one and shifts cancel") {
    Tape tape;
    const Tensor x = random_tensor({5, 7}, rng, 3.0);
    Tensor shifted = x;
    for (int r = 0; r < 5; ++r) {
      for (int c = 0; c < 7; ++c) shifted.data[r * 7 + c] += 11.0 * (r + 1);
    }
    const int a = tape.softmax_rows(tape.constant(x));
    const int b = tape.softmax_rows(tape.constant(shifted));
    for (int r = 0; r < 5; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 7; ++c) sum += tape.value(a).data[r * 7 + c];
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
    CHECK((tape.value(a).data - tape.value(b).data).abs().maxCoeff() <= 1e-12);
  }
  SUBCASE("gradient") {
    const Tensor label = random_tensor({6}, rng, 0.3);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      return t.rmse(t.reshape(t.softmax_rows(ids[0]), {6}), t.constant(label));
    };
    CHECK(fd_max_rel_err({random_tensor({2, 3}, rng)}, build) <= 1e-6);
  }
}

TEST_CASE("conv2d") {
  Rng rng(3);
  SUBCASE("1x1 unit kernel is the identity") {
    Tape tape;
    const Tensor x = random_tensor({4, 5, 1}, rng);
    Tensor k = Tensor::zeros({1, 1, 1, 1});
    k.data[0] = 1.0;
    const int y = tape.conv2d(tape.constant(x), tape.constant(k),
                              tape.constant(Tensor::zeros({1})));
    CHECK((tape.value(y).data - x.data).abs().maxCoeff() == 0.0);
  }
  SUBCASE("output shape") {
    Tape tape;
    const int y = tape.conv2d(tape.constant(random_tensor({8, 16, 1}, rng)),
                              tape.constant(random_tensor({2, 2, 1, 4}, rng)),
                              tape.constant(Tensor::zeros({4})));
    CHECK(tape.value(y).shape == std::vector<int>{7, 15, 4});
  }
  SUBCASE("gradients match finite differences") {
    const Tensor label = random_tensor({3 * 3 * 2}, rng);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      const int y = t.conv2d(ids[0], ids[1], ids[2]);
      return t.rmse(t.reshape(y, {3 * 3 * 2}), t.constant(label));
    };
    const double err = fd_max_rel_err({random_tensor({4, 4, 1}, rng),
                                       random_tensor({2, 2, 1, 2}, rng),
                                       random_tensor({2}, rng)},
                                      build);
    CHECK(err <= 1e-6);
  }
  SUBCASE("channel mismatch is rejected") {
    Tape tape;
    const int x = tape.constant(random_tensor({4, 4, 2}, rng));
    const int k = tape.constant(random_tensor({2, 2, 1, 3}, rng));
    CHECK_THROWS(tape.conv2d(x, k, tape.constant(Tensor::zeros({3}))));
  }
}

TEST_CASE("maxpool2d") {
  Rng rng(4);
  SUBCASE("hand case") {
    Tape tape;
    Tensor x = Tensor::zeros({2, 2, 1});
    x.data << 1, 2, 3, 4;
    const int y = tape.maxpool2d(tape.constant(x));
    CHECK(tape.value(y).shape == std::vector<int>{1, 1, 1});
    CHECK(tape.value(y).data[0] == 4.0);
  }
  SUBCASE("ties route the gradient to the first window element") {
    Tape tape;
    Tensor x = Tensor::zeros({2, 2, 1});
    x.data.setConstant(5.0);
    const int xp = tape.param(x);
    const int loss = tape.sum(tape.maxpool2d(xp));
    tape.backward(loss);
    const Tensor& g = tape.grad(xp);
    CHECK(g.data[0] == 1.0);
    CHECK(g.data[1] == 0.0);
    CHECK(g.data[2] == 0.0);
    CHECK(g.data[3] == 0.0);
  }
  SUBCASE("gradients match finite differences away from ties") {
    const Tensor label = random_tensor({2 * 2 * 3}, rng);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      return t.rmse(t.reshape(t.maxpool2d(ids[0]), {2 * 2 * 3}), t.constant(label));
    };
    CHECK(fd_max_rel_err({random_tensor({4, 4, 3}, rng)}, build) <= 1e-6);
  }
}

TEST_CASE("adaptive average pool") {
  Rng rng(5);
  SUBCASE("matching output size is the identity") {
    Tape tape;
    const Tensor x = random_tensor({3, 4, 2}, rng);
    const int y = tape.adaptive_avgpool(tape.constant(x), 3, 4);
    CHECK((tape.value(y).data - x.data).abs().maxCoeff() == 0.0);
  }
  SUBCASE("constant input stays constant") {
    Tape tape;
    Tensor x = Tensor::zeros({4, 4, 1});
    x.data.setConstant(3.0);
    const int y = tape.adaptive_avgpool(tape.constant(x), 2, 2);
    CHECK(tape.value(y).shape == std::vector<int>{2, 2, 1});
    CHECK((tape.value(y).data - 3.0).abs().maxCoeff() == 0.0);
  }
  SUBCASE("column block means") {
    Tape tape;
    Tensor x = Tensor::zeros({4, 1, 1});
    x.data << 1, 2, 3, 4;
    const int y = tape.adaptive_avgpool(tape.constant(x), 2, 1);
    CHECK(tape.value(y).data[0] == 1.5);
    CHECK(tape.value(y).data[1] == 3.5);
  }
  SUBCASE("gradient") {
    const Tensor label = random_tensor({2 * 2 * 2}, rng);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      const int y = t.adaptive_avgpool(ids[0], 2, 2);
      return t.rmse(t.reshape(y, {2 * 2 * 2}), t.constant(label));
    };
    CHECK(fd_max_rel_err({random_tensor({5, 3, 2}, rng)}, build) <= 1e-6);
  }
}

TEST_CASE("relu") {
  Rng rng(6);
  SUBCASE("non-negative input passes through") {
    Tape tape;
    Tensor x = random_tensor({7}, rng);
    x.data = x.data.abs();
    const int y = tape.relu(tape.constant(x));
    CHECK((tape.value(y).data - x.data).abs().maxCoeff() == 0.0);
  }
  SUBCASE("negative input clamps with zero gradient") {
    Tape tape;
    Tensor x = Tensor::zeros({1});
    x.data[0] = -1.0;
    const int xp = tape.param(x);
    const int loss = tape.sum(tape.relu(xp));
    tape.backward(loss);
    CHECK(tape.value(loss).data[0] == 0.0);
    CHECK(tape.grad(xp).data[0] == 0.0);
  }
  SUBCASE("gradient away from the kink") {
    Tensor x = random_tensor({9}, rng);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (std::abs(x.data[i]) < 0.1) x.data[i] = 0.5;  // keep clear of 0
    }
    const Tensor label = random_tensor({9}, rng);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      return t.rmse(t.relu(ids[0]), t.constant(label));
    };
    CHECK(fd_max_rel_err({x}, build) <= 1e-6);
  }
}

TEST_CASE("rmse") {
  Rng rng(7);
  SUBCASE("zero for equal inputs, with zero gradient") {
    Tape tape;
    const Tensor x = random_tensor({5}, rng);
    const int p = tape.param(x);
    const int loss = tape.rmse(p, tape.constant(x));
    tape.backward(loss);
    CHECK(tape.value(loss).data[0] == 0.0);
    CHECK(tape.grad(p).data.abs().maxCoeff() == 0.0);
  }
  SUBCASE("hand value") {
    Tape tape;
    Tensor pred = Tensor::zeros({2});
    pred.data << 1500, 1510;
    Tensor label = Tensor::zeros({2});
    label.data << 1501, 1508;
    const int loss = tape.rmse(tape.constant(pred), tape.constant(label));
    CHECK(tape.value(loss).data[0] ==
          doctest::Approx(1.5811388300841898).epsilon(1e-15));
  }
  SUBCASE("gradient") {
    const Tensor label = random_tensor({6}, rng);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      return t.rmse(ids[0], t.constant(label));
    };
    CHECK(fd_max_rel_err({random_tensor({6}, rng)}, build) <= 1e-6);
  }
}

TEST_CASE("matmul variants and concat") {
  Rng rng(8);
  const Tensor label = random_tensor({6}, rng);
  SUBCASE("a * b^T gradient") {
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      const int y = t.matmul_nt(ids[0], ids[1]);
      return t.rmse(t.reshape(y, {6}), t.constant(label));
    };
    CHECK(fd_max_rel_err({random_tensor({2, 4}, rng), random_tensor({3, 4}, rng)}, build) <=
          1e-6);
  }
  SUBCASE("concat columns gradient") {
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      const int y = t.concat_cols({ids[0], ids[1]});
      return t.rmse(t.reshape(y, {6}), t.constant(label));
    };
    CHECK(fd_max_rel_err({random_tensor({2, 1}, rng), random_tensor({2, 2}, rng)}, build) <=
          1e-6);
  }
}

TEST_CASE("backward bookkeeping") {
  Rng rng(9);
  SUBCASE("unused parameters get zero-filled gradients") {
    Tape tape;
    const int used = tape.param(random_tensor({2, 2}, rng));
    const int unused = tape.param(random_tensor({3}, rng));
    const int loss = tape.sum(used);
    tape.backward(loss);
    CHECK(tape.grad(unused).data.abs().maxCoeff() == 0.0);
    CHECK(tape.grad(used).data.minCoeff() == 1.0);
  }
  SUBCASE("a loss with no parameter dependence leaves all gradients zero") {
    Tape tape;
    const int p = tape.param(random_tensor({4}, rng));
    const int loss = tape.sum(tape.constant(random_tensor({4}, rng)));
    tape.backward(loss);
    CHECK(tape.grad(p).data.abs().maxCoeff() == 0.0);
  }
  SUBCASE("composite graph matches finite differences") {
    const Tensor label = random_tensor({4}, rng);
    const auto build = [&](Tape& t, const std::vector<int>& ids) {
      const int y = t.relu(t.linear(ids[0], ids[1], ids[2]));
      return t.rmse(t.reshape(y, {4}), t.constant(label));
    };
    const double err = fd_max_rel_err(
        {random_tensor({2, 3}, rng), random_tensor({3, 2}, rng), random_tensor({2}, rng)},
        build, 1e-5);
    CHECK(err <= 1e-4);
  }
  SUBCASE("backward twice is an error") {
    Tape tape;
    const int p = tape.param(random_tensor({2}, rng));
    const int loss = tape.sum(p);
    tape.backward(loss);
    CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("already"),
                         std::runtime_error);
  }
  SUBCASE("identical forwards produce bitwise-identical gradients") {
    const Tensor x = random_tensor({3, 3}, rng);
    const Tensor w = random_tensor({3, 3}, rng);
    const Tensor label = random_tensor({9}, rng);
    auto run = [&]() {
      Tape tape;
      const int xp = tape.param(x);
      const int wp = tape.param(w);
      const int y = tape.matmul(xp, wp);
      const int loss = tape.rmse(tape.reshape(y, {9}), tape.constant(label));
      tape.backward(loss);
      return std::pair{tape.value(loss).data[0], Tensor(tape.grad(wp))};
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK((a.second.data == b.second.data).all());
  }
  SUBCASE("non-finite values are rejected as they appear") {
    Tape tape;
    Tensor bad = Tensor::zeros({2});
    bad.data[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS(tape.constant(bad));
    const int big = tape.constant([] {
      Tensor t = Tensor::zeros({1});
      t.data[0] = 1e308;
      return t;
    }());
    CHECK_THROWS(tape.add(big, big));  // overflows to inf
  }
}

TEST_CASE("shape contracts hold for random sizes") {
  Rng rng(10);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(5));
    const int k = 1 + static_cast<int>(rng.below(5));
    const int m = 1 + static_cast<int>(rng.below(5));
    Tape tape;
    const int a = tape.constant(random_tensor({n, k}, rng));
    const int b = tape.constant(random_tensor({k, m}, rng));
    CHECK(tape.value(tape.matmul(a, b)).shape == std::vector<int>{n, m});

    const int h = 2 + static_cast<int>(rng.below(6));
    const int w = 2 + static_cast<int>(rng.below(6));
    const int c = 1 + static_cast<int>(rng.below(3));
    const int x = tape.constant(random_tensor({h, w, c}, rng));
    CHECK(tape.value(tape.maxpool2d(x)).shape == std::vector<int>{h / 2, w / 2, c});
    const int co = 1 + static_cast<int>(rng.below(4));
    const int kk = tape.constant(random_tensor({2, 2, c, co}, rng));
    CHECK(tape.value(tape.conv2d(x, kk, tape.constant(Tensor::zeros({co})))).shape ==
          std::vector<int>{h - 1, w - 1, co});
  }
}
