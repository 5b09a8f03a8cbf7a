#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "seqr/autodiff.hpp"
#include "seqr/finite_diff.hpp"
#include "seqr/optim.hpp"
#include "seqr/rng.hpp"

using namespace seqr;
using Catch::Approx;

namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

double rel_err(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// Max relative error between tape gradients and central finite differences
/// for a scalar loss built by `makeLoss` over the ParamSet.
template <class MakeLoss>
double gradcheck(ParamSet<double>& params, MakeLoss&& makeLoss, double eps = 1e-5) {
  Tape<double> tape;
  std::vector<Tape<double>::Id> leaves;
  for (auto& e : params.entries)
    leaves.push_back(tape.input(&e.value, !params.is_frozen(e.group)));
  const auto loss = makeLoss(tape, leaves);
  tape.backward(loss);

  auto numeric = finite_diff_grad(
      [&]() {
        Tape<double> t2;
        std::vector<Tape<double>::Id> l2;
        for (auto& e : params.entries) l2.push_back(t2.input(&e.value, false));
        return t2.value(makeLoss(t2, l2))[0];
      },
      params, eps);

  double worst = 0.0;
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    if (params.is_frozen(params.entries[i].group)) continue;
    REQUIRE(tape.has_grad(leaves[i]));
    worst = std::max(worst, rel_err(tape.grad(leaves[i]), numeric[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("conv2d size formula and identity") {
  // H=224, k=2, pad=1 -> 225.
  Tape<double> tape;
  Rng rng(1);
  Tensor<double> x = random_tensor({1, 224, 224}, rng);
  Tensor<double> w = random_tensor({1, 1, 2, 2}, rng);
  Tensor<double> b({1});
  const auto y = tape.conv2d(tape.input(&x, false), tape.input(&w, false), tape.input(&b, false), 1);
  CHECK(tape.value(y).shape() == std::vector<int>{1, 225, 225});

  // 1x1 identity kernel, zero bias: output equals input.
  Tensor<double> xi = random_tensor({1, 5, 5}, rng);
  Tensor<double> wi({1, 1, 1, 1}, {1.0});
  Tensor<double> bi({1});
  Tape<double> t2;
  const auto yi = t2.conv2d(t2.input(&xi, false), t2.input(&wi, false), t2.input(&bi, false), 0);
  CHECK(t2.value(yi) == xi);

  // Shape mismatch rejected.
  Tensor<double> wrongW = random_tensor({1, 3, 2, 2}, rng);
  Tape<double> t3;
  CHECK_THROWS_AS(
      t3.conv2d(t3.input(&xi, false), t3.input(&wrongW, false), t3.input(&bi, false), 1),
      shape_error);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(2);
  ParamSet<double> ps;
  ps.add("x", ParamGroup::Fc, random_tensor({2, 2, 6, 6}, rng));
  ps.add("w", ParamGroup::Conv, random_tensor({3, 2, 2, 2}, rng));
  ps.add("b", ParamGroup::Conv, random_tensor({3}, rng));
  ps.set_frozen(ParamGroup::Conv, false);

  const double err = gradcheck(ps, [](Tape<double>& t, const std::vector<Tape<double>::Id>& l) {
    return t.mean(t.square(t.conv2d(l[0], l[1], l[2], 1)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("maxpool basics") {
  // Constant input -> constant output.
  Tensor<double> c({1, 4, 4});
  for (std::int64_t i = 0; i < c.size(); ++i) c[i] = 2.5;
  Tape<double> tape;
  const auto y = tape.maxpool(tape.input(&c, false), 2);
  for (std::int64_t i = 0; i < tape.value(y).size(); ++i) CHECK(tape.value(y)[i] == 2.5);

  // H=225, k=4, stride 1 -> 222.
  Rng rng(3);
  Tensor<double> big = random_tensor({1, 225, 225}, rng);
  Tape<double> t2;
  const auto y2 = t2.maxpool(t2.input(&big, false), 4);
  CHECK(t2.value(y2).shape() == std::vector<int>{1, 222, 222});

  Tensor<double> tiny = random_tensor({1, 3, 3}, rng);
  Tape<double> t3;
  CHECK_THROWS_AS(t3.maxpool(t3.input(&tiny, false), 4), shape_error);
}

TEST_CASE("maxpool gradient routes to the argmax") {
  Rng rng(4);
  ParamSet<double> ps;
  ps.add("x", ParamGroup::Fc, random_tensor({2, 7, 7}, rng));  // unique maxima a.s.
  const double err = gradcheck(ps, [](Tape<double>& t, const std::vector<Tape<double>::Id>& l) {
    return t.mean(t.square(t.maxpool(l[0], 3)));
  });
  CHECK(err < 1e-6);

  // Tie-break: first element in row-major window order gets the gradient.
  Tensor<double> tied({1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
  Tape<double> tape;
  const auto x = tape.input(&tied, true);
  const auto loss = tape.sum(tape.maxpool(x, 2));
  tape.backward(loss);
  const auto& g = tape.grad(x);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("affine identity and gradients") {
  Rng rng(5);
  Tensor<double> x = random_tensor({4}, rng);
  Tensor<double> eye({4, 4});
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  Tensor<double> zero({4});
  Tape<double> tape;
  const auto y =
      tape.affine(tape.input(&x, false), tape.input(&eye, false), tape.input(&zero, false));
  CHECK(tape.value(y) == x);

  ParamSet<double> ps;
  ps.add("x", ParamGroup::Fc, random_tensor({3, 6}, rng));
  ps.add("w", ParamGroup::Fc, random_tensor({4, 6}, rng));
  ps.add("b", ParamGroup::Fc, random_tensor({4}, rng));
  const double err = gradcheck(ps, [](Tape<double>& t, const std::vector<Tape<double>::Id>& l) {
    return t.mean(t.square(t.affine(l[0], l[1], l[2])));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("chained affine equals composed affine") {
  Rng rng(6);
  const int n = 5, m1 = 4, m2 = 3;
  Tensor<double> x = random_tensor({n}, rng);
  Tensor<double> w1 = random_tensor({m1, n}, rng);
  Tensor<double> b1 = random_tensor({m1}, rng);
  Tensor<double> w2 = random_tensor({m2, m1}, rng);
  Tensor<double> b2 = random_tensor({m2}, rng);

  Tape<double> tape;
  const auto chained = tape.affine(
      tape.affine(tape.input(&x, false), tape.input(&w1, false), tape.input(&b1, false)),
      tape.input(&w2, false), tape.input(&b2, false));

  // Composite parameters: W = w2 w1, b = w2 b1 + b2.
  Tensor<double> w({m2, n});
  Tensor<double> b({m2});
  for (int i = 0; i < m2; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < m1; ++k) acc += w2[i * m1 + k] * w1[k * n + j];
      w[i * n + j] = acc;
    }
    double acc = b2[i];
    for (int k = 0; k < m1; ++k) acc += w2[i * m1 + k] * b1[k];
    b[i] = acc;
  }
  Tape<double> t2;
  const auto direct =
      t2.affine(t2.input(&x, false), t2.input(&w, false), t2.input(&b, false));
  for (int i = 0; i < m2; ++i)
    CHECK(tape.value(chained)[i] == Approx(t2.value(direct)[i]).margin(1e-12));
}

TEST_CASE("activations") {
  Tensor<double> x({4}, {-1.0, 2.0, 0.0, -0.5});
  Tape<double> tape;
  const auto r = tape.relu(tape.input(&x, false));
  CHECK(tape.value(r)[0] == 0.0);
  CHECK(tape.value(r)[1] == 2.0);
  CHECK(tape.value(r)[2] == 0.0);

  const auto th = tape.tanh_(tape.input(&x, false));
  CHECK(tape.value(th)[2] == 0.0);
  CHECK(tape.value(th)[1] == Approx(std::tanh(2.0)));

  Rng rng(7);
  ParamSet<double> ps;
  ps.add("x", ParamGroup::Fc, random_tensor({40}, rng));  // away from the kink a.s.
  const double errR = gradcheck(ps, [](Tape<double>& t, const std::vector<Tape<double>::Id>& l) {
    return t.mean(t.square(t.relu(l[0])));
  });
  CHECK(errR < 1e-6);
  const double errT = gradcheck(ps, [](Tape<double>& t, const std::vector<Tape<double>::Id>& l) {
    return t.mean(t.square(t.tanh_(l[0])));
  });
  CHECK(errT < 1e-6);
}

TEST_CASE("composite ops: seq_diff, add_scalar, pair_concat, square, mean") {
  Rng rng(8);
  ParamSet<double> ps;
  ps.add("z", ParamGroup::Fc, random_tensor({5}, rng));
  ps.add("theta", ParamGroup::Relation, random_tensor({1}, rng));
  const double err = gradcheck(ps, [](Tape<double>& t, const std::vector<Tape<double>::Id>& l) {
    return t.mean(t.square(t.add_scalar(t.seq_diff(l[0]), l[1])));
  });
  CHECK(err < 1e-6);

  ParamSet<double> ps2;
  ps2.add("m", ParamGroup::Fc, random_tensor({4, 3}, rng));
  const double err2 = gradcheck(ps2, [](Tape<double>& t, const std::vector<Tape<double>::Id>& l) {
    return t.mean(t.square(t.pair_concat(l[0])));
  });
  CHECK(err2 < 1e-6);

  // seq_diff values.
  Tensor<double> z({5}, {1, 2, 4, 8, 16});
  Tape<double> tape;
  const auto d = tape.seq_diff(tape.input(&z, false));
  CHECK(tape.value(d)[0] == -1.0);
  CHECK(tape.value(d)[3] == -8.0);
}

TEST_CASE("backward on a sum gives unit gradients and honors freezing") {
  Rng rng(9);
  Tensor<double> a = random_tensor({7}, rng);
  Tensor<double> b = random_tensor({1}, rng);

  Tape<double> tape;
  const auto la = tape.input(&a, true);
  const auto lb = tape.input(&b, false);  // frozen leaf
  const auto loss = tape.sum(tape.add_scalar(la, lb));
  tape.backward(loss);
  REQUIRE(tape.has_grad(la));
  for (int i = 0; i < 7; ++i) CHECK(tape.grad(la)[i] == 1.0);
  CHECK_FALSE(tape.has_grad(lb));  // no gradient entries for frozen groups
}

TEST_CASE("backward rejects bad losses") {
  Tensor<double> v({3}, {1, 2, 3});
  Tape<double> tape;
  const auto x = tape.input(&v, true);
  CHECK_THROWS_AS(tape.backward(x), autodiff_error);  // non-scalar

  Tensor<double> nan({1}, {std::numeric_limits<double>::quiet_NaN()});
  Tape<double> t2;
  const auto n = t2.input(&nan, true);
  CHECK_THROWS_AS(t2.backward(t2.sum(n)), autodiff_error);
}

TEST_CASE("rmsprop matches the hand recurrence") {
  // Single step from the cold state: s' = 0.01, dp = -lr/(sqrt(s')+eps).
  ParamSet<double> ps;
  ps.add("p", ParamGroup::Fc, Tensor<double>({1}, {1.0}));
  OptState<double> st = OptState<double>::init_like(ps);
  st.lr = 1e-5;

  Tensor<double> g({1}, {1.0});
  std::vector<const Tensor<double>*> grads{&g};
  rmsprop_step(ps, grads, st);
  CHECK(st.sqAvg[0][0] == Approx(0.01).margin(1e-18));
  CHECK(ps.entries[0].value[0] - 1.0 == Approx(-9.999999e-5).margin(1e-11));

  // 100 steps against an explicit recurrence, to 1e-12.
  ParamSet<double> ps2;
  ps2.add("p", ParamGroup::Fc, Tensor<double>({1}, {0.5}));
  OptState<double> st2 = OptState<double>::init_like(ps2);
  st2.lr = 1e-5;
  double p = 0.5, s = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double gv = std::sin(0.1 * t) + 0.3;
    s = 0.99 * s + 0.01 * gv * gv;
    p -= 1e-5 * gv / (std::sqrt(s) + 1e-8);
    Tensor<double> gt({1}, {gv});
    std::vector<const Tensor<double>*> gs{&gt};
    rmsprop_step(ps2, gs, st2);
    CHECK(ps2.entries[0].value[0] == Approx(p).margin(1e-12));
    CHECK(st2.sqAvg[0][0] == Approx(s).margin(1e-12));
  }
}

TEST_CASE("rmsprop zero gradient decays state, keeps params") {
  ParamSet<double> ps;
  ps.add("p", ParamGroup::Fc, Tensor<double>({2}, {1.0, -2.0}));
  OptState<double> st = OptState<double>::init_like(ps);
  st.sqAvg[0][0] = 0.5;
  st.sqAvg[0][1] = 0.25;

  Tensor<double> g({2});
  std::vector<const Tensor<double>*> grads{&g};
  rmsprop_step(ps, grads, st);
  CHECK(ps.entries[0].value[0] == 1.0);
  CHECK(ps.entries[0].value[1] == -2.0);
  CHECK(st.sqAvg[0][0] == Approx(0.495).margin(1e-15));
  CHECK(st.sqAvg[0][1] == Approx(0.2475).margin(1e-15));
}

TEST_CASE("rmsprop freezing is exact and lr=0 is the identity") {
  Rng rng(10);
  ParamSet<double> ps;
  ps.add("w", ParamGroup::Conv, random_tensor({8}, rng));
  ps.add("v", ParamGroup::Fc, random_tensor({8}, rng));
  ps.set_frozen(ParamGroup::Conv, true);
  const Tensor<double> frozenCopy = ps.entries[0].value;
  const Tensor<double> liveCopy = ps.entries[1].value;

  OptState<double> st = OptState<double>::init_like(ps);
  st.lr = 1e-3;
  Tensor<double> g = random_tensor({8}, rng);
  std::vector<const Tensor<double>*> grads{&g, &g};
  for (int i = 0; i < 20; ++i) rmsprop_step(ps, grads, st);
  CHECK(ps.entries[0].value == frozenCopy);        // bitwise unchanged
  CHECK_FALSE(ps.entries[1].value == liveCopy);

  ParamSet<double> ps2;
  ps2.add("v", ParamGroup::Fc, liveCopy);
  OptState<double> st2 = OptState<double>::init_like(ps2);
  st2.lr = 0.0;
  std::vector<const Tensor<double>*> g2{&g};
  rmsprop_step(ps2, g2, st2);
  CHECK(ps2.entries[0].value == liveCopy);

  Tensor<double> bad({4});
  std::vector<const Tensor<double>*> g3{&bad};
  CHECK_THROWS_AS(rmsprop_step(ps2, g3, st2), shape_error);
}

TEST_CASE("rmsprop runs are bit-identical") {
  auto run = []() {
    Rng rng(11);
    ParamSet<double> ps;
    ps.add("w", ParamGroup::Fc, random_tensor({32}, rng));
    OptState<double> st = OptState<double>::init_like(ps);
    st.lr = 1e-4;
    for (int i = 0; i < 50; ++i) {
      Tensor<double> g = random_tensor({32}, rng);
      std::vector<const Tensor<double>*> gs{&g};
      rmsprop_step(ps, gs, st);
    }
    return ps.entries[0].value;
  };
  CHECK(run() == run());
}

TEST_CASE("finite differences sanity") {
  ParamSet<double> ps;
  ps.add("p", ParamGroup::Fc, Tensor<double>({1}, {3.0}));
  auto g = finite_diff_grad([&]() { return ps.entries[0].value[0] * ps.entries[0].value[0]; }, ps);
  CHECK(g[0][0] == Approx(6.0).margin(1e-8));

  auto zero = finite_diff_grad([]() { return 4.2; }, ps);
  CHECK(std::fabs(zero[0][0]) < 1e-10);
}
