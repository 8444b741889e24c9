#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "nff/autodiff/checkpoint.hpp"
#include "nff/autodiff/finite_diff.hpp"
#include "nff/autodiff/graph.hpp"
#include "nff/autodiff/ops.hpp"
#include "nff/autodiff/params.hpp"
#include "nff/rng.hpp"

using namespace nff;
using namespace nff::ad;
using G = Graph<double>;
using V = Var<double>;

namespace {

Tensor<double> random_tensor(Rng& rng, Shape s, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

using Builder = std::function<V(G&, const std::vector<V>&)>;

// Checks every leaf gradient of sum(build(leaves) * w) against central differences.
double max_rel_error(const Builder& build, std::vector<Tensor<double>> inputs, Rng& rng) {
  Tensor<double> weights;
  auto eval = [&](bool with_backward, std::vector<Tensor<double>>* grads) {
    G g;
    std::vector<V> leaves;
    for (const auto& in : inputs) leaves.push_back(g.leaf(in));
    V out = build(g, leaves);
    if (weights.empty()) weights = random_tensor(rng, out.shape(), 0.5, 1.5);
    V loss = sum_all(mul(out, g.constant(weights)));
    const double v = loss.value()[0];
    if (with_backward) {
      g.backward(loss);
      for (const auto& l : leaves) grads->push_back(g.grad(l));
    }
    return v;
  };
  std::vector<Tensor<double>> analytic;
  eval(true, &analytic);
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> coords(inputs[i].size());
    for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
    auto fd = finite_difference_at([&] { return eval(false, nullptr); }, inputs[i].values(), coords, 1e-5);
    for (std::size_t c = 0; c < coords.size(); ++c) {
      worst = std::max(worst, relative_error(analytic[i][c], fd[c], 1e-3));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("primitive examples") {
  G g;
  auto x = g.constant(Tensor<double>::from({-1.0}));
  CHECK(leaky_relu(x).value()[0] == doctest::Approx(-0.2));

  auto c = cumprod(g.constant(Tensor<double>::from({1 - 0.5, 1 - 0.5})), 0);
  CHECK(c.value()[0] == doctest::Approx(0.5));
  CHECK(c.value()[1] == doctest::Approx(0.25));

  auto img = g.constant(Tensor<double>({1, 4, 4, 1}, 1.0));
  auto w = g.constant(Tensor<double>({3, 3, 1, 1}, 1.0));
  auto y = conv2d(img, w, V{}, 1);
  CHECK(y.shape() == Shape{1, 4, 4, 1});
  CHECK(y.value()[1 * 4 + 1] == doctest::Approx(9.0));
  CHECK(y.value()[2 * 4 + 2] == doctest::Approx(9.0));
  CHECK(y.value()[0] == doctest::Approx(4.0));
}

TEST_CASE("backward examples") {
  {
    G g;
    auto w = g.leaf(Tensor<double>::from({1, 2}));
    g.backward(sum_all(mul(w, w)));
    auto gw = g.grad(w);
    CHECK(gw[0] == doctest::Approx(2.0));
    CHECK(gw[1] == doctest::Approx(4.0));
  }
  {
    G g;
    auto x = g.leaf(Tensor<double>::from({0.0}));
    g.backward(sigmoid(x));
    CHECK(g.grad(x)[0] == doctest::Approx(0.25));
  }
}

TEST_CASE("finite_difference_gradient examples") {
  auto sq = [](const Tensor<double>& t) { return t[0] * t[0]; };
  CHECK(std::abs(finite_difference_gradient(sq, Tensor<double>::from({3.0}), 1e-5)[0] - 6.0) <= 1e-9);
  auto ex = [](const Tensor<double>& t) { return std::exp(t[0]); };
  CHECK(std::abs(finite_difference_gradient(ex, Tensor<double>::from({0.0}), 1e-5)[0] - 1.0) <= 1e-9);
  CHECK_THROWS_AS(finite_difference_gradient(sq, Tensor<double>::from({3.0}), 0.0), ContractError);
  auto bad = [](const Tensor<double>& t) { return std::log(t[0]); };
  CHECK_THROWS_AS(finite_difference_gradient(bad, Tensor<double>::from({0.0}), 1e-5), NumericError);
}

TEST_CASE("finite differences agree with backward on a 2-layer MLP") {
  Rng rng(11);
  Builder mlp = [](G& g, const std::vector<V>& in) {
    auto h = relu(bias_add(matmul(in[0], in[1]), in[2]));
    return sigmoid(bias_add(matmul(h, in[3]), in[4]));
  };
  double err = max_rel_error(mlp,
                             {random_tensor(rng, {5, 4}), random_tensor(rng, {4, 6}), random_tensor(rng, {6}),
                              random_tensor(rng, {6, 3}), random_tensor(rng, {3})},
                             rng);
  CHECK(err <= 1e-6);
}

TEST_CASE("every primitive's backward rule matches finite differences") {
  Rng rng(5);
  struct Case {
    const char* name;
    Builder build;
    std::vector<Shape> shapes;
    double lo = -1, hi = 1;
  };
  const std::vector<Case> cases = {
      {"add", [](G&, auto& v) { return add(v[0], v[1]); }, {{3, 4}, {3, 4}}},
      {"sub", [](G&, auto& v) { return sub(v[0], v[1]); }, {{3, 4}, {3, 4}}},
      {"mul", [](G&, auto& v) { return mul(v[0], v[1]); }, {{3, 4}, {3, 4}}},
      {"div", [](G&, auto& v) { return div(v[0], v[1]); }, {{3, 4}, {3, 4}}, 0.5, 2.0},
      {"maximum", [](G&, auto& v) { return maximum(v[0], v[1]); }, {{3, 4}, {3, 4}}},
      {"exp", [](G&, auto& v) { return exp(v[0]); }, {{5}}},
      {"log", [](G&, auto& v) { return log(v[0]); }, {{5}}, 0.2, 3.0},
      {"sin", [](G&, auto& v) { return sin(v[0]); }, {{5}}},
      {"cos", [](G&, auto& v) { return cos(v[0]); }, {{5}}},
      {"sigmoid", [](G&, auto& v) { return sigmoid(v[0]); }, {{5}}},
      {"relu", [](G&, auto& v) { return relu(v[0]); }, {{7}}},
      {"leaky_relu", [](G&, auto& v) { return leaky_relu(v[0]); }, {{7}}},
      {"softplus", [](G&, auto& v) { return softplus(v[0]); }, {{7}}},
      {"square", [](G&, auto& v) { return square(v[0]); }, {{7}}},
      {"matmul", [](G&, auto& v) { return matmul(v[0], v[1]); }, {{3, 5}, {5, 2}}},
      {"bias_add", [](G&, auto& v) { return bias_add(v[0], v[1]); }, {{2, 3, 4}, {4}}},
      {"sum", [](G&, auto& v) { return sum(v[0], 1); }, {{2, 3, 4}}},
      {"mean", [](G&, auto& v) { return mean(v[0], 0); }, {{2, 3, 4}}},
      {"mean_all", [](G&, auto& v) { return mean_all(v[0]); }, {{2, 3}}},
      {"cumprod", [](G&, auto& v) { return cumprod(v[0], 1); }, {{2, 5, 3}}, 0.1, 0.9},
      {"cumprod_exclusive", [](G&, auto& v) { return cumprod(v[0], 1, true); }, {{2, 5, 3}}, 0.1, 0.9},
      {"concat", [](G&, auto& v) { return concat(std::vector<V>{v[0], v[1]}, 1); }, {{2, 3, 2}, {2, 1, 2}}},
      {"reshape", [](G&, auto& v) { return reshape(v[0], Shape{6, 2}); }, {{3, 4}}},
      {"repeat_last", [](G&, auto& v) { return repeat_last(v[0], 3); }, {{4, 1}}},
      {"gather_rows", [](G&, auto& v) { return gather_rows(v[0], {2, 0, 2}); }, {{3, 2}}},
      {"scatter_rows", [](G&, auto& v) { return scatter_rows(v[0], {3, 1}, 5); }, {{2, 2}}},
      {"conv2d", [](G&, auto& v) { return conv2d(v[0], v[1], v[2], 1); }, {{2, 4, 5, 3}, {3, 3, 3, 2}, {2}}},
      {"conv2d_stride2", [](G&, auto& v) { return conv2d(v[0], v[1], v[2], 2); }, {{1, 5, 4, 2}, {3, 3, 2, 3}, {3}}},
      {"conv2d_transpose", [](G&, auto& v) { return conv2d_transpose(v[0], v[1], 2, 5, 4); },
       {{1, 3, 2, 3}, {3, 3, 2, 3}}},
      {"upsample_nearest2x", [](G&, auto& v) { return upsample_nearest2x(v[0]); }, {{1, 3, 2, 2}}},
      {"upsample_bilinear2x", [](G&, auto& v) { return upsample_bilinear2x(v[0]); }, {{2, 3, 4, 2}}},
  };
  for (const auto& c : cases) {
    std::vector<Tensor<double>> inputs;
    for (const auto& s : c.shapes) inputs.push_back(random_tensor(rng, s, c.lo, c.hi));
    const double err = max_rel_error(c.build, inputs, rng);
    INFO(c.name);
    CHECK(err <= 1e-6);
  }
}

TEST_CASE("cumprod with a zero factor takes the direct-product path and stays exact") {
  Rng rng(2);
  auto in = random_tensor(rng, {1, 6}, 0.2, 0.9);
  in[2] = 0.0;
  Builder b = [](G&, const std::vector<V>& v) { return cumprod(v[0], 1); };
  Builder bx = [](G&, const std::vector<V>& v) { return cumprod(v[0], 1, true); };
  CHECK(max_rel_error(b, {in}, rng) <= 1e-6);
  CHECK(max_rel_error(bx, {in}, rng) <= 1e-6);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  Rng rng(9);
  G g;
  auto x = random_tensor(rng, {2, 7, 6, 3});
  auto w = random_tensor(rng, {3, 3, 3, 4});
  for (std::size_t stride : {1u, 2u}) {
    auto y = conv2d(g.constant(x), g.constant(w), V{}, stride);
    auto r = random_tensor(rng, y.shape());
    auto xt = conv2d_transpose(g.constant(r), g.constant(w), stride, 7, 6);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < r.size(); ++i) lhs += y.value()[i] * r[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * xt.value()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("gradients are linear in the loss") {
  Rng rng(4);
  auto w0 = random_tensor(rng, {6});
  auto grad_of = [&](double a, double b) {
    G g;
    auto w = g.leaf(w0);
    auto l1 = sum_all(sin(w));
    auto l2 = sum_all(mul(w, exp(w)));
    g.backward(add(scale(l1, a), scale(l2, b)));
    return g.grad(w);
  };
  auto g1 = grad_of(1, 0), g2 = grad_of(0, 1), g12 = grad_of(2.5, -0.75);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g12[i] == doctest::Approx(2.5 * g1[i] - 0.75 * g2[i]).epsilon(1e-12));
}

TEST_CASE("reusing a tensor accumulates gradients") {
  G g;
  auto x = g.leaf(Tensor<double>::from({3.0}));
  g.backward(sum_all(add(mul(x, x), x)));
  CHECK(g.grad(x)[0] == doctest::Approx(7.0));
}

TEST_CASE("untouched leaves get zero gradient and params flush into the store") {
  ParamStore<double> store;
  store.add("w", Tensor<double>::from({1.0, -2.0}));
  store.add("unused", Tensor<double>::from({5.0}));
  G g;
  auto w = g.param(store, "w");
  auto u = g.param(store, "unused");
  g.backward(sum_all(square(w)));
  CHECK(g.grad(u)[0] == 0.0);
  CHECK(store.grad("w")[0] == doctest::Approx(2.0));
  CHECK(store.grad("w")[1] == doctest::Approx(-4.0));
  CHECK(store.grad("unused")[0] == 0.0);
}

TEST_CASE("contract violations") {
  G g;
  auto a = g.leaf(Tensor<double>({2, 3}));
  auto b = g.leaf(Tensor<double>({3, 2}));
  try {
    add(a, b);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ContractError);
  CHECK_THROWS_AS(g.backward(a), ContractError);  // non-scalar
  auto c = g.constant(Tensor<double>::from({1.0}));
  CHECK_THROWS_AS(g.backward(exp(c)), ContractError);  // detached
  CHECK_THROWS_AS(log(g.constant(Tensor<double>::from({0.0}))), ContractError);
  CHECK_THROWS_AS(exp(g.constant(Tensor<double>::from({1000.0}))), NumericError);

  G h;
  auto x = h.leaf(Tensor<double>::from({1.0}));
  h.backward(sum_all(x));
  CHECK(h.consumed());
  CHECK_THROWS_AS(h.backward(x), ContractError);

  ParamStore<double> store;
  store.add("p", Tensor<double>::from({1.0}));
  CHECK_THROWS_AS(store.add("p", Tensor<double>::from({1.0})), ContractError);
}

TEST_CASE("checkpoint round-trips stores, dtypes and metadata") {
  Rng rng(1);
  ParamStore<float> sf;
  ParamStore<double> sd;
  for (int i = 0; i < 4; ++i) {
    Shape s{1 + rng.below(4), 1 + rng.below(5)};
    auto t = random_tensor(rng, s);
    sf.add("p" + std::to_string(i), t.cast<float>());
    sd.add("p" + std::to_string(i), t);
  }
  sf.enable_shadow();
  sf.at(0).sq_avg.fill(0.25f);
  Checkpoint ck;
  ck.meta["iteration"] = 17;
  ck.put_store("f.", sf);
  ck.put_store("d.", sd);
  const auto path = std::filesystem::temp_directory_path() / "nff_ckpt_test.nsf";
  ck.save(path);
  auto back = Checkpoint::load(path);
  CHECK(back.meta["iteration"] == 17);
  CHECK(back.dtype("f.p0") == "f32");
  CHECK(back.dtype("d.p0") == "f64");
  ParamStore<float> sf2 = sf;
  ParamStore<double> sd2 = sd;
  for (auto& e : sf2.entries()) e.value.fill(0), e.sq_avg.fill(0), e.shadow.fill(0);
  for (auto& e : sd2.entries()) e.value.fill(0);
  back.get_store("f.", sf2);
  back.get_store("d.", sd2);
  for (std::size_t i = 0; i < sf.size(); ++i) {
    CHECK(sf2.at(i).value == sf.at(i).value);
    CHECK(sf2.at(i).sq_avg == sf.at(i).sq_avg);
    CHECK(sf2.at(i).shadow == sf.at(i).shadow);
    CHECK(sd2.at(i).value == sd.at(i).value);
  }
  {
    std::ofstream bad(path, std::ios::binary | std::ios::trunc);
    bad << "XXXXnot a checkpoint";
  }
  CHECK_THROWS_AS(Checkpoint::load(path), IoError);
  std::filesystem::remove(path);
}
