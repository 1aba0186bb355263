#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "pairrl/adam.hpp"
#include "pairrl/autodiff.hpp"
#include "pairrl/checkpoint.hpp"
#include "pairrl/errors.hpp"

using namespace pairrl;

namespace {

Tensor64 random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor64 t = Tensor64::matrix(r, c);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

using F64 = std::function<Var64(Tape64&, const std::vector<Var64>&)>;

double check(const F64& f, const std::vector<Tensor64>& params) { return grad_check<double>(f, params, 1e-6); }

}  // namespace

TEST_CASE("forward examples") {
  Tape tape;
  auto r = relu(tape.constant(Tensor(Shape{3}, std::vector<float>{-1, 0, 2})));
  CHECK(r.value().data()[0] == 0.0f);
  CHECK(r.value().data()[1] == 0.0f);
  CHECK(r.value().data()[2] == 2.0f);

  auto a = tape.constant(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3, 4}));
  auto b = tape.constant(Tensor(Shape{2, 1}, std::vector<float>{1, 1}));
  auto m = matmul(a, b);
  CHECK(m.value().shape() == Shape{2, 1});
  CHECK(m.value()[0] == 3.0f);
  CHECK(m.value()[1] == 7.0f);

  auto s = softmax(tape.constant(Tensor::matrix(1, 2)));
  CHECK(s.value()[0] == 0.5f);
  CHECK(s.value()[1] == 0.5f);
}

TEST_CASE("shape and numeric errors") {
  Tape tape;
  auto a = tape.constant(Tensor::matrix(2, 3, 1.0f));
  auto b = tape.constant(Tensor::matrix(2, 3, 1.0f));
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
  CHECK_THROWS_AS(add(a, tape.constant(Tensor::matrix(3, 2))), DimensionError);
  CHECK_THROWS_AS(log(tape.constant(Tensor::matrix(1, 1, -1.0f))), NumericError);
  CHECK_THROWS_AS(exp(tape.constant(Tensor::matrix(1, 1, 1000.0f))), NumericError);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), DimensionError);
}

TEST_CASE("backward examples") {
  SUBCASE("x*x at 3 -> 6") {
    Tape tape;
    auto x = tape.param("x", Tensor::scalar(3.0f));
    auto g = tape.backward(x * x);
    CHECK(g.at("x").item() == doctest::Approx(6.0));
  }
  SUBCASE("sum(sg(x)*x) at 2 -> 2") {
    Tape tape;
    auto x = tape.param("x", Tensor(Shape{1}, std::vector<float>{2.0f}));
    auto g = tape.backward(sum(stop_grad(x) * x));
    CHECK(g.at("x").item() == 2.0f);
  }
  SUBCASE("tanh at 0 -> 1") {
    Tape tape;
    auto x = tape.param("x", Tensor::scalar(0.0f));
    auto g = tape.backward(tanh(x));
    CHECK(g.at("x").item() == 1.0f);
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    auto x = tape.param("x", Tensor::matrix(2, 2, 1.0f));
    CHECK_THROWS_AS(tape.backward(x), ContractError);
  }
  SUBCASE("relu subgradient at 0 is 0") {
    Tape tape;
    auto x = tape.param("x", Tensor::scalar(0.0f));
    CHECK(tape.backward(relu(x)).at("x").item() == 0.0f);
  }
  SUBCASE("clip_min tie takes pass-through branch") {
    Tape tape;
    auto x = tape.param("x", Tensor(Shape{3}, std::vector<float>{0.5f, 0.8f, 1.2f}));
    auto g = tape.backward(sum(clip_min(x, 0.8)));
    CHECK(g.at("x")[0] == 1.0f);
    CHECK(g.at("x")[1] == 1.0f);
    CHECK(g.at("x")[2] == 0.0f);
  }
}

TEST_CASE("stop_grad gives bitwise-zero gradients behind it") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    auto w = tape.param("w", random_tensor(rng, 3, 4).cast<float>());
    auto v = tape.param("v", random_tensor(rng, 4, 2).cast<float>());
    auto hidden = tanh(matmul(w, v));
    // Only v reaches the loss through a live path; w only through sg.
    auto loss = sum(stop_grad(hidden) * matmul(tape.constant(Tensor::matrix(3, 4, 1.0f)), v));
    auto g = tape.backward(loss);
    for (float x : g.at("w").data()) CHECK(std::bit_cast<std::uint32_t>(x) == 0u);
    CHECK(tape.grad(stop_grad(hidden)).data().size() == 6);
  }
}

TEST_CASE("grad_check examples") {
  CHECK(check([](Tape64&, const std::vector<Var64>& v) { return v[0] * v[0]; },
              {Tensor64::scalar(1.5)}) < 1e-6);
  CHECK(check([](Tape64& t, const std::vector<Var64>&) { return t.constant(Tensor64::scalar(4.0)); },
              {Tensor64::scalar(1.5)}) == 0.0);
  CHECK_THROWS_AS(grad_check<double>([](Tape64&, const std::vector<Var64>& v) { return v[0]; },
                                     {Tensor64::scalar(1.0)}, 0.0),
                  ContractError);
}

TEST_CASE("grad_check per op") {
  std::mt19937_64 rng(5);
  const auto a = random_tensor(rng, 3, 4);
  const auto b = random_tensor(rng, 3, 4);
  const auto m = random_tensor(rng, 4, 2);
  const auto row = random_tensor(rng, 1, 4);
  const auto col = random_tensor(rng, 3, 1);
  const auto pos = random_tensor(rng, 3, 4, 0.5, 2.0);
  auto w = [&](Tape64& t, Var64 x) { return sum(x * t.constant(b)); };
  std::vector<std::pair<const char*, std::pair<F64, std::vector<Tensor64>>>> cases = {
      {"matmul", {[](Tape64&, const std::vector<Var64>& v) { return sum(tanh(matmul(v[0], v[1]))); }, {a, m}}},
      {"add", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, v[0] + v[1]); }, {a, b}}},
      {"add row", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, v[0] + v[1]); }, {a, row}}},
      {"add col", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, v[0] + v[1]); }, {a, col}}},
      {"subtract", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, v[0] - v[1]); }, {a, row}}},
      {"multiply", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, v[0] * v[1]); }, {a, col}}},
      {"multiply scalar", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, v[0] * v[1]); },
                           {a, Tensor64::scalar(0.7)}}},
      {"scale", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, scale(v[0], -2.5)); }, {a}}},
      {"tanh", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, tanh(v[0])); }, {a}}},
      {"relu", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, relu(v[0])); }, {a}}},
      {"exp", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, exp(v[0])); }, {a}}},
      {"log", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, log(v[0])); }, {pos}}},
      {"softmax", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, softmax(v[0])); }, {a}}},
      {"log_softmax", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, log_softmax(v[0])); }, {a}}},
      {"sum axis 0", {[](Tape64&, const std::vector<Var64>& v) { return sum(square(sum(v[0], 0))); }, {a}}},
      {"sum axis 1", {[](Tape64&, const std::vector<Var64>& v) { return sum(square(sum(v[0], 1))); }, {a}}},
      {"mean", {[](Tape64&, const std::vector<Var64>& v) { return mean(square(mean(v[0], 1))); }, {a}}},
      {"concat", {[&](Tape64& t, const std::vector<Var64>& v) {
                    const std::array<Var64, 2> parts{v[0], v[1]};
                    return sum(square(concat(std::span<const Var64>(parts), 0)));
                  },
                  {a, b}}},
      {"slice", {[&](Tape64&, const std::vector<Var64>& v) { return sum(square(slice(v[0], 1, 1, 3))); }, {a}}},
      {"clip_min", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, clip_min(v[0], 0.1)); }, {a}}},
      {"clamp", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, clamp(v[0], -0.3, 0.4)); }, {a}}},
      {"minimum", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, minimum(v[0], v[1])); }, {a, b}}},
      {"maximum", {[&](Tape64& t, const std::vector<Var64>& v) { return w(t, maximum(v[0], v[1])); }, {a, b}}},
  };
  for (const auto& [name, c] : cases) {
    CAPTURE(name);
    CHECK(check(c.first, c.second) < 1e-4);
  }
}

TEST_CASE("grad_check over 100+ random graphs") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> op_pick(0, 11);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  int graphs = 0;
  for (int g = 0; g < 120; ++g) {
    const std::size_t r = dim(rng), c = dim(rng), k = dim(rng);
    std::vector<Tensor64> params = {random_tensor(rng, r, c), random_tensor(rng, r, c), random_tensor(rng, c, k)};
    std::vector<int> ops(6);
    for (auto& o : ops) o = op_pick(rng);
    const double bound = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    F64 f = [ops, bound](Tape64&, const std::vector<Var64>& v) {
      Var64 x = v[0];
      for (int o : ops) {
        switch (o) {
          case 0: x = x + v[1]; break;
          case 1: x = x * v[1]; break;
          case 2: x = x - scale(v[1], 0.5); break;
          case 3: x = tanh(x); break;
          case 4: x = exp(scale(tanh(x), 0.5)); break;
          case 5: x = log(exp(x) + exp(v[1])); break;
          case 6: x = softmax(x); break;
          case 7: x = log_softmax(x); break;
          case 8: x = clip_min(x, bound); break;
          case 9: x = relu(x + scale(v[1], 0.1)); break;
          case 10: x = x * scale(tanh(sum(matmul(x, v[2]), 1)), 0.5); break;
          default: {
            auto y = matmul(x, v[2]);
            x = x + v[1] * tanh(sum(y, 1));
          }
        }
      }
      return sum(square(x)) + mean(x);
    };
    CAPTURE(g);
    CHECK(check(f, params) < 1e-4);
    ++graphs;
  }
  CHECK(graphs >= 100);
}

TEST_CASE("forward is deterministic and inputs are not mutated") {
  std::mt19937_64 rng(9);
  const auto a = random_tensor(rng, 5, 7).cast<float>();
  const auto b = random_tensor(rng, 7, 3).cast<float>();
  auto run = [&] {
    Tape tape;
    auto x = tape.constant(a);
    auto y = tape.constant(b);
    auto out = softmax(tanh(matmul(x, y)));
    CHECK(x.value() == a);
    CHECK(y.value() == b);
    return out.value();
  };
  CHECK(run() == run());
}

TEST_CASE("matmul rows do not depend on batch composition") {
  std::mt19937_64 rng(3);
  const auto w = random_tensor(rng, 40, 9).cast<float>();
  const auto x = random_tensor(rng, 13, 40).cast<float>();
  Tape tape;
  const auto full = matmul(tape.constant(x), tape.constant(w)).value();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Tensor one = Tensor::matrix(1, 40);
    for (std::size_t j = 0; j < 40; ++j) one.at(0, j) = x.at(i, j);
    const auto single = matmul(tape.constant(one), tape.constant(w)).value();
    for (std::size_t j = 0; j < 9; ++j) CHECK(single.at(0, j) == full.at(i, j));
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves params unchanged") {
    ParamSet p{{"w", Tensor::matrix(2, 2, 0.3f)}};
    ParamSet g{{"w", Tensor::matrix(2, 2)}};
    AdamState s;
    adam_step(p, g, s, 1);
    CHECK(p.at("w") == Tensor::matrix(2, 2, 0.3f));
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    ParamSet p{{"w", Tensor::scalar(1.0f)}};
    ParamSet g{{"w", Tensor::scalar(1.0f)}};
    AdamState s;
    s.lr = 0.1;
    adam_step(p, g, s, 1);
    // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
    CHECK(p.at("w").item() == doctest::Approx(0.9).epsilon(1e-6));
  }
  SUBCASE("step counter must increase") {
    ParamSet p{{"w", Tensor::scalar(1.0f)}};
    ParamSet g{{"w", Tensor::scalar(1.0f)}};
    AdamState s;
    adam_step(p, g, s, 1);
    CHECK_THROWS_AS(adam_step(p, g, s, 1), ContractError);
  }
  SUBCASE("shape mismatch") {
    ParamSet p{{"w", Tensor::matrix(2, 2)}};
    ParamSet g{{"w", Tensor::matrix(2, 3)}};
    AdamState s;
    CHECK_THROWS_AS(adam_step(p, g, s, 1), DimensionError);
  }
  SUBCASE("matches a hand-rolled two-step recurrence") {
    ParamSet p{{"w", Tensor::scalar(0.5f)}};
    AdamState s;
    s.lr = 0.01;
    const double g1 = 0.2, g2 = -0.4;
    adam_step(p, ParamSet{{"w", Tensor::scalar(float(g1))}}, s, 1);
    adam_step(p, ParamSet{{"w", Tensor::scalar(float(g2))}}, s, 2);
    double w = 0.5, m = 0, v = 0;
    const double grads[] = {g1, g2};
    for (int t = 1; t <= 2; ++t) {
      const double g = grads[t - 1];
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      w -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    CHECK(p.at("w").item() == doctest::Approx(w).epsilon(1e-6));
  }
  SUBCASE("per-parameter learning rate") {
    ParamSet p{{"a", Tensor::scalar(1.0f)}, {"b", Tensor::scalar(1.0f)}};
    ParamSet g{{"a", Tensor::scalar(1.0f)}, {"b", Tensor::scalar(1.0f)}};
    AdamState s;
    s.lr = 0.1;
    s.lr_by_param["b"] = 0.01;
    adam_step(p, g, s, 1);
    CHECK(p.at("a").item() == doctest::Approx(0.9));
    CHECK(p.at("b").item() == doctest::Approx(0.99));
  }
}

TEST_CASE("clip_grad_norm") {
  ParamSet g{{"a", Tensor(Shape{2}, std::vector<float>{3, 0})}, {"b", Tensor(Shape{1}, std::vector<float>{4})}};
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(g.at("a")[0] == doctest::Approx(0.6));
  CHECK(g.at("b")[0] == doctest::Approx(0.8));
  ParamSet small{{"a", Tensor::scalar(0.1f)}};
  clip_grad_norm(small, 1.0);
  CHECK(small.at("a").item() == 0.1f);
}

TEST_CASE("checkpoint round trip and validation") {
  ParamSet p{{"trunk.w1", Tensor(Shape{2, 3}, std::vector<float>{1, -2, 3.5f, 0, 1e-7f, -1e7f})},
             {"b", Tensor::scalar(0.25f)}};
  const auto bytes = encode_checkpoint(p);
  CHECK(std::memcmp(bytes.data(), "PAIRRL01", 8) == 0);
  // Independent layout oracle: count, then the first record (name "b").
  auto u32 = [&](std::size_t off) {
    return std::uint32_t(bytes[off]) | std::uint32_t(bytes[off + 1]) << 8 | std::uint32_t(bytes[off + 2]) << 16 |
           std::uint32_t(bytes[off + 3]) << 24;
  };
  CHECK(u32(8) == 2u);
  CHECK(u32(12) == 1u);
  CHECK(bytes[16] == 'b');
  CHECK(u32(17) == 1u);
  CHECK(u32(21) == 1u);
  CHECK(std::bit_cast<float>(u32(25)) == 0.25f);
  CHECK(decode_checkpoint(bytes) == p);

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_checkpoint(truncated), LoadError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), LoadError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), LoadError);
  auto bad_version = bytes;
  bad_version[7] = '2';
  CHECK_THROWS_AS(decode_checkpoint(bad_version), LoadError);

  const auto path = std::filesystem::temp_directory_path() / "pairrl_test.ckpt";
  save_checkpoint(path, p);
  CHECK(load_checkpoint(path) == p);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), LoadError);
}
