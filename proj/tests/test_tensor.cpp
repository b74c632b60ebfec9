#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include <nalign/tensor.hpp>

#include "fd_check.hpp"

using nalign::ContractError;
using nalign::GradGraph;
using nalign::IndexError;
using nalign::NumericError;
using nalign::RngStream;
using nalign::ShapeError;
using nalign::Tensor;
using fdtest::TensorD;
using Catch::Approx;

TEST_CASE("matmul basics", "[tensor]") {
  auto eye = Tensor<double>::from_rows(2, 2, {1, 0, 0, 1});
  auto b = Tensor<double>::from_rows(2, 2, {3, 4, 5, 6});
  auto prod = matmul(eye, b);
  REQUIRE(prod.values() == std::vector<double>{3, 4, 5, 6});

  auto rowv = Tensor<double>::from_rows(1, 2, {1, 2});
  auto colv = Tensor<double>::from_rows(2, 1, {3, 4});
  REQUIRE(matmul(rowv, colv).at(0, 0) == Approx(11.0));

  auto bad = Tensor<double>::zeros(5, 2);
  try {
    matmul(Tensor<double>::zeros(3, 4), bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("[3 x 4]") != std::string::npos);
    REQUIRE(msg.find("[5 x 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of summed output", "[tensor]") {
  RngStream rng(11);
  auto a = fdtest::random_tensor(3, 4, rng).set_requires_grad(true);
  auto b = fdtest::random_tensor(4, 2, rng).set_requires_grad(true);
  {
    GradGraph<double> g;
    auto loss = sum_all(matmul(a, b));
    g.backward(loss);
  }
  // d sum(a.b) / d a = ones(3,2) . b^T
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double expect = 0;
      for (std::size_t t = 0; t < 2; ++t) expect += b.at(j, t);
      REQUIRE(a.grad_at(i, j) == Approx(expect).margin(1e-12));
    }

  std::vector<TensorD> leaves{a, b};
  REQUIRE(fdtest::max_rel_err([&] { return sum_all(matmul(a, b)); }, leaves) <
          1e-4);
}

TEST_CASE("softmax values and invariances", "[tensor]") {
  auto two = Tensor<double>::row({0.0, 0.0});
  auto sm = softmax(two, 1);
  REQUIRE(sm.at(0, 0) == Approx(0.5));
  REQUIRE(sm.at(0, 1) == Approx(0.5));

  auto x = Tensor<double>::row({0.5, 0.0});
  auto y = softmax(x, 1);
  REQUIRE(y.at(0, 0) == Approx(0.6225).margin(1e-4));
  REQUIRE(y.at(0, 1) == Approx(0.3775).margin(1e-4));

  RngStream rng(21);
  for (int it = 0; it < 20; ++it) {
    std::size_t r = 1 + rng.below(4), c = 1 + rng.below(5);
    auto a = fdtest::random_tensor(r, c, rng, -3, 3);
    double shift = rng.uniform(-5, 5);
    auto shifted = Tensor<double>(r, c);
    for (std::size_t i = 0; i < a.numel(); ++i)
      shifted.values()[i] = a.values()[i] + shift;
    auto s0 = softmax(a, 1), s1 = softmax(shifted, 1);
    for (std::size_t i = 0; i < a.numel(); ++i)
      REQUIRE(s0.values()[i] == Approx(s1.values()[i]).margin(1e-12));
    // rows sum to one
    for (std::size_t i = 0; i < r; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < c; ++j) sum += s0.at(i, j);
      REQUIRE(sum == Approx(1.0).margin(1e-6));
    }
    // axis 0: columns sum to one
    auto sc = softmax(a, 0);
    for (std::size_t j = 0; j < c; ++j) {
      double sum = 0;
      for (std::size_t i = 0; i < r; ++i) sum += sc.at(i, j);
      REQUIRE(sum == Approx(1.0).margin(1e-6));
    }
  }

  auto inf = Tensor<double>::row({1.0, std::numeric_limits<double>::infinity()});
  REQUIRE_THROWS_AS(softmax(inf, 1), NumericError);
}

TEST_CASE("cross entropy values and errors", "[tensor]") {
  auto confident = Tensor<double>::from_rows(1, 3, {60.0, 0.0, 0.0});
  REQUIRE(cross_entropy(confident, {0}).at(0, 0) == Approx(0.0).margin(1e-12));

  auto half = Tensor<double>::from_rows(2, 2, {0, 0, 0, 0});
  REQUIRE(cross_entropy(half, {0, 1}).at(0, 0) ==
          Approx(2.0 * std::log(2.0)).margin(1e-12));

  REQUIRE_THROWS_AS(cross_entropy(half, {0, 5}), IndexError);
  REQUIRE_THROWS_AS(cross_entropy(half, {0}), ContractError);
}

TEST_CASE("backward basics and accumulation", "[tensor]") {
  auto x = Tensor<double>::from_rows(2, 2, {1, 2, 3, 4}).set_requires_grad(true);
  {
    GradGraph<double> g;
    auto loss = sum_all(x);
    g.backward(loss);
  }
  for (double v : x.grad()) REQUIRE(v == Approx(1.0));

  x.zero_grad();
  {
    GradGraph<double> g;
    auto loss = sum_all(mul(x, x));
    g.backward(loss);
  }
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE(x.grad()[i] == Approx(2.0 * x.values()[i]));

  // backward twice on the same graph accumulates additively
  x.zero_grad();
  {
    GradGraph<double> g;
    auto loss = sum_all(mul(x, x));
    g.backward(loss);
    g.backward(loss);
  }
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE(x.grad()[i] == Approx(4.0 * x.values()[i]));

  {
    GradGraph<double> g;
    auto y = mul(x, x);
    REQUIRE_THROWS_AS(g.backward(y), ContractError);  // non-scalar
    auto loose = Tensor<double>::scalar(1.0);
    REQUIRE_THROWS_AS(g.backward(loose), ContractError);  // not on graph
  }
  REQUIRE_THROWS_AS(nalign::backward(Tensor<double>::scalar(1.0)),
                    ContractError);  // no active graph
}

TEST_CASE("adam updates", "[tensor]") {
  // zero gradient: parameters unchanged, step counter advances
  {
    std::vector<Tensor<double>> params{
        Tensor<double>::from_rows(1, 2, {0.3, -0.7}).set_requires_grad(true)};
    params[0].grad();  // allocate zeros
    nalign::OptimizerState<double> st;
    adam_step(params, st, 0.1);
    REQUIRE(st.step == 1);
    REQUIRE(params[0].at(0, 0) == Approx(0.3));
    REQUIRE(params[0].at(0, 1) == Approx(-0.7));
  }
  // single scalar with g = 1 moves by about -lr after one bias-corrected step
  {
    std::vector<Tensor<double>> params{
        Tensor<double>::scalar(1.0).set_requires_grad(true)};
    params[0].grad()[0] = 1.0;
    nalign::OptimizerState<double> st;
    adam_step(params, st, 0.1);
    REQUIRE(params[0].at(0, 0) == Approx(0.9).margin(1e-6));
  }
  // repeated constant gradient moves monotonically against its sign
  {
    std::vector<Tensor<double>> params{
        Tensor<double>::scalar(0.0).set_requires_grad(true)};
    nalign::OptimizerState<double> st;
    double prev = 0.0;
    for (int i = 0; i < 10; ++i) {
      params[0].zero_grad();
      params[0].grad()[0] = -2.5;
      adam_step(params, st, 0.05);
      REQUIRE(params[0].at(0, 0) > prev);
      prev = params[0].at(0, 0);
    }
  }
  // missing grads
  {
    std::vector<Tensor<double>> params{
        Tensor<double>::scalar(1.0).set_requires_grad(true)};
    nalign::OptimizerState<double> st;
    REQUIRE_THROWS_AS(adam_step(params, st, 0.1), ContractError);
  }
}

TEST_CASE("dropout is seeded and mean-preserving", "[tensor]") {
  auto x = Tensor<double>::full(100, 10, 1.0);
  RngStream r1(77, 5), r2(77, 5), r3(77, 6);
  auto a = dropout(x, 0.1, r1);
  auto b = dropout(x, 0.1, r2);
  auto c = dropout(x, 0.1, r3);
  REQUIRE(a.values() == b.values());
  REQUIRE(a.values() != c.values());

  // expectation of the output equals the input within 2% at rate 0.1
  std::size_t n = 100000;
  auto big = Tensor<double>::full(n / 100, 100, 1.0);
  RngStream r4(123, 9);
  auto d = dropout(big, 0.1, r4);
  double mean =
      std::accumulate(d.values().begin(), d.values().end(), 0.0) /
      static_cast<double>(d.numel());
  REQUIRE(mean == Approx(1.0).margin(0.02));
}

TEST_CASE("gradients match central finite differences", "[tensor]") {
  RngStream rng(2024);
  auto dims = [&](std::size_t lo, std::size_t hi) {
    return lo + rng.below(hi - lo + 1);
  };
  for (int it = 0; it < 20; ++it) {
    std::size_t m = dims(1, 4), k = dims(1, 4), n = dims(1, 4);
    {
      auto a = fdtest::random_tensor(m, k, rng);
      auto b = fdtest::random_tensor(k, n, rng);
      std::vector<TensorD> ls{a, b};
      REQUIRE(fdtest::max_rel_err(
                  [&] { return sum_all(mul(matmul(a, b), matmul(a, b))); },
                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, n, rng);
      std::vector<TensorD> ls{a};
      REQUIRE(fdtest::max_rel_err(
                  [&] { return sum_all(mul(transpose(a), transpose(a))); },
                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, n, rng);
      auto b = fdtest::random_tensor(m, n, rng);
      std::vector<TensorD> ls{a, b};
      REQUIRE(fdtest::max_rel_err(
                  [&] { return sum_all(mul(add(a, b), add(a, b))); }, ls) <
              1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, n, rng);
      auto b = fdtest::random_tensor(1, n, rng);
      std::vector<TensorD> ls{a, b};
      REQUIRE(fdtest::max_rel_err(
                  [&] {
                    return sum_all(mul(add_rowwise(a, b), add_rowwise(a, b)));
                  },
                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, n, rng);
      std::vector<TensorD> ls{a};
      REQUIRE(fdtest::max_rel_err([&] { return sum_all(mul(scale(a, 1.7), a)); },
                                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, n, rng, 0.5, 2.0);
      std::vector<TensorD> ls{a};
      REQUIRE(fdtest::max_rel_err([&] { return sum_all(log(a)); }, ls) < 1e-4);
    }
    {
      // keep entries away from the relu kink
      auto a = fdtest::random_tensor(m, n, rng);
      for (auto& v : a.values())
        if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
      std::vector<TensorD> ls{a};
      REQUIRE(fdtest::max_rel_err([&] { return sum_all(mul(relu(a), a)); },
                                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, n, rng, -2, 2);
      auto w = fdtest::random_tensor(m, n, rng);
      std::vector<TensorD> ls{a};
      for (int axis : {0, 1}) {
        REQUIRE(fdtest::max_rel_err(
                    [&] { return sum_all(mul(softmax(a, axis), w)); }, ls) <
                1e-4);
      }
    }
    {
      auto logits = fdtest::random_tensor(m, 2 + n, rng, -2, 2);
      std::vector<int> tg(m);
      for (auto& t : tg) t = static_cast<int>(rng.below(2 + n));
      std::vector<TensorD> ls{logits};
      REQUIRE(fdtest::max_rel_err([&] { return cross_entropy(logits, tg); },
                                  ls) < 1e-4);
    }
    {
      // well-separated max for the subgradient to be the true derivative
      auto a = fdtest::random_tensor(m, n, rng, -1, 1);
      for (int axis : {0, 1}) {
        std::size_t slices = axis == 1 ? m : n;
        std::size_t len = axis == 1 ? n : m;
        for (std::size_t s = 0; s < slices; ++s) {
          std::size_t bi = 0;
          double bv = -1e9;
          for (std::size_t i = 0; i < len; ++i) {
            double v = axis == 1 ? a.at(s, i) : a.at(i, s);
            if (v > bv) {
              bv = v;
              bi = i;
            }
          }
          if (axis == 1)
            a.at(s, bi) += 0.2;
          else
            a.at(bi, s) += 0.2;
        }
        std::vector<TensorD> ls{a};
        REQUIRE(fdtest::max_rel_err(
                    [&] {
                      auto mx = max_over_axis(a, axis);
                      return sum_all(mul(mx, mx));
                    },
                    ls) < 1e-4);
      }
    }
    {
      auto a = fdtest::random_tensor(2 + m, 2 + n, rng);
      std::vector<TensorD> ls{a};
      REQUIRE(fdtest::max_rel_err(
                  [&] {
                    auto s = slice(a, 1, 1 + m, 1, 1 + n);
                    return sum_all(mul(s, s));
                  },
                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, 2 * n, rng);
      auto b = fdtest::random_tensor(m, n, rng);
      std::vector<TensorD> ls{a, b};
      REQUIRE(fdtest::max_rel_err(
                  [&] {
                    auto parts = split_cols(a, 2);
                    std::vector<TensorD> blocks{parts[1], b, parts[0]};
                    auto joined = concat_cols(blocks);
                    return sum_all(mul(joined, joined));
                  },
                  ls) < 1e-4);
    }
    {
      auto table = fdtest::random_tensor(5, n, rng);
      std::vector<int> ids(m);
      for (auto& id : ids) id = static_cast<int>(rng.below(5));
      std::vector<TensorD> ls{table};
      REQUIRE(fdtest::max_rel_err(
                  [&] {
                    auto e = embedding_lookup(table, ids);
                    return sum_all(mul(e, e));
                  },
                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(m, n, rng);
      std::vector<TensorD> ls{a};
      std::uint64_t seed = rng.next_u64();
      REQUIRE(fdtest::max_rel_err(
                  [&] {
                    RngStream mask_rng(seed);  // same mask on every call
                    auto d = dropout(a, 0.3, mask_rng);
                    return sum_all(mul(d, d));
                  },
                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(2 + m, 2 + n, rng, 0.0, 1.0);
      std::vector<TensorD> ls{a};
      REQUIRE(fdtest::max_rel_err(
                  [&] {
                    auto c = conv_window(a, 2, 0.5);
                    return sum_all(mul(c, c));
                  },
                  ls) < 1e-4);
    }
    {
      auto x = fdtest::random_tensor(m, 3 + n, rng);
      auto gain = fdtest::random_tensor(1, 3 + n, rng, 0.5, 1.5);
      auto bias = fdtest::random_tensor(1, 3 + n, rng);
      std::vector<TensorD> ls{x, gain, bias};
      REQUIRE(fdtest::max_rel_err(
                  [&] {
                    auto y = layer_norm(x, gain, bias);
                    return sum_all(mul(y, y));
                  },
                  ls) < 1e-4);
    }
    {
      auto a = fdtest::random_tensor(3 + m, 3 + n, rng, 0.1, 1.0);
      std::vector<std::pair<std::size_t, std::size_t>> cells;
      for (std::size_t j = 0; j < 3; ++j)
        cells.emplace_back(rng.below(3 + m), j);
      std::vector<TensorD> ls{a};
      REQUIRE(fdtest::max_rel_err(
                  [&] { return scale(sum_all(log(gather_cells(a, cells))), -1.0); },
                  ls) < 1e-4);
    }
  }
}

TEST_CASE("composed attention layer loss matches finite differences",
          "[tensor]") {
  RngStream rng(55);
  std::size_t n_src = 4, m_tgt = 3, d_model = 6, d_head = 4, vocab = 7;
  for (int it = 0; it < 5; ++it) {
    auto src = fdtest::random_tensor(n_src, d_model, rng);
    auto states = fdtest::random_tensor(m_tgt, d_model, rng);
    auto wq = fdtest::random_tensor(d_model, d_head, rng, -0.5, 0.5);
    auto wk = fdtest::random_tensor(d_model, d_head, rng, -0.5, 0.5);
    auto wv = fdtest::random_tensor(d_model, d_head, rng, -0.5, 0.5);
    auto wo = fdtest::random_tensor(d_head, vocab, rng, -0.5, 0.5);
    std::vector<int> targets = {1, 4, 6};
    std::vector<TensorD> ls{wq, wk, wv, wo};
    auto lossfn = [&] {
      auto q = matmul(states, wq);
      auto k = matmul(src, wk);
      auto v = matmul(src, wv);
      auto logits = scale(matmul(q, transpose(k)),
                          1.0 / std::sqrt(static_cast<double>(d_head)));
      auto att = softmax(logits, 1);
      auto ctx = matmul(att, v);
      return cross_entropy(matmul(ctx, wo), targets);
    };
    REQUIRE(fdtest::max_rel_err(lossfn, ls) < 1e-4);
  }
}
