#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "qarel/checkpoint.hpp"
#include "qarel/error.hpp"
#include "qarel/rng.hpp"
#include "qarel/tensor.hpp"
#include "support/oracles.hpp"

using namespace qarel;

namespace {

Tensor random_tensor(Shape shape, unsigned seed, double scale = 1.0) {
  oracle::Gen gen(seed);
  Tensor t(std::move(shape));
  for (auto& x : t.data) x = scale * gen.normal(0.0, 1.0);
  return t;
}

// Generic scalar projection of an op's output: sum(out * R).
Var project(Graph& g, Var out, unsigned seed) {
  auto r = random_tensor(out.value().shape, seed);
  return ops::sum(ops::mul(out, g.input(std::move(r))));
}

}  // namespace

TEST(Tensor, ShapesAndScalars) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_EQ(shape_string(Shape{2, 3}), "[2x3]");
}

TEST(Tensor, SoftmaxUniform) {
  Graph g;
  auto p = ops::row_softmax(g.input(Tensor(Shape{1, 3}, 0.0)));
  for (double v : p.value().data) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  for (unsigned seed = 0; seed < 20; ++seed) {
    Graph g;
    auto x = random_tensor(Shape{4, 7}, seed, 10.0);
    std::vector<double> mask = {1, 1, 0, 1, 0, 1, 1};
    for (auto p : {ops::row_softmax(g.input(x)), ops::row_softmax(g.input(x), mask)}) {
      const auto& v = p.value();
      for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
          EXPECT_GE(v.at(r, c), 0.0);
          s += v.at(r, c);
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
    auto masked = ops::row_softmax(g.input(x), mask).value();
    for (std::size_t r = 0; r < 4; ++r) {
      EXPECT_EQ(masked.at(r, 2), 0.0);
      EXPECT_EQ(masked.at(r, 4), 0.0);
    }
  }
}

TEST(Tensor, MatmulShapesAndIdentity) {
  Graph g;
  auto a = random_tensor(Shape{2, 3}, 1);
  auto b = random_tensor(Shape{3, 1}, 2);
  EXPECT_EQ(ops::matmul(g.input(a), g.input(b)).value().shape, (Shape{2, 1}));
  Tensor eye(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  EXPECT_EQ(ops::matmul(g.input(a), g.input(eye)).value().data, a.data);
}

TEST(Tensor, ShapeMismatchNamesOpAndShapes) {
  Graph g;
  try {
    ops::matmul(g.input(Tensor(Shape{2, 3})), g.input(Tensor(Shape{2, 3})));
    FAIL() << "expected a NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::add(g.input(Tensor(Shape{2})), g.input(Tensor(Shape{3}))), NumericError);
}

TEST(Tensor, MeanRowsMasked) {
  Graph g;
  Tensor x(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  const std::vector<double> first = {1, 0};
  EXPECT_EQ(ops::mean_rows_masked(g.input(x), first).value().data, (std::vector<double>{1, 2}));
  const std::vector<double> all = {1, 1};
  EXPECT_EQ(ops::mean_rows_masked(g.input(x), all).value().data, (std::vector<double>{2, 3}));
}

TEST(Tensor, BackwardLinearAndQuadratic) {
  Tensor w(Shape{2}, std::vector<double>{1, 2});
  {
    Graph g;
    g.backward(ops::sum(ops::scale(g.parameter(w), 3.0)));
    EXPECT_EQ(w.grad, (std::vector<double>{3, 3}));
  }
  w.zero_grad();
  {
    Graph g;
    auto p = g.parameter(w);
    g.backward(ops::sum(ops::mul(p, p)));
    EXPECT_EQ(w.grad, (std::vector<double>{2, 4}));
    g.backward(ops::sum(ops::mul(p, p)));
    EXPECT_EQ(w.grad, (std::vector<double>{4, 8})) << "repeated backward accumulates";
  }
}

TEST(Tensor, BackwardErrors) {
  Graph g;
  Tensor w(Shape{2}, 1.0);
  EXPECT_THROW(g.backward(Var{}), NumericError);
  auto p = g.parameter(w);
  EXPECT_THROW(g.backward(p), NumericError) << "non-scalar loss";
}

TEST(Tensor, IndependentSubgraphsAccumulateSeparately) {
  Tensor a = random_tensor(Shape{3}, 4);
  Tensor b = random_tensor(Shape{3}, 5);
  auto loss_a = [&](Graph& g) { return ops::sum(ops::mul(g.parameter(a), g.parameter(a))); };
  auto loss_b = [&](Graph& g) { return ops::sum(ops::scale(ops::gelu(g.parameter(b)), 2.0)); };
  {
    Graph g;
    g.backward(loss_a(g));
  }
  {
    Graph g;
    g.backward(loss_b(g));
  }
  const auto ga = a.grad;
  const auto gb = b.grad;
  a.zero_grad();
  b.zero_grad();
  Graph g;
  g.backward(ops::add(loss_a(g), loss_b(g)));
  EXPECT_EQ(a.grad, ga);
  EXPECT_EQ(b.grad, gb);
}

TEST(Tensor, GradCheckScalarSquare) {
  Tensor w = Tensor::scalar(3.0);
  Tensor* params[] = {&w};
  const double err = grad_check([&](Graph& g) { auto p = g.parameter(w); return ops::mul(p, p); }, params, 1e-5);
  EXPECT_LE(err, 1e-8);
  Graph g;
  auto p = g.parameter(w);
  w.zero_grad();
  g.backward(ops::mul(p, p));
  EXPECT_DOUBLE_EQ(w.grad[0], 6.0);
}

TEST(Tensor, GradCheckSoftmaxCrossEntropy) {
  Tensor logits(Shape{1, 3}, std::vector<double>{0.3, -1.2, 2.0});
  Tensor target(Shape{1, 3}, std::vector<double>{0, 1, 0});
  Tensor* params[] = {&logits};
  const double err = grad_check(
      [&](Graph& g) {
        return ops::scale(ops::sum(ops::mul(ops::row_log_softmax(g.parameter(logits)), g.constant(target))), -1.0);
      },
      params, 1e-5);
  EXPECT_LE(err, 1e-6);
}

TEST(Tensor, GradCheckEveryPrimitive) {
  using Build = std::function<Var(Graph&, std::vector<Tensor>&)>;
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    Build build;
  };
  const std::vector<double> mask = {1, 0, 1, 1};
  const std::vector<int> ids = {2, 0, 2, 1};
  const std::vector<Case> cases = {
      {"add", {{3, 4}, {3, 4}}, [](Graph& g, auto& t) { return ops::add(g.parameter(t[0]), g.parameter(t[1])); }},
      {"mul", {{3, 4}, {3, 4}}, [](Graph& g, auto& t) { return ops::mul(g.parameter(t[0]), g.parameter(t[1])); }},
      {"scale", {{3, 4}}, [](Graph& g, auto& t) { return ops::scale(g.parameter(t[0]), -1.7); }},
      {"add_row", {{3, 4}, {4}}, [](Graph& g, auto& t) { return ops::add_row(g.parameter(t[0]), g.parameter(t[1])); }},
      {"mean", {{3, 4}}, [](Graph& g, auto& t) { return ops::mean(g.parameter(t[0])); }},
      {"matmul", {{3, 4}, {4, 2}}, [](Graph& g, auto& t) { return ops::matmul(g.parameter(t[0]), g.parameter(t[1])); }},
      {"transpose", {{3, 4}}, [](Graph& g, auto& t) { return ops::transpose(g.parameter(t[0])); }},
      {"row_softmax", {{3, 4}}, [](Graph& g, auto& t) { return ops::row_softmax(g.parameter(t[0])); }},
      {"row_softmax_masked", {{3, 4}},
       [&](Graph& g, auto& t) { return ops::row_softmax(g.parameter(t[0]), mask); }},
      {"row_log_softmax", {{3, 4}}, [](Graph& g, auto& t) { return ops::row_log_softmax(g.parameter(t[0])); }},
      {"layer_norm", {{3, 4}, {4}, {4}},
       [](Graph& g, auto& t) {
         return ops::layer_norm(g.parameter(t[0]), g.parameter(t[1]), g.parameter(t[2]));
       }},
      {"gelu", {{3, 4}}, [](Graph& g, auto& t) { return ops::gelu(g.parameter(t[0])); }},
      {"mean_rows_masked", {{4, 3}},
       [&](Graph& g, auto& t) { return ops::mean_rows_masked(g.parameter(t[0]), mask); }},
      {"concat_cols", {{3, 2}, {3, 1}},
       [](Graph& g, auto& t) {
         const Var parts[] = {g.parameter(t[0]), g.parameter(t[1])};
         return ops::concat_cols(parts);
       }},
      {"concat_rows", {{1, 3}, {2, 3}},
       [](Graph& g, auto& t) {
         const Var parts[] = {g.parameter(t[0]), g.parameter(t[1])};
         return ops::concat_rows(parts);
       }},
      {"slice_cols", {{3, 5}}, [](Graph& g, auto& t) { return ops::slice_cols(g.parameter(t[0]), 1, 3); }},
      {"lookup_rows", {{3, 4}}, [&](Graph& g, auto& t) { return ops::lookup_rows(g.parameter(t[0]), ids); }},
      {"row_normalize", {{3, 4}}, [](Graph& g, auto& t) { return ops::row_normalize(g.parameter(t[0])); }},
      {"diagonal", {{3, 3}}, [](Graph& g, auto& t) { return ops::diagonal(g.parameter(t[0])); }},
  };
  unsigned seed = 10;
  for (const auto& c : cases) {
    std::vector<Tensor> ts;
    for (const auto& s : c.shapes) ts.push_back(random_tensor(s, seed++));
    std::vector<Tensor*> ptrs;
    for (auto& t : ts) ptrs.push_back(&t);
    const unsigned proj_seed = seed++;
    const double err = grad_check([&](Graph& g) { return project(g, c.build(g, ts), proj_seed); }, ptrs, 1e-5);
    EXPECT_LE(err, 1e-6) << c.name;
  }
}

TEST(Tensor, NonFiniteIsRejected) {
  Graph g;
  Tensor big(Shape{1}, std::vector<double>{1e308});
  EXPECT_THROW(ops::scale(g.input(big), 10.0), NumericError);
  EXPECT_THROW(ops::row_normalize(g.input(Tensor(Shape{1, 3}, 0.0))), NumericError);
}

TEST(Tensor, SeededInit) {
  const auto z = seeded_init(Shape{2, 2}, InitScheme::Zeros, 9);
  for (double v : z.data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(seeded_init(Shape{5, 3}, InitScheme::UniformScaled, 42).data,
            seeded_init(Shape{5, 3}, InitScheme::UniformScaled, 42).data);
  EXPECT_NE(seeded_init(Shape{5, 3}, InitScheme::UniformScaled, 42).data,
            seeded_init(Shape{5, 3}, InitScheme::UniformScaled, 43).data);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = seeded_init(Shape{4, 4}, InitScheme::UniformScaled, seed);
    for (double v : t.data) EXPECT_LE(std::fabs(v), std::sqrt(6.0 / 8.0));
  }
}

TEST(Rng, FixedStream) {
  // The engine is the standard mt19937_64; its 10000th output for the default
  // seed is fixed by the standard.
  std::mt19937_64 ref;
  ref.discard(9999);
  EXPECT_EQ(ref(), 9981545732273789042ULL);

  Rng a(123);
  Rng b(123);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(c.below(7), 7u);
  }
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng r(5);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto w = v;
  r.shuffle(std::span(w));
  EXPECT_NE(w, v);
  std::sort(w.begin(), w.end());
  EXPECT_EQ(w, v);
}

TEST(Checkpoint, RoundTripIsExact) {
  Checkpoint c;
  c.metadata["format"] = "test";
  c.metadata["note"] = "Québec\nmultiline";
  c.tensors.emplace_back("w", random_tensor(Shape{3, 2}, 1));
  c.tensors.emplace_back("s", Tensor::scalar(-0.0));
  c.tensors.emplace_back("v", Tensor(Shape{4}, std::vector<double>{1e-300, -2.5, 3.0, 1e300}));
  std::stringstream io;
  write_checkpoint(c, io);
  EXPECT_EQ(io.str().substr(0, 8), "QARELCKP");
  const auto back = read_checkpoint(io);
  EXPECT_EQ(back.metadata, c.metadata);
  ASSERT_EQ(back.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].first, c.tensors[i].first);
    EXPECT_EQ(back.tensors[i].second.shape, c.tensors[i].second.shape);
    EXPECT_EQ(std::memcmp(back.tensors[i].second.data.data(), c.tensors[i].second.data.data(),
                          c.tensors[i].second.size() * sizeof(double)),
              0);
  }
  EXPECT_THROW(back.tensor("missing"), DataError);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::istringstream bad_magic("NOTACKPT");
  EXPECT_THROW(read_checkpoint(bad_magic), DataError);
  Checkpoint c;
  c.tensors.emplace_back("w", Tensor(Shape{2, 2}, 1.0));
  std::stringstream io;
  write_checkpoint(c, io);
  const std::string full = io.str();
  std::istringstream truncated(full.substr(0, full.size() - 5));
  EXPECT_THROW(read_checkpoint(truncated), DataError);
}
