#include <gtest/gtest.h>

#include "prccf/nn/layers.hpp"
#include "support.hpp"

using namespace prccf::nn;
namespace oracle = prccf::testing::oracle;

namespace {

Matrix random_matrix(Rng& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Checks d f / d x against central differences entry by entry.
void check_gradient(const std::function<Tensor(const Tensor&)>& f, Matrix x0, double tol = 1e-6) {
  Tensor x = Tensor::parameter(x0);
  f(x).backward();
  ASSERT_TRUE(x.has_grad());
  const Matrix analytic = x.grad();
  NoGradGuard guard;
  for (Index i = 0; i < x0.size(); ++i) {
    auto at = [&](double v) {
      Matrix m = x0;
      m.data()[i] = v;
      return f(Tensor(m)).item();
    };
    const double numeric = oracle::central_difference(at, x0.data()[i], 1e-6);
    EXPECT_NEAR(analytic.data()[i], numeric, tol * std::max(1.0, std::abs(numeric))) << "entry " << i;
  }
}

}  // namespace

TEST(Nn, ElementwiseOpsGradients) {
  Rng rng(1);
  const Matrix w = random_matrix(rng, 3, 4);
  const Tensor wt(w);
  check_gradient([&](const Tensor& x) { return sum(mul(sigmoid(x), wt)); }, random_matrix(rng, 3, 4));
  check_gradient([&](const Tensor& x) { return sum(mul(tanh(x), wt)); }, random_matrix(rng, 3, 4));
  check_gradient([&](const Tensor& x) { return sum(mul(gelu(x), wt)); }, random_matrix(rng, 3, 4));
  check_gradient([&](const Tensor& x) { return sum(scale(mul(x, x), 0.5)); }, random_matrix(rng, 2, 2));
}

TEST(Nn, MatmulAndRowOpsGradients) {
  Rng rng(2);
  const Tensor b(random_matrix(rng, 4, 5));
  const Tensor row(random_matrix(rng, 1, 5));
  check_gradient([&](const Tensor& x) { return sum(mul(add_row(matmul(x, b), row), add_row(matmul(x, b), row))); },
                 random_matrix(rng, 3, 4));
  const Tensor k(random_matrix(rng, 6, 4));
  check_gradient([&](const Tensor& x) { return sum(tanh(matmul_nt(x, k))); }, random_matrix(rng, 3, 4));
  check_gradient([&](const Tensor& x) { return sum(tanh(matmul_nt(k, x))); }, random_matrix(rng, 3, 4));
}

TEST(Nn, SoftmaxLayerNormGradients) {
  Rng rng(3);
  const Tensor w(random_matrix(rng, 3, 5));
  Matrix mask = Matrix::Zero(3, 5);
  mask(0, 4) = -1e9;
  check_gradient([&](const Tensor& x) { return sum(mul(softmax_rows(x, &mask), w)); }, random_matrix(rng, 3, 5));
  const Tensor gain(random_matrix(rng, 1, 5)), bias(random_matrix(rng, 1, 5));
  check_gradient([&](const Tensor& x) { return sum(mul(layer_norm(x, gain, bias), w)); }, random_matrix(rng, 3, 5),
                 1e-5);
}

TEST(Nn, StructuralOpsGradients) {
  Rng rng(4);
  const Tensor other(random_matrix(rng, 2, 3));
  const Tensor w(random_matrix(rng, 4, 3));
  check_gradient(
      [&](const Tensor& x) {
        std::vector<Tensor> parts = {x, other};
        return sum(mul(concat_rows(parts), w));
      },
      random_matrix(rng, 2, 3));
  check_gradient([&](const Tensor& x) { return sum(tanh(slice_rows(x, 1, 2))); }, random_matrix(rng, 4, 3));
  check_gradient([&](const Tensor& x) { return sum(tanh(slice_cols(x, 1, 2))); }, random_matrix(rng, 4, 3));
  check_gradient([&](const Tensor& x) { return sum(mul(repeat_row(x, 4), w)); }, random_matrix(rng, 1, 3));
  std::vector<int> ids = {2, 0, 2};
  check_gradient([&](const Tensor& x) { return sum(tanh(embedding(x, ids))); }, random_matrix(rng, 4, 3));
}

TEST(Nn, WeightedSumAndMaskedSoftmaxGradients) {
  Rng rng(5);
  std::vector<Tensor> xs;
  for (int i = 0; i < 3; ++i) xs.emplace_back(random_matrix(rng, 2, 2));
  std::array<bool, 3> active = {true, false, true};
  check_gradient([&](const Tensor& w) { return sum(tanh(weighted_sum(xs, masked_softmax(w, active)))); },
                 random_matrix(rng, 1, 3));
}

TEST(Nn, NllLossMatchesDirectComputationAndGradient) {
  Rng rng(6);
  Matrix logits = random_matrix(rng, 3, 4);
  std::vector<int> targets = {1, 3, 0};
  double want = 0;
  for (int r = 0; r < 3; ++r) {
    double z = 0;
    for (int c = 0; c < 4; ++c) z += std::exp(logits(r, c));
    want += -(logits(r, targets[r]) - std::log(z));
  }
  EXPECT_NEAR(nll_loss(Tensor(logits), targets).item(), want / 3, 1e-12);
  check_gradient([&](const Tensor& x) { return nll_loss(x, targets); }, logits);
}

TEST(Nn, TransformerLayersGradient) {
  Rng rng(7);
  ParameterStore store;
  TransformerEncoder enc(store, rng, "enc", "s", 8, 2, 1);
  TransformerDecoder dec(store, rng, "dec", "s", 8, 2, 1);
  const Tensor memory(random_matrix(rng, 3, 8));
  check_gradient([&](const Tensor& x) { return sum(tanh(dec(enc(x), memory))); }, random_matrix(rng, 4, 8), 1e-5);
}

TEST(Nn, GradientsAccumulateUntilZeroed) {
  Tensor p = Tensor::parameter(Matrix::Ones(1, 2));
  sum(p).backward();
  sum(p).backward();
  EXPECT_DOUBLE_EQ(p.grad()(0, 0), 2.0);
  p.zero_grad();
  EXPECT_FALSE(p.has_grad());
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    Tensor y = sum(p);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Nn, AdamMovesAgainstGradientAndReportsStageDelta) {
  ParameterStore store;
  Tensor p = store.add("p", "stage", Matrix::Constant(1, 3, 1.0));
  Adam opt(store);
  sum(p).backward();
  auto delta = opt.step(0.1);
  EXPECT_LT(p.value()(0, 0), 1.0);
  EXPECT_GT(delta.at("stage"), 0.0);
}

TEST(Nn, ParameterStoreRoundTrip) {
  Rng rng(8);
  ParameterStore a;
  a.add("w", "s", init_normal(rng, 3, 2));
  auto dir = prccf::testing::scratch_dir("params");
  a.save(dir / "p.bin");
  ParameterStore b;
  b.add("w", "s", Matrix::Zero(3, 2));
  b.load(dir / "p.bin");
  EXPECT_EQ(a.all()[0].tensor.value(), b.all()[0].tensor.value());
  ParameterStore c;
  c.add("w", "s", Matrix::Zero(2, 2));
  EXPECT_ANY_THROW(c.load(dir / "p.bin"));
}

TEST(Nn, RngIsReproducible) {
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.normal(), b.normal());
}
