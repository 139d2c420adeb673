#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gefl/errors.hpp"
#include "gefl/nn.hpp"
#include "gefl/rng.hpp"
#include "gefl/tensor.hpp"
#include "grad_check.hpp"

using namespace gefl;

namespace {

Network single_dense(std::size_t in, std::size_t out) { return Network({DenseSpec{in, out}}); }

}  // namespace

TEST(TensorTest, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({0, 3}), ShapeError);
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 12u);
}

TEST(TensorTest, OneHotRejectsOutOfRangeLabel) {
  std::vector<int> labels{0, 2, -1};
  auto t = one_hot(labels, 3);
  EXPECT_EQ(t.values(), (std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0, 0}));
  std::vector<int> bad{3};
  EXPECT_THROW(one_hot(bad, 3), DomainError);
}

TEST(ForwardTest, IdentityWeights) {
  auto net = single_dense(2, 2);
  net.unflatten_params(std::vector<double>{1, 0, 0, 1, 0, 0});
  auto y = net.forward(Tensor::matrix(1, 2, {1, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 2}));
}

TEST(ForwardTest, Relu) {
  Network net({ActivationSpec{Activation::relu}});
  auto y = net.forward(Tensor::matrix(1, 3, {-1, 0, 2}));
  EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 2}));
}

TEST(ForwardTest, TwoLayerHandComputed) {
  // h = relu([1,1] W1 + b1) = relu([4.5, 5]); out = h W2 + b2 = 4.5 - 5 + 0.25
  Network net({DenseSpec{2, 2}, ActivationSpec{Activation::relu}, DenseSpec{2, 1}});
  net.unflatten_params(std::vector<double>{1, 2, 3, 4, 0.5, -1, 1, -1, 0.25});
  auto y = net.forward(Tensor::matrix(1, 2, {1, 1}));
  EXPECT_DOUBLE_EQ(y(0, 0), -0.25);
}

TEST(ForwardTest, DimensionMismatchThrows) {
  auto net = single_dense(3, 2);
  EXPECT_THROW(net.forward(Tensor::matrix(1, 2, {1, 2})), ShapeError);
  EXPECT_THROW(Network({DenseSpec{2, 3}, DenseSpec{4, 1}}), ShapeError);
}

TEST(ForwardTest, NonFiniteOutputIsNumericError) {
  auto net = single_dense(1, 1);
  net.unflatten_params(std::vector<double>{1e308, 0});
  EXPECT_THROW(net.forward(Tensor::matrix(1, 1, {1e10})), NumericError);
}

TEST(LossTest, UniformLogitsGiveLogC) {
  std::vector<int> labels{2};
  auto r = softmax_cross_entropy(Tensor::matrix(1, 4, {0.3, 0.3, 0.3, 0.3}), labels);
  EXPECT_NEAR(r.value, std::log(4.0), 1e-12);
  EXPECT_NEAR(r.value, 1.386294, 1e-6);
}

TEST(LossTest, ConfidentLogits) {
  std::vector<int> labels{0};
  auto r = softmax_cross_entropy(Tensor::matrix(1, 4, {10, 0, 0, 0}), labels);
  const double expected = std::log(std::exp(10.0) + 3.0) - 10.0;
  EXPECT_NEAR(r.value, expected, 1e-15);
  EXPECT_NEAR(r.value, 1.3619e-4, 1e-8);
}

TEST(LossTest, ShiftInvariance) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = Tensor::matrix(3, 5);
    for (double& v : logits.data()) v = 3.0 * rng.normal();
    auto shifted = logits;
    const double c = rng.uniform(-20.0, 20.0);
    for (double& v : shifted.data()) v += c;
    std::vector<int> labels{0, 3, 4};
    EXPECT_NEAR(softmax_cross_entropy(logits, labels).value, softmax_cross_entropy(shifted, labels).value, 1e-12);
  }
}

TEST(LossTest, MseZeroResidual) {
  auto net = single_dense(2, 2);
  Rng rng(1);
  net.init_glorot(rng);
  auto x = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  auto target = net.forward(x);
  auto r = loss_and_grad(net, x, target);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_TRUE(std::all_of(r.grad.begin(), r.grad.end(), [](double g) { return g == 0.0; }));
}

TEST(LossTest, ErrorsOnBadLabelsAndEmptyBatch) {
  auto net = single_dense(2, 3);
  std::vector<int> bad{3};
  EXPECT_THROW(loss_and_grad(net, Tensor::matrix(1, 2, {1, 1}), bad, LossKind::cross_entropy), DomainError);
  std::vector<int> none;
  EXPECT_THROW(loss_and_grad(net, Tensor::matrix(1, 2, {1, 1}), none, LossKind::cross_entropy), DomainError);
  std::vector<int> two{2};
  auto bce_net = single_dense(2, 1);
  EXPECT_THROW(loss_and_grad(bce_net, Tensor::matrix(1, 2, {1, 1}), two, LossKind::bce), DomainError);
}

TEST(GradientTest, MatchesFiniteDifferencesOnRandomNets) {
  Rng rng(2024);
  for (int trial = 0; trial < 40; ++trial) {
    auto inst = testing_support::random_instance(rng);
    const double err = testing_support::max_gradient_error(inst);
    EXPECT_LE(err, 1e-4) << "trial " << trial;
  }
}

TEST(GradientTest, InputGradientMatchesFiniteDifferences) {
  Rng rng(99);
  Network net = Network::mlp(4, std::vector<std::size_t>{6}, 3, {Activation::tanh});
  net.init_glorot(rng);
  auto x = Tensor::matrix(2, 4);
  for (double& v : x.data()) v = rng.normal();
  std::vector<int> labels{1, 2};
  auto trace = net.forward_trace(x);
  auto loss = softmax_cross_entropy(trace.output, labels);
  auto back = net.backward(trace, loss.grad);
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (softmax_cross_entropy(net.forward(xp), labels).value -
                       softmax_cross_entropy(net.forward(xm), labels).value) / (2 * h);
    EXPECT_NEAR(back.input_grad.data()[i], fd, 1e-7);
  }
}

TEST(OptimizerTest, SgdArithmetic) {
  auto opt = Optimizer::sgd(0.1);
  std::vector<double> p{1.0};
  std::vector<double> g{2.0};
  opt.step(p, g);
  EXPECT_DOUBLE_EQ(p[0], 0.8);
}

TEST(OptimizerTest, ZeroGradientIsFixedPoint) {
  std::vector<double> p{1.0, -2.0, 3.0};
  std::vector<double> g(3, 0.0);
  auto sgd = Optimizer::sgd(0.5);
  auto adam = Optimizer::adam({}, 3);
  auto q = p;
  sgd.step(p, g);
  adam.step(q, g);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(q, (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(OptimizerTest, AdamFirstStepIsSignedLearningRate) {
  // m_hat = g, v_hat = g^2 after one step, so the update is lr * g / (|g| + eps).
  AdamConfig cfg{.lr = 0.01, .beta1 = 0.5, .beta2 = 0.999, .eps = 1e-8};
  auto adam = Optimizer::adam(cfg, 3);
  std::vector<double> p{0.0, 0.0, 0.0};
  std::vector<double> g{3.0, -0.2, 1e-3};
  adam.step(p, g);
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = -cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps);
    EXPECT_NEAR(p[i], expected, 1e-15);
    EXPECT_NEAR(std::abs(p[i]), cfg.lr, 1e-6 * cfg.lr / std::abs(g[i]) + 1e-12);
  }
  EXPECT_EQ(adam.step_count(), 1);
  adam.step(p, g);
  EXPECT_EQ(adam.step_count(), 2);
}

TEST(OptimizerTest, LengthMismatchThrows) {
  auto opt = Optimizer::sgd(0.1);
  std::vector<double> p(2), g(3);
  EXPECT_THROW(opt.step(p, g), ShapeError);
}

TEST(ParamsTest, CountAndRoundTrip) {
  EXPECT_EQ(single_dense(2, 1).param_count(), 3u);
  Network net = Network::mlp(5, std::vector<std::size_t>{7, 3}, 2, {Activation::relu});
  EXPECT_EQ(net.param_count(), 5u * 7 + 7 + 7 * 3 + 3 + 3 * 2 + 2);
  Rng rng(3);
  net.init_glorot(rng);
  auto flat = net.flatten_params();
  Network copy = Network::mlp(5, std::vector<std::size_t>{7, 3}, 2, {Activation::relu});
  copy.unflatten_params(flat);
  EXPECT_EQ(copy, net);
  EXPECT_THROW(copy.unflatten_params(std::vector<double>(flat.size() + 1)), ShapeError);
}

TEST(ParamsTest, SwappedFlatsSwapOutputs) {
  Rng rng(11);
  auto a = Network::mlp(3, std::vector<std::size_t>{4}, 2, {Activation::tanh});
  auto b = a;
  a.init_glorot(rng);
  b.init_glorot(rng);
  auto x = Tensor::matrix(2, 3, {0.1, -0.4, 1.0, 2.0, 0.3, -1.0});
  const auto ya = a.forward(x);
  const auto yb = b.forward(x);
  const auto fa = a.flatten_params();
  a.unflatten_params(b.flatten_params());
  b.unflatten_params(fa);
  EXPECT_EQ(a.forward(x), yb);
  EXPECT_EQ(b.forward(x), ya);
}

TEST(ParamsTest, SliceAndConcatPreserveParameters) {
  Rng rng(5);
  auto net = Network::mlp(4, std::vector<std::size_t>{6, 5}, 3, {Activation::leaky_relu});
  net.init_glorot(rng);
  auto head = net.slice(0, 2);
  auto tail = net.slice(2, net.layers().size());
  EXPECT_EQ(concat(head, tail), net);
  auto x = Tensor::matrix(1, 4, {0.5, -1, 2, 0});
  EXPECT_EQ(tail.forward(head.forward(x)), net.forward(x));
}

TEST(DeterminismTest, SameSeedSameInit) {
  auto a = Network::mlp(6, std::vector<std::size_t>{8}, 4, {Activation::relu});
  auto b = a;
  Rng r1(42), r2(42);
  a.init_glorot(r1);
  b.init_glorot(r2);
  EXPECT_EQ(a.flatten_params(), b.flatten_params());
  const double limits[] = {std::sqrt(6.0 / 14.0), std::sqrt(6.0 / 12.0)};
  for (std::size_t l = 0; l < 2; ++l) {
    const auto [lo, hi] = a.dense_param_range(l);
    for (std::size_t i = lo; i < hi; ++i) EXPECT_LE(std::abs(a.params()[i]), limits[l]);
  }
}

TEST(RngTest, NormalMomentsAndBelow) {
  Rng rng(123);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
  std::vector<int> counts(3, 0);
  for (int i = 0; i < 30000; ++i) ++counts[rng.below(3)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
}
