#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "pcn/layers.hpp"
#include "pcn/losses.hpp"
#include "pcn/model_io.hpp"
#include "pcn/network.hpp"

using namespace pcn;

namespace {

Tensor<double> tensor_of(Shape s, const std::vector<double>& v) { return Tensor<double>(s, v); }

std::vector<double> as_vector(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

bool throws_kind(ErrorKind k, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind() == k;
  }
  return false;
}

}  // namespace

TEST(TensorTest, ShapeAndStorageAgree) {
  Tensor<float> t(Shape{2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3);
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [] { Tensor<float>(Shape{2, 2}, std::vector<float>(3)); }));
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [] { Shape{0, 2}; }));
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [] { Shape{1, 1, 1, 1, 1}; }));
}

TEST(TensorTest, ReshapeKeepsData) {
  Tensor<float> t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  t.reshape(Shape{6});
  EXPECT_EQ(t[5], 6.0f);
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [&] { t.reshape(Shape{4}); }));
}

TEST(Conv2dTest, SumOfOnes) {
  auto l = Layer<double>::conv(1, 1, 3, 1);
  l.weights.fill(1.0);
  const auto out = conv2d(Tensor<double>(Shape{1, 3, 3}, 1.0), l);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(out[0], 9.0);
}

TEST(Conv2dTest, OneByOneIdentity) {
  auto l = Layer<double>::conv(1, 1, 1, 1);
  l.weights.fill(1.0);
  std::mt19937_64 rng(1);
  const auto in = tensor_of(Shape{1, 4, 5}, oracle::random_vector(20, rng));
  EXPECT_EQ(as_vector(conv2d(in, l)), as_vector(in));
}

TEST(Conv2dTest, MatchesNaiveLoopsOnRandomShapes) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> ch(1, 4), kk(1, 3), ss(1, 3), extra(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const int c_in = ch(rng), c_out = ch(rng), k = kk(rng), s = ss(rng);
    const int h = k + extra(rng), w = k + extra(rng);
    auto l = Layer<float>::conv(c_in, c_out, k, s);
    const auto in = oracle::random_vector(static_cast<std::size_t>(c_in) * h * w, rng);
    const auto wt = oracle::random_vector(l.weights.size(), rng);
    const auto b = oracle::random_vector(l.bias.size(), rng);
    for (std::size_t i = 0; i < wt.size(); ++i) l.weights[i] = static_cast<float>(wt[i]);
    for (std::size_t i = 0; i < b.size(); ++i) l.bias[i] = static_cast<float>(b[i]);
    Tensor<float> x(Shape{c_in, h, w});
    for (std::size_t i = 0; i < in.size(); ++i) x[i] = static_cast<float>(in[i]);
    int oh = 0, ow = 0;
    // the oracle sees the float-rounded operands
    std::vector<double> inf(in.size()), wf(wt.size()), bf(b.size());
    for (std::size_t i = 0; i < in.size(); ++i) inf[i] = x[i];
    for (std::size_t i = 0; i < wt.size(); ++i) wf[i] = l.weights[i];
    for (std::size_t i = 0; i < b.size(); ++i) bf[i] = l.bias[i];
    const auto ref = oracle::conv(inf, c_in, h, w, wf, bf, c_out, k, s, oh, ow);
    const auto got = conv2d(x, l);
    ASSERT_EQ(got.shape(), (Shape{c_out, oh, ow}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-5);
  }
}

TEST(Conv2dTest, SpecExampleTwoByFiveStrideTwo) {
  std::mt19937_64 rng(3);
  auto l = Layer<double>::conv(2, 3, 3, 2);
  const auto in = oracle::random_vector(50, rng), wt = oracle::random_vector(54, rng), b = oracle::random_vector(3, rng);
  l.weights = tensor_of(Shape{3, 2, 3, 3}, wt);
  l.bias = tensor_of(Shape{3}, b);
  int oh = 0, ow = 0;
  const auto ref = oracle::conv(in, 2, 5, 5, wt, b, 3, 3, 2, oh, ow);
  const auto got = conv2d(tensor_of(Shape{2, 5, 5}, in), l);
  ASSERT_EQ(oh, 2);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-6);
}

TEST(Conv2dTest, ChannelMismatchIsShapeError) {
  auto l = Layer<float>::conv(2, 1, 3, 1);
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [&] { conv2d(Tensor<float>(Shape{3, 5, 5}), l); }));
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [&] { conv2d(Tensor<float>(Shape{2, 2, 2}), l); }));
}

TEST(Conv2dBackwardTest, ZeroGradient) {
  std::mt19937_64 rng(2);
  auto l = Layer<double>::conv(2, 3, 3, 1);
  l.weights = tensor_of(Shape{3, 2, 3, 3}, oracle::random_vector(54, rng));
  const auto in = tensor_of(Shape{2, 5, 5}, oracle::random_vector(50, rng));
  const auto gi = conv2d_backward(in, l, Tensor<double>(Shape{3, 3, 3}));
  for (double v : gi.values()) EXPECT_EQ(v, 0.0);
  for (double v : l.weight_grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackwardTest, ScalarChainRule) {
  auto l = Layer<double>::conv(1, 1, 1, 1);
  l.weights[0] = 0.7;
  const auto gi = conv2d_backward(Tensor<double>(Shape{1, 1, 1}, {2.5}), l, Tensor<double>(Shape{1, 1, 1}, {-3.0}));
  EXPECT_EQ(l.weight_grad[0], -7.5);
  EXPECT_EQ(l.bias_grad[0], -3.0);
  EXPECT_DOUBLE_EQ(gi[0], -3.0 * 0.7);
}

TEST(Conv2dBackwardTest, GradOutShapeMismatch) {
  auto l = Layer<double>::conv(1, 1, 3, 1);
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [&] {
    conv2d_backward(Tensor<double>(Shape{1, 5, 5}), l, Tensor<double>(Shape{1, 2, 2}));
  }));
}

TEST(Conv2dBackwardTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int c_in = 2, c_out = 3, k = 3, s = 1 + trial % 2, h = 7, w = 8;
    auto l = Layer<double>::conv(c_in, c_out, k, s);
    l.weights = tensor_of(l.weights.shape(), oracle::random_vector(l.weights.size(), rng));
    l.bias = tensor_of(l.bias.shape(), oracle::random_vector(l.bias.size(), rng));
    const auto x = oracle::random_vector(static_cast<std::size_t>(c_in) * h * w, rng);
    const auto y0 = conv2d(tensor_of(Shape{c_in, h, w}, x), l);
    const auto r = oracle::random_vector(y0.size(), rng);
    auto loss_of_x = [&](const std::vector<double>& xv) {
      const auto y = conv2d(tensor_of(Shape{c_in, h, w}, xv), l);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += r[i] * y[i];
      return acc;
    };
    l.zero_grad();
    const auto gx = conv2d_backward(tensor_of(Shape{c_in, h, w}, x), l, tensor_of(y0.shape(), r));
    EXPECT_LT(oracle::relative_error(as_vector(gx), oracle::numeric_gradient(loss_of_x, x)), 1e-5);
    const auto wt = as_vector(l.weights);
    auto loss_of_w = [&](const std::vector<double>& wv) {
      auto l2 = l;
      l2.weights = tensor_of(l.weights.shape(), wv);
      const auto y = conv2d(tensor_of(Shape{c_in, h, w}, x), l2);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += r[i] * y[i];
      return acc;
    };
    EXPECT_LT(oracle::relative_error(as_vector(l.weight_grad), oracle::numeric_gradient(loss_of_w, wt)), 1e-5);
  }
}

TEST(MaxPoolTest, MaxOfFour) {
  const auto [out, arg] = maxpool(Tensor<double>(Shape{1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], 4.0);
  EXPECT_EQ(arg[0], 3);
}

TEST(MaxPoolTest, ConstantInputTakesFirstIndex) {
  const auto [out, arg] = maxpool(Tensor<double>(Shape{1, 4, 4}, 5.0), 2, 2);
  for (double v : out.values()) EXPECT_EQ(v, 5.0);
  EXPECT_EQ(arg, (std::vector<int>{0, 2, 8, 10}));
}

TEST(MaxPoolTest, MatchesNaiveOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> ch(1, 3), kk(1, 3), ss(1, 3), extra(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = ch(rng), k = kk(rng), s = ss(rng), h = k + extra(rng), w = k + extra(rng);
    // coarse levels force ties
    auto x = oracle::random_vector(static_cast<std::size_t>(c) * h * w, rng);
    for (auto& v : x) v = std::round(v * 3.0);
    std::vector<int> arg_ref;
    const auto ref = oracle::maxpool(x, c, h, w, k, s, &arg_ref);
    const auto [out, arg] = maxpool(tensor_of(Shape{c, h, w}, x), k, s);
    EXPECT_EQ(as_vector(out), ref);
    EXPECT_EQ(arg, arg_ref);
  }
}

TEST(MaxPoolTest, BackwardRoutesToArgmax) {
  const auto in = Tensor<double>(Shape{1, 2, 2}, {1, 7, 3, 4});
  const auto [out, arg] = maxpool(in, 2, 2);
  const auto g = maxpool_backward(Tensor<double>(Shape{1, 1, 1}, {2.0}), arg, in.shape());
  EXPECT_EQ(as_vector(g), (std::vector<double>{0, 2, 0, 0}));
}

TEST(FcTest, IdentityAndBias) {
  auto l = Layer<double>::fully_connected(2, 2);
  l.weights = Tensor<double>(Shape{2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(as_vector(fc(Tensor<double>(Shape{2}, {3, -4}), l)), (std::vector<double>{3, -4}));
  l.weights.fill(0.0);
  l.bias = Tensor<double>(Shape{2}, {1, 2});
  EXPECT_EQ(as_vector(fc(Tensor<double>(Shape{2}, {3, -4}), l)), (std::vector<double>{1, 2}));
}

TEST(FcTest, MatchesMatvecOracle) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int n_in = 1 + trial % 17, n_out = 1 + trial % 5;
    auto l = Layer<double>::fully_connected(n_in, n_out);
    const auto wt = oracle::random_vector(l.weights.size(), rng), b = oracle::random_vector(l.bias.size(), rng);
    const auto x = oracle::random_vector(static_cast<std::size_t>(n_in), rng);
    l.weights = tensor_of(l.weights.shape(), wt);
    l.bias = tensor_of(l.bias.shape(), b);
    const auto ref = oracle::matvec(wt, b, x);
    const auto got = fc(tensor_of(Shape{n_in}, x), l);
    for (int i = 0; i < n_out; ++i) EXPECT_NEAR(got[static_cast<std::size_t>(i)], ref[static_cast<std::size_t>(i)], 1e-6);
  }
  auto l = Layer<double>::fully_connected(3, 2);
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [&] { fc(Tensor<double>(Shape{4}), l); }));
}

TEST(ActivationTest, ReluAndSoftmax) {
  EXPECT_EQ(as_vector(relu(Tensor<double>(Shape{2}, {-1, 2}))), (std::vector<double>{0, 2}));
  const std::vector<double> zero{0.0, 0.0}, big{1000.0, 1000.0};
  EXPECT_EQ(softmax<double>(zero), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(softmax<double>(big), (std::vector<double>{0.5, 0.5}));
}

TEST(ActivationTest, SoftmaxSumsToOneAndIgnoresShift) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = oracle::random_vector(1 + trial % 6, rng, -20.0, 20.0);
    const auto p = softmax<double>(x);
    double sum = 0.0;
    for (double v : p) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-6);
    for (auto& v : x) v += 123.0;
    const auto q = softmax<double>(x);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-6);
  }
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [] { softmax(Tensor<double>(Shape{2, 2})); }));
}

TEST(LossTest, CrossEntropyAnalytic) {
  EXPECT_NEAR(cross_entropy_loss(0.5, 1).loss, std::log(2.0), 1e-12);
  EXPECT_LT(cross_entropy_loss(1.0 - 1e-12, 1).loss, 1e-6);
  EXPECT_TRUE(std::isfinite(cross_entropy_loss(0.0, 1).loss));
  EXPECT_TRUE(std::isfinite(cross_entropy_loss(1.0, 0).loss));
}

TEST(LossTest, CrossEntropyGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = oracle::random_vector(2, rng, -3.0, 3.0);
    const int y = trial % 2;
    auto f = [&](const std::vector<double>& v) { return cross_entropy_loss(softmax<double>(v)[1], y).loss; };
    const auto g = cross_entropy_loss(softmax<double>(z)[1], y).grad;
    EXPECT_LT(oracle::relative_error(g, oracle::numeric_gradient(f, z)), 1e-5);
  }
}

TEST(LossTest, SmoothL1Branches) {
  const std::vector<double> zero{0.0}, half{0.5}, three{3.0};
  auto r = smooth_l1<double>(zero, zero);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad[0], 0.0);
  r = smooth_l1<double>(half, zero);
  EXPECT_EQ(r.loss, 0.125);
  EXPECT_EQ(r.grad[0], 0.5);
  r = smooth_l1<double>(three, zero);
  EXPECT_EQ(r.loss, 2.5);
  EXPECT_EQ(r.grad[0], 1.0);
  const std::vector<double> two{1.0, 2.0};
  EXPECT_TRUE(throws_kind(ErrorKind::shape, [&] { smooth_l1<double>(two, zero); }));
}

TEST(LossTest, SmoothL1ContinuousAtOne) {
  const std::vector<double> t{0.0};
  for (double sign : {1.0, -1.0}) {
    const std::vector<double> below{sign * (1.0 - 1e-12)}, above{sign * (1.0 + 1e-12)};
    const auto l = smooth_l1<double>(below, t), r = smooth_l1<double>(above, t);
    EXPECT_NEAR(l.loss, r.loss, 1e-9);
    EXPECT_NEAR(l.grad[0], r.grad[0], 1e-9);
    EXPECT_NEAR(std::abs(l.grad[0]), 1.0, 1e-9);
  }
}

namespace {

Network<double> scalar_net(double w) {
  std::vector<Layer<double>> layers{Layer<double>::fully_connected(1, 1)};
  layers[0].weights[0] = w;
  return Network<double>(1, 1, std::move(layers), 1);
}

}  // namespace

TEST(SgdTest, ZeroGradNoDecayIsNoOp) {
  auto net = scalar_net(0.3);
  OptimState o;
  o.weight_decay = 0.0;
  sgd_step(net, o);
  EXPECT_EQ(net.layers()[0].weights[0], 0.3);
  EXPECT_EQ(o.iteration, 1);
}

TEST(SgdTest, SingleScalarStep) {
  auto net = scalar_net(1.0);
  net.layers()[0].weight_grad[0] = 1.0;
  OptimState o;
  o.lr = 0.1;
  o.momentum = 0.0;
  o.weight_decay = 0.0;
  sgd_step(net, o);
  EXPECT_DOUBLE_EQ(net.layers()[0].weights[0], 0.9);
}

TEST(SgdTest, TwoStepMomentumClosedForm) {
  auto net = scalar_net(1.0);
  OptimState o;
  o.lr = 0.1;
  o.momentum = 0.9;
  o.weight_decay = 0.0;
  net.layers()[0].weight_grad[0] = 2.0;
  sgd_step(net, o);
  sgd_step(net, o);
  // v1 = -0.2, v2 = 0.9 * v1 - 0.2 = -0.38; w = 1 + v1 + v2
  EXPECT_NEAR(net.layers()[0].weights[0], 1.0 - 0.2 - 0.38, 1e-12);
}

TEST(SgdTest, StepScheduleDropsTenfold) {
  OptimState o;
  o.lr = 1e-3;
  o.lr_drop_iter = 7;
  o.iteration = 6;
  EXPECT_DOUBLE_EQ(o.current_lr(), 1e-3);
  o.iteration = 7;
  EXPECT_DOUBLE_EQ(o.current_lr(), 1e-4);
}

TEST(SgdTest, ZeroRateLeavesWeightsBitwise) {
  NetSpec spec{1, 6, {LayerSpec::conv(2, 3, 1), LayerSpec::relu(), LayerSpec::fc(3)}};
  Network<float> net(spec);
  gaussian_init(net, 0.1, 4);
  const auto before = net;
  OptimState o;
  o.lr = 0.0;
  std::mt19937_64 rng(1);
  for (int step = 0; step < 3; ++step) {
    for (auto& l : net.layers()) {
      if (!l.has_params()) continue;
      for (auto& g : l.weight_grad.values()) g = static_cast<float>(oracle::random_vector(1, rng)[0]);
    }
    sgd_step(net, o);
  }
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    EXPECT_EQ(net.layers()[i].weights.values().size(), before.layers()[i].weights.values().size());
    for (std::size_t j = 0; j < net.layers()[i].weights.size(); ++j) {
      EXPECT_EQ(net.layers()[i].weights[j], before.layers()[i].weights[j]);
    }
  }
}

TEST(SgdTest, InvalidHyperParameters) {
  OptimState o;
  o.momentum = 1.0;
  EXPECT_TRUE(throws_kind(ErrorKind::invalid_argument, [&] { o.validate(); }));
}

TEST(InitTest, DeterministicAndScaled) {
  NetSpec spec{3, 24, {LayerSpec::conv(16, 3, 1), LayerSpec::relu(), LayerSpec::fc(500)}};
  Network<float> a(spec), b(spec);
  gaussian_init(a, 0.01, 42);
  gaussian_init(b, 0.01, 42);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    for (std::size_t j = 0; j < a.layers()[i].weights.size(); ++j) {
      const float w = a.layers()[i].weights[j];
      EXPECT_EQ(w, b.layers()[i].weights[j]);
      sum += w;
      sq += static_cast<double>(w) * w;
      ++n;
    }
    for (float v : a.layers()[i].bias.values()) EXPECT_EQ(v, 0.0f);
  }
  ASSERT_GT(n, 100000u);
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, 0.01, 0.0005);
  gaussian_init(a, 0.0, 42);
  for (const auto& l : a.layers())
    for (float v : l.weights.values()) EXPECT_EQ(v, 0.0f);
}

TEST(NetworkTest, BackwardMatchesFiniteDifferences) {
  NetSpec spec{2, 8, {LayerSpec::conv(3, 3, 1), LayerSpec::relu(), LayerSpec::pool(2, 2), LayerSpec::conv(4, 2, 1),
                      LayerSpec::relu(), LayerSpec::fc(5), LayerSpec::relu(), LayerSpec::fc(3)}};
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Network<double> net(spec);
    gaussian_init(net, 0.5, 100 + trial);
    for (auto& l : net.layers())
      for (auto& b : l.bias.values()) b = oracle::random_vector(1, rng)[0] * 0.1;
    const auto x = oracle::random_vector(2 * 8 * 8, rng);
    const auto r = oracle::random_vector(3, rng);
    auto f = [&](const std::vector<double>& xv) {
      const auto y = net.forward(tensor_of(Shape{2, 8, 8}, xv));
      return r[0] * y[0] + r[1] * y[1] + r[2] * y[2];
    };
    Network<double>::Trace tr;
    net.forward(tensor_of(Shape{2, 8, 8}, x), tr);
    net.zero_grad();
    const auto gx = net.backward(tr, tensor_of(Shape{3}, r));
    EXPECT_LT(oracle::relative_error(as_vector(gx), oracle::numeric_gradient(f, x)), 1e-5);
  }
}

TEST(ModelIoTest, RoundTripAndRejection) {
  CascadeModel m = CascadeModel::fresh(5);
  std::stringstream buf;
  save_model(buf, m);
  const std::string bytes = buf.str();
  std::stringstream in(bytes);
  const CascadeModel back = load_model(in);
  for (Stage s : kStages) {
    const auto& a = m.at(s).layers();
    const auto& b = back.at(s).layers();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].weights.size(), b[i].weights.size());
      for (std::size_t j = 0; j < a[i].weights.size(); ++j) EXPECT_EQ(a[i].weights[j], b[i].weights[j]);
    }
  }
  std::string bad = bytes;
  bad[4] = 9;  // version
  std::stringstream bad_in(bad);
  EXPECT_TRUE(throws_kind(ErrorKind::format, [&] { load_model(bad_in); }));
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_TRUE(throws_kind(ErrorKind::format, [&] { load_model(cut); }));
  std::stringstream magic("XXXX");
  EXPECT_TRUE(throws_kind(ErrorKind::format, [&] { load_model(magic); }));
}
