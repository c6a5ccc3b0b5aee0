#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "relkit/errors.hpp"
#include "relkit/train.hpp"
#include "support.hpp"

using namespace relkit;
using namespace testing;

TEST_CASE("tensor basics") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.at({1, 2}) == 6);
  CHECK(t.sum() == 21);
  CHECK(t.reshaped({3, 2}).at({2, 0}) == 5);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(t.at({2, 0}), std::out_of_range);
  CHECK(shape_to_string({1, 28, 28}) == "(1x28x28)");
  CHECK(l1_norm(Tensor::vector({3, -4})) == 7);
  CHECK(l2_norm(Tensor::vector({3, -4})) == 5);
  CHECK(positive_part(Tensor::vector({-1, 2})) == Tensor::vector({0, 2}));
  CHECK(negative_part(Tensor::vector({-1, 2})) == Tensor::vector({-1, 0}));
  const std::vector<double> cancel{1e16, 1.0, -1e16};
  CHECK(compensated_sum(cancel) == 1.0);
}

TEST_CASE("forward: dense identity") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Network net({2}, {LayerSpec::dense(eye, Tensor({2}))}, 2);
  CHECK(forward(net, Tensor::vector({1, 2})).logits() == Tensor::vector({1, 2}));
}

TEST_CASE("forward: the max network") {
  const Network net = max_network();
  CHECK(forward(net, Tensor::vector({1, 0})).logits()[0] == 1.0);
  CHECK(forward(net, Tensor::vector({1, 1})).logits()[0] == 1.0);
  CHECK(forward(net, Tensor::vector({0.3, 0.7})).logits()[0] == doctest::Approx(0.7));
}

TEST_CASE("forward rejects bad inputs") {
  const Network net = max_network();
  try {
    forward(net, Tensor::vector({1, 2, 3}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.layer() == 0);
  }
  CHECK_THROWS_AS(forward(net, Tensor::vector({NAN, 0})), std::invalid_argument);
}

TEST_CASE("network construction names the offending layer") {
  Tensor w({3, 2});
  try {
    Network({2}, {LayerSpec::relu(), LayerSpec::dense(w, Tensor({2}))}, 2);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(e.layer() == 1);
  }
  CHECK_THROWS_AS(Network({2}, {LayerSpec::dense(Tensor({2, 3}), Tensor({3}))}, 2), ShapeError);
}

TEST_CASE("conv and pool output extents") {
  LayerSpec conv = LayerSpec::conv2d(Tensor({4, 2, 3, 3}), Tensor({4}), 2, 1);
  CHECK(layer_output_shape(conv, {2, 7, 6}, 0) == Shape{4, 4, 3});
  CHECK(layer_output_shape(LayerSpec::max_pool(2), {3, 5, 4}, 0) == Shape{3, 2, 2});
  CHECK(layer_output_shape(LayerSpec::sum_pool(3, 1), {1, 5, 5}, 0) == Shape{1, 3, 3});
  CHECK(layer_output_shape(LayerSpec::flatten(), {2, 3, 4}, 0) == Shape{24});
  CHECK_THROWS_AS(layer_output_shape(conv, {3, 7, 6}, 5), ShapeError);
}

TEST_CASE("conv forward against a direct loop") {
  Rng rng(3);
  const Tensor w = random_tensor({2, 3, 3, 2}, rng), b = random_tensor({2}, rng), x = random_tensor({3, 5, 4}, rng);
  for (std::size_t stride : {1, 2}) {
    for (std::size_t pad : {0, 1}) {
      const LayerSpec conv = LayerSpec::conv2d(w, b, stride, pad);
      const Tensor y = forward_layer(conv, x);
      const Shape s = y.shape();
      for (std::size_t o = 0; o < s[0]; ++o) {
        for (std::size_t r = 0; r < s[1]; ++r) {
          for (std::size_t c = 0; c < s[2]; ++c) {
            double z = b[o];
            for (std::size_t i = 0; i < 3; ++i) {
              for (std::size_t u = 0; u < 3; ++u) {
                for (std::size_t v = 0; v < 2; ++v) {
                  const long rr = static_cast<long>(r * stride + u) - static_cast<long>(pad);
                  const long cc = static_cast<long>(c * stride + v) - static_cast<long>(pad);
                  if (rr < 0 || cc < 0 || rr >= 5 || cc >= 4) continue;
                  z += w.at({o, i, u, v}) * x.at({i, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)});
                }
              }
            }
            CHECK(y.at({o, r, c}) == doctest::Approx(z).epsilon(1e-13));
          }
        }
      }
    }
  }
}

TEST_CASE("max pool ties go to the lowest index and the map reproduces the output") {
  Tensor x({1, 2, 4}, {1, 3, 2, 2, 3, 0, 2, 1});
  std::vector<std::size_t> argmax;
  const Tensor y = forward_layer(LayerSpec::max_pool(2), x, &argmax);
  CHECK(y == Tensor({1, 1, 2}, {3, 2}));
  CHECK(argmax == std::vector<std::size_t>{1, 2});

  Rng rng(11);
  const Tensor big = random_tensor({2, 6, 6}, rng);
  const Tensor pooled = forward_layer(LayerSpec::max_pool(3, 2), big, &argmax);
  for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(pooled[i] == big[argmax[i]]);
}

TEST_CASE("gradient examples") {
  Network linear({2}, {LayerSpec::dense(Tensor({2, 1}, {2, -1}), Tensor({1}))}, 1);
  CHECK(gradient(linear, Tensor::vector({0.3, -5}), 0) == Tensor::vector({2, -1}));
  CHECK(gradient(max_network(), Tensor::vector({1, 0}), 0) == Tensor::vector({1, 0}));
  CHECK_THROWS_AS(gradient(linear, Tensor::vector({0, 0}), 1), std::out_of_range);
}

TEST_CASE("gradient matches finite differences on a random two-layer net") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = random_mlp(rng, 5, {7}, 3, BiasMode::Random);
    const Tensor x = random_tensor({5}, rng);
    for (std::size_t c = 0; c < 3; ++c) {
      const Tensor g = gradient(net, x, c);
      const Tensor fd = numeric_gradient([&](const Tensor& p) { return logit(net, p, c); }, x);
      CHECK(max_relative_difference(g, fd) < 1e-4);
    }
  }
}

TEST_CASE("gradient matches finite differences through conv and every pool") {
  Rng rng(9);
  for (LayerSpec pool : {LayerSpec::sum_pool(2), LayerSpec::avg_pool(2), LayerSpec::max_pool(2)}) {
    const Tensor w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng, -0.1, 0.1);
    const Network net({2, 6, 6},
                      {LayerSpec::conv2d(w, b, 1, 1), LayerSpec::relu(), pool, LayerSpec::flatten(),
                       LayerSpec::dense(random_tensor({27, 2}, rng), Tensor({2}))},
                      2);
    const Tensor x = random_tensor({2, 6, 6}, rng);
    const Tensor g = gradient(net, x, 1);
    const Tensor fd = numeric_gradient([&](const Tensor& p) { return logit(net, p, 1); }, x);
    CHECK(max_relative_difference(g, fd) < 1e-4);
  }
}

TEST_CASE("parameter gradients match finite differences") {
  Rng rng(13);
  const Network net = random_mlp(rng, 3, {4}, 2, BiasMode::Random);
  const Tensor x = random_tensor({3}, rng);
  const ActivationTrace trace = forward(net, x);
  Tensor seed({2});
  seed[1] = 1.0;
  std::vector<ParamGrad> grads;
  backward(net, trace, seed, &grads);
  for (std::size_t li : {0, 2}) {
    const LayerSpec& layer = net.layer(li);
    auto f = [&](const Tensor& w) {
      std::vector<LayerSpec> layers = net.layers();
      layers[li].weights = w;
      return logit(Network(net.input_shape(), layers, 2), x, 1);
    };
    CHECK(max_relative_difference(grads[li].weights, numeric_gradient(f, layer.weights)) < 1e-4);
  }
}

TEST_CASE("log_softmax") {
  const Tensor a = log_softmax(Tensor::vector({0, 0}));
  CHECK(a[0] == doctest::Approx(std::log(0.5)));
  CHECK(a[1] == doctest::Approx(std::log(0.5)));
  const Tensor b = log_softmax(Tensor::vector({1000, 0}));
  CHECK(std::isfinite(b[1]));
  CHECK(std::abs(b[0]) < 1e-300);
  CHECK(b[1] == doctest::Approx(-1000));
  const Tensor c = log_softmax(Tensor::vector({1, 2, 3}));
  const long double norm = std::log(std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(c[i] - static_cast<double>((i + 1) - norm)) < 1e-12);
  const Tensor p = softmax(Tensor::vector({0.3, -2, 5}));
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("positive homogeneity of zero-bias nets") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = random_mlp(rng, 6, {8, 5}, 3, BiasMode::Zero);
    const Tensor x = random_tensor({6}, rng);
    const double t = rng.uniform(0.0, 5.0);
    const Tensor fx = forward(net, x).logits(), ftx = forward(net, scale(x, t)).logits();
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(ftx[c] - t * fx[c]) <= 1e-9 * (std::abs(t * fx[c]) + 1e-12));
  }
}

TEST_CASE("trace replay is bit-exact") {
  Rng rng(19);
  const Network net = build_network({1, 8, 8}, "conv:3:3:1:1,relu,maxpool:2,flatten,dense:2", 2, 4);
  const Tensor x = random_tensor({1, 8, 8}, rng);
  const ActivationTrace a = forward(net, x), b = forward(net, x);
  CHECK(a == b);
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    std::vector<std::size_t> argmax;
    CHECK(forward_layer(net.layer(i), a.activations[i], &argmax) == a.activations[i + 1]);
  }
}

namespace {

Dataset two_blobs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double cx = label ? 2.0 : -2.0;
    d.inputs.push_back(Tensor::vector({cx + 0.5 * rng.normal(), cx + 0.5 * rng.normal()}));
    d.labels.push_back(label);
  }
  return d;
}

}  // namespace

TEST_CASE("train_sgd") {
  const Dataset data = two_blobs(200, 3);
  const Network init = build_network({2}, "dense:2", 2, 5);

  TrainConfig frozen;
  frozen.learning_rate = 0.0;
  CHECK(train_sgd(init, data, frozen) == init);

  TrainConfig config;
  config.epochs = 50;
  const Network trained = train_sgd(init, data, config);
  CHECK(accuracy(trained, data) >= 0.95);
  CHECK(train_sgd(init, data, config) == trained);

  config.nonpositive_bias = true;
  const Network clamped = train_sgd(build_network({2}, "dense:4,relu,dense:2", 2, 5), data, config);
  for (const LayerSpec& l : clamped.layers()) {
    for (double b : l.bias.values()) CHECK(b <= 0.0);
  }

  CHECK_THROWS_AS(train_sgd(init, Dataset{}, config), std::invalid_argument);
  Dataset bad = data;
  bad.labels[0] = 7;
  CHECK_THROWS_AS(train_sgd(init, bad, config), std::invalid_argument);
}

TEST_CASE("build_network parses architectures") {
  const Network net = build_network({1, 12, 12}, "conv:4:5,relu,sumpool:2,flatten,dense:3", 3, 1);
  CHECK(net.shapes()[1] == Shape{4, 8, 8});
  CHECK(net.shapes()[3] == Shape{4, 4, 4});
  CHECK(net.class_count() == 3);
  CHECK_THROWS(build_network({4}, "dense:3", 2, 1));
  CHECK_THROWS(build_network({4}, "bogus:3", 2, 1));
}
