#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "relkit/heatmaptools.hpp"
#include "relkit/train.hpp"
#include "support.hpp"

using namespace relkit;
using namespace testing;

namespace {

// Dyadic values make every summation order exact.
Tensor dyadic(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.values()) v = static_cast<double>(static_cast<int>(rng.below(2001)) - 1000) / 256.0;
  return t;
}

Network small_conv() { return build_network({1, 6, 6}, "conv:2:3,relu,sumpool:2,flatten,dense:2", 2, 3); }

}  // namespace

TEST_CASE("pool_relevance") {
  Rng rng(1);
  const Heatmap h = Heatmap::make(dyadic({3, 28, 28}, rng), 0, "t");
  const auto one = pool_relevance(h, RegionPartition::single(h.scores.size()));
  REQUIRE(one.size() == 1);
  CHECK(one[0] == h.total);

  const auto pixels = pool_relevance(h, RegionPartition::per_pixel({3, 28, 28}));
  CHECK(pixels.size() == 28 * 28);
  CHECK(pixels[5] == h.scores[5] + h.scores[5 + 784] + h.scores[5 + 2 * 784]);
  double s = 0.0;
  for (double v : pixels) s += v;
  CHECK(s == h.total);

  const auto quads = pool_relevance(h, RegionPartition::quadrants({3, 28, 28}));
  CHECK(quads.size() == 4);
  CHECK(quads[0] + quads[1] + quads[2] + quads[3] == h.total);

  const Heatmap g = Heatmap::make(random_tensor({1, 28, 28}, rng), 0, "t");
  const auto q = pool_relevance(g, RegionPartition::quadrants({1, 28, 28}));
  CHECK(std::abs(q[0] + q[1] + q[2] + q[3] - g.total) <= 1e-12 * l1_norm(g.scores));

  RegionPartition broken{std::vector<std::size_t>(10, 0), 1};
  broken.region_of[3] = 4;
  CHECK_THROWS(pool_relevance(Heatmap::make(Tensor({10}), 0, "t"), broken));
  CHECK_THROWS(pool_relevance(Heatmap::make(Tensor({11}), 0, "t"), RegionPartition::single(10)));
}

TEST_CASE("translate") {
  Tensor img({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(translate(img, {1, 0}) == Tensor({1, 3, 3}, {0, 0, 0, 1, 2, 3, 4, 5, 6}));
  CHECK(translate(img, {0, -1}) == Tensor({1, 3, 3}, {2, 3, 0, 5, 6, 0, 8, 9, 0}));
  // shifted out and back: the dropped row is gone
  CHECK(translate(translate(img, {1, 0}), {-1, 0}) == Tensor({1, 3, 3}, {1, 2, 3, 4, 5, 6, 0, 0, 0}));
  CHECK(TranslationSet::within(1).shifts.size() == 9);
  CHECK(TranslationSet::within(1).contains_identity());
}

TEST_CASE("translation_average") {
  const Network net = small_conv();
  Rng rng(2);
  const Tensor x = random_tensor({1, 6, 6}, rng, 0, 1);
  const RuleConfig config = RuleConfig::alpha_beta(net, 1, 0);
  const Explainer lrp = [&](const Network& n, const Tensor& v) { return explain_lrp(n, v, 0, config); };
  CHECK(translation_average(lrp, net, x, TranslationSet::identity()).scores == lrp(net, x).scores);

  TranslationSet no_identity{{{1, 0}}, false};
  CHECK_THROWS(translation_average(lrp, net, x, no_identity));
  no_identity.identity_optional = true;
  CHECK_NOTHROW(translation_average(lrp, net, x, no_identity));

  // shift-invariant explainer on a constant image: every term is R itself, apart from what falls off the frame
  const Explainer uniform = [](const Network&, const Tensor& v) { return Heatmap::make(v, v.sum(), "copy"); };
  const Tensor flat({1, 6, 6}, 0.5);
  const Heatmap avg = translation_average(uniform, net, flat, TranslationSet::within(1));
  CHECK(avg.scores.at({0, 3, 3}) == 0.5);
  CHECK(avg.scores.at({0, 0, 0}) < 0.5);

  // linearity in the explainer
  const Explainer a = [&](const Network& n, const Tensor& v) { return explain_lrp(n, v, 0, config); };
  const Explainer b = [&](const Network& n, const Tensor& v) { return simple_taylor(n, v, 1); };
  const Explainer mix = [&](const Network& n, const Tensor& v) {
    return Heatmap::make(add(scale(a(n, v).scores, 2.0), scale(b(n, v).scores, -0.5)), 0, "mix");
  };
  const TranslationSet set = TranslationSet::within(1);
  const Tensor lhs = translation_average(mix, net, x, set).scores;
  const Tensor rhs = add(scale(translation_average(a, net, x, set).scores, 2.0),
                         scale(translation_average(b, net, x, set).scores, -0.5));
  CHECK(max_relative_difference(lhs, rhs) < 1e-12);
}

TEST_CASE("sliding_window_explain") {
  const Network net = small_conv();
  Rng rng(3);
  const RuleConfig config = RuleConfig::deep_taylor(net, InputDomain::Bounded, Tensor({1, 6, 6}), Tensor({1, 6, 6}, 1.0));

  const Tensor same = random_tensor({1, 6, 6}, rng, 0, 1);
  CHECK(sliding_window_explain(net, same, 3, config, 0).scores == explain_lrp(net, same, 0, config).scores);

  const Tensor wide = random_tensor({1, 6, 12}, rng, 0, 1);
  const Heatmap two = sliding_window_explain(net, wide, 6, config, 0);
  Tensor left({1, 6, 6}), right({1, 6, 6});
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      left.at({0, r, c}) = wide.at({0, r, c});
      right.at({0, r, c}) = wide.at({0, r, c + 6});
    }
  }
  const Heatmap hl = explain_lrp(net, left, 0, config), hr = explain_lrp(net, right, 0, config);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      CHECK(two.scores.at({0, r, c}) == hl.scores.at({0, r, c}));
      CHECK(two.scores.at({0, r, c + 6}) == hr.scores.at({0, r, c}));
    }
  }
  CHECK(two.explained_value == hl.explained_value + hr.explained_value);

  const Tensor big = random_tensor({1, 9, 9}, rng, 0, 1);
  const Heatmap over = sliding_window_explain(net, big, 3, config, 1);
  Tensor expect({1, 9, 9});
  double g = 0.0;
  for (auto [r0, c0] : window_locations({1, 9, 9}, {1, 6, 6}, 3)) {
    Tensor win({1, 6, 6});
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 6; ++c) win.at({0, r, c}) = big.at({0, r0 + r, c0 + c});
    }
    const Heatmap h = explain_lrp(net, win, 1, config);
    g += h.explained_value;
    for (std::size_t r = 0; r < 6; ++r) {
      for (std::size_t c = 0; c < 6; ++c) expect.at({0, r0 + r, c0 + c}) += h.scores.at({0, r, c});
    }
  }
  CHECK(window_locations({1, 9, 9}, {1, 6, 6}, 3).size() == 4);
  CHECK(max_relative_difference(over.scores, expect) < 1e-12);
  CHECK(over.explained_value == doctest::Approx(g).epsilon(1e-14));
  if (over.explained_value > 0.0) CHECK(relative_error(over.total, over.explained_value) < 1e-6);
  CHECK(window_coverage({1, 9, 9}, {1, 6, 6}, 3).at({0, 4, 4}) == 4);
  CHECK(window_coverage({1, 9, 9}, {1, 6, 6}, 3).at({0, 0, 0}) == 1);

  CHECK_THROWS(sliding_window_explain(net, Tensor({1, 5, 9}), 1, config, 0));
}

TEST_CASE("pattern") {
  Rng rng(4);
  const Tensor x = random_tensor({1, 4, 4}, rng, 0, 1);
  PatternOptions rescale{PatternNormalization::Rescale, 99};
  CHECK(pattern(x, Heatmap::make(Tensor({1, 4, 4}, 2.0), 0, "t"), rescale).values == x);
  const Pattern z = pattern(x, Heatmap::make(Tensor({1, 4, 4}), 0, "t"), rescale);
  CHECK(z.degenerate);
  for (double v : z.values.values()) CHECK(v == 0.0);

  Tensor mixed({1, 4, 4});
  mixed[0] = -3;
  mixed[1] = 2;
  mixed[2] = 1;
  const Tensor n = normalize_heatmap(Heatmap::make(mixed, 0, "t"), rescale);
  CHECK(n[0] == 0.0);
  CHECK(n[1] == 1.0);
  CHECK(n[2] == 0.5);

  Tensor ramp({100});
  for (std::size_t i = 0; i < 100; ++i) ramp[i] = static_cast<double>(i + 1);
  const Tensor clipped = normalize_heatmap(Heatmap::make(ramp, 0, "t"), PatternOptions{});
  CHECK(clipped[99] == 1.0);
  CHECK(clipped[98] > 0.99);
  CHECK(clipped[0] > 0.0);
  for (double v : clipped.values()) CHECK((v >= 0.0 && v <= 1.0));
  const Pattern p = pattern(Tensor({100}, 0.8), Heatmap::make(ramp, 0, "t"));
  for (double v : p.values.values()) CHECK((v >= 0.0 && v <= 0.8));
  CHECK_THROWS(pattern(Tensor({3}), Heatmap::make(Tensor({4}), 0, "t")));
}

TEST_CASE("render_heatmap") {
  const Image blank = render_heatmap(Heatmap::make(Tensor({3, 4}), 0, "t"), Colormap::Diverging);
  CHECK(blank.width == 4);
  CHECK(blank.height == 3);
  for (auto b : blank.rgb) CHECK(b == 255);

  Tensor one({3, 4});
  one[5] = 2.0;
  const Image red = render_heatmap(Heatmap::make(one, 0, "t"), Colormap::Diverging);
  CHECK(red.rgb[15] == 255);
  CHECK(red.rgb[16] == 0);
  CHECK(red.rgb[17] == 0);

  Rng rng(5);
  const Tensor r = random_tensor({2, 5, 5}, rng);
  const Image pos = render_heatmap(Heatmap::make(r, 0, "t"), Colormap::Diverging);
  const Image neg = render_heatmap(Heatmap::make(scale(r, -1.0), 0, "t"), Colormap::Diverging);
  REQUIRE(pos.rgb.size() == 75);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(pos.rgb[3 * i] == neg.rgb[3 * i + 2]);
    CHECK(pos.rgb[3 * i + 1] == neg.rgb[3 * i + 1]);
    CHECK(pos.rgb[3 * i + 2] == neg.rgb[3 * i]);
  }
  const Image seq = render_heatmap(Heatmap::make(r, 0, "t"), Colormap::SequentialRed);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(seq.rgb[3 * i] == 255);
    CHECK(seq.rgb[3 * i + 1] == seq.rgb[3 * i + 2]);
  }
  CHECK(render_heatmap(Heatmap::make(r, 0, "t"), Colormap::Diverging).rgb == pos.rgb);
}
