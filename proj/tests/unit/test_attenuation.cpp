#include <catch_amalgamated.hpp>

#include <cmath>

#include "oscar/attenuation.hpp"
#include "support.hpp"

using namespace oscar;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using test::code_of;

using V = std::vector<double>;

namespace {

FeatureBundle random_bundle(std::size_t B, std::size_t C, std::size_t H, std::size_t W, std::size_t K, Rng& rng) {
  FeatureBundle fb;
  fb.features = RealArray(Shape{B, C, H, W});
  fb.features.data = test::normal_vector(fb.features.size(), rng);
  fb.weights = RealArray(Shape{K, C});
  fb.weights.data = test::normal_vector(K * C, rng);
  fb.bias = test::normal_vector(K, rng);
  for (std::size_t b = 0; b < B; ++b) fb.image_ids.push_back("s" + std::to_string(b));
  return fb;
}

GroupLabels labels_from(std::vector<int> y, std::vector<int> a) {
  GroupLabels g;
  g.y = std::move(y);
  g.a = std::move(a);
  g.image_ids.resize(g.y.size());
  return g;
}

}  // namespace

TEST_CASE("build_mask worked example", "[mask]") {
  const RealArray w(Shape{1, 2}, V{-1.0, 0.5});
  const auto m = build_mask(w, 1, 2, 1.0, 1.0);
  CHECK_THAT(m.weights.data[0], WithinAbs(2.0, 1e-6));
  CHECK_THAT(m.weights.data[1], WithinAbs(0.5, 1e-6));
  // exact form with eps = 1e-8
  CHECK_THAT(m.weights.data[0], WithinAbs(1.0 + 1.0 / (1.0 + 1e-8), 1e-15));
  CHECK_THAT(m.weights.data[1], WithinAbs(1.0 - 0.5 / (1.0 + 1e-8), 1e-15));
}

TEST_CASE("build_mask identities", "[mask]") {
  Rng rng = make_rng(4);
  RealArray w(Shape{3, 5});
  w.data = test::normal_vector(15, rng);
  for (double v : build_mask(RealArray(Shape{3, 5}, 0.0), 3, 5, 1.5, 0.7).weights.data) CHECK(v == 1.0);
  for (double v : build_mask(w, 3, 5, 0.0, 0.0).weights.data) CHECK(v == 1.0);
  // zero ties take the beta branch; with W = 0 that still gives 1
  const RealArray zero_mixed(Shape{1, 3}, V{0.0, -2.0, 1.0});
  const auto m = build_mask(zero_mixed, 1, 3, 0.0, 1.0);
  CHECK(m.weights.data[0] == 1.0);
  CHECK(m.weights.data[1] == 1.0);
  CHECK(m.weights.data[2] < 1.0);
  CHECK(code_of([&] { build_mask(w, 3, 5, -1.0, 0.0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { build_mask(RealArray(Shape{3}, 1.0), 3, 5, 1.0, 0.0); }) == ErrorCode::BadShape);
  CHECK(code_of([&] { build_mask(w, 0, 5, 1.0, 0.0); }) == ErrorCode::BadShape);
}

TEST_CASE("build_mask is monotone in alpha on negative cells", "[mask][property]") {
  Rng rng = make_rng(9);
  RealArray w(Shape{4, 4});
  w.data = test::normal_vector(16, rng);
  const auto lo = build_mask(w, 4, 4, 0.5, 1.0), hi = build_mask(w, 4, 4, 1.25, 1.0);
  for (std::size_t i = 0; i < 16; ++i) {
    if (w.data[i] < 0) CHECK(hi.weights.data[i] > lo.weights.data[i]);
    else CHECK(hi.weights.data[i] == lo.weights.data[i]);
  }
}

TEST_CASE("bilinear resampling", "[mask]") {
  Rng rng = make_rng(1);
  RealArray src(Shape{3, 4});
  src.data = test::normal_vector(12, rng);
  CHECK(resize_bilinear(src, 3, 4) == src);
  const RealArray two(Shape{1, 2}, V{0.0, 1.0});
  // half-pixel centres: outputs at source x = -0.25, 0.25, 0.75, 1.25 clamp to [0, 1]
  CHECK(resize_bilinear(two, 1, 4).data == V{0.0, 0.25, 0.75, 1.0});
  const RealArray constant(Shape{2, 2}, 3.0);
  for (double v : resize_bilinear(constant, 7, 5).data) CHECK(v == 3.0);
}

TEST_CASE("weighted pooling worked example", "[pool]") {
  FeatureBundle fb;
  fb.features = RealArray(Shape{1, 1, 2, 2}, V{1, 3, 5, 7});
  fb.weights = RealArray(Shape{2, 1}, V{1, -1});
  fb.bias = {0.0, 0.0};
  AttenuationMask m;
  m.weights = RealArray(Shape{2, 2}, V{1, 0, 0, 1});
  const auto logits = weighted_pool_and_classify(fb, m);
  CHECK_THAT(logits.at(0, 0), WithinAbs(8.0 / (2.0 + 1e-8), 1e-15));
  CHECK_THAT(logits.at(0, 0), WithinAbs(4.0, 1e-7));
  CHECK_THAT(logits.at(0, 1), WithinAbs(-4.0, 1e-7));
}

TEST_CASE("an all-ones mask reproduces global average pooling", "[pool][property]") {
  Rng rng = make_rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const auto fb = random_bundle(6, 5, 4, 3, 3, rng);
    const auto mask = build_mask(RealArray(Shape{4, 3}, 0.0), 4, 3, 1.0, 1.0);
    const auto masked = weighted_pool_and_classify(fb, mask);
    const auto plain = pooled_logits(fb);
    for (std::size_t i = 0; i < plain.size(); ++i)
      CHECK(std::abs(masked.data[i] - plain.data[i]) <= 1e-6 * std::max(1.0, std::abs(plain.data[i])));
  }
}

TEST_CASE("a single spatial location ignores the mask value", "[pool]") {
  Rng rng = make_rng(3);
  const auto fb = random_bundle(2, 4, 1, 1, 2, rng);
  AttenuationMask m;
  m.weights = RealArray(Shape{1, 1}, 0.37);
  const auto a = weighted_pool_and_classify(fb, m);
  const auto b = pooled_logits(fb);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK_THAT(a.data[i], WithinRel(b.data[i], 1e-6));
  AttenuationMask wrong;
  wrong.weights = RealArray(Shape{2, 1}, 1.0);
  CHECK(code_of([&] { weighted_pool_and_classify(fb, wrong); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("group metrics", "[metrics]") {
  // groups (y,a): 00 x10, 01 x10, 10 x2, 11 x2
  std::vector<int> y, a, pred;
  auto add = [&](int yy, int aa, int n, int correct) {
    for (int i = 0; i < n; ++i) {
      y.push_back(yy);
      a.push_back(aa);
      pred.push_back(i < correct ? yy : 1 - yy);
    }
  };
  add(0, 0, 10, 9);
  add(0, 1, 10, 8);
  add(1, 0, 2, 1);
  add(1, 1, 2, 2);
  const auto m = group_metrics(pred, labels_from(y, a));
  CHECK(m.group_accuracy == std::array<double, 4>{0.9, 0.8, 0.5, 1.0});
  CHECK(m.worst_group_accuracy == 0.5);
  CHECK_THAT(m.balanced_accuracy, WithinAbs(0.5 * (17.0 / 20 + 3.0 / 4), 1e-15));

  const auto perfect = group_metrics(y, labels_from(y, a));
  CHECK(perfect.worst_group_accuracy == 1.0);
  CHECK(perfect.balanced_accuracy == 1.0);

  // y-recalls 0.6 and 0.8 give balanced accuracy 0.7
  std::vector<int> y2, a2, p2;
  for (int i = 0; i < 10; ++i) {
    y2.push_back(0), a2.push_back(i % 2), p2.push_back(i < 6 ? 0 : 1);
    y2.push_back(1), a2.push_back(i % 2), p2.push_back(i < 8 ? 1 : 0);
  }
  CHECK_THAT(group_metrics(p2, labels_from(y2, a2)).balanced_accuracy, WithinAbs(0.7, 1e-15));

  CHECK(code_of([] { group_metrics(std::vector<int>{0, 1}, labels_from({0, 1}, {0, 0})); }) == ErrorCode::EmptyGroup);
  CHECK(code_of([] { group_metrics(std::vector<int>{0}, labels_from({0, 1}, {0, 0})); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("grid parsing", "[grid]") {
  CHECK(parse_grid_axis("0:2:0.25").size() == 9);
  CHECK(parse_grid_axis("0:2:0.25").back() == 2.0);
  CHECK(parse_grid_axis("0,0.5,1") == V{0, 0.5, 1});
  CHECK(parse_grid_axis("0:1:0.3") == V{0, 0.3, 0.6, 0.8999999999999999});
  CHECK(square_grid({0, 1}).size() == 4);
  CHECK(square_grid({0, 1})[1] == GridPoint{0, 1});
  CHECK(code_of([] { parse_grid_axis("a,b"); }) == ErrorCode::BadConfig);
  CHECK(code_of([] { parse_grid_axis("0:1"); }) == ErrorCode::BadConfig);
  CHECK(code_of([] { parse_grid_axis("1:0:0.5"); }) == ErrorCode::BadConfig);
  CHECK(code_of([] { parse_grid_axis(""); }) == ErrorCode::EmptyGrid);
}

TEST_CASE("stratified folds cover every group in every fold", "[folds]") {
  std::vector<int> y, a;
  for (int i = 0; i < 103; ++i) {
    y.push_back(i % 2);
    a.push_back((i / 2) % 2);
  }
  const auto labels = labels_from(y, a);
  const auto folds = stratified_folds(labels, 4, 5);
  for (std::size_t f = 0; f < 4; ++f)
    for (int g = 0; g < 4; ++g) {
      std::size_t count = 0;
      for (std::size_t i = 0; i < folds.size(); ++i) count += folds[i] == f && 2 * y[i] + a[i] == g;
      CHECK(count >= 6);
    }
  CHECK(stratified_folds(labels, 4, 5) == folds);
  CHECK(code_of([&] { stratified_folds(labels, 1, 5); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("selection rule: constraints and tie-breaks", "[select]") {
  auto gm = [](double wga, double bacc) {
    GroupMetrics m;
    m.worst_group_accuracy = wga;
    m.balanced_accuracy = bacc;
    return m;
  };
  const GroupMetrics base = gm(0.5, 0.80);
  const std::vector<GridPoint> grid{{0, 0}, {1, 0}, {0, 1}, {0.5, 0.5}, {2, 2}};
  SECTION("best worst-group wins, ties go to the smaller alpha + beta then lexicographic") {
    const std::vector<GroupMetrics> t{gm(0.5, 0.80), gm(0.7, 0.80), gm(0.7, 0.80), gm(0.7, 0.80), gm(0.9, 0.70)};
    const auto [idx, ok] = detail::select_point(grid, t, base, {});
    CHECK(ok);
    CHECK(grid[idx] == GridPoint{0, 1});
  }
  SECTION("balanced accuracy must stay within the tolerance of the best") {
    const std::vector<GroupMetrics> t{gm(0.5, 0.80), gm(0.6, 0.794), gm(0.65, 0.79), gm(0.4, 0.90), gm(0.55, 0.896)};
    const auto [idx, ok] = detail::select_point(grid, t, base, {});
    CHECK(ok);
    CHECK(grid[idx] == GridPoint{2, 2});
  }
  SECTION("no feasible point") {
    const std::vector<GroupMetrics> t(grid.size(), gm(0.4, 0.9));
    CHECK_FALSE(detail::select_point(grid, t, base, {}).second);
  }
}

TEST_CASE("grid search with only the identity point returns the baseline", "[search]") {
  Rng rng = make_rng(6);
  const std::size_t B = 80;
  const auto fb = random_bundle(B, 3, 4, 4, 2, rng);
  std::vector<int> y, a;
  for (std::size_t i = 0; i < B; ++i) {
    y.push_back(static_cast<int>(i % 2));
    a.push_back(static_cast<int>((i / 2) % 2));
  }
  RealArray star(Shape{4, 4});
  star.data = test::normal_vector(16, rng);
  const auto rep = grid_search_alpha_beta(fb, labels_from(y, a), star, {GridPoint{0, 0}});
  for (const auto& f : rep.folds) {
    CHECK(f.selected == GridPoint{0, 0});
    CHECK(f.feasible);
    CHECK(f.test_selected.worst_group_accuracy == f.test_baseline.worst_group_accuracy);
  }
  CHECK(rep.mean_test_selected.balanced_accuracy == rep.mean_test_baseline.balanced_accuracy);
  CHECK(code_of([&] { grid_search_alpha_beta(fb, labels_from(y, a), star, {}); }) == ErrorCode::EmptyGrid);
}

TEST_CASE("grid search attenuates a planted shortcut cell", "[search]") {
  // Channel 0 carries the label everywhere, channel 1 carries the attribute
  // at cell (0, 0) only. The head leans on both, so minority groups (y != a)
  // are misclassified. RCS* marks (0, 0) as shortcut-aligned.
  Rng rng = make_rng(10);
  std::normal_distribution<double> noise(0.0, 0.3);
  const std::size_t B = 400, H = 4, W = 4;
  FeatureBundle fb;
  fb.features = RealArray(Shape{B, 2, H, W}, 0.0);
  std::vector<int> y, a;
  for (std::size_t b = 0; b < B; ++b) {
    const int yy = static_cast<int>(b % 2), aa = static_cast<int>((b / 2) % 2);
    y.push_back(yy);
    a.push_back(aa);
    for (std::size_t p = 0; p < H * W; ++p) {
      fb.features.data[(b * 2 + 0) * H * W + p] = (2 * yy - 1) * 0.5 + noise(rng);
      fb.features.data[(b * 2 + 1) * H * W + p] = p == 0 ? (2 * aa - 1) * 16.0 + noise(rng) : noise(rng);
    }
  }
  fb.weights = RealArray(Shape{2, 2}, V{-1, -1, 1, 1});
  fb.bias = {0, 0};
  RealArray star(Shape{H, W}, -0.1);
  star.at(0, 0) = 1.0;
  GridSearchOptions opt;
  opt.n_shuffles = 5;
  opt.seed = 3;
  const auto rep = grid_search_alpha_beta(fb, labels_from(y, a), star, square_grid({0, 0.5, 1}), opt);
  CHECK(rep.mean_test_baseline.worst_group_accuracy < 0.6);
  CHECK(rep.mean_test_selected.worst_group_accuracy > rep.mean_test_baseline.worst_group_accuracy + 0.2);
  CHECK(rep.overall.beta == 1.0);
  REQUIRE(rep.shuffled.has_value());
  CHECK(rep.shuffled->per_shuffle.size() == 5);
  CHECK(rep.shuffled->worst_group_mean < rep.mean_test_selected.worst_group_accuracy);

  opt.workers = 3;
  const auto again = grid_search_alpha_beta(fb, labels_from(y, a), star, square_grid({0, 0.5, 1}), opt);
  CHECK(again.mean_test_selected.worst_group_accuracy == rep.mean_test_selected.worst_group_accuracy);
  CHECK(again.shuffled->worst_group_mean == rep.shuffled->worst_group_mean);
}
