#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "epruner/builtin_architectures.hpp"
#include "epruner/weight_init.hpp"
#include "test_support.hpp"

using namespace epruner;
namespace tk = epruner::testkit;

namespace {

WeightTensor4D random_tensor(std::mt19937_64& rng, Shape4 s) {
  return WeightTensor4D("w", s, tk::uniform_values(rng, s.size()));
}

LayerPlan layer_plan(IndexList filters, IndexList inputs) {
  LayerPlan lp;
  lp.kept_filters = std::move(filters);
  lp.kept_inputs = std::move(inputs);
  return lp;
}

IndexList random_subset(std::mt19937_64& rng, std::size_t n) {
  IndexList v;
  for (std::size_t k = 0; k < n; ++k) {
    if (rng() % 2) v.push_back(k);
  }
  if (v.empty()) v.push_back(rng() % n);
  return v;
}

}  // namespace

TEST(InitExemplar, IdentityPlanIsBitExact) {
  std::mt19937_64 rng(1);
  const auto w = random_tensor(rng, {5, 3, 3, 3});
  const std::optional<std::vector<double>> bias = tk::uniform_values(rng, 5);
  const auto [out, out_bias] = init_exemplar(w, bias, layer_plan({0, 1, 2, 3, 4}, {0, 1, 2}));
  EXPECT_EQ(out.shape(), w.shape());
  EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), w.data().begin()));
  EXPECT_EQ(*out_bias, *bias);
}

TEST(InitExemplar, TwoFilterSlice) {
  // filter 0 = [1 2 | 3 4], filter 1 = [5 6 | 7 8] (two 1x2 input channels)
  const WeightTensor4D w("w", {2, 2, 1, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto [out, bias] = init_exemplar(w, std::vector<double>{0.5, -0.5}, layer_plan({1}, {0}));
  EXPECT_EQ(out.shape(), (Shape4{1, 1, 1, 2}));
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{5, 6}));
  EXPECT_EQ(*bias, std::vector<double>{-0.5});
}

TEST(InitExemplar, OutOfRangeIndexIsValidationError) {
  const WeightTensor4D w("w", {2, 2, 1, 1}, {1, 2, 3, 4});
  EXPECT_THROW(init_exemplar(w, std::nullopt, layer_plan({2}, {0})), ValidationError);
  EXPECT_THROW(init_exemplar(w, std::nullopt, layer_plan({0}, {5})), ValidationError);
}

TEST(InitExemplar, EveryOutputEntryFollowsTheIndexMaps) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape4 s{1 + rng() % 7, 1 + rng() % 5, 1 + rng() % 3, 1 + rng() % 3};
    const auto w = random_tensor(rng, s);
    const auto lp = layer_plan(random_subset(rng, s.out), random_subset(rng, s.in));
    const auto [out, bias] = init_exemplar(w, std::nullopt, lp);
    ASSERT_FALSE(bias.has_value());
    ASSERT_EQ(out.shape(), (Shape4{lp.kept_filters.size(), lp.kept_inputs.size(), s.h, s.w}));
    for (std::size_t o = 0; o < lp.kept_filters.size(); ++o) {
      for (std::size_t c = 0; c < lp.kept_inputs.size(); ++c) {
        for (std::size_t y = 0; y < s.h; ++y) {
          for (std::size_t x = 0; x < s.w; ++x) {
            ASSERT_EQ(out.at(o, c, y, x), w.at(lp.kept_filters[o], lp.kept_inputs[c], y, x));
          }
        }
      }
    }
  }
}

TEST(RandomProjection, SeededAndReproducible) {
  std::mt19937_64 rng(3);
  const auto w = random_tensor(rng, {6, 8, 3, 3});
  const auto lp = layer_plan({0, 2, 5}, {1, 4, 7});
  const auto a = init_random_projection(w, std::nullopt, lp, 99);
  const auto b = init_random_projection(w, std::nullopt, lp, 99);
  const auto c = init_random_projection(w, std::nullopt, lp, 100);
  EXPECT_EQ(a.first.shape(), (Shape4{3, 3, 3, 3}));
  EXPECT_TRUE(std::ranges::equal(a.first.data(), b.first.data()));
  EXPECT_FALSE(std::ranges::equal(a.first.data(), c.first.data()));
  EXPECT_EQ(sparse_projection_matrix(20, 7, 5), sparse_projection_matrix(20, 7, 5));
}

TEST(RandomProjection, BiasIsProjectedAlong) {
  std::mt19937_64 rng(4);
  const auto w = random_tensor(rng, {4, 6, 1, 1});
  const std::optional<std::vector<double>> bias = tk::uniform_values(rng, 4);
  const auto [out, out_bias] = init_random_projection(w, bias, layer_plan({1, 3}, {0, 2}), 7);
  EXPECT_EQ(out.shape(), (Shape4{2, 2, 1, 1}));
  ASSERT_TRUE(out_bias.has_value());
  EXPECT_EQ(out_bias->size(), 2u);
}

TEST(RandomProjection, FallsBackToExemplarWhenNotReducing) {
  std::mt19937_64 rng(5);
  const auto w = random_tensor(rng, {3, 4, 1, 1});
  const auto lp = layer_plan({0, 2}, {0, 1, 2, 3});
  const auto proj = init_random_projection(w, std::nullopt, lp, 1);
  const auto ex = init_exemplar(w, std::nullopt, lp);
  EXPECT_EQ(proj.first.shape(), ex.first.shape());
  EXPECT_TRUE(std::ranges::equal(proj.first.data(), ex.first.data()));
}

TEST(RandomProjection, PreservesSquaredNormsOnAverage) {
  const std::size_t source = 288, target = 96;
  const auto proj = sparse_projection_matrix(source, target, 12345);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  double ratio_sum = 0;
  const int rows = 1000;
  for (int r = 0; r < rows; ++r) {
    std::vector<double> x(source);
    for (double& v : x) v = nd(rng);
    std::vector<double> y(target, 0.0);
    for (std::size_t k = 0; k < source; ++k) {
      for (std::size_t j = 0; j < target; ++j) y[j] += x[k] * proj[k * target + j];
    }
    const double nx = std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
    const double ny = std::inner_product(y.begin(), y.end(), y.begin(), 0.0);
    ratio_sum += ny / nx;
  }
  EXPECT_NEAR(ratio_sum / rows, 1.0, 0.10);
}

TEST(RandomProjection, DensityMatchesSparsity) {
  const std::size_t source = 400, target = 200;
  const auto m = sparse_projection_matrix(source, target, 3);
  const double nonzero = static_cast<double>(std::count_if(m.begin(), m.end(), [](double v) { return v != 0.0; }));
  // s = sqrt(400) = 20, so 1/20 of entries are nonzero.
  EXPECT_NEAR(nonzero / static_cast<double>(m.size()), 1.0 / 20.0, 0.005);
  EXPECT_THROW(sparse_projection_matrix(4, 2, 1, {.sparsity = 0.5}), ParameterError);
}

TEST(SelectL1, Examples) {
  EXPECT_EQ(select_l1(FilterMatrix(3, 1, false, {3, -1, 2}), 2), (IndexList{0, 2}));
  EXPECT_EQ(select_l1(FilterMatrix(3, 2, false, {1, -1, -1, 1, 2, 0}), 1), IndexList{0});
  // Bias column counts toward the norm.
  EXPECT_EQ(select_l1(FilterMatrix(2, 2, true, {1, 0, 0.5, 0.75}), 1), IndexList{1});
  EXPECT_THROW(select_l1(FilterMatrix(1, 1, false, {1}), 2), ParameterError);
}

TEST(SelectL1, MatchesSortOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 20, d = 1 + rng() % 10, keep = 1 + rng() % n;
    // Coarse values so ties occur.
    std::vector<double> v(n * d);
    for (double& x : v) x = static_cast<double>(static_cast<int>(rng() % 5) - 2);
    const FilterMatrix m(n, d, false, v);
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0;
      for (std::size_t k = 0; k < d; ++k) norm += std::abs(v[i * d + k]);
      keyed.push_back({-norm, i});
    }
    std::sort(keyed.begin(), keyed.end());
    IndexList expected;
    for (std::size_t k = 0; k < keep; ++k) expected.push_back(keyed[k].second);
    std::sort(expected.begin(), expected.end());
    ASSERT_EQ(select_l1(m, keep), expected);
  }
}

TEST(InitL1, SlicesTheSelectedFilters) {
  const WeightTensor4D w("w", {3, 2, 1, 1}, {0, 1, 5, 5, 2, 2});
  const auto [out, bias] = init_l1(w, std::nullopt, 2, {1});
  EXPECT_EQ(std::vector<double>(out.data().begin(), out.data().end()), (std::vector<double>{5, 2}));
}

TEST(InitRandom, MomentsMatchFanInScaledGaussian) {
  const Shape4 s{512, 64, 3, 3};  // 294,912 entries
  const auto [w, bias] = init_random(s, true, 11);
  const auto d = w.data();
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double var = 0;
  for (double x : d) var += (x - mean) * (x - mean);
  const double stddev = std::sqrt(var / n);
  const double target = std::sqrt(2.0 / (64 * 9));
  EXPECT_LT(std::abs(mean), 4 * target / std::sqrt(n));
  EXPECT_NEAR(stddev / target, 1.0, 0.02);
  EXPECT_EQ(*bias, std::vector<double>(512, 0.0));
}

TEST(InitRandom, BitReproducible) {
  const auto a = init_random({8, 4, 3, 3}, false, 5);
  const auto b = init_random({8, 4, 3, 3}, false, 5);
  EXPECT_TRUE(std::ranges::equal(a.first.data(), b.first.data()));
  EXPECT_FALSE(std::ranges::equal(a.first.data(), init_random({8, 4, 3, 3}, false, 6).first.data()));
}

TEST(RandomStream, DerivedSeedsDependOnTag) {
  EXPECT_EQ(derive_seed(1, "conv1"), derive_seed(1, "conv1"));
  EXPECT_NE(derive_seed(1, "conv1"), derive_seed(1, "conv2"));
  EXPECT_NE(derive_seed(1, "conv1"), derive_seed(2, "conv1"));
}

TEST(PruneBundle, AllStrategiesEmitPlanShapes) {
  const auto arch = tk::inception_toy();
  const auto bundle = tk::random_bundle(arch, 9);
  const PruningPlan p = plan(arch, bundle, 0.5);
  const ArchitectureGraph pruned_arch = prune_architecture(arch, p);
  for (auto strategy : {InitStrategy::kExemplar, InitStrategy::kRandomProjection, InitStrategy::kL1Norm,
                        InitStrategy::kRandomGaussian}) {
    const ModelBundle out = prune_bundle(arch, bundle, p, {strategy, 3, {}});
    ASSERT_EQ(out.size(), bundle.size());
    EXPECT_TRUE(check_bundle(pruned_arch, out).empty()) << to_string(strategy) << describe(check_bundle(pruned_arch, out));
    for (std::size_t i = 0; i < arch.size(); ++i) {
      const LayerNode& l = arch.layer(i);
      if (l.kind == LayerKind::kConv || l.kind == LayerKind::kFc) {
        EXPECT_EQ(out.find(weight_name(l))->shape, p.layers[i].shape) << l.name;
      }
    }
    EXPECT_EQ(encode_bundle(out), encode_bundle(prune_bundle(arch, bundle, p, {strategy, 3, {}})));
  }
}

TEST(PruneBundle, ExemplarValuesComeFromTheInput) {
  const auto arch = vgg16_cifar();
  const auto bundle = tk::random_bundle(arch, 10);
  std::mt19937_64 rng(11);
  std::map<std::size_t, IndexList> sel;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    if (arch.layer(i).prunable) sel.emplace(i, random_subset(rng, arch.shape(i).channels));
  }
  const PruningPlan p = derive_plan(arch, sel);
  const ModelBundle out = prune_bundle(arch, bundle, p);
  for (const auto& t : out.tensors()) {
    const std::set<float> source(bundle.find(t.name)->data.begin(), bundle.find(t.name)->data.end());
    for (float v : t.data) ASSERT_TRUE(source.count(v)) << t.name;
  }
  // Batchnorm rows follow their conv.
  const auto& bn = *out.find("bn5.running_var");
  const auto& kept = p.find("conv5")->kept_filters;
  ASSERT_EQ(bn.data.size(), kept.size());
  for (std::size_t k = 0; k < kept.size(); ++k) EXPECT_EQ(bn.data[k], bundle.find("bn5.running_var")->data[kept[k]]);
}

TEST(PruneBundle, L1RewiresConsumers) {
  const auto arch = load_architecture(tk::fixture_path("toy_cnn.json"));
  const ModelBundle bundle = read_bundle(tk::fixture_path("toy_cnn.bundle"));
  std::map<std::size_t, IndexList> sel{{*arch.index_of("conv1"), {0, 1}}};
  const PruningPlan p = derive_plan(arch, sel);
  const PruningPlan l1 = l1_plan(arch, bundle, p);
  EXPECT_TRUE(validate(l1, arch).empty());
  const IndexList chosen = select_l1(layer_filter_matrix(arch, bundle, *arch.index_of("conv1")), 2);
  EXPECT_EQ(l1.find("conv1")->kept_filters, chosen);
  EXPECT_EQ(l1.find("conv2")->kept_inputs, chosen);
  const ModelBundle out = prune_bundle(arch, bundle, p, {InitStrategy::kL1Norm, 0, {}});
  EXPECT_EQ(out.find("conv2.weight")->shape, (std::vector<std::size_t>{4, 2, 3, 3}));
}

TEST(PruneBundle, GaussianResetsBatchnorm) {
  const auto arch = resnet_cifar(1, "resnet8");
  const auto bundle = tk::random_bundle(arch, 12);
  const ModelBundle out = prune_bundle(arch, bundle, identity_plan(arch), {InitStrategy::kRandomGaussian, 1, {}});
  for (float v : out.find("bn1.weight")->data) EXPECT_EQ(v, 1.0f);
  for (float v : out.find("bn1.running_mean")->data) EXPECT_EQ(v, 0.0f);
}

TEST(PruneBundle, RejectsInvalidPlan) {
  const auto arch = tk::inception_toy();
  const auto bundle = tk::random_bundle(arch, 13);
  PruningPlan p = identity_plan(arch);
  p.layers[1].kept_filters.pop_back();
  EXPECT_THROW(prune_bundle(arch, bundle, p), ValidationError);
}

TEST(ParseInitStrategy, Names) {
  EXPECT_EQ(parse_init_strategy("exemplar"), InitStrategy::kExemplar);
  EXPECT_EQ(parse_init_strategy("proj"), InitStrategy::kRandomProjection);
  EXPECT_EQ(parse_init_strategy("l1"), InitStrategy::kL1Norm);
  EXPECT_EQ(parse_init_strategy("random"), InitStrategy::kRandomGaussian);
  EXPECT_FALSE(parse_init_strategy("xavier").has_value());
}
