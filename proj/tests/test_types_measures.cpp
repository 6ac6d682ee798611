#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "hmf/rng.hpp"
#include "hmf/transport.hpp"
#include "hmf/types.hpp"

using namespace hmf;

namespace {

WeightedCloud cloud1d(std::initializer_list<double> xs) {
  Mat p(static_cast<Eigen::Index>(xs.size()), 1);
  int i = 0;
  for (double x : xs) p(i++, 0) = x;
  return uniform_cloud(p);
}

// deterministic random cloud for property tests
WeightedCloud random_cloud(uint64_t seed, int n, int dim, bool random_weights) {
  RandomStream rs(seed, 0, 0, kStreamAtlas);
  WeightedCloud c;
  c.points.resize(n, dim);
  c.weights.resize(n);
  uint64_t idx = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) c.points(i, j) = 4.0 * rs.uniform(idx++) - 2.0;
    c.weights(i) = random_weights ? 0.1 + rs.uniform(idx++) : 1.0;
  }
  c.weights /= c.weights.sum();
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("types_measures");

TEST_CASE("philox4x32-10 known answers") {
  auto zero = philox4x32({0, 0, 0, 0}, {0, 0});
  CHECK(zero == std::array<uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  auto ones = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                         {0xffffffffu, 0xffffffffu});
  CHECK(ones == std::array<uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  auto pi = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                       {0xa4093822u, 0x299f31d0u});
  CHECK(pi == std::array<uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("random streams: moments, reproducibility, independence") {
  RandomStream s(7, 0, 0, kStreamBrownian);
  const int n = 100000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    double z = s.normal(i);
    sum += z;
    sumsq += z * z;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.02);

  // same address -> same draw; any address offset readable directly
  RandomStream s2(7, 0, 0, kStreamBrownian);
  CHECK(s.normal(12345) == s2.normal(12345));

  // distinct types decorrelated
  RandomStream t0(7, 0, 0, kStreamBrownian), t1(7, 1, 0, kStreamBrownian);
  double dot = 0;
  for (int i = 0; i < 10000; ++i) dot += t0.normal(i) * t1.normal(i);
  CHECK(std::abs(dot / 10000) < 0.05);

  // uniforms land in (0,1)
  RandomStream u(3, 0, 0, kStreamAtlas);
  for (int i = 0; i < 1000; ++i) {
    double x = u.uniform(i);
    CHECK(x > 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("build_type_atlas grid and iid") {
  TypeAtlas g = build_type_atlas({AtlasMode::Grid, 2, 0.0, 1.0, 0});
  CHECK(g.labels == std::vector<double>{0.25, 0.75});
  CHECK(g.weights == std::vector<double>{0.5, 0.5});

  TypeAtlas one = build_type_atlas({AtlasMode::Grid, 1, 0.0, 1.0, 0});
  CHECK(one.labels == std::vector<double>{0.5});
  CHECK(one.weights == std::vector<double>{1.0});

  TypeAtlas iid = build_type_atlas({AtlasMode::Iid, 8, -1.0, 2.0, 42});
  double wsum = 0;
  for (int i = 0; i < iid.size(); ++i) {
    CHECK(iid.labels[i] >= -1.0);
    CHECK(iid.labels[i] <= 2.0);
    if (i) CHECK(iid.labels[i] >= iid.labels[i - 1]);
    wsum += iid.weights[i];
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));

  // same seed reproduces, different seed moves
  TypeAtlas iid2 = build_type_atlas({AtlasMode::Iid, 8, -1.0, 2.0, 42});
  CHECK(iid.same_as(iid2));
  TypeAtlas iid3 = build_type_atlas({AtlasMode::Iid, 8, -1.0, 2.0, 43});
  CHECK(!iid.same_as(iid3));

  CHECK_THROWS_AS(build_type_atlas({AtlasMode::Grid, 0, 0.0, 1.0, 0}), Error);
}

TEST_CASE("wasserstein2 frozen values") {
  // point masses
  CHECK(wasserstein2(cloud1d({0.0}), cloud1d({2.0})) == doctest::Approx(2.0).epsilon(1e-12));
  // identical clouds
  auto c = cloud1d({0.3, -1.2, 5.0});
  CHECK(wasserstein2(c, c) == doctest::Approx(0.0).epsilon(1e-12));
  // {0,2} vs {1,3}: monotone pairing 0->1, 2->3
  CHECK(wasserstein2(cloud1d({0.0, 2.0}), cloud1d({1.0, 3.0})) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // permuted support gives the same distance
  CHECK(wasserstein2(cloud1d({2.0, 0.0}), cloud1d({3.0, 1.0})) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("wasserstein2: quantile and LP routes agree in 1-D") {
  for (uint64_t s = 0; s < 40; ++s) {
    int na = 1 + static_cast<int>(s % 6);
    int nb = 1 + static_cast<int>((s / 2) % 6);
    auto a = random_cloud(1000 + s, na, 1, true);
    auto b = random_cloud(2000 + s, nb, 1, true);
    double q = wasserstein2_quantile(a, b);
    double lp = wasserstein2_lp(a, b);
    CHECK(std::abs(q - lp) < 1e-9);
  }
}

TEST_CASE("wasserstein2 metric axioms in dimension >= 2") {
  int checked = 0;
  for (uint64_t s = 0; s < 60; ++s) {
    int dim = 2 + static_cast<int>(s % 2);
    auto a = random_cloud(10 + s, 2 + s % 5, dim, s % 2 == 0);
    auto b = random_cloud(70 + s, 2 + (s / 2) % 5, dim, true);
    auto c = random_cloud(130 + s, 2 + (s / 3) % 5, dim, false);
    double ab = wasserstein2(a, b), ba = wasserstein2(b, a);
    double bc = wasserstein2(b, c), ac = wasserstein2(a, c);
    CHECK(std::abs(ab - ba) < 1e-9);           // symmetry
    CHECK(ac <= ab + bc + 1e-9);               // triangle
    CHECK(wasserstein2(a, a) < 1e-9);          // identity
    ++checked;
  }
  CHECK(checked == 60);
}

TEST_CASE("wasserstein2 subsampling cap flags the result") {
  auto a = random_cloud(1, 40, 2, false);
  auto b = random_cloud(2, 40, 2, false);
  W2Options capped{16};
  auto r = wasserstein2(a, b, capped);
  CHECK(r.subsampled);
  auto exact = wasserstein2(a, b, W2Options{});
  CHECK(!exact.subsampled);
  // estimator stays in the right ballpark
  CHECK(r.value == doctest::Approx(exact.value).epsilon(0.35));
}

TEST_CASE("wasserstein2_m frozen value and atlas guard") {
  TypeAtlas atlas = build_type_atlas({AtlasMode::Grid, 2, 0.0, 1.0, 0});
  MeasureKernel ka, kb;
  ka.atlas = kb.atlas = atlas;
  ka.dims = kb.dims = ComponentDims{1, 0, 0, 0};
  ka.mask = kb.mask = kMaskX;
  ka.clouds = {cloud1d({0.0}), cloud1d({1.0})};
  kb.clouds = {cloud1d({2.0}), cloud1d({1.0})};
  // sqrt(0.5 * 4 + 0.5 * 0)
  CHECK(wasserstein2_m(ka, kb) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(wasserstein2_m(ka, ka) == doctest::Approx(0.0).epsilon(1e-12));

  MeasureKernel other = kb;
  other.atlas = build_type_atlas({AtlasMode::Grid, 2, 0.0, 2.0, 0});
  CHECK_THROWS_AS(wasserstein2_m(ka, other), Error);
}

TEST_CASE("graphon_aggregate hand values") {
  TypeAtlas atlas = build_type_atlas({AtlasMode::Grid, 2, 0.0, 1.0, 0});
  MeasureKernel k;
  k.atlas = atlas;
  k.dims = ComponentDims{1, 0, 0, 0};
  k.mask = kMaskX;
  k.clouds = {cloud1d({3.0, 3.0}), cloud1d({7.0})};

  auto ident = [](const Vec& p) { return p; };
  // kappa == 0 kills everything
  Vec z = graphon_aggregate(k, [](double, double) { return 0.0; }, ident, 0);
  CHECK(z.norm() == doctest::Approx(0.0));
  // kappa == 1: plain m-average of means = 0.5*3 + 0.5*7
  Vec m = graphon_aggregate(k, [](double, double) { return 1.0; }, ident, 0);
  CHECK(m(0) == doctest::Approx(5.0).epsilon(1e-12));
  // type-0 row (2, 0): 0.5*2*3 + 0.5*0*7 = 3
  auto row20 = [&](double, double v) { return v == atlas.labels[0] ? 2.0 : 0.0; };
  Vec w = graphon_aggregate(k, row20, ident, 0);
  CHECK(w(0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("kernel projection keeps the right columns") {
  TypeAtlas atlas = build_type_atlas({AtlasMode::Grid, 1, 0.0, 1.0, 0});
  MeasureKernel k;
  k.atlas = atlas;
  k.dims = ComponentDims{2, 1, 1, 1};  // layout: x0 x1 | y0 | z00 | a0
  k.mask = kMaskAll;
  Mat pts(2, 5);
  pts << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  k.clouds = {uniform_cloud(pts)};

  auto xonly = project(k, kMaskX);
  CHECK(xonly.point_dim() == 2);
  CHECK(xonly.clouds[0].points(0, 0) == 1);
  CHECK(xonly.clouds[0].points(0, 1) == 2);
  CHECK(xonly.clouds[0].points(1, 1) == 7);

  auto ya = project(k, kMaskY | kMaskA);
  CHECK(ya.point_dim() == 2);
  CHECK(ya.clouds[0].points(0, 0) == 3);
  CHECK(ya.clouds[0].points(0, 1) == 5);

  // projecting a projection onto absent blocks is rejected
  CHECK_THROWS_AS(project(xonly, kMaskY), Error);
}

TEST_CASE("kernel csv/json round trip") {
  TypeAtlas atlas = build_type_atlas({AtlasMode::Grid, 2, 0.0, 1.0, 0});
  MeasureKernel k;
  k.atlas = atlas;
  k.dims = ComponentDims{1, 1, 1, 1};
  k.mask = kMaskAll;
  Mat p0(3, 4), p1(2, 4);
  p0 << 0.25, -1, 2, 3, 0.5, 1.5, -2.5, 0.125, 9, 8, 7, 6;
  p1 << 1e-3, 2e-3, 3e-3, 4e-3, -0.1, 0.2, -0.3, 0.4;
  k.clouds = {uniform_cloud(p0), uniform_cloud(p1)};

  auto dir = std::filesystem::temp_directory_path() / "hmf_kernel_rt";
  std::filesystem::create_directories(dir);
  auto csv = (dir / "k.csv").string();
  auto json = (dir / "k.json").string();
  save_kernel(k, csv, json);
  auto back = load_kernel(csv, json);

  CHECK(back.atlas.same_as(k.atlas));
  CHECK(back.dims == k.dims);
  CHECK(back.mask == k.mask);
  REQUIRE(back.clouds.size() == 2);
  CHECK((back.clouds[0].points - p0).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK((back.clouds[1].points - p1).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  CHECK((back.clouds[0].weights - k.clouds[0].weights).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0));
}

TEST_SUITE_END();
