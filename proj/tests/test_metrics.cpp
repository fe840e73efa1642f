#include <calibless/metrics.hpp>
#include <calibless/random.hpp>

#include <gtest/gtest.h>

using namespace calibless;

TEST(Nrmse, Examples)
{
  std::vector<double> ref{3.0, 4.0}, rec{3.0, 0.0}, zero{0.0, 0.0};
  EXPECT_DOUBLE_EQ(nrmse(rec, ref), 0.8);
  EXPECT_EQ(nrmse(ref, ref), 0.0);
  EXPECT_DOUBLE_EQ(nrmse(zero, ref), 1.0);
  EXPECT_THROW(nrmse(ref, zero), ParameterError);
  EXPECT_THROW(nrmse(std::vector<double>{1.0}, ref), ParameterError);
}

TEST(Nrmse, ScaleClosedForm)
{
  Rng rng(1);
  std::vector<double> ref(64);
  for (auto &v : ref) v = rng.uniform(0.0, 2.0);
  for (double s : {0.0, 0.5, 1.0, 1.7, -2.0}) {
    std::vector<double> r(ref);
    for (auto &v : r) v *= s;
    EXPECT_NEAR(nrmse(r, ref), std::abs(s - 1.0), 1e-14);
  }
}

TEST(Psnr, Examples)
{
  std::vector<double> ref{1.0, 0.5, 0.0, 0.25};
  EXPECT_EQ(psnr(ref, ref), kPsnrIdentical);
  EXPECT_TRUE(std::isinf(psnr(ref, ref)));
  std::vector<double> rec(ref);
  for (std::size_t i = 0; i < rec.size(); ++i) rec[i] += i % 2 ? 0.1 : -0.1;
  EXPECT_NEAR(psnr(rec, ref), 20.0, 1e-12);
  EXPECT_THROW(psnr(ref, std::vector<double>(4, 0.0)), ParameterError);
}

TEST(Psnr, DecreasesWithNoise)
{
  Rng rng(2);
  std::vector<double> ref(256), noise(256);
  for (auto &v : ref) v = rng.uniform();
  for (auto &v : noise) v = rng.normal();
  double prev = kPsnrIdentical;
  for (double sigma : {0.01, 0.05, 0.2}) {
    std::vector<double> r(ref);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += sigma * noise[i];
    double const p = psnr(r, ref);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Pearson, Examples)
{
  std::vector<double> a{1, 2, 3}, b{1, 2, 4}, c{5, 3, 1};
  EXPECT_NEAR(pearson(a, b), 0.982, 1e-3);
  EXPECT_NEAR(pearson(a, a), 1.0, 1e-15);
  EXPECT_NEAR(pearson(a, c), -1.0, 1e-15);
  EXPECT_THROW(pearson(a, std::vector<double>{2, 2, 2}), ParameterError);
  std::vector<std::uint8_t> one{1, 0, 0};
  EXPECT_THROW(pearson(a, b, one), ParameterError);
}

TEST(Pearson, SupportAndInvariance)
{
  Rng rng(3);
  std::vector<double> a(100), b(100);
  std::vector<std::uint8_t> sup(100);
  for (std::size_t i = 0; i < 100; ++i) {
    a[i] = rng.normal();
    sup[i] = i % 3 != 0;
    b[i] = sup[i] ? 2.5 * a[i] + 7.0 : rng.normal();
  }
  EXPECT_NEAR(pearson(a, b, sup), 1.0, 1e-12);
  EXPECT_LT(pearson(a, b), 0.99);
}

namespace {
// Direct sliding-window definition, one pixel at a time.
double brute_local(RealVolume const &rec, RealVolume const &ref, Index y0, Index x0, Index w)
{
  auto const &d = ref.dims();
  double peak = 0.0;
  for (auto v : ref.data()) peak = std::max(peak, std::abs(v));
  double acc = 0.0;
  for (Index y = y0 - w / 2; y <= y0 + w / 2; ++y)
    for (Index x = x0 - w / 2; x <= x0 + w / 2; ++x) {
      if (y < 0 || y >= d.ny || x < 0 || x >= d.nx) continue;
      double const e = std::abs(rec(0, 0, y, x)) - std::abs(ref(0, 0, y, x));
      acc += e * e;
    }
  return std::sqrt(acc / double(w * w)) / peak;
}
} // namespace

TEST(LocalError, BruteForceOracle)
{
  Rng rng(4);
  RealVolume a(Dims{1, 1, 16, 16}), b(Dims{1, 1, 16, 16});
  for (auto &v : a.data()) v = rng.normal();
  for (auto &v : b.data()) v = rng.normal();
  for (Index w : {1, 3, 7}) {
    auto m = local_error_map(a, b, w);
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x) EXPECT_NEAR(m(0, 0, y, x), brute_local(a, b, y, x, w), 1e-12);
  }
}

TEST(LocalError, IdenticalAndUniformError)
{
  RealVolume ref(Dims{1, 1, 16, 16}, 2.0);
  auto z = local_error_map(ref, ref);
  for (auto v : z.data()) EXPECT_EQ(v, 0.0);
  RealVolume rec(Dims{1, 1, 16, 16}, 2.3);
  auto m = local_error_map(rec, ref, 7);
  for (Index y = 3; y < 13; ++y)
    for (Index x = 3; x < 13; ++x) EXPECT_NEAR(m(0, 0, y, x), 0.3 / 2.0, 1e-12);
}

TEST(LocalError, Errors)
{
  RealVolume a(Dims{1, 1, 8, 8}, 1.0);
  EXPECT_THROW(local_error_map(a, a, 4), ParameterError);
  EXPECT_THROW(local_error_map(a, a, 9), ParameterError);
  EXPECT_THROW(local_error_map(a, RealVolume(Dims{1, 1, 8, 6}, 1.0)), ParameterError);
}
