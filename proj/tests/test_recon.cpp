#include <calibless/metrics.hpp>
#include <calibless/recon.hpp>
#include <calibless/simulate.hpp>

#include <gtest/gtest.h>

using namespace calibless;

namespace {

ImageVolume random_volume(Dims d, Rng &rng)
{
  ImageVolume v(d);
  for (auto &x : v.data()) x = cplx(rng.normal(), rng.normal());
  return v;
}

cplx inner(std::vector<cplx> const &a, std::vector<cplx> const &b)
{
  cplx acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

struct Slice
{
  ImageSlice truth;
  ImageVolume maps;
  KSpaceSlice full;
};

// Noise-free single slice with true normalised sensitivities.
Slice phantom_slice(Index n = 32, Index coils = 4, std::uint64_t seed = 1)
{
  Dims const d{1, coils, n, n};
  auto p = make_phantom(d, seed);
  auto c = synth_coil_sensitivities(CoilConfig{}, d, seed + 1);
  Slice s;
  s.truth = ImageSlice(Dims{1, 1, n, n});
  for (Index i = 0; i < n * n; ++i) s.truth.data()[i] = p.volume.data()[i];
  s.maps = c.sensitivities;
  s.full = simulate_acquisition(p, c, 0.0, 0);
  return s;
}

} // namespace

TEST(Sense, AdjointIdentity)
{
  Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    int const R = 1 + trial % 4;
    Index const ny = 8 + 4 * (trial % 3), nx = 6 + 2 * (trial % 5);
    auto maps = random_volume(Dims{1, 3, ny, nx}, rng);
    auto mask = make_uniform_mask(ny, R, trial % R);
    auto x = random_volume(Dims{1, 1, ny, nx}, rng);
    auto y = retag<KSpaceTag>(random_volume(Dims{1, 3, ny, nx}, rng));
    cplx const lhs = inner(sense_forward(x, maps, mask).data(), y.data());
    cplx const rhs = inner(x.data(), sense_adjoint(y, maps, mask).data());
    worst = std::max(worst, std::abs(lhs - rhs) / std::abs(lhs));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Sense, SingleUniformCoilIsFft)
{
  Rng rng(2);
  auto x = random_volume(Dims{1, 1, 8, 8}, rng);
  ImageVolume ones(Dims{1, 1, 8, 8}, cplx(1.0, 0.0));
  EXPECT_EQ(sense_forward(x, ones, make_uniform_mask(8, 1, 0)), fft2c(x));
  auto zero = sense_forward(ImageSlice(Dims{1, 1, 8, 8}), ones, make_uniform_mask(8, 2, 0));
  for (auto v : zero.data()) EXPECT_EQ(v, cplx{});
}

TEST(Sense, DimensionErrors)
{
  ImageVolume maps(Dims{1, 2, 8, 8});
  EXPECT_THROW(sense_forward(ImageSlice(Dims{1, 1, 8, 6}), maps, make_uniform_mask(8, 1, 0)), ParameterError);
  EXPECT_THROW(sense_forward(ImageSlice(Dims{1, 1, 8, 8}), maps, make_uniform_mask(6, 1, 0)), ParameterError);
  EXPECT_THROW(sense_adjoint(KSpaceSlice(Dims{1, 3, 8, 8}), maps, make_uniform_mask(8, 1, 0)), ParameterError);
}

TEST(Cg, FullySampledTrueMaps)
{
  auto s = phantom_slice();
  auto mask = make_uniform_mask(32, 1, 0);
  auto res = sense_cg(s.full, s.maps, mask, ReconConfig{});
  EXPECT_EQ(res.status, SolveStatus::converged);
  EXPECT_LT(nrmse(magnitude(res.image).data(), magnitude(s.truth).data()), 1e-6);
}

// Two coils constant over each aliased half: every folded pixel pair is a 2 x 2 system.
TEST(Cg, MatchesPerPairSolve)
{
  Index const ny = 16, nx = 8;
  cplx const top[2] = {{0.8, 0.0}, {0.6, 0.0}}, bottom[2] = {{0.3, 0.4}, {0.0, -0.9}};
  ImageVolume maps(Dims{1, 2, ny, nx});
  for (Index c = 0; c < 2; ++c)
    for (Index y = 0; y < ny; ++y)
      for (Index x = 0; x < nx; ++x) maps(0, c, y, x) = y < ny / 2 ? top[c] : bottom[c];
  Rng rng(3);
  auto truth = random_volume(Dims{1, 1, ny, nx}, rng);
  for (int off : {0, 1}) {
    auto mask = make_uniform_mask(ny, 2, off);
    auto y = sense_forward(truth, maps, mask);
    ReconConfig cfg;
    cfg.cg_tol = 1e-14;
    auto res = sense_cg(y, maps, mask, cfg);

    // Oracle: aliased coil images z_c(p) = (s_c(p) x(p) + phi s_c(p') x(p')) / 2, p' = p + ny/2.
    auto z = ifft2c(y);
    double const phi = (ny / 2 - off) % 2 ? -1.0 : 1.0;
    double worst = 0.0;
    for (Index py = 0; py < ny / 2; ++py)
      for (Index px = 0; px < nx; ++px) {
        Eigen::Matrix2cd a;
        Eigen::Vector2cd b;
        for (Index c = 0; c < 2; ++c) {
          a(c, 0) = 0.5 * maps(0, c, py, px);
          a(c, 1) = 0.5 * phi * maps(0, c, py + ny / 2, px);
          b(c) = z(0, c, py, px);
        }
        Eigen::Vector2cd const sol = a.fullPivLu().solve(b);
        worst = std::max({worst, std::abs(sol(0) - res.image(0, 0, py, px)), std::abs(sol(1) - res.image(0, 0, py + ny / 2, px))});
        worst = std::max(worst, std::abs(sol(0) - truth(0, 0, py, px)));
      }
    EXPECT_LT(worst, 1e-8) << "offset " << off;
  }
}

TEST(Cg, ResidualMonotone)
{
  auto s = phantom_slice(32, 4, 5);
  auto mask = make_uniform_mask(32, 3, 0);
  ReconConfig cfg;
  cfg.cg_tol = 1e-12;
  cfg.cg_max_iters = 30;
  auto res = sense_cg(apply_mask(s.full, mask), s.maps, mask, cfg);
  ASSERT_GE(res.data_residuals.size(), 5u);
  ASSERT_EQ(res.data_residuals.size(), res.residuals.size());
  for (std::size_t i = 1; i < res.data_residuals.size(); ++i)
    EXPECT_LE(res.data_residuals[i], res.data_residuals[i - 1] * (1 + 1e-12));
  EXPECT_LT(res.residuals.back(), 1e-3);
}

TEST(Cg, ReportsNonConvergence)
{
  auto s = phantom_slice(32, 4, 5);
  auto mask = make_uniform_mask(32, 4, 0);
  ReconConfig cfg;
  cfg.cg_tol = 1e-15;
  cfg.cg_max_iters = 2;
  auto res = sense_cg(apply_mask(s.full, mask), s.maps, mask, cfg);
  EXPECT_EQ(res.status, SolveStatus::max_iterations);
  EXPECT_EQ(res.iterations, 2);
  EXPECT_GT(res.residuals.back(), 0.0);
}

TEST(SoftThreshold, Examples)
{
  auto v = soft_threshold(cplx(3.0, 4.0), 2.0);
  EXPECT_NEAR(v.real(), 1.8, 1e-15);
  EXPECT_NEAR(v.imag(), 2.4, 1e-15);
  EXPECT_EQ(soft_threshold(cplx(3.0, -4.0), 0.0), cplx(3.0, -4.0));
  EXPECT_EQ(soft_threshold(cplx(0.3, 0.4), 0.5), cplx{});
  EXPECT_EQ(soft_threshold(cplx{}, 0.0), cplx{});
  std::vector<cplx> xs{{1, 1}};
  EXPECT_THROW(soft_threshold(xs, -1.0), ParameterError);
}

TEST(SoftThreshold, NonExpansive)
{
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    cplx const a(rng.normal(), rng.normal()), b(rng.normal(), rng.normal());
    double const t = rng.uniform(0.0, 2.0);
    EXPECT_LE(std::abs(soft_threshold(a, t) - soft_threshold(b, t)), std::abs(a - b) + 1e-15);
  }
}

TEST(Wavelet, RoundTripAndNorm)
{
  Rng rng(8);
  auto img = random_volume(Dims{1, 1, 16, 16}, rng);
  for (int lv : {0, 1, 2, 4}) {
    auto w = wavelet_fwd(img.data(), 16, 16, lv);
    auto back = wavelet_inv(w, 16, 16, lv);
    double err = 0.0, nw = 0.0, ni = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      err = std::max(err, std::abs(back[i] - img.data()[i]));
      nw += std::norm(w[i]);
      ni += std::norm(img.data()[i]);
    }
    EXPECT_LT(err, 1e-12);
    EXPECT_NEAR(std::sqrt(nw), std::sqrt(ni), 1e-12 * std::sqrt(ni));
  }
}

TEST(Wavelet, ConstantImageHasNoDetail)
{
  std::vector<cplx> img(16 * 8, cplx(2.0, -1.0));
  auto w = wavelet_fwd(img, 16, 8, 3);
  // Approximation band after 3 levels is the top-left 2 x 1 block.
  for (Index y = 0; y < 16; ++y)
    for (Index x = 0; x < 8; ++x)
      if (!(y < 2 && x < 1)) EXPECT_LT(std::abs(w[y * 8 + x]), 1e-14) << y << "," << x;
  EXPECT_NEAR(std::abs(w[0]), std::abs(cplx(2.0, -1.0)) * 8.0, 1e-12);
}

TEST(Wavelet, IndivisibleDims)
{
  std::vector<cplx> img(12 * 12);
  EXPECT_THROW(wavelet_fwd(img, 12, 12, 3), ParameterError);
  EXPECT_THROW(wavelet_inv(img, 12, 12, 3), ParameterError);
}

TEST(Fista, ZeroWeightFullSamplingMatchesCg)
{
  auto s = phantom_slice(32, 4, 9);
  // Scale the maps non-uniformly so A^H A is not the identity.
  for (Index c = 0; c < 4; ++c)
    for (Index i = 0; i < 1024; ++i) s.maps.plane(0, c)[i] *= 0.5 + double(i % 32) / 32.0;
  auto mask = make_uniform_mask(32, 1, 0);
  auto y = sense_forward(s.truth, s.maps, mask);
  ReconConfig cfg;
  cfg.reg_weight = 0.0;
  cfg.fista_iters = 300;
  cfg.cg_tol = 1e-12;
  auto f = l1_espirit(y, s.maps, mask, cfg);
  auto c = sense_cg(y, s.maps, mask, cfg);
  double worst = 0.0;
  for (Index i = 0; i < 1024; ++i) worst = std::max(worst, std::abs(f.image.data()[i] - c.image.data()[i]));
  EXPECT_LT(worst, 1e-6);
}

TEST(Fista, ObjectiveMonotoneAndLogged)
{
  Dims const d{1, 4, 32, 32};
  auto p = make_phantom(d, 3);
  auto coils = synth_coil_sensitivities(CoilConfig{}, d, 4);
  auto k = simulate_acquisition(p, coils, 0.01, 5);
  auto mask = make_uniform_mask(32, 4, 0);
  ReconConfig cfg;
  auto res = l1_espirit(apply_mask(k, mask), coils.sensitivities, mask, cfg);
  ASSERT_EQ(res.objective.size(), std::size_t(cfg.fista_iters + 1));
  EXPECT_GT(res.reg_weight, 0.0);
  EXPECT_GT(res.lipschitz, 0.0);
  for (std::size_t i = 1; i < res.objective.size(); ++i) EXPECT_LE(res.objective[i], res.objective[i - 1] + 1e-9);
}

TEST(Fista, BeatsZeroFillAtR4)
{
  auto s = phantom_slice(32, 4, 12);
  auto mask = make_uniform_mask(32, 4, 0);
  auto y = apply_mask(s.full, mask);
  auto ref = rss_combine(ifft2c(s.full));
  auto zf = rss_combine(ifft2c(y));
  auto res = l1_espirit(y, s.maps, mask, ReconConfig{});
  EXPECT_LE(nrmse(magnitude(res.image).data(), ref.data()), 0.5 * nrmse(zf.data(), ref.data()));
}

TEST(Fista, ZeroOperatorFails)
{
  ImageVolume maps(Dims{1, 2, 8, 8});
  KSpaceSlice y(Dims{1, 2, 8, 8});
  EXPECT_THROW(l1_espirit(y, maps, make_uniform_mask(8, 2, 0), ReconConfig{}), SolverError);
}

TEST(PowerIteration, IdentityNormal)
{
  // Unit-norm maps with full sampling: A^H A = I.
  auto s = phantom_slice(16, 3, 2);
  SenseOperator op(s.maps, make_uniform_mask(16, 1, 0));
  EXPECT_NEAR(power_iteration(op, 30), 1.0, 1e-10);
}

TEST(Volume, PerSliceReconstruction)
{
  Dims const d{2, 4, 16, 16};
  auto p = make_phantom(d, 1);
  auto coils = synth_coil_sensitivities(CoilConfig{}, d, 2);
  auto k = simulate_acquisition(p, coils, 0.0, 0);
  auto mask = make_uniform_mask(16, 1, 0);
  auto vol = reconstruct_volume(k, coils.sensitivities, mask, [](auto const &y, auto const &m, auto const &msk) {
    return sense_cg(y, m, msk, ReconConfig{}).image;
  });
  EXPECT_EQ(vol.dims(), (Dims{2, 1, 16, 16}));
  for (Index i = 0; i < vol.size(); ++i) EXPECT_NEAR(std::abs(vol.data()[i]), p.volume.data()[i], 1e-6);
}

// Maps outside the object are noise-driven; zeroing them by eigenvalue stops SENSE fitting noise there.
TEST(Sense, EigenvalueMaskedMapsBeatUnmaskedAtLowSnr)
{
  Dims const d{2, 4, 32, 32};
  auto p = make_phantom(d, 21);
  auto coils = synth_coil_sensitivities(CoilConfig{}, d, 22);
  auto const clean = rss_combine(ifft2c(simulate_acquisition(p, coils, 0.0, 0)));
  auto const noisy = simulate_acquisition(p, coils, 0.01, 23);
  auto const maps = espirit_maps(extract_acs(noisy, 24), 32, 32, CalibConfig{});
  auto const masked = crop_maps(maps, 0.9);
  auto const mask = make_uniform_mask(32, 3, 0);
  auto const y = apply_mask(noisy, mask);
  for (Index s = 0; s < d.slices; ++s) {
    auto const ref = clean.slice(s);
    double const nu = nrmse(magnitude(sense_cg(y.slice(s), maps.maps.slice(s), mask, ReconConfig{}).image).data(), ref.data());
    double const nm = nrmse(magnitude(sense_cg(y.slice(s), masked.maps.slice(s), mask, ReconConfig{}).image).data(), ref.data());
    EXPECT_LT(nm, nu) << s;
  }
}
