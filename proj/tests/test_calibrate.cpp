#include <calibless/calibrate.hpp>
#include <calibless/metrics.hpp>
#include <calibless/simulate.hpp>

#include <gtest/gtest.h>

using namespace calibless;

namespace {

ImageVolume random_maps(Dims d, std::uint64_t seed)
{
  Rng rng(seed);
  ImageVolume v(d);
  for (auto &x : v.data()) x = cplx(rng.normal(), rng.normal());
  return v;
}

// Multi-coil k-space of image * constant per-coil weights.
KSpaceVolume constant_coil_kspace(std::vector<cplx> const &w, Index n, std::uint64_t seed)
{
  Rng rng(seed);
  Index const nc = static_cast<Index>(w.size());
  ImageVolume img(Dims{1, nc, n, n});
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      double const rho = rng.uniform(0.5, 1.0);
      for (Index c = 0; c < nc; ++c) img(0, c, y, x) = rho * w[c];
    }
  return fft2c(img);
}

} // namespace

TEST(CalibrationMatrix, HandEnumeratedWindows)
{
  KSpaceVolume acs(Dims{1, 1, 3, 3});
  for (Index i = 0; i < 9; ++i) acs.data()[i] = double(i + 1);
  CalibConfig cfg;
  cfg.kernel = 2;
  auto a = build_calibration_matrix(acs, cfg);
  ASSERT_EQ(a.rows(), 4);
  ASSERT_EQ(a.cols(), 4);
  double const expect[4][4] = {{1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(a(r, c), cplx(expect[r][c], 0.0));
}

TEST(CalibrationMatrix, ShapeAndColumnOrder)
{
  KSpaceVolume acs(Dims{1, 6, 24, 128});
  for (Index i = 0; i < acs.size(); ++i) acs.data()[i] = double(i);
  CalibConfig cfg;
  auto a = build_calibration_matrix(acs, cfg);
  EXPECT_EQ(a.rows(), 19 * 123);
  EXPECT_EQ(a.cols(), 216);
  // Window at (py, px) = (2, 5), coil 4, offset (dy, dx) = (3, 1).
  Index const row = 2 * 123 + 5, col = 4 * 36 + 3 * 6 + 1;
  EXPECT_EQ(a(row, col), acs(0, 4, 5, 6));
}

TEST(CalibrationMatrix, ZeroAndTooSmall)
{
  KSpaceVolume acs(Dims{1, 2, 8, 8});
  auto a = build_calibration_matrix(acs, CalibConfig{});
  EXPECT_EQ(a.cwiseAbs().maxCoeff(), 0.0);
  KSpaceVolume tiny(Dims{1, 2, 5, 8});
  EXPECT_THROW(build_calibration_matrix(tiny, CalibConfig{}), ParameterError);
}

TEST(Espirit, ConstantCoils)
{
  Index const n = 32;
  auto k = constant_coil_kspace({0.6, 0.8}, n, 1);
  auto maps = espirit_maps(extract_acs(k, 24), n, n, CalibConfig{});
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      EXPECT_NEAR(std::abs(maps.maps(0, 0, y, x) - 0.6), 0.0, 1e-6);
      EXPECT_NEAR(std::abs(maps.maps(0, 1, y, x) - 0.8), 0.0, 1e-6);
      EXPECT_NEAR(maps.eigval(0, 0, y, x), 1.0, 1e-6);
    }
}

TEST(Espirit, SingleCoil)
{
  Dims const d{1, 1, 32, 32};
  auto p = make_phantom(d, 3);
  CoilConfig cc;
  cc.ncoils = 1;
  cc.uniform = true;
  auto k = simulate_acquisition(p, synth_coil_sensitivities(cc, d, 0), 0.0, 0);
  auto maps = espirit_maps(extract_acs(k, 24), 32, 32, CalibConfig{});
  for (Index i = 0; i < d.plane(); ++i)
    if (p.volume.data()[i] > 0.0) {
      EXPECT_NEAR(std::abs(maps.maps.data()[i]), 1.0, 1e-8);
      EXPECT_NEAR(maps.eigval.data()[i], 1.0, 1e-3);
    }
}

TEST(Espirit, FourCoilCorrelationWithTruth)
{
  Dims const d{2, 4, 32, 32};
  auto p = make_phantom(d, 11);
  auto coils = synth_coil_sensitivities(CoilConfig{}, d, 7);
  auto k = simulate_acquisition(p, coils, 0.0, 0);
  auto maps = espirit_maps(extract_acs(k, 24), 32, 32, CalibConfig{});
  for (Index s = 0; s < d.slices; ++s) {
    std::vector<std::uint8_t> support(static_cast<std::size_t>(d.plane()));
    for (Index i = 0; i < d.plane(); ++i) support[i] = p.volume.plane(s, 0)[i] > 0.0;
    auto const em = magnitude(maps.maps), tm = magnitude(coils.sensitivities);
    for (Index c = 0; c < 4; ++c) EXPECT_GE(pearson(em.plane(s, c), tm.plane(s, c), support), 0.99);
    for (Index i = 0; i < d.plane(); ++i)
      if (support[i]) EXPECT_GE(maps.eigval.plane(s, 0)[i], 0.95);
  }
}

TEST(Espirit, UnitNormBoundedEigvalAndPhaseConvention)
{
  Dims const d{1, 4, 32, 32};
  auto p = make_phantom(d, 2);
  auto k = simulate_acquisition(p, synth_coil_sensitivities(CoilConfig{}, d, 3), 0.01, 4);
  auto maps = espirit_maps(extract_acs(k, 24), 32, 32, CalibConfig{});
  Index const ref = reference_channel(maps.maps);
  for (Index y = 0; y < 32; ++y)
    for (Index x = 0; x < 32; ++x) {
      double const ev = maps.eigval(0, 0, y, x);
      EXPECT_GE(ev, 0.0);
      EXPECT_LE(ev, 1.0 + 1e-6);
      double n2 = 0.0;
      for (Index c = 0; c < 4; ++c) n2 += std::norm(maps.maps(0, c, y, x));
      if (ev > 0.0) EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-8);
      EXPECT_EQ(maps.maps(0, ref, y, x).imag(), 0.0);
      EXPECT_GE(maps.maps(0, ref, y, x).real(), 0.0);
    }
}

TEST(Espirit, ScaleInvariant)
{
  Dims const d{1, 4, 32, 32};
  auto p = make_phantom(d, 5);
  auto k = simulate_acquisition(p, synth_coil_sensitivities(CoilConfig{}, d, 3), 0.0, 0);
  auto acs = extract_acs(k, 24);
  auto scaled = acs;
  for (auto &v : scaled.data()) v *= cplx(2.0, -3.0);
  auto a = espirit_maps(acs, 32, 32, CalibConfig{});
  auto b = espirit_maps(scaled, 32, 32, CalibConfig{});
  for (Index i = 0; i < a.eigval.size(); ++i)
    if (a.eigval.data()[i] > 0.5)
      for (Index c = 0; c < 4; ++c) EXPECT_LT(std::abs(a.maps.data()[c * 1024 + i] - b.maps.data()[c * 1024 + i]), 1e-8);
}

TEST(Espirit, EigCropZeroesLowEigenvalues)
{
  Dims const d{1, 4, 32, 32};
  auto p = make_phantom(d, 5);
  auto k = simulate_acquisition(p, synth_coil_sensitivities(CoilConfig{}, d, 3), 0.0, 0);
  CalibConfig cfg;
  cfg.eig_crop = 0.9;
  auto m = espirit_maps(extract_acs(k, 24), 32, 32, cfg);
  Index cropped = 0;
  for (Index i = 0; i < 1024; ++i)
    if (m.eigval.data()[i] < 0.9) {
      ++cropped;
      for (Index c = 0; c < 4; ++c) EXPECT_EQ(m.maps.data()[c * 1024 + i], cplx{});
    }
  EXPECT_GT(cropped, 0);
}

TEST(Espirit, ZeroAcsIsCalibrationFailure)
{
  KSpaceVolume acs(Dims{1, 2, 24, 32});
  EXPECT_THROW(espirit_maps(acs, 32, 32, CalibConfig{}), CalibrationError);
  std::vector<Index> empty;
  auto m = espirit_maps(acs, 32, 32, CalibConfig{}, &empty);
  EXPECT_EQ(empty, std::vector<Index>{0});
}

TEST(PhaseNormalization, Example)
{
  CoilMaps m;
  m.maps = ImageVolume(Dims{1, 2, 1, 1});
  m.maps(0, 0, 0, 0) = cplx(0.0, 0.6);
  m.maps(0, 1, 0, 0) = cplx(0.0, 0.8);
  auto out = normalize_map_phase(m);
  EXPECT_NEAR(std::abs(out.maps(0, 0, 0, 0) - 0.6), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(out.maps(0, 1, 0, 0) - 0.8), 0.0, 1e-15);
}

TEST(PhaseNormalization, IdempotentAndModulusPreserving)
{
  CoilMaps m;
  m.maps = random_maps(Dims{2, 3, 6, 5}, 17);
  auto once = normalize_map_phase(m);
  auto twice = normalize_map_phase(once);
  for (Index i = 0; i < m.maps.size(); ++i) {
    EXPECT_LT(std::abs(once.maps.data()[i] - twice.maps.data()[i]), 1e-15);
    EXPECT_NEAR(std::abs(once.maps.data()[i]), std::abs(m.maps.data()[i]), 1e-14);
  }
}

TEST(Compression, ZeroChannel)
{
  Rng rng(4);
  KSpaceVolume k(Dims{2, 2, 8, 8});
  for (Index s = 0; s < 2; ++s)
    for (auto &v : k.plane(s, 0)) v = cplx(rng.normal(), rng.normal());
  auto res = coil_compress(k, 1);
  EXPECT_NEAR(res.retained_energy, 1.0, 1e-12);
  cplx const phase = res.kspace(0, 0, 0, 0) / k(0, 0, 0, 0);
  EXPECT_NEAR(std::abs(phase), 1.0, 1e-12);
  for (Index s = 0; s < 2; ++s)
    for (Index i = 0; i < 64; ++i) EXPECT_LT(std::abs(res.kspace.plane(s, 0)[i] - phase * k.plane(s, 0)[i]), 1e-12);
}

TEST(Compression, RetainedEnergyMatchesSvd)
{
  Rng rng(8);
  Dims const d{3, 5, 6, 4};
  KSpaceVolume k(d);
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c)
      for (auto &v : k.plane(s, c)) v = cplx(rng.normal(), rng.normal()) * double(c + 1);
  // Samples x channels data matrix across all slices.
  Eigen::MatrixXcd a(d.slices * d.plane(), d.channels);
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c)
      for (Index i = 0; i < d.plane(); ++i) a(s * d.plane() + i, c) = k.plane(s, c)[i];
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(a);
  auto const &sv = svd.singularValues();
  double const total = sv.squaredNorm();
  for (Index t = 1; t <= d.channels; ++t) {
    auto res = coil_compress(k, t);
    EXPECT_NEAR(res.retained_energy, sv.head(t).squaredNorm() / total, 1e-12);
    EXPECT_NEAR(squared_norm(res.kspace) / squared_norm(k), res.retained_energy, 1e-10);
  }
}

TEST(Compression, FullTargetSpansSameSpace)
{
  Rng rng(9);
  KSpaceVolume k(Dims{1, 3, 4, 4});
  for (auto &v : k.data()) v = cplx(rng.normal(), rng.normal());
  auto res = coil_compress(k, 3);
  EXPECT_NEAR(res.retained_energy, 1.0, 1e-12);
  // Undo the unitary combination.
  for (Index i = 0; i < 16; ++i)
    for (Index c = 0; c < 3; ++c) {
      cplx back{};
      for (Index t = 0; t < 3; ++t) back += res.kspace.plane(0, t)[i] * std::conj(res.combination(c, t));
      EXPECT_LT(std::abs(back - k.plane(0, c)[i]), 1e-12);
    }
  EXPECT_THROW(coil_compress(k, 4), ParameterError);
}
