#pragma once

#include "fft.hpp"
#include "geometry.hpp"
#include "random.hpp"

#include <array>
#include <cstdint>
#include <queue>

namespace calibless {

enum class PhantomStyle { ellipses, blobs };

struct PhantomConfig
{
  PhantomStyle style = PhantomStyle::ellipses;
  /// Semi-axes of the outer head ellipse as a fraction of the half field of view.
  double head_scale = 0.8;
  int n_features = 6;
};

/// Real non-negative intensities in [0, 1], channels = 1.
struct Phantom
{
  RealVolume volume;
};

namespace detail {

inline bool support_connected(RealVolume const &v, Index s)
{
  auto const &d = v.dims();
  auto p = v.plane(s, 0);
  std::vector<std::uint8_t> seen(p.size(), 0);
  Index start = -1, total = 0;
  for (Index i = 0; i < d.plane(); ++i)
    if (p[i] > 0.0) {
      ++total;
      if (start < 0) start = i;
    }
  if (total == 0) return false;
  std::queue<Index> q;
  q.push(start);
  seen[start] = 1;
  Index reached = 0;
  while (!q.empty()) {
    Index const i = q.front();
    q.pop();
    ++reached;
    Index const y = i / d.nx, x = i % d.nx;
    std::array<std::pair<Index, Index>, 4> nb{{{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}}};
    for (auto [ny, nx] : nb) {
      if (ny < 0 || ny >= d.ny || nx < 0 || nx >= d.nx) continue;
      Index const j = ny * d.nx + nx;
      if (!seen[j] && p[j] > 0.0) {
        seen[j] = 1;
        q.push(j);
      }
    }
  }
  return reached == total;
}

} // namespace detail

/// Piecewise-smooth head-like phantom. Support is the outer ellipse of every slice; interior
/// features only add intensity, which keeps the support a single connected region.
inline Phantom make_phantom(Dims dims, std::uint64_t seed, PhantomConfig const &cfg = {})
{
  require(dims.ny >= 8 && dims.nx >= 8 && dims.slices >= 1, "make_phantom: in-plane dims must be >= 8");
  require(cfg.n_features >= 0, "make_phantom: n_features must be >= 0");
  dims.channels = 1;
  Rng rng(seed);
  RealVolume vol(dims);

  struct Feature
  {
    double cy, cx, ay, ax, angle, level, dz;
  };
  std::vector<Feature> feats;
  for (int f = 0; f < cfg.n_features; ++f) {
    Feature e;
    e.cy = rng.uniform(-0.45, 0.45);
    e.cx = rng.uniform(-0.45, 0.45);
    e.ay = rng.uniform(0.08, 0.3);
    e.ax = rng.uniform(0.08, 0.3);
    e.angle = rng.uniform(0.0, std::numbers::pi);
    e.level = rng.uniform(0.15, 0.45);
    e.dz = rng.uniform(-0.3, 0.3);
    feats.push_back(e);
  }
  double const base = 0.2 + 0.1 * rng.uniform();

  for (Index s = 0; s < dims.slices; ++s) {
    // Normalised slice position in [-1, 1]; the head narrows away from the central slice.
    double const zs = dims.slices > 1 ? 2.0 * s / (dims.slices - 1) - 1.0 : 0.0;
    double const taper = std::sqrt(std::max(0.0, 1.0 - 0.35 * zs * zs));
    double const ay = cfg.head_scale * 0.95 * taper, ax = cfg.head_scale * 0.8 * taper;
    for (Index y = 0; y < dims.ny; ++y)
      for (Index x = 0; x < dims.nx; ++x) {
        double const py = 2.0 * (y + 0.5) / dims.ny - 1.0;
        double const px = 2.0 * (x + 0.5) / dims.nx - 1.0;
        if (ay <= 0.0 || ax <= 0.0 || (py * py) / (ay * ay) + (px * px) / (ax * ax) > 1.0) continue;
        double val = base;
        double const rim = (py * py) / (ay * ay) + (px * px) / (ax * ax);
        if (rim > 0.8) val += 0.5; // skull-like bright rim
        for (auto const &e : feats) {
          double const cy = e.cy * ay + 0.1 * e.dz * zs, cx = e.cx * ax;
          double const ca = std::cos(e.angle), sa = std::sin(e.angle);
          double const dy = py - cy, dx = px - cx;
          double const u = (ca * dx + sa * dy) / (e.ax * taper), w = (-sa * dx + ca * dy) / (e.ay * taper);
          double const r2 = u * u + w * w;
          if (cfg.style == PhantomStyle::ellipses) {
            if (r2 <= 1.0) val += e.level;
          } else {
            val += e.level * std::exp(-2.0 * r2);
          }
        }
        vol(s, 0, y, x) = std::clamp(val, 0.0, 1.0);
      }
    if (!detail::support_connected(vol, s))
      throw ParameterError("make_phantom: slice " + std::to_string(s) + " has empty or disconnected support");
  }
  return Phantom{std::move(vol)};
}

struct CoilConfig
{
  int ncoils = 4;
  /// Lobe ring radius as a fraction of the in-plane half field of view.
  double ring_radius = 1.2;
  /// Gaussian lobe width as a fraction of the in-plane field of view.
  double smoothness = 0.45;
  /// Bound on the per-pixel finite-difference gradient magnitude of normalised profiles.
  double gradient_bound = 0.25;
  bool uniform = false;
  bool normalize = true;
};

/// Complex sensitivities stored as an image volume (slice, coil, y, x).
struct CoilProfileSet
{
  ImageVolume sensitivities;
  int ncoils() const { return static_cast<int>(sensitivities.dims().channels); }
};

/// Coil model in the coil frame: Gaussian magnitude lobes centred on a ring around the field
/// of view, each carrying a linear plus quadratic phase. Coordinates are centred pixels.
class CoilModel
{
public:
  CoilModel(CoilConfig cfg, Index ny, Index nx, std::uint64_t seed)
      : cfg_(cfg), ny_(ny), nx_(nx)
  {
    require(cfg.ncoils >= 1, "coils: ncoils must be >= 1");
    require(cfg.smoothness > 0.0, "coils: smoothness must be positive");
    require(cfg.ring_radius >= 0.0, "coils: ring radius must be non-negative");
    Rng rng(seed);
    double const half = 0.5 * std::max(ny, nx);
    for (int i = 0; i < cfg.ncoils; ++i) {
      Lobe l;
      double const ang = 2.0 * std::numbers::pi * (i + 0.25 * rng.uniform()) / cfg.ncoils;
      l.cx = cfg.ring_radius * half * std::cos(ang);
      l.cy = cfg.ring_radius * half * std::sin(ang);
      l.cz = (i % 2 ? 1.0 : -1.0) * 0.25 * half;
      l.width = cfg.smoothness * 2.0 * half;
      l.gain = 0.8 + 0.4 * rng.uniform();
      l.phase0 = rng.uniform(-std::numbers::pi, std::numbers::pi);
      l.gx = rng.uniform(-1.0, 1.0) * 0.5 * std::numbers::pi / (2.0 * half);
      l.gy = rng.uniform(-1.0, 1.0) * 0.5 * std::numbers::pi / (2.0 * half);
      l.q = rng.uniform(-1.0, 1.0) * 0.5 * std::numbers::pi / (4.0 * half * half);
      lobes_.push_back(l);
    }
  }

  /// Unnormalised sensitivity of coil i at centred coordinate p.
  cplx raw(int i, Eigen::Vector3d const &p) const
  {
    if (cfg_.uniform) return {1.0, 0.0};
    auto const &l = lobes_[static_cast<std::size_t>(i)];
    double const dx = p.x() - l.cx, dy = p.y() - l.cy, dz = p.z() - l.cz;
    double const mag = l.gain * std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * l.width * l.width));
    double const ph = l.phase0 + l.gx * p.x() + l.gy * p.y() + l.q * (p.x() * p.x() + p.y() * p.y());
    return std::polar(mag, ph);
  }

  CoilConfig const &config() const { return cfg_; }

private:
  struct Lobe
  {
    double cx, cy, cz, width, gain, phase0, gx, gy, q;
  };
  CoilConfig cfg_;
  Index ny_, nx_;
  std::vector<Lobe> lobes_;
};

/// Sample the coil model on an acquired grid whose voxel p sits at tr(p) in the coil frame.
inline CoilProfileSet sample_coil_profiles(CoilModel const &model, Dims dims, RigidTransform const &tr,
                                           double slice_spacing = 1.0)
{
  auto const &cfg = model.config();
  dims.channels = cfg.ncoils;
  ImageVolume sens(dims);
  VoxelGrid const grid{dims.slices, dims.ny, dims.nx, slice_spacing};
  for (Index s = 0; s < dims.slices; ++s)
    for (Index y = 0; y < dims.ny; ++y)
      for (Index x = 0; x < dims.nx; ++x) {
        Eigen::Vector3d const p = tr.apply(grid.to_coord(s, y, x));
        double rss = 0.0;
        for (int c = 0; c < cfg.ncoils; ++c) {
          sens(s, c, y, x) = model.raw(c, p);
          rss += std::norm(sens(s, c, y, x));
        }
        if (cfg.normalize) {
          double const inv = 1.0 / std::sqrt(rss);
          for (int c = 0; c < cfg.ncoils; ++c) sens(s, c, y, x) *= inv;
        }
      }
  return CoilProfileSet{std::move(sens)};
}

inline CoilProfileSet synth_coil_sensitivities(CoilConfig const &cfg, Dims dims, std::uint64_t seed)
{
  return sample_coil_profiles(CoilModel(cfg, dims.ny, dims.nx, seed), dims, RigidTransform{});
}

/// Largest in-plane forward-difference gradient magnitude over all coils and pixels.
inline double max_gradient_magnitude(CoilProfileSet const &coils)
{
  auto const &v = coils.sensitivities;
  auto const &d = v.dims();
  double worst = 0.0;
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c)
      for (Index y = 0; y + 1 < d.ny; ++y)
        for (Index x = 0; x + 1 < d.nx; ++x) {
          double const gy = std::abs(v(s, c, y + 1, x) - v(s, c, y, x));
          double const gx = std::abs(v(s, c, y, x + 1) - v(s, c, y, x));
          worst = std::max(worst, std::hypot(gy, gx));
        }
  return worst;
}

/// k_i = fft2c(phantom * c_i) + sigma * (n_re + i n_im), n_re, n_im ~ N(0, 1) independent.
inline KSpaceVolume simulate_acquisition(Phantom const &phantom, CoilProfileSet const &coils, double noise_sigma,
                                         std::uint64_t seed)
{
  auto const &pd = phantom.volume.dims();
  auto const &cd = coils.sensitivities.dims();
  require(pd.slices == cd.slices && pd.ny == cd.ny && pd.nx == cd.nx,
          "simulate_acquisition: phantom " + pd.str() + " and coils " + cd.str() + " disagree");
  require(noise_sigma >= 0.0, "simulate_acquisition: noise sigma must be >= 0");
  ImageVolume img(cd);
  for (Index s = 0; s < cd.slices; ++s)
    for (Index c = 0; c < cd.channels; ++c)
      for (Index y = 0; y < cd.ny; ++y)
        for (Index x = 0; x < cd.nx; ++x) img(s, c, y, x) = phantom.volume(s, 0, y, x) * coils.sensitivities(s, c, y, x);
  KSpaceVolume k = fft2c(img);
  if (noise_sigma > 0.0) {
    Rng rng(seed);
    for (auto &v : k.data()) {
      double const re = rng.normal();
      double const im = rng.normal();
      v += noise_sigma * cplx(re, im);
    }
  }
  return k;
}

struct Interval
{
  double lo = 0.0;
  double hi = 0.0;
};

struct GeometryRanges
{
  Interval alpha{-10.0, 10.0};
  Interval beta{-10.0, 10.0};
  Interval gamma{-10.0, 10.0};
  Interval m{-8.0, 8.0};
  Interval n{-8.0, 8.0};
  Interval t{-8.0, 8.0};
};

inline Geometry sample_geometry(GeometryRanges const &r, std::uint64_t seed)
{
  Rng rng(seed);
  auto draw = [&](Interval const &iv, char const *name) {
    require(std::isfinite(iv.lo) && std::isfinite(iv.hi), std::string("geometry range ") + name + " not finite");
    require(iv.lo <= iv.hi, std::string("geometry range ") + name + " is inverted");
    double const u = rng.uniform();
    return iv.lo == iv.hi ? iv.lo : iv.lo + (iv.hi - iv.lo) * u;
  };
  Geometry g;
  g.alpha = draw(r.alpha, "alpha");
  g.beta = draw(r.beta, "beta");
  g.gamma = draw(r.gamma, "gamma");
  g.m = draw(r.m, "m");
  g.n = draw(r.n, "n");
  g.t = draw(r.t, "t");
  return g;
}

/// One synthetic acquisition: phantom scanned at a subject-coil geometry.
struct SyntheticScan
{
  Phantom phantom;
  Geometry geometry;
  CoilProfileSet coils;
  KSpaceVolume kspace;
};

struct ScanConfig
{
  Dims dims{4, 4, 32, 32};
  PhantomConfig phantom;
  CoilConfig coils;
  GeometryRanges ranges;
  double noise_sigma = 0.0;
  double slice_spacing = 1.0;
  /// Seed of the coil system; shared by every scan made with the same hardware.
  std::uint64_t coil_seed = 7;
};

/// The coil system is fixed in the reference frame; a scan at geometry g sees the coil
/// sensitivities at g applied to its own voxel positions.
inline SyntheticScan simulate_scan(ScanConfig const &cfg, std::uint64_t seed)
{
  Rng seeds(seed);
  std::uint64_t const phantom_seed = seeds.next(), geom_seed = seeds.next(), noise_seed = seeds.next();
  auto cc = cfg.coils;
  cc.ncoils = static_cast<int>(cfg.dims.channels);
  SyntheticScan scan;
  scan.phantom = make_phantom(cfg.dims, phantom_seed, cfg.phantom);
  scan.geometry = sample_geometry(cfg.ranges, geom_seed);
  CoilModel const model(cc, cfg.dims.ny, cfg.dims.nx, cfg.coil_seed);
  scan.coils = sample_coil_profiles(model, cfg.dims, to_transform(scan.geometry), cfg.slice_spacing);
  scan.kspace = simulate_acquisition(scan.phantom, scan.coils, cfg.noise_sigma, noise_seed);
  return scan;
}

} // namespace calibless
