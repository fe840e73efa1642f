#pragma once

#include "calibrate.hpp"
#include "kspace.hpp"
#include "random.hpp"

#include <algorithm>
#include <functional>

namespace calibless {

/// Single image plane (1 slice, 1 channel) and its multi-coil k-space, both dims {1, C, ny, nx}.
using ImageSlice = ImageVolume;
using KSpaceSlice = KSpaceVolume;

inline cplx dot(std::vector<cplx> const &a, std::vector<cplx> const &b)
{
  cplx acc{};
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

inline double norm2(std::vector<cplx> const &a) { return std::sqrt(std::real(dot(a, a))); }

/// Generalised SENSE encoding for one slice: y_i = mask . fft2c(s_i . x).
class SenseOperator
{
public:
  SenseOperator(ImageVolume maps, SamplingMask mask)
      : maps_(std::move(maps)), mask_(std::move(mask))
  {
    auto const &d = maps_.dims();
    require(d.slices == 1, "SenseOperator: maps must be a single slice");
    require(mask_.ny == d.ny, "SenseOperator: mask has " + std::to_string(mask_.ny) + " lines, maps have " +
                                  std::to_string(d.ny));
    require_finite(maps_, "SenseOperator maps");
  }

  Dims image_dims() const { return Dims{1, 1, maps_.dims().ny, maps_.dims().nx}; }
  Dims kspace_dims() const { return maps_.dims(); }

  KSpaceSlice forward(ImageSlice const &x) const
  {
    auto const &d = maps_.dims();
    require(x.dims() == image_dims(), "sense_forward: image dims " + x.dims().str() + " do not match maps");
    KSpaceSlice y(d);
    std::vector<cplx> coil(static_cast<std::size_t>(d.plane()));
    auto xp = x.plane(0, 0);
    for (Index c = 0; c < d.channels; ++c) {
      auto s = maps_.plane(0, c);
      for (Index i = 0; i < d.plane(); ++i) coil[i] = s[i] * xp[i];
      auto out = y.plane(0, c);
      fft2c_plane(coil, out, d.ny, d.nx);
      for (Index r = 0; r < d.ny; ++r)
        if (!mask_[r]) std::fill_n(out.begin() + r * d.nx, d.nx, cplx{});
    }
    return y;
  }

  ImageSlice adjoint(KSpaceSlice const &y) const
  {
    auto const &d = maps_.dims();
    require(y.dims() == d, "sense_adjoint: k-space dims " + y.dims().str() + " do not match maps " + d.str());
    ImageSlice x(image_dims());
    std::vector<cplx> masked(static_cast<std::size_t>(d.plane())), coil(masked.size());
    auto xp = x.plane(0, 0);
    for (Index c = 0; c < d.channels; ++c) {
      auto in = y.plane(0, c);
      std::copy(in.begin(), in.end(), masked.begin());
      for (Index r = 0; r < d.ny; ++r)
        if (!mask_[r]) std::fill_n(masked.begin() + r * d.nx, d.nx, cplx{});
      ifft2c_plane(masked, coil, d.ny, d.nx);
      auto s = maps_.plane(0, c);
      for (Index i = 0; i < d.plane(); ++i) xp[i] += std::conj(s[i]) * coil[i];
    }
    return x;
  }

  ImageSlice normal(ImageSlice const &x) const { return adjoint(forward(x)); }

  ImageVolume const &maps() const { return maps_; }
  SamplingMask const &mask() const { return mask_; }

private:
  ImageVolume maps_;
  SamplingMask mask_;
};

inline KSpaceSlice sense_forward(ImageSlice const &x, ImageVolume const &maps, SamplingMask const &mask)
{
  return SenseOperator(maps, mask).forward(x);
}

inline ImageSlice sense_adjoint(KSpaceSlice const &y, ImageVolume const &maps, SamplingMask const &mask)
{
  return SenseOperator(maps, mask).adjoint(y);
}

enum class StepMode { power_iteration, fixed };

struct ReconConfig
{
  double cg_tol = 1e-8;
  int cg_max_iters = 200;
  int fista_iters = 100;
  /// L1 weight; negative selects the data-driven default (see default_reg_weight).
  double reg_weight = -1.0;
  int wavelet_levels = 3;
  bool mask_maps = false;
  /// Eigenvalue threshold used when mask_maps is set.
  double map_crop = 0.9;
  StepMode step_mode = StepMode::power_iteration;
  /// Lipschitz constant used when step_mode is fixed.
  double fixed_lipschitz = 1.0;
  int power_iters = 30;

  void validate() const
  {
    require(cg_tol > 0.0 && cg_max_iters > 0 && fista_iters > 0 && power_iters > 0, "recon: tolerances and iteration counts must be positive");
    require(wavelet_levels >= 0, "recon: wavelet_levels must be >= 0");
    require(step_mode == StepMode::power_iteration || fixed_lipschitz > 0.0, "recon: fixed Lipschitz constant must be positive");
  }
};

enum class SolveStatus { converged, max_iterations };

struct CgResult
{
  ImageSlice image;
  SolveStatus status = SolveStatus::converged;
  int iterations = 0;
  /// Relative normal-equation residual ||b - A^H A x|| / ||b|| after each iteration, starting with x = 0.
  /// Drives the stopping rule; not monotone in general.
  std::vector<double> residuals;
  /// Relative data residual ||y - A x|| / ||y|| on the sampled lines; non-increasing.
  std::vector<double> data_residuals;
};

/// Conjugate gradients on the normal equations A^H A x = A^H y, x0 = 0.
inline CgResult sense_cg(KSpaceSlice const &y, ImageVolume const &maps, SamplingMask const &mask, ReconConfig const &cfg)
{
  cfg.validate();
  require_finite(y, "sense_cg");
  SenseOperator const op(maps, mask);
  ImageSlice const b = op.adjoint(y);
  CgResult res;
  res.image = ImageSlice(op.image_dims());
  auto &x = res.image.data();
  std::vector<cplx> r = b.data(), p = r;
  double const bnorm = norm2(b.data());
  res.residuals.push_back(1.0);
  res.data_residuals.push_back(1.0);
  if (bnorm == 0.0) return res;
  // Masked k-space residual y - A x; A already zeroes unsampled lines.
  auto s = y.data();
  for (Index row = 0; row < y.dims().slices * y.dims().channels; ++row)
    for (Index ky = 0; ky < y.dims().ny; ++ky)
      if (!mask[ky])
        for (Index kx = 0; kx < y.dims().nx; ++kx) s[static_cast<std::size_t>((row * y.dims().ny + ky) * y.dims().nx + kx)] = 0.0;
  double const ynorm = norm2(s);
  double rr = std::real(dot(r, r));
  ImageSlice pv(op.image_dims());
  for (int it = 0; it < cfg.cg_max_iters; ++it) {
    pv.data() = p;
    auto const ap = op.forward(pv);
    auto const q = op.adjoint(ap).data();
    double const pq = std::real(dot(p, q));
    if (!(pq > 0.0)) break;
    double const alpha = rr / pq;
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    for (std::size_t i = 0; i < s.size(); ++i) s[i] -= alpha * ap.data()[i];
    res.data_residuals.push_back(norm2(s) / ynorm);
    double const rr_new = std::real(dot(r, r));
    res.iterations = it + 1;
    res.residuals.push_back(std::sqrt(rr_new) / bnorm);
    if (std::sqrt(rr_new) / bnorm <= cfg.cg_tol) return res;
    double const beta = rr_new / rr;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    rr = rr_new;
  }
  res.status = res.residuals.back() <= cfg.cg_tol ? SolveStatus::converged : SolveStatus::max_iterations;
  return res;
}

/// x |x|^-1 max(|x| - t, 0), zero at x = 0.
inline cplx soft_threshold(cplx x, double t)
{
  double const mag = std::abs(x);
  if (mag <= t || mag == 0.0) return {};
  return x * ((mag - t) / mag);
}

inline void soft_threshold(std::span<cplx> xs, double t)
{
  require(t >= 0.0, "soft_threshold: threshold must be >= 0");
  for (auto &x : xs) x = soft_threshold(x, t);
}

namespace detail {

// One orthonormal Haar analysis (or synthesis) step along rows then columns of the top-left
// h x w block of an ny x nx plane.
inline void haar_step(std::span<cplx> img, Index nx, Index h, Index w, bool inverse)
{
  double const r = 1.0 / std::sqrt(2.0);
  std::vector<cplx> tmp(static_cast<std::size_t>(std::max(h, w)));
  auto rows = [&] {
    for (Index y = 0; y < h; ++y) {
      cplx *row = img.data() + y * nx;
      if (!inverse) {
        for (Index i = 0; i < w / 2; ++i) {
          tmp[i] = (row[2 * i] + row[2 * i + 1]) * r;
          tmp[w / 2 + i] = (row[2 * i] - row[2 * i + 1]) * r;
        }
      } else {
        for (Index i = 0; i < w / 2; ++i) {
          tmp[2 * i] = (row[i] + row[w / 2 + i]) * r;
          tmp[2 * i + 1] = (row[i] - row[w / 2 + i]) * r;
        }
      }
      std::copy_n(tmp.begin(), w, row);
    }
  };
  auto cols = [&] {
    for (Index x = 0; x < w; ++x) {
      if (!inverse) {
        for (Index i = 0; i < h / 2; ++i) {
          cplx const a = img[(2 * i) * nx + x], b = img[(2 * i + 1) * nx + x];
          tmp[i] = (a + b) * r;
          tmp[h / 2 + i] = (a - b) * r;
        }
      } else {
        for (Index i = 0; i < h / 2; ++i) {
          cplx const a = img[i * nx + x], b = img[(h / 2 + i) * nx + x];
          tmp[2 * i] = (a + b) * r;
          tmp[2 * i + 1] = (a - b) * r;
        }
      }
      for (Index i = 0; i < h; ++i) img[i * nx + x] = tmp[i];
    }
  };
  if (!inverse) {
    rows();
    cols();
  } else {
    cols();
    rows();
  }
}

} // namespace detail

/// Orthonormal separable 2-D Haar transform, `levels` deep, Mallat layout (approximation
/// band in the top-left corner).
inline std::vector<cplx> wavelet_fwd(std::span<cplx const> image, Index ny, Index nx, int levels)
{
  require(levels >= 0, "wavelet: levels must be >= 0");
  Index const div = Index{1} << levels;
  require(ny % div == 0 && nx % div == 0,
          "wavelet: dims " + std::to_string(ny) + "x" + std::to_string(nx) + " not divisible by 2^" + std::to_string(levels));
  std::vector<cplx> c(image.begin(), image.end());
  for (int l = 0; l < levels; ++l) detail::haar_step(c, nx, ny >> l, nx >> l, false);
  return c;
}

inline std::vector<cplx> wavelet_inv(std::span<cplx const> coeffs, Index ny, Index nx, int levels)
{
  require(levels >= 0, "wavelet: levels must be >= 0");
  Index const div = Index{1} << levels;
  require(ny % div == 0 && nx % div == 0,
          "wavelet: dims " + std::to_string(ny) + "x" + std::to_string(nx) + " not divisible by 2^" + std::to_string(levels));
  std::vector<cplx> img(coeffs.begin(), coeffs.end());
  for (int l = levels - 1; l >= 0; --l) detail::haar_step(img, nx, ny >> l, nx >> l, true);
  return img;
}

/// Largest eigenvalue of A^H A by power iteration from a seeded random start.
inline double power_iteration(SenseOperator const &op, int iters, std::uint64_t seed = 1)
{
  Rng rng(seed);
  ImageSlice v(op.image_dims());
  for (auto &e : v.data()) e = cplx(rng.normal(), rng.normal());
  double n = norm2(v.data());
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    for (auto &e : v.data()) e /= n;
    ImageSlice w = op.normal(v);
    lambda = std::real(dot(v.data(), w.data()));
    n = norm2(w.data());
    if (!(n > 0.0)) throw SolverError("power_iteration: operator maps the start vector to zero");
    v = std::move(w);
  }
  if (!(lambda > 0.0)) throw SolverError("power_iteration: non-positive spectral estimate");
  return lambda;
}

/// 1e-2 of the 99th-percentile wavelet magnitude of the zero-filled (adjoint) image.
inline double default_reg_weight(SenseOperator const &op, KSpaceSlice const &y, int levels)
{
  auto const d = op.image_dims();
  ImageSlice const zf = op.adjoint(y);
  auto const w = wavelet_fwd(zf.data(), d.ny, d.nx, levels);
  std::vector<double> mags(w.size());
  std::transform(w.begin(), w.end(), mags.begin(), [](cplx v) { return std::abs(v); });
  auto const k = static_cast<std::size_t>(0.99 * static_cast<double>(mags.size() - 1));
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
  return 1e-2 * mags[k];
}

struct FistaResult
{
  ImageSlice image;
  /// Objective 0.5||Ax - y||^2 + mu||Wx||_1 of x0 = 0 and of each accepted iterate.
  std::vector<double> objective;
  double reg_weight = 0.0;
  double lipschitz = 0.0;
  int restarts = 0;
};

/// L1-ESPIRiT: FISTA on 0.5||Ax - y||^2 + mu||W x||_1 with orthonormal Haar W. Momentum is
/// reset whenever an iterate would raise the objective, and the step is halved if even the
/// plain proximal-gradient step fails to descend.
inline FistaResult l1_espirit(KSpaceSlice const &y, ImageVolume const &maps, SamplingMask const &mask, ReconConfig const &cfg)
{
  cfg.validate();
  require_finite(y, "l1_espirit");
  SenseOperator const op(maps, mask);
  auto const d = op.image_dims();
  FistaResult res;
  res.lipschitz = cfg.step_mode == StepMode::power_iteration ? power_iteration(op, cfg.power_iters) : cfg.fixed_lipschitz;
  res.reg_weight = cfg.reg_weight >= 0.0 ? cfg.reg_weight : default_reg_weight(op, y, cfg.wavelet_levels);
  double const mu = res.reg_weight;
  int const lv = cfg.wavelet_levels;

  auto objective = [&](ImageSlice const &x) {
    KSpaceSlice r = op.forward(x);
    double fit = 0.0;
    for (Index i = 0; i < r.size(); ++i) fit += std::norm(r.data()[i] - y.data()[i]);
    double l1 = 0.0;
    if (mu > 0.0)
      for (auto c : wavelet_fwd(x.data(), d.ny, d.nx, lv)) l1 += std::abs(c);
    return 0.5 * fit + mu * l1;
  };
  auto grad = [&](ImageSlice const &x) {
    KSpaceSlice r = op.forward(x);
    for (Index i = 0; i < r.size(); ++i) r.data()[i] -= y.data()[i];
    return op.adjoint(r);
  };
  auto prox_step = [&](ImageSlice const &z, double lip) {
    ImageSlice g = grad(z);
    ImageSlice v(d);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = z.data()[i] - g.data()[i] / lip;
    if (mu > 0.0) {
      auto w = wavelet_fwd(v.data(), d.ny, d.nx, lv);
      soft_threshold(w, mu / lip);
      v.data() = wavelet_inv(w, d.ny, d.nx, lv);
    }
    return v;
  };

  ImageSlice x(d), z(d);
  double fx = objective(x);
  res.objective.push_back(fx);
  double t = 1.0, lip = res.lipschitz;
  for (int it = 0; it < cfg.fista_iters; ++it) {
    ImageSlice xn = prox_step(z, lip);
    double fn = objective(xn);
    if (fn > fx) {
      ++res.restarts;
      t = 1.0;
      double const lip0 = lip;
      for (int tries = 0; tries < 20; ++tries) {
        xn = prox_step(x, lip);
        fn = objective(xn);
        if (fn <= fx) break;
        lip *= 2.0;
      }
      if (fn > fx) {
        // Only rounding can defeat a step this small: x is stationary.
        lip = lip0;
        xn = x;
        fn = fx;
      }
    }
    double const tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = xn.data()[i] + ((t - 1.0) / tn) * (xn.data()[i] - x.data()[i]);
    t = tn;
    x = std::move(xn);
    fx = fn;
    res.objective.push_back(fx);
  }
  res.lipschitz = lip;
  res.image = std::move(x);
  return res;
}

/// Per-slice reconstruction of a multi-slice volume; returns one image per slice (channels = 1).
template <class Solver>
ImageVolume reconstruct_volume(KSpaceVolume const &kspace, ImageVolume const &maps, SamplingMask const &mask, Solver &&solve)
{
  auto const &d = kspace.dims();
  require(maps.dims() == d, "reconstruct_volume: maps " + maps.dims().str() + " vs k-space " + d.str());
  ImageVolume out(Dims{d.slices, 1, d.ny, d.nx});
  for (Index s = 0; s < d.slices; ++s) out.set_slice(s, solve(kspace.slice(s), maps.slice(s), mask));
  return out;
}

} // namespace calibless
