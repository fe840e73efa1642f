#pragma once

#include "kspace.hpp"

#include <Eigen/Dense>

#include <optional>

namespace calibless {

struct CalibConfig
{
  int kernel = 6;
  double sv_rel_threshold = 0.02;
  /// Maps are zeroed where the eigenvalue falls below this; disabled when empty.
  std::optional<double> eig_crop;

  void validate() const
  {
    require(kernel >= 2, "calibration kernel must be >= 2");
    require(sv_rel_threshold > 0.0 && sv_rel_threshold < 1.0, "sv_rel_threshold must be in (0, 1)");
    if (eig_crop) require(*eig_crop >= 0.0 && *eig_crop <= 1.0, "eig_crop must be in [0, 1]");
  }
};

enum class MapRole { reference, transformed, estimated };

inline char const *to_string(MapRole r)
{
  switch (r) {
  case MapRole::reference: return "reference";
  case MapRole::transformed: return "transformed";
  case MapRole::estimated: return "estimated";
  }
  return "?";
}

struct DegeneratePixel
{
  Index slice, y, x;
};

/// One ESPIRiT map set. maps is (slice, channel, y, x); eigval is (slice, 1, y, x).
struct CoilMaps
{
  ImageVolume maps;
  RealVolume eigval;
  MapRole role = MapRole::reference;
  /// Pixels whose two leading eigenvalues tied within 1e-12.
  std::vector<DegeneratePixel> degeneracies;
};

using CMatrix = Eigen::MatrixXcd;

/// Block-Hankel calibration matrix of one slice: one row per sliding k x k window (row-major
/// scan), column index coil * k^2 + dy * k + dx.
inline CMatrix build_calibration_matrix(KSpaceVolume const &acs, Index slice, CalibConfig const &cfg)
{
  cfg.validate();
  auto const &d = acs.dims();
  Index const k = cfg.kernel;
  require(d.ny >= k && d.nx >= k, "calibration: ACS region " + std::to_string(d.ny) + "x" + std::to_string(d.nx) +
                                      " smaller than kernel " + std::to_string(k));
  Index const wy = d.ny - k + 1, wx = d.nx - k + 1;
  CMatrix a(wy * wx, d.channels * k * k);
  for (Index py = 0; py < wy; ++py)
    for (Index px = 0; px < wx; ++px) {
      Index const row = py * wx + px;
      for (Index c = 0; c < d.channels; ++c)
        for (Index dy = 0; dy < k; ++dy)
          for (Index dx = 0; dx < k; ++dx) a(row, c * k * k + dy * k + dx) = acs(slice, c, py + dy, px + dx);
    }
  return a;
}

inline CMatrix build_calibration_matrix(KSpaceVolume const &acs, CalibConfig const &cfg)
{
  return build_calibration_matrix(acs, 0, cfg);
}

/// Channel with the greatest mean map magnitude across the whole volume.
inline Index reference_channel(ImageVolume const &maps)
{
  auto const &d = maps.dims();
  Index best = 0;
  double best_mag = -1.0;
  for (Index c = 0; c < d.channels; ++c) {
    double acc = 0.0;
    for (Index s = 0; s < d.slices; ++s)
      for (auto v : maps.plane(s, c)) acc += std::abs(v);
    if (acc > best_mag) {
      best_mag = acc;
      best = c;
    }
  }
  return best;
}

/// Rotate each pixel's channel vector so the reference channel is real and non-negative.
inline CoilMaps normalize_map_phase(CoilMaps maps)
{
  auto &m = maps.maps;
  auto const &d = m.dims();
  Index const ref = reference_channel(m);
  for (Index s = 0; s < d.slices; ++s)
    for (Index y = 0; y < d.ny; ++y)
      for (Index x = 0; x < d.nx; ++x) {
        cplx const r = m(s, ref, y, x);
        double const mag = std::abs(r);
        if (mag == 0.0) continue;
        cplx const rot = std::conj(r) / mag;
        if (rot == cplx(1.0, 0.0)) continue;
        for (Index c = 0; c < d.channels; ++c) m(s, c, y, x) *= rot;
        m(s, ref, y, x) = cplx(mag, 0.0);
      }
  return maps;
}

namespace detail {

// Per-pixel Hermitian matrices W(r) of the ESPIRiT operator for one slice, packed as
// ncoils x ncoils column-major blocks. Calibration windows are rows of A = U S V^H, so they
// span conj(V), not V.
inline std::vector<cplx> espirit_operator(CMatrix const &basis, Index ncoils, Index k, Index ny, Index nx)
{
  Index const npix = ny * nx;
  std::vector<cplx> w(static_cast<std::size_t>(npix * ncoils * ncoils), cplx{});
  std::vector<cplx> padded(static_cast<std::size_t>(npix)), img(static_cast<std::size_t>(npix * ncoils));
  // sqrt(N) undoes the unitary scaling; 1/k averages over the k^2 windows covering a sample.
  double const scale = std::sqrt(static_cast<double>(npix)) / static_cast<double>(k);
  Index const y0 = ny / 2 - k / 2, x0 = nx / 2 - k / 2;
  for (Index j = 0; j < basis.cols(); ++j) {
    for (Index c = 0; c < ncoils; ++c) {
      std::fill(padded.begin(), padded.end(), cplx{});
      for (Index dy = 0; dy < k; ++dy)
        for (Index dx = 0; dx < k; ++dx) padded[(y0 + dy) * nx + x0 + dx] = std::conj(basis(c * k * k + dy * k + dx, j));
      ifft2c_plane(padded, std::span<cplx>(img.data() + c * npix, npix), ny, nx);
    }
    for (Index p = 0; p < npix; ++p) {
      cplx *wp = w.data() + p * ncoils * ncoils;
      for (Index b = 0; b < ncoils; ++b) {
        cplx const gb = std::conj(img[b * npix + p]) * scale;
        for (Index a = 0; a < ncoils; ++a) wp[b * ncoils + a] += img[a * npix + p] * scale * gb;
      }
    }
  }
  return w;
}

} // namespace detail

/// First ESPIRiT map set from ACS k-space, evaluated on an ny x nx image grid.
///
/// When `empty_slices` is given, slices whose ACS data are identically zero yield zero maps
/// and zero eigenvalues and are listed there instead of raising CalibrationError.
inline CoilMaps espirit_maps(KSpaceVolume const &acs, Index ny, Index nx, CalibConfig const &cfg,
                             std::vector<Index> *empty_slices = nullptr)
{
  cfg.validate();
  require_finite(acs, "espirit_maps");
  auto const &d = acs.dims();
  require(ny >= d.ny && nx == d.nx, "espirit_maps: image grid must contain the ACS region");
  Index const k = cfg.kernel, nc = d.channels;
  CoilMaps out;
  out.maps = ImageVolume(Dims{d.slices, nc, ny, nx});
  out.eigval = RealVolume(Dims{d.slices, 1, ny, nx});
  out.role = MapRole::reference;

  struct Tie
  {
    Index s, y, x;
    Eigen::MatrixXcd vecs;
  };
  std::vector<Tie> ties;

  for (Index s = 0; s < d.slices; ++s) {
    CMatrix const a = build_calibration_matrix(acs, s, cfg);
    if (empty_slices && a.cwiseAbs().maxCoeff() == 0.0) {
      empty_slices->push_back(s);
      continue;
    }
    Eigen::BDCSVD<CMatrix> svd(a, Eigen::ComputeThinV);
    auto const &sv = svd.singularValues();
    if (sv.size() == 0 || !(sv[0] > 0.0))
      throw CalibrationError("espirit_maps: slice " + std::to_string(s) + " calibration matrix is zero");
    Index keep = 0;
    while (keep < sv.size() && sv[keep] >= cfg.sv_rel_threshold * sv[0]) ++keep;
    if (keep < 1) throw CalibrationError("espirit_maps: no singular vectors retained");
    CMatrix const basis = svd.matrixV().leftCols(keep);

    auto const w = detail::espirit_operator(basis, nc, k, ny, nx);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig;
    for (Index y = 0; y < ny; ++y)
      for (Index x = 0; x < nx; ++x) {
        Index const p = y * nx + x;
        Eigen::Map<Eigen::MatrixXcd const> wp(w.data() + p * nc * nc, nc, nc);
        eig.compute(wp);
        auto const &ev = eig.eigenvalues();
        for (Index c = 0; c < nc; ++c) out.maps(s, c, y, x) = eig.eigenvectors()(c, nc - 1);
        out.eigval(s, 0, y, x) = std::max(0.0, ev[nc - 1]);
        if (nc > 1 && ev[nc - 1] - ev[nc - 2] <= 1e-12) ties.push_back({s, y, x, eig.eigenvectors().rightCols(2)});
      }
  }

  // Ties: within the leading eigenspace pick the unit vector closest to the reference channel axis.
  if (!ties.empty()) {
    Index const ref = reference_channel(out.maps);
    for (auto const &t : ties) {
      Eigen::VectorXcd v = t.vecs * t.vecs.row(ref).adjoint();
      if (v.norm() > 0.0) {
        v.normalize();
        for (Index c = 0; c < nc; ++c) out.maps(t.s, c, t.y, t.x) = v[c];
      }
      out.degeneracies.push_back({t.s, t.y, t.x});
    }
  }

  out = normalize_map_phase(std::move(out));
  if (cfg.eig_crop) {
    for (Index s = 0; s < d.slices; ++s)
      for (Index y = 0; y < ny; ++y)
        for (Index x = 0; x < nx; ++x)
          if (out.eigval(s, 0, y, x) < *cfg.eig_crop)
            for (Index c = 0; c < nc; ++c) out.maps(s, c, y, x) = cplx{};
  }
  return out;
}

/// Zero the maps wherever eigval < threshold.
inline CoilMaps crop_maps(CoilMaps maps, double threshold)
{
  auto const &d = maps.maps.dims();
  for (Index s = 0; s < d.slices; ++s)
    for (Index y = 0; y < d.ny; ++y)
      for (Index x = 0; x < d.nx; ++x)
        if (maps.eigval(s, 0, y, x) < threshold)
          for (Index c = 0; c < d.channels; ++c) maps.maps(s, c, y, x) = cplx{};
  return maps;
}

struct CompressionResult
{
  KSpaceVolume kspace;
  /// Fraction of total signal energy kept by the retained virtual channels.
  double retained_energy = 1.0;
  /// Channel-combination matrix, nchannels x target (columns are virtual coils).
  CMatrix combination;
};

/// SVD coil compression onto the dominant channel subspace of all samples of all slices.
inline CompressionResult coil_compress(KSpaceVolume const &kspace, Index target)
{
  auto const &d = kspace.dims();
  require(target >= 1 && target <= d.channels, "coil_compress: target must be in [1, nchannels]");
  Index const nc = d.channels;
  // Channel covariance D^H D; its eigenvectors are the right singular vectors of D.
  CMatrix cov = CMatrix::Zero(nc, nc);
  for (Index s = 0; s < d.slices; ++s)
    for (Index a = 0; a < nc; ++a)
      for (Index b = a; b < nc; ++b) {
        cplx acc{};
        auto pa = kspace.plane(s, a), pb = kspace.plane(s, b);
        for (Index i = 0; i < d.plane(); ++i) acc += std::conj(pa[i]) * pb[i];
        cov(a, b) += acc;
      }
  for (Index a = 0; a < nc; ++a)
    for (Index b = 0; b < a; ++b) cov(a, b) = std::conj(cov(b, a));
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(cov);
  auto const &ev = eig.eigenvalues();
  double total = 0.0, kept = 0.0;
  for (Index i = 0; i < nc; ++i) total += std::max(0.0, ev[i]);
  CompressionResult res;
  res.combination.resize(nc, target);
  for (Index t = 0; t < target; ++t) {
    res.combination.col(t) = eig.eigenvectors().col(nc - 1 - t);
    kept += std::max(0.0, ev[nc - 1 - t]);
  }
  res.retained_energy = total > 0.0 ? kept / total : 1.0;
  Dims od = d;
  od.channels = target;
  res.kspace = KSpaceVolume(od);
  for (Index s = 0; s < d.slices; ++s)
    for (Index t = 0; t < target; ++t) {
      auto out = res.kspace.plane(s, t);
      for (Index c = 0; c < nc; ++c) {
        cplx const w = res.combination(c, t);
        auto in = kspace.plane(s, c);
        for (Index i = 0; i < d.plane(); ++i) out[i] += in[i] * w;
      }
    }
  return res;
}

} // namespace calibless
