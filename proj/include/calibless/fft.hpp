#pragma once

#include "volume.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace calibless {

namespace detail {

// FFTW planning is not thread-safe; plans are created once per (ny, nx, sign) and reused
// through the new-array execute interface.
inline fftw_plan plan_2d(Index ny, Index nx, int sign)
{
  static std::mutex mtx;
  static std::map<std::tuple<Index, Index, int>, fftw_plan> plans;
  std::lock_guard lock(mtx);
  auto key = std::make_tuple(ny, nx, sign);
  if (auto it = plans.find(key); it != plans.end()) return it->second;
  std::vector<cplx> a(static_cast<std::size_t>(ny * nx)), b(a.size());
  auto p = fftw_plan_dft_2d(static_cast<int>(ny), static_cast<int>(nx), reinterpret_cast<fftw_complex *>(a.data()),
                            reinterpret_cast<fftw_complex *>(b.data()), sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  plans.emplace(key, p);
  return p;
}

// out[(i + shift) mod n] = in[i] along both axes.
inline void circshift(std::span<cplx const> in, std::span<cplx> out, Index ny, Index nx, Index sy, Index sx)
{
  for (Index y = 0; y < ny; ++y) {
    Index const yo = (y + sy) % ny;
    for (Index x = 0; x < nx; ++x) {
      out[yo * nx + (x + sx) % nx] = in[y * nx + x];
    }
  }
}

inline void centered_dft(std::span<cplx const> in, std::span<cplx> out, Index ny, Index nx, int sign)
{
  std::vector<cplx> a(in.size()), b(in.size());
  // ifftshift: floor(n/2) -> 0
  circshift(in, a, ny, nx, ny - ny / 2, nx - nx / 2);
  fftw_execute_dft(plan_2d(ny, nx, sign), reinterpret_cast<fftw_complex *>(a.data()),
                   reinterpret_cast<fftw_complex *>(b.data()));
  // fftshift: 0 -> floor(n/2)
  circshift(b, out, ny, nx, ny / 2, nx / 2);
  double const scale = 1.0 / std::sqrt(static_cast<double>(ny * nx));
  for (auto &v : out) v *= scale;
}

} // namespace detail

/// Centered unitary forward 2-D DFT of one ny x nx plane. DC lands at (ny/2, nx/2), floor convention.
inline void fft2c_plane(std::span<cplx const> in, std::span<cplx> out, Index ny, Index nx)
{
  detail::centered_dft(in, out, ny, nx, FFTW_FORWARD);
}

/// Exact inverse of fft2c_plane.
inline void ifft2c_plane(std::span<cplx const> in, std::span<cplx> out, Index ny, Index nx)
{
  detail::centered_dft(in, out, ny, nx, FFTW_BACKWARD);
}

inline KSpaceVolume fft2c(ImageVolume const &image)
{
  require_finite(image, "fft2c");
  auto const &d = image.dims();
  KSpaceVolume out(d);
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c) fft2c_plane(image.plane(s, c), out.plane(s, c), d.ny, d.nx);
  return out;
}

inline ImageVolume ifft2c(KSpaceVolume const &kspace)
{
  require_finite(kspace, "ifft2c");
  auto const &d = kspace.dims();
  ImageVolume out(d);
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c) ifft2c_plane(kspace.plane(s, c), out.plane(s, c), d.ny, d.nx);
  return out;
}

} // namespace calibless
