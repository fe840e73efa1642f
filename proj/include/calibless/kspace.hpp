#pragma once

#include "fft.hpp"

#include <cstdint>

namespace calibless {

/// Uniform Cartesian undersampling along ky: line k is acquired iff k = offset (mod R).
struct SamplingMask
{
  Index ny = 0;
  int R = 1;
  int offset = 0;
  std::vector<std::uint8_t> sampled;

  bool operator[](Index k) const { return sampled[static_cast<std::size_t>(k)] != 0; }
  Index count() const
  {
    Index n = 0;
    for (auto s : sampled) n += s;
    return n;
  }
};

inline SamplingMask make_uniform_mask(Index ny, int R, int offset)
{
  require(ny >= 1, "mask: ny must be >= 1");
  require(R >= 1 && R <= ny, "mask: acceleration R must satisfy 1 <= R <= ny");
  require(offset >= 0 && offset < R, "mask: offset must satisfy 0 <= offset < R");
  SamplingMask m{ny, R, offset, std::vector<std::uint8_t>(static_cast<std::size_t>(ny), 0)};
  for (Index k = offset; k < ny; k += R) m.sampled[static_cast<std::size_t>(k)] = 1;
  return m;
}

inline KSpaceVolume apply_mask(KSpaceVolume const &kspace, SamplingMask const &mask)
{
  auto const &d = kspace.dims();
  require(mask.ny == d.ny && static_cast<Index>(mask.sampled.size()) == d.ny,
          "apply_mask: mask has " + std::to_string(mask.ny) + " lines, k-space has " + std::to_string(d.ny));
  KSpaceVolume out = kspace;
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c) {
      auto p = out.plane(s, c);
      for (Index y = 0; y < d.ny; ++y)
        if (!mask[y]) std::fill_n(p.begin() + y * d.nx, d.nx, cplx{});
    }
  return out;
}

/// Aliased channel images: inverse transform of the zero-filled undersampled k-space.
inline ImageVolume zero_fill_images(KSpaceVolume const &kspace, SamplingMask const &mask)
{
  return ifft2c(apply_mask(kspace, mask));
}

inline Index acs_first_row(Index ny, Index n_lines) { return ny / 2 - n_lines / 2; }

/// The n_lines central ky rows, centred on the DC row ny/2.
inline KSpaceVolume extract_acs(KSpaceVolume const &kspace, Index n_lines)
{
  auto const &d = kspace.dims();
  require(n_lines >= 1 && n_lines <= d.ny, "extract_acs: n_lines must be in [1, ny]");
  Index const first = acs_first_row(d.ny, n_lines);
  Dims od = d;
  od.ny = n_lines;
  KSpaceVolume out(od);
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c)
      for (Index y = 0; y < n_lines; ++y)
        for (Index x = 0; x < d.nx; ++x) out(s, c, y, x) = kspace(s, c, first + y, x);
  return out;
}

/// Inverse of extract_acs: place ACS rows back at the centre of an ny-row zero grid.
inline KSpaceVolume zero_pad_acs(KSpaceVolume const &acs, Index ny)
{
  auto const &d = acs.dims();
  require(d.ny <= ny, "zero_pad_acs: target smaller than ACS");
  Dims od = d;
  od.ny = ny;
  KSpaceVolume out(od);
  Index const first = acs_first_row(ny, d.ny);
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c)
      for (Index y = 0; y < d.ny; ++y)
        for (Index x = 0; x < d.nx; ++x) out(s, c, first + y, x) = acs(s, c, y, x);
  return out;
}

/// Root-sum-of-squares across channels; one real plane per slice.
inline RealVolume rss_combine(ImageVolume const &images)
{
  require_finite(images, "rss_combine");
  auto const &d = images.dims();
  RealVolume out(Dims{d.slices, 1, d.ny, d.nx});
  for (Index s = 0; s < d.slices; ++s) {
    auto o = out.plane(s, 0);
    for (Index c = 0; c < d.channels; ++c) {
      auto p = images.plane(s, c);
      for (Index i = 0; i < d.plane(); ++i) o[i] += std::norm(p[i]);
    }
    for (auto &v : o) v = std::sqrt(v);
  }
  return out;
}

} // namespace calibless
