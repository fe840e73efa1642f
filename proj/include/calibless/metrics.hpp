#pragma once

#include "volume.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

namespace calibless {

namespace detail {
inline void same_size(std::span<double const> a, std::span<double const> b, char const *what)
{
  require(a.size() == b.size(), std::string(what) + ": size mismatch (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
}
} // namespace detail

/// ||recon - ref||_2 / ||ref||_2.
inline double nrmse(std::span<double const> recon, std::span<double const> ref)
{
  detail::same_size(recon, ref, "nrmse");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += (recon[i] - ref[i]) * (recon[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  if (!(den > 0.0)) throw ParameterError("nrmse: reference has zero norm");
  return std::sqrt(num / den);
}

/// Returned by psnr when recon equals ref exactly.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 20 log10(max|ref| / rmse) in dB.
inline double psnr(std::span<double const> recon, std::span<double const> ref)
{
  detail::same_size(recon, ref, "psnr");
  double peak = 0.0, se = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    peak = std::max(peak, std::abs(ref[i]));
    se += (recon[i] - ref[i]) * (recon[i] - ref[i]);
  }
  if (!(peak > 0.0)) throw ParameterError("psnr: reference is zero");
  if (se == 0.0) return kPsnrIdentical;
  double const rmse = std::sqrt(se / static_cast<double>(ref.size()));
  return 20.0 * std::log10(peak / rmse);
}

/// Sample Pearson correlation over pixels where support is nonzero (all pixels if empty).
inline double pearson(std::span<double const> a, std::span<double const> b, std::span<std::uint8_t const> support = {})
{
  detail::same_size(a, b, "pearson");
  require(support.empty() || support.size() == a.size(), "pearson: support size mismatch");
  double sa = 0.0, sb = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (support.empty() || support[i]) {
      sa += a[i];
      sb += b[i];
      ++n;
    }
  require(n >= 2, "pearson: fewer than two supported pixels");
  double const ma = sa / static_cast<double>(n), mb = sb / static_cast<double>(n);
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (support.empty() || support[i]) {
      double const da = a[i] - ma, db = b[i] - mb;
      saa += da * da;
      sbb += db * db;
      sab += da * db;
    }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw ParameterError("pearson: zero variance on support");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Sliding-window RMSE of |recon| - |ref| over a centred odd window (zero beyond the border),
/// divided by the global max|ref|. Inputs are real (slice, 1, y, x) volumes.
inline RealVolume local_error_map(RealVolume const &recon, RealVolume const &ref, Index window = 7)
{
  auto const &d = ref.dims();
  require(recon.dims() == d, "local_error_map: dims mismatch");
  require(window >= 1 && window % 2 == 1, "local_error_map: window must be odd");
  require(window <= std::min(d.ny, d.nx), "local_error_map: window larger than image");
  double peak = 0.0;
  for (auto v : ref.data()) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0)) throw ParameterError("local_error_map: reference is zero");
  Index const h = window / 2;
  double const area = static_cast<double>(window * window);
  RealVolume out(d);
  std::vector<double> sq(static_cast<std::size_t>(d.plane()));
  for (Index s = 0; s < d.slices; ++s)
    for (Index c = 0; c < d.channels; ++c) {
      auto a = recon.plane(s, c), b = ref.plane(s, c);
      for (Index i = 0; i < d.plane(); ++i) {
        double const e = std::abs(a[i]) - std::abs(b[i]);
        sq[i] = e * e;
      }
      // Separable box sums: rows then columns.
      std::vector<double> rowsum(sq.size(), 0.0);
      for (Index y = 0; y < d.ny; ++y)
        for (Index x = 0; x < d.nx; ++x) {
          double acc = 0.0;
          for (Index dx = -h; dx <= h; ++dx)
            if (x + dx >= 0 && x + dx < d.nx) acc += sq[y * d.nx + x + dx];
          rowsum[y * d.nx + x] = acc;
        }
      auto o = out.plane(s, c);
      for (Index y = 0; y < d.ny; ++y)
        for (Index x = 0; x < d.nx; ++x) {
          double acc = 0.0;
          for (Index dy = -h; dy <= h; ++dy)
            if (y + dy >= 0 && y + dy < d.ny) acc += rowsum[(y + dy) * d.nx + x];
          o[y * d.nx + x] = std::sqrt(acc / area) / peak;
        }
    }
  return out;
}

/// Magnitudes of complex values.
template <class Tag>
RealVolume magnitude(Volume<cplx, Tag> const &v)
{
  RealVolume out(v.dims());
  for (Index i = 0; i < v.size(); ++i) out.data()[i] = std::abs(v.data()[i]);
  return out;
}

} // namespace calibless
