#pragma once

#include "error.hpp"

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace calibless {

using cplx = std::complex<double>;
using Index = std::ptrdiff_t;

/// Grid extents in storage order: slice-major, then channel, then ky/y row, then kx/x column.
struct Dims
{
  Index slices = 1;
  Index channels = 1;
  Index ny = 1;
  Index nx = 1;

  Index plane() const { return ny * nx; }
  Index size() const { return slices * channels * ny * nx; }
  bool valid() const { return slices >= 1 && channels >= 1 && ny >= 1 && nx >= 1; }
  bool operator==(Dims const &) const = default;

  std::string str() const
  {
    std::ostringstream os;
    os << slices << "x" << channels << "x" << ny << "x" << nx;
    return os.str();
  }
};

struct KSpaceTag {};
struct ImageTag {};
struct RealTag {};

/// Dense 4-D array with a domain tag so k-space and image data cannot be mixed up.
template <class T, class Tag>
class Volume
{
public:
  using value_type = T;

  Volume() = default;
  explicit Volume(Dims d, T fill = T{})
      : dims_(d)
  {
    require(d.valid(), "all dimensions must be >= 1, got " + d.str());
    data_.assign(static_cast<std::size_t>(d.size()), fill);
  }
  Volume(Dims d, std::vector<T> data)
      : dims_(d), data_(std::move(data))
  {
    require(d.valid(), "all dimensions must be >= 1, got " + d.str());
    require(static_cast<Index>(data_.size()) == d.size(), "data length does not match dims " + d.str());
  }

  Dims const &dims() const { return dims_; }
  Index size() const { return dims_.size(); }

  Index offset(Index s, Index c, Index y, Index x) const
  {
    return ((s * dims_.channels + c) * dims_.ny + y) * dims_.nx + x;
  }
  T &operator()(Index s, Index c, Index y, Index x) { return data_[offset(s, c, y, x)]; }
  T const &operator()(Index s, Index c, Index y, Index x) const { return data_[offset(s, c, y, x)]; }

  std::span<T> plane(Index s, Index c) { return {data_.data() + offset(s, c, 0, 0), static_cast<std::size_t>(dims_.plane())}; }
  std::span<T const> plane(Index s, Index c) const
  {
    return {data_.data() + offset(s, c, 0, 0), static_cast<std::size_t>(dims_.plane())};
  }

  std::vector<T> &data() { return data_; }
  std::vector<T> const &data() const { return data_; }

  /// Copy of one slice (all channels) as a single-slice volume.
  Volume slice(Index s) const
  {
    Dims d = dims_;
    d.slices = 1;
    auto const n = dims_.channels * dims_.plane();
    auto first = data_.begin() + s * n;
    return Volume(d, std::vector<T>(first, first + n));
  }

  void set_slice(Index s, Volume const &v)
  {
    require(v.dims().slices == 1 && v.dims().channels == dims_.channels && v.dims().ny == dims_.ny &&
                v.dims().nx == dims_.nx,
            "set_slice: shape mismatch");
    std::copy(v.data().begin(), v.data().end(), data_.begin() + s * dims_.channels * dims_.plane());
  }

  bool operator==(Volume const &) const = default;

private:
  Dims dims_{};
  std::vector<T> data_;
};

using KSpaceVolume = Volume<cplx, KSpaceTag>;
using ImageVolume = Volume<cplx, ImageTag>;
/// Real per-(slice, y, x) data; channels is 1 unless stated otherwise.
using RealVolume = Volume<double, RealTag>;

inline bool is_finite(double v) { return std::isfinite(v); }
inline bool is_finite(cplx v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); }

template <class T, class Tag>
void require_finite(Volume<T, Tag> const &v, std::string const &what)
{
  auto const &d = v.dims();
  for (Index i = 0; i < v.size(); ++i) {
    if (!is_finite(v.data()[i])) {
      Index x = i % d.nx;
      Index y = (i / d.nx) % d.ny;
      Index c = (i / d.plane()) % d.channels;
      Index s = i / (d.plane() * d.channels);
      std::ostringstream os;
      os << what << ": non-finite value at (slice " << s << ", channel " << c << ", y " << y << ", x " << x << ")";
      throw NonFiniteError(os.str());
    }
  }
}

/// Reinterpret storage under another domain tag (no data change).
template <class ToTag, class T, class FromTag>
Volume<T, ToTag> retag(Volume<T, FromTag> v)
{
  return Volume<T, ToTag>(v.dims(), std::move(v.data()));
}

template <class T, class Tag>
double squared_norm(Volume<T, Tag> const &v)
{
  double acc = 0.0;
  for (auto const &e : v.data()) acc += std::norm(e);
  return acc;
}

} // namespace calibless
