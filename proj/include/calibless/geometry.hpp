#pragma once

#include "volume.hpp"

#include <Eigen/Dense>

#include <numbers>

namespace calibless {

/// Subject-coil rigid geometry. Angles in degrees (pitch, roll, head rotation); translations
/// in pixels (left-right, anterior-posterior, head-foot).
struct Geometry
{
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double m = 0.0;
  double n = 0.0;
  double t = 0.0;

  bool operator==(Geometry const &) const = default;
};

/// p' = R p + shift on centred pixel coordinates (x column, y row, z slice).
struct RigidTransform
{
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d shift = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(Eigen::Vector3d const &p) const { return rotation * p + shift; }
  RigidTransform inverse() const
  {
    Eigen::Matrix3d const rt = rotation.transpose();
    return {rt, -(rt * shift)};
  }
};

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

inline Eigen::Matrix3d rotation_x(double rad)
{
  double const c = std::cos(rad), s = std::sin(rad);
  Eigen::Matrix3d r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

inline Eigen::Matrix3d rotation_y(double rad)
{
  double const c = std::cos(rad), s = std::sin(rad);
  Eigen::Matrix3d r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

inline Eigen::Matrix3d rotation_z(double rad)
{
  double const c = std::cos(rad), s = std::sin(rad);
  Eigen::Matrix3d r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

/// Rx(alpha) Ry(beta) Rz(gamma), then translate by (m, n, t).
inline RigidTransform to_transform(Geometry const &g)
{
  for (double v : {g.alpha, g.beta, g.gamma, g.m, g.n, g.t})
    if (!std::isfinite(v)) throw NonFiniteError("geometry: non-finite parameter");
  RigidTransform tr;
  tr.rotation = rotation_x(deg2rad(g.alpha)) * rotation_y(deg2rad(g.beta)) * rotation_z(deg2rad(g.gamma));
  tr.shift = Eigen::Vector3d(g.m, g.n, g.t);
  return tr;
}

inline Eigen::Vector3d rigid_transform_point(Eigen::Vector3d const &p, Geometry const &g)
{
  return to_transform(g).apply(p);
}

/// Maps grid indices to centred pixel coordinates. slice_spacing is in in-plane pixel units.
struct VoxelGrid
{
  Index slices, ny, nx;
  double slice_spacing = 1.0;

  Eigen::Vector3d to_coord(double s, double y, double x) const
  {
    return {x - 0.5 * (nx - 1), y - 0.5 * (ny - 1), (s - 0.5 * (slices - 1)) * slice_spacing};
  }
  Eigen::Vector3d to_index(Eigen::Vector3d const &p) const
  {
    return {p.z() / slice_spacing + 0.5 * (slices - 1), p.y() + 0.5 * (ny - 1), p.x() + 0.5 * (nx - 1)};
  }
};

namespace detail {

inline double snap(double v)
{
  double const r = std::round(v);
  return std::abs(v - r) < 1e-10 ? r : v;
}

// Trilinear sample of one channel at fractional index (s, y, x); zero outside the grid.
template <class T, class Tag>
T trilinear(Volume<T, Tag> const &v, Index c, double s, double y, double x)
{
  auto const &d = v.dims();
  s = snap(s);
  y = snap(y);
  x = snap(x);
  double const fs = std::floor(s), fy = std::floor(y), fx = std::floor(x);
  Index const s0 = static_cast<Index>(fs), y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
  double const ws = s - fs, wy = y - fy, wx = x - fx;
  T acc{};
  for (int ds = 0; ds < 2; ++ds) {
    double const a = ds ? ws : 1.0 - ws;
    Index const si = s0 + ds;
    if (a == 0.0 || si < 0 || si >= d.slices) continue;
    for (int dy = 0; dy < 2; ++dy) {
      double const b = dy ? wy : 1.0 - wy;
      Index const yi = y0 + dy;
      if (b == 0.0 || yi < 0 || yi >= d.ny) continue;
      for (int dx = 0; dx < 2; ++dx) {
        double const w = dx ? wx : 1.0 - wx;
        Index const xi = x0 + dx;
        if (w == 0.0 || xi < 0 || xi >= d.nx) continue;
        acc += (a * b * w) * v(si, c, yi, xi);
      }
    }
  }
  return acc;
}

} // namespace detail

/// Resample into the frame reached by `tr`: output voxel q takes the input value at tr^-1(q).
template <class T, class Tag>
Volume<T, Tag> resample(Volume<T, Tag> const &vol, RigidTransform const &tr, double slice_spacing = 1.0)
{
  require_finite(vol, "resample");
  require(slice_spacing > 0.0, "resample: slice spacing must be positive");
  auto const &d = vol.dims();
  VoxelGrid const grid{d.slices, d.ny, d.nx, slice_spacing};
  RigidTransform const inv = tr.inverse();
  Volume<T, Tag> out(d);
  for (Index s = 0; s < d.slices; ++s)
    for (Index y = 0; y < d.ny; ++y)
      for (Index x = 0; x < d.nx; ++x) {
        Eigen::Vector3d const src = grid.to_index(inv.apply(grid.to_coord(s, y, x)));
        for (Index c = 0; c < d.channels; ++c) out(s, c, y, x) = detail::trilinear(vol, c, src[0], src[1], src[2]);
      }
  return out;
}

/// Move an acquired multi-slice stack into the standard reference stack.
template <class T, class Tag>
Volume<T, Tag> resample_volume_to_reference(Volume<T, Tag> const &vol, Geometry const &g, double slice_spacing = 1.0)
{
  return resample(vol, to_transform(g), slice_spacing);
}

} // namespace calibless
