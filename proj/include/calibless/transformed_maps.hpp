#pragma once

#include "calibrate.hpp"
#include "geometry.hpp"

namespace calibless {

/// ESPIRiT maps at the locations the acquired stack occupies in the standard reference stack:
/// channel images are rigidly resampled into the reference frame, then calibrated as usual.
/// Reference slices left without data by the transform are reported through `empty_slices`
/// when given (otherwise they raise CalibrationError).
inline CoilMaps compute_transformed_maps(KSpaceVolume const &fullysampled, Geometry const &g, CalibConfig const &cfg,
                                         Index acs_lines = 24, double slice_spacing = 1.0,
                                         std::vector<Index> *empty_slices = nullptr)
{
  auto const &d = fullysampled.dims();
  ImageVolume const moved = resample_volume_to_reference(ifft2c(fullysampled), g, slice_spacing);
  CoilMaps maps = espirit_maps(extract_acs(fft2c(moved), acs_lines), d.ny, d.nx, cfg, empty_slices);
  maps.role = MapRole::transformed;
  return maps;
}

} // namespace calibless
