#pragma once

#include "estimator.hpp"
#include "simulate.hpp"
#include "transformed_maps.hpp"

namespace calibless {

/// A simulated scan with both ESPIRiT target sets.
struct PreparedScan
{
  SyntheticScan scan;
  CoilMaps maps_orig;
  CoilMaps maps_trans;
  /// Reference-stack slices with no data after the rigid transform; their transformed
  /// targets are copies of the original maps.
  std::vector<Index> empty_trans_slices;
};

inline PreparedScan prepare_scan(ScanConfig const &cfg, std::uint64_t seed, CalibConfig const &calib, Index acs_lines)
{
  PreparedScan p;
  p.scan = simulate_scan(cfg, seed);
  auto const &d = p.scan.kspace.dims();
  p.maps_orig = espirit_maps(extract_acs(p.scan.kspace, acs_lines), d.ny, d.nx, calib);
  p.maps_trans =
      compute_transformed_maps(p.scan.kspace, p.scan.geometry, calib, acs_lines, cfg.slice_spacing, &p.empty_trans_slices);
  for (Index s : p.empty_trans_slices) {
    auto const orig = p.maps_orig.maps.slice(s);
    p.maps_trans.maps.set_slice(s, orig);
    p.maps_trans.eigval.set_slice(s, p.maps_orig.eigval.slice(s));
  }
  return p;
}

/// One training sample per slice: aliased input from the R-fold undersampled k-space plus the
/// original and transformed target maps.
inline std::vector<Sample> make_samples(PreparedScan const &p, SamplingMask const &mask,
                                        nn::InputNorm norm = nn::InputNorm::slice_percentile)
{
  ImageVolume const aliased = zero_fill_images(p.scan.kspace, mask);
  Index const ref = input_reference_channel(aliased);
  std::vector<Sample> out;
  for (Index s = 0; s < aliased.dims().slices; ++s) {
    Sample smp;
    smp.scale = normalize_input(aliased, s, smp.input, norm, ref);
    smp.target_orig = to_planes(p.maps_orig.maps, s);
    smp.target_trans = to_planes(p.maps_trans.maps, s);
    smp.acceleration = mask.R;
    out.push_back(std::move(smp));
  }
  return out;
}

} // namespace calibless
