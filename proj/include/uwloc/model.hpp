#pragma once

#include <optional>
#include <vector>

#include "uwloc/types.hpp"

namespace uwloc {

// Euclidean distance between the source and a sensor position.
inline double range(const SourceState& source, const Vec3& sensor_pos) {
  return (source.position - sensor_pos).norm();
}

// Radial speed of the source relative to a sensor: the projection of the
// relative velocity on the line of sight. Undefined at zero range.
inline double range_rate(const SourceState& source, const Vec3& sensor_pos,
                         const Vec3& sensor_vel) {
  const double r = range(source, sensor_pos);
  if (r == 0.0)
    throw DegenerateGeometry("range rate undefined at coincident points");
  return (source.position - sensor_pos).dot(source.velocity - sensor_vel) / r;
}

// Noiseless measurement synthesis: delay differences (r_i - r_0) / c and
// carrier-normalized rate differences (rdot_i - rdot_0) / c against the
// reference sensor in row 0.
inline MeasurementSet true_measurements(const SourceState& source,
                                        const SensorParams& sensors) {
  source.validate();
  sensors.validate();
  const int m = sensors.count();
  const double r0 = range(source, sensors.position(0));
  const double rr0 = range_rate(source, sensors.position(0),
                                sensors.velocity(0));
  MeasurementSet out{Vec(m - 1), Vec(m - 1)};
  for (int i = 1; i < m; ++i) {
    const double ri = range(source, sensors.position(i));
    const double rri =
        range_rate(source, sensors.position(i), sensors.velocity(i));
    out.tdoa[i - 1] = (ri - r0) / source.speed;
    out.fdoa[i - 1] = (rri - rr0) / source.speed;
  }
  return out;
}

struct ReferenceSelection {
  SensorArray array;
  std::vector<int> permutation;  // permutation[k] = original index of slot k
};

// Relative floor for reference selection: hinted ranges below this fraction
// of the largest hint are treated as too close to the source to serve as the
// reference (a vanishing reference range breaks the second-stage scaling).
inline constexpr double kReferenceFloorFraction = 0.05;

// Moves the chosen reference sensor into row 0. With a per-sensor range hint,
// picks the smallest hint that is strictly positive and not below the floor
// fraction of the largest hint; without a hint the given order is kept.
inline ReferenceSelection canonicalize_reference(
    const SensorArray& array, const std::optional<Vec>& ranges_hint) {
  array.validate();
  const int m = array.count();
  std::vector<int> perm(m);
  for (int i = 0; i < m; ++i) perm[i] = i;

  if (ranges_hint) {
    if (ranges_hint->size() != m)
      throw InvalidParameter("ranges hint must have one entry per sensor");
    const double floor = kReferenceFloorFraction * ranges_hint->maxCoeff();
    int best = -1;
    for (int i = 0; i < m; ++i) {
      const double h = (*ranges_hint)[i];
      if (!(h > 0.0) || h < floor) continue;
      if (best < 0 || h < (*ranges_hint)[best]) best = i;
    }
    if (best > 0) std::swap(perm[0], perm[best]);
  }

  SensorArray out = array;
  for (int k = 0; k < m; ++k) {
    out.truth.positions.row(k) = array.truth.positions.row(perm[k]);
    out.truth.velocities.row(k) = array.truth.velocities.row(perm[k]);
    out.nominal.positions.row(k) = array.nominal.positions.row(perm[k]);
    out.nominal.velocities.row(k) = array.nominal.velocities.row(perm[k]);
  }
  return {out, perm};
}

}  // namespace uwloc
