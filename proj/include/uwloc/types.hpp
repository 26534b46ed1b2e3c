#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "uwloc/errors.hpp"
#include "uwloc/linalg.hpp"

namespace uwloc {

// State of the moving source: position (m), velocity (m/s) and the acoustic
// propagation speed (m/s) of the medium it radiates through.
struct SourceState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double speed = 1500.0;

  void validate() const {
    if (!(speed > 0.0)) throw InvalidParameter("source speed must be positive");
    if (!position.allFinite() || !velocity.allFinite() || !std::isfinite(speed))
      throw InvalidParameter("source state must be finite");
  }
};

// One set of per-sensor positions and velocities, stored row-per-sensor.
// Row 0 is the reference sensor all differences are formed against.
struct SensorParams {
  Mat positions;   // M x 3, meters
  Mat velocities;  // M x 3, m/s

  int count() const { return static_cast<int>(positions.rows()); }
  Vec3 position(int i) const { return positions.row(i).transpose(); }
  Vec3 velocity(int i) const { return velocities.row(i).transpose(); }

  void validate() const {
    if (positions.cols() != 3 || velocities.cols() != 3 ||
        positions.rows() != velocities.rows())
      throw InvalidParameter("sensor parameter blocks must be M x 3");
    if (!positions.allFinite() || !velocities.allFinite())
      throw InvalidParameter("sensor parameters must be finite");
  }

  // Positions stacked sensor-major, then velocities: a 6M vector.
  Vec stacked() const {
    const int m = count();
    Vec out(6 * m);
    for (int i = 0; i < m; ++i) {
      out.segment<3>(3 * i) = positions.row(i).transpose();
      out.segment<3>(3 * m + 3 * i) = velocities.row(i).transpose();
    }
    return out;
  }

  static SensorParams from_stacked(const Vec& stacked) {
    const int m = static_cast<int>(stacked.size()) / 6;
    SensorParams p{Mat(m, 3), Mat(m, 3)};
    for (int i = 0; i < m; ++i) {
      p.positions.row(i) = stacked.segment<3>(3 * i).transpose();
      p.velocities.row(i) = stacked.segment<3>(3 * m + 3 * i).transpose();
    }
    return p;
  }
};

inline constexpr int kMinSensors = 5;

// True and nominal per-sensor parameters. Simulation and bounds read the true
// side; the estimator is handed only the nominal SensorParams.
struct SensorArray {
  SensorParams truth;
  SensorParams nominal;

  static SensorArray exact(SensorParams p) {
    SensorArray a{p, p};
    a.validate();
    return a;
  }

  int count() const { return truth.count(); }

  void validate() const {
    truth.validate();
    nominal.validate();
    if (truth.count() != nominal.count())
      throw InvalidParameter("true and nominal sensor counts differ");
    if (count() < kMinSensors)
      throw InvalidParameter("at least " + std::to_string(kMinSensors) +
                             " sensors are required");
    for (int i = 0; i < count(); ++i)
      for (int j = i + 1; j < count(); ++j)
        if ((truth.positions.row(i) - truth.positions.row(j)).norm() == 0.0)
          throw InvalidParameter("true sensor positions must be distinct");
  }
};

// Stacked delay-difference and rate-difference measurements against the
// reference sensor; entry k corresponds to sensor k+1.
struct MeasurementSet {
  Vec tdoa;  // seconds
  Vec fdoa;  // dimensionless rate (carrier-normalized)

  int sensor_count() const { return static_cast<int>(tdoa.size()) + 1; }

  void validate() const {
    if (tdoa.size() != fdoa.size())
      throw InvalidParameter("tdoa and fdoa lengths differ");
    if (tdoa.size() < 1) throw InvalidParameter("empty measurement set");
    if (!tdoa.allFinite() || !fdoa.allFinite())
      throw InvalidParameter("measurements must be finite");
  }

  // Delay block stacked over the rate block: a 2(M-1) vector.
  Vec stacked() const {
    Vec out(tdoa.size() + fdoa.size());
    out << tdoa, fdoa;
    return out;
  }
};

}  // namespace uwloc
