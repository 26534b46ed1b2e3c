#include <catch2/catch.hpp>

#include "test_support.hpp"
#include "uwloc/model.hpp"

using namespace uwloc;
using test::reference_array;
using test::reference_source;

TEST_CASE("range against the reference constellation") {
  const SourceState src = reference_source();
  REQUIRE(range(src, Vec3(0, 1000, 0)) == Approx(346.4102).margin(1e-4));
  REQUIRE(range(src, Vec3(0, 0, 0)) == Approx(848.5281).margin(1e-4));
  REQUIRE(range(src, src.position) == 0.0);
}

TEST_CASE("range rate projects relative velocity on the line of sight") {
  const SourceState src = reference_source();
  REQUIRE(range_rate(src, Vec3(0, 1000, 0), Vec3(3, -2, 2)) ==
          Approx(-5.4848).margin(1e-4));

  SourceState still = src;
  still.velocity = Vec3(1, 2, 3);
  REQUIRE(range_rate(still, Vec3(0, 0, 0), still.velocity) == 0.0);

  // Radial geometry: relative velocity along the line of sight comes back
  // with its full magnitude and the right sign.
  SourceState radial = src;
  radial.position = Vec3(100, 0, 0);
  radial.velocity = Vec3(4, 0, 0);
  REQUIRE(range_rate(radial, Vec3(0, 0, 0), Vec3::Zero()) == Approx(4.0));
  REQUIRE(range_rate(radial, Vec3(200, 0, 0), Vec3::Zero()) == Approx(-4.0));

  REQUIRE_THROWS_AS(range_rate(src, src.position, Vec3::Zero()),
                    DegenerateGeometry);
}

TEST_CASE("noiseless measurement synthesis") {
  const SourceState src = reference_source();
  const SensorArray arr = reference_array();
  const MeasurementSet meas = true_measurements(src, arr.truth);
  REQUIRE(meas.sensor_count() == 10);
  REQUIRE(meas.tdoa[0] == Approx(0.334745).margin(1e-6));

  SECTION("equidistant sensor gives a zero delay difference") {
    Mat pos(5, 3), vel = Mat::Zero(5, 3);
    pos << 100, 0, 0, -100, 0, 0, 0, 250, 0, 0, 0, 300, 50, 50, 50;
    SourceState centered;
    centered.position = Vec3(0, 0, 0);
    centered.speed = 1500.0;
    const MeasurementSet m =
        true_measurements(centered, SensorParams{pos, vel});
    REQUIRE(m.tdoa[0] == Approx(0.0).margin(1e-15));
  }

  SECTION("static scene has zero rate differences") {
    SourceState still = src;
    still.velocity.setZero();
    SensorArray arr_still = arr;
    arr_still.truth.velocities.setZero();
    arr_still.nominal.velocities.setZero();
    const MeasurementSet m = true_measurements(still, arr_still.truth);
    REQUIRE(m.fdoa.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("measurement properties", "[property]") {
  RngStream rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const int m = 5 + static_cast<int>(rng.next_u64() % 4);
    Mat pos(m, 3), vel(m, 3);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < 3; ++j) {
        pos(i, j) = rng.uniform(-1000, 1000);
        vel(i, j) = rng.uniform(-3, 3);
      }
    SourceState src;
    src.position = Vec3(rng.uniform(-500, 500), rng.uniform(-500, 500),
                        rng.uniform(-500, 500));
    src.velocity = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3),
                        rng.uniform(-3, 3));
    src.speed = rng.uniform(1400, 1600);
    const SensorParams sensors{pos, vel};

    const MeasurementSet meas = true_measurements(src, sensors);

    // Rigid translation of everything leaves the measurements unchanged.
    const Vec3 shift(rng.uniform(-2000, 2000), rng.uniform(-2000, 2000),
                     rng.uniform(-2000, 2000));
    SourceState moved = src;
    moved.position += shift;
    SensorParams moved_sensors = sensors;
    moved_sensors.positions.rowwise() += shift.transpose();
    const MeasurementSet meas_moved = true_measurements(moved, moved_sensors);
    REQUIRE((meas_moved.tdoa - meas.tdoa).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((meas_moved.fdoa - meas.fdoa).cwiseAbs().maxCoeff() < 1e-12);

    // Doubling the propagation speed halves every entry.
    SourceState fast = src;
    fast.speed = 2.0 * src.speed;
    const MeasurementSet meas_fast = true_measurements(fast, sensors);
    REQUIRE((2.0 * meas_fast.tdoa - meas.tdoa).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE((2.0 * meas_fast.fdoa - meas.fdoa).cwiseAbs().maxCoeff() < 1e-12);

    // Range differences never exceed the sensor baselines.
    for (int i = 1; i < m; ++i) {
      const double baseline =
          (sensors.positions.row(i) - sensors.positions.row(0)).norm();
      REQUIRE(std::abs(meas.tdoa[i - 1]) * src.speed <= baseline + 1e-9);
    }

    // range is symmetric and translation invariant.
    const Vec3 p = src.position;
    const Vec3 q = sensors.position(0);
    SourceState at_q = src;
    at_q.position = q;
    REQUIRE(range(src, q) == Approx(range(at_q, p)));
    SourceState shifted = src;
    shifted.position = p + shift;
    REQUIRE(range(shifted, q + shift) == Approx(range(src, q)).epsilon(1e-12));
  }
}

namespace {

// Exhaustive-scan oracle for the reference choice: smallest hint that is
// strictly positive and not below the floor fraction of the largest hint.
int reference_oracle(const Vec& hint) {
  const double floor = kReferenceFloorFraction * hint.maxCoeff();
  int best = -1;
  for (int i = 0; i < hint.size(); ++i) {
    if (!(hint[i] > 0.0) || hint[i] < floor) continue;
    if (best < 0 || hint[i] < hint[best]) best = i;
  }
  return best < 0 ? 0 : best;
}

}  // namespace

TEST_CASE("reference canonicalization") {
  const SensorArray arr = reference_array();

  SECTION("no hint keeps the given order") {
    const ReferenceSelection sel = canonicalize_reference(arr, std::nullopt);
    for (int i = 0; i < arr.count(); ++i) REQUIRE(sel.permutation[i] == i);
    REQUIRE(sel.array.truth.positions == arr.truth.positions);
  }

  SECTION("already-minimal moderate hint keeps sensor 0") {
    Vec hint(10);
    hint << 5, 30, 40, 50, 60, 70, 55, 45, 35, 25;
    const ReferenceSelection sel = canonicalize_reference(arr, hint);
    REQUIRE(sel.permutation[0] == 0);
  }

  SECTION("smallest moderate hint becomes the reference") {
    Vec hint(10);
    hint << 900, 60, 400, 700, 500, 800, 650, 750, 850, 550;
    const ReferenceSelection sel = canonicalize_reference(arr, hint);
    REQUIRE(sel.permutation[0] == reference_oracle(hint));
    REQUIRE(sel.permutation[0] == 1);
    REQUIRE(sel.array.truth.positions.row(0) == arr.truth.positions.row(1));
    REQUIRE(sel.array.truth.positions.row(1) == arr.truth.positions.row(0));
  }

  SECTION("hints below the floor are excluded") {
    Vec hint(10);
    hint << 900, 30, 400, 700, 500, 800, 650, 750, 850, 550;
    // 30 is below 5% of 900, so the next-smallest qualifying hint wins.
    const ReferenceSelection sel = canonicalize_reference(arr, hint);
    REQUIRE(sel.permutation[0] == reference_oracle(hint));
    REQUIRE(sel.permutation[0] == 2);
  }

  SECTION("random hints agree with the exhaustive oracle") {
    RngStream rng(31);
    for (int trial = 0; trial < 50; ++trial) {
      Vec hint(10);
      for (int i = 0; i < 10; ++i) hint[i] = rng.uniform(1.0, 1000.0);
      const ReferenceSelection sel = canonicalize_reference(arr, hint);
      REQUIRE(sel.permutation[0] == reference_oracle(hint));
    }
  }
}

TEST_CASE("sensor array validation") {
  Mat pos = Mat::Random(4, 3) * 100.0;
  Mat vel = Mat::Zero(4, 3);
  REQUIRE_THROWS_AS(SensorArray::exact(SensorParams{pos, vel}),
                    InvalidParameter);

  Mat pos5(5, 3);
  pos5 << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0;  // repeated position
  REQUIRE_THROWS_AS(SensorArray::exact(SensorParams{pos5, Mat::Zero(5, 3)}),
                    InvalidParameter);

  SourceState bad;
  bad.speed = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), InvalidParameter);
}
