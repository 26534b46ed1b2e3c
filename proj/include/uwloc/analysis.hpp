#pragma once

#include <string>
#include <vector>

#include "uwloc/crlb.hpp"
#include "uwloc/estimator.hpp"

namespace uwloc {

// 7x7 error map from [position, velocity, speed] differentials to the
// refined-stage unknown differentials.
inline Mat recovered_state_coeffs(const SourceState& source,
                                  const SensorParams& sensors) {
  const Vec3 offset = source.position - sensors.position(0);
  const Vec3 rel_vel = source.velocity - sensors.velocity(0);
  Mat b3 = Mat::Zero(7, 7);
  b3.block<3, 3>(0, 0) = 2.0 * offset.asDiagonal();
  b3.block<3, 3>(3, 0) = rel_vel.asDiagonal();
  b3.block<3, 3>(3, 3) = offset.asDiagonal();
  b3(6, 6) = 2.0 * source.speed;
  return b3;
}

// End-to-end sensitivity of the stacked equations to the recovered state,
// obtained by chaining the stage factors: B1^-1 G1 B2^-1 G2 B3.
inline Mat product_g3(const SourceState& source, const SensorParams& sensors,
                      const Vec& phi1, const MeasurementSet& meas,
                      FdoaCoupling coupling = FdoaCoupling::kRateScaled) {
  const Stage1System sys1 = build_stage1(meas, sensors);
  const Stage1Coeffs coeffs = stage1_noise_coeffs(phi1, sensors, meas,
                                                  coupling);
  const Mat b2 = stage2_coeffs_from_phi1(phi1, sensors);

  Mat g2 = Mat::Zero(9, 7);
  g2.block<3, 3>(0, 0) = Mat::Identity(3, 3);
  g2.block<3, 3>(3, 3) = Mat::Identity(3, 3);
  g2.block<1, 3>(6, 0) = Vec3::Constant(phi1[7]).transpose();
  g2.block<1, 3>(7, 3) = Vec3::Constant(phi1[7]).transpose();
  g2(8, 6) = 1.0;

  Eigen::FullPivLU<Mat> lu_b1(coeffs.b1);
  lu_b1.setThreshold(1e-14);
  if (!lu_b1.isInvertible())
    throw DegenerateGeometry("stage-1 error map is singular");
  Eigen::FullPivLU<Mat> lu_b2(b2);
  lu_b2.setThreshold(1e-14);
  if (!lu_b2.isInvertible())
    throw DegenerateGeometry("stage-2 error map is singular");

  const Mat b3 = recovered_state_coeffs(source, sensors);
  return lu_b1.solve(sys1.g1 * lu_b2.solve(g2 * b3));
}

// Sensitivity of the stacked equations to the sensor-parameter errors.
inline Mat product_g4(const SourceState& source, const SensorParams& sensors,
                      const Vec& phi1, const MeasurementSet& meas,
                      FdoaCoupling coupling = FdoaCoupling::kRateScaled) {
  (void)source;
  const Stage1Coeffs coeffs = stage1_noise_coeffs(phi1, sensors, meas,
                                                  coupling);
  Eigen::FullPivLU<Mat> lu_b1(coeffs.b1);
  lu_b1.setThreshold(1e-14);
  if (!lu_b1.isInvertible())
    throw DegenerateGeometry("stage-1 error map is singular");
  return lu_b1.solve(coeffs.d1);
}

struct SensitivityFactors {
  Mat g3;  // 2(M-1) x 7
  Mat g4;  // 2(M-1) x 6M
};

// Closed-form expressions for the same two matrices, written directly in the
// geometry. They must agree with the product route to rounding error; the
// tests assert that.
inline SensitivityFactors closed_form_g3_g4(
    const SourceState& source, const SensorParams& sensors, const Vec& phi1,
    const MeasurementSet& meas,
    FdoaCoupling coupling = FdoaCoupling::kRateScaled) {
  source.validate();
  sensors.validate();
  const int m = sensors.count();
  const int n = m - 1;
  const double c = source.speed;
  const Vec3 u = source.position;
  const Vec3 udot = source.velocity;
  const Vec3 s0 = sensors.position(0);
  const Vec3 v0 = sensors.velocity(0);

  const Vec3 p0 = u - s0;
  const double r0_hat = p0.norm();
  if (r0_hat == 0.0)
    throw DegenerateGeometry("source on the reference sensor");
  const Vec3 rho = p0 / r0_hat;
  const double rd0_hat = p0.dot(udot - v0) / r0_hat;
  const Vec3 lambda = (udot - v0) / r0_hat - (rd0_hat / r0_hat) * rho;
  const double eta2 = phi1[7];

  SensitivityFactors out{Mat::Zero(2 * n, 7), Mat::Zero(2 * n, 6 * m)};
  for (int i = 1; i < m; ++i) {
    const Vec3 si = sensors.position(i);
    const Vec3 vi = sensors.velocity(i);
    const double ri = range(source, si);
    if (ri == 0.0) throw DegenerateGeometry("source on a sensor");
    const double rdi = range_rate(source, si, vi);
    const double t = meas.tdoa[i - 1];
    const double td = meas.fdoa[i - 1];
    const int kd = i - 1;
    const int kr = n + i - 1;

    // g3, delay rows
    out.g3.block<1, 3>(kd, 0) =
        ((u - si) / ri - (u - s0) / ri).transpose() / c -
        (t * eta2 / (c * c * ri * r0_hat)) * p0.transpose();
    out.g3(kd, 6) = -t * t / ri;

    // g3, rate rows
    out.g3.block<1, 3>(kr, 0) =
        (rdi * (si - s0).transpose() / (ri * ri) -
         (vi - v0).transpose() / ri) /
            c +
        (eta2 / (c * c * r0_hat)) *
            ((rdi * t / (ri * ri) - td / ri) +
             t * rd0_hat / (ri * r0_hat)) *
            p0.transpose() -
        (t * eta2 / (c * c * r0_hat * ri)) * (udot - v0).transpose();
    out.g3.block<1, 3>(kr, 3) = out.g3.block<1, 3>(kd, 0);
    out.g3(kr, 6) = rdi * t * t / (ri * ri) - 2.0 * t * td / ri;

    // g4, delay rows
    const Vec3 di = p0 + c * t * rho;
    const double rho_scale = (coupling == FdoaCoupling::kRateScaled) ? td : t;
    const Vec3 di_dot = (udot - v0) + c * t * lambda + c * rho_scale * rho;
    out.g4.block<1, 3>(kd, 0) = -di.transpose() / (c * ri);
    out.g4.block<1, 3>(kd, 3 * i) = (u - si).transpose() / (c * ri);

    // g4, rate rows
    out.g4.block<1, 3>(kr, 0) =
        (di.transpose() * rdi / (ri * ri) - di_dot.transpose() / ri) / c;
    out.g4.block<1, 3>(kr, 3 * i) =
        ((udot - vi).transpose() / ri -
         rdi * (u - si).transpose() / (ri * ri)) /
        c;
    out.g4.block<1, 3>(kr, 3 * m) = out.g4.block<1, 3>(kd, 0);
    out.g4.block<1, 3>(kr, 3 * m + 3 * i) = out.g4.block<1, 3>(kd, 3 * i);
  }
  return out;
}

// Thresholds for the asymptotic-regime conditions. The source being much
// closer to the reference than to every other sensor, slow motion relative
// to range, and short propagation time relative to range.
inline constexpr double kNearReferenceFactor = 0.5;
inline constexpr double kSlowMotionLimit = 0.01;   // 1/s
inline constexpr double kShortDelayLimit = 0.01;   // s/m

struct BlockDeviation {
  std::string name;
  double rel_dev = 0.0;  // Frobenius, relative to the reference block
};

struct EfficiencyCheck {
  Mat g3;
  Mat g4;
  Mat b3;
  Mat cov_xi_inv;   // 7 x 7, from the chained estimator error maps
  Mat crlb_xi_inv;  // 7 x 7, from the information blocks
  bool cond_near_reference = false;
  bool cond_slow_motion = false;
  bool cond_short_delay = false;
  double max_rel_gap = 0.0;
  std::vector<BlockDeviation> block_deviations;
};

namespace detail {

inline double rel_frobenius(const Mat& value, const Mat& reference) {
  const double ref_norm = reference.norm();
  const double diff = (value - reference).norm();
  if (ref_norm == 0.0) return diff == 0.0 ? 0.0 : diff;
  return diff / ref_norm;
}

}  // namespace detail

// Per-block deviations of the closed-form sensitivities from the measurement
// Jacobians they approximate. Reported, never asserted: the speed column is
// only close when the reference range is genuinely small.
inline std::vector<BlockDeviation> sensitivity_block_deviations(
    const SensitivityFactors& factors, const Jacobians& jac) {
  const Eigen::Index n = factors.g3.rows() / 2;
  const Eigen::Index bm = factors.g4.cols() / 2;
  std::vector<BlockDeviation> devs;
  auto add = [&](const std::string& name, const Mat& value, const Mat& ref) {
    devs.push_back({name, detail::rel_frobenius(value, ref)});
  };
  add("g3 delay/position", factors.g3.block(0, 0, n, 3),
      jac.wrt_source.block(0, 0, n, 3));
  add("g3 delay/velocity", factors.g3.block(0, 3, n, 3),
      jac.wrt_source.block(0, 3, n, 3));
  add("g3 delay/speed", factors.g3.block(0, 6, n, 1),
      jac.wrt_speed.head(n));
  add("g3 rate/position", factors.g3.block(n, 0, n, 3),
      jac.wrt_source.block(n, 0, n, 3));
  add("g3 rate/velocity", factors.g3.block(n, 3, n, 3),
      jac.wrt_source.block(n, 3, n, 3));
  add("g3 rate/speed", factors.g3.block(n, 6, n, 1), jac.wrt_speed.tail(n));
  add("g4 delay/positions", factors.g4.block(0, 0, n, bm),
      Mat(-jac.wrt_sensors.block(0, 0, n, bm)));
  add("g4 delay/velocities", factors.g4.block(0, bm, n, bm),
      Mat(-jac.wrt_sensors.block(0, bm, n, bm)));
  add("g4 rate/positions", factors.g4.block(n, 0, n, bm),
      Mat(-jac.wrt_sensors.block(n, 0, n, bm)));
  add("g4 rate/velocities", factors.g4.block(n, bm, n, bm),
      Mat(-jac.wrt_sensors.block(n, bm, n, bm)));
  return devs;
}

// Compares the theoretical inverse covariance of the recovered state with
// the matching bound at the given operating point. Diagnostic only; the
// condition flags say whether the asymptotic regime actually holds.
inline EfficiencyCheck efficiency_check(
    const SourceState& source, const SensorParams& sensors,
    const NoiseModel& noise, const Vec& phi1,
    FdoaCoupling coupling = FdoaCoupling::kRateScaled) {
  const MeasurementSet meas = true_measurements(source, sensors);
  EfficiencyCheck check;
  check.g3 = product_g3(source, sensors, phi1, meas, coupling);
  check.g4 = product_g4(source, sensors, phi1, meas, coupling);
  check.b3 = recovered_state_coeffs(source, sensors);

  const Mat qa_inv =
      invert_sym<SingularCovariance>(noise.q_alpha, "measurement covariance");
  const Mat qb_inv =
      invert_sym<SingularCovariance>(noise.q_beta, "sensor covariance");
  const Mat cross = check.g3.transpose() * qa_inv * check.g4;
  const Mat inner = invert_sym<SingularFim>(
      symmetrize(qb_inv + check.g4.transpose() * qa_inv * check.g4),
      "sensor information");
  check.cov_xi_inv = symmetrize(check.g3.transpose() * qa_inv * check.g3 -
                                cross * inner * cross.transpose());

  const FimBlocks blocks = fim(source, sensors, noise);
  Mat top(7, 7);
  top.block<6, 6>(0, 0) = blocks.x11;
  top.block<6, 1>(0, 6) = blocks.x12;
  top.block<1, 6>(6, 0) = blocks.x12.transpose();
  top.block<1, 1>(6, 6) = blocks.x22;
  Mat side(7, blocks.x13.cols());
  side.topRows(6) = blocks.x13;
  side.bottomRows(1) = blocks.x23;
  const Mat folded =
      solve_sym<SingularFim>(blocks.x33, side.transpose(), "sensor block");
  check.crlb_xi_inv = symmetrize(top - side * folded);

  check.max_rel_gap =
      (check.cov_xi_inv - check.crlb_xi_inv).norm() / check.crlb_xi_inv.norm();

  const int m = sensors.count();
  double r0 = range(source, sensors.position(0));
  double min_other = std::numeric_limits<double>::infinity();
  double max_motion = 0.0;
  double max_delay = 0.0;
  for (int i = 0; i < m; ++i) {
    const double ri = range(source, sensors.position(i));
    const double rdi = range_rate(source, sensors.position(i),
                                  sensors.velocity(i));
    if (i > 0) min_other = std::min(min_other, ri);
    max_motion = std::max(max_motion, std::abs(rdi) / ri);
  }
  for (int i = 1; i < m; ++i) {
    const double ri = range(source, sensors.position(i));
    max_delay = std::max(max_delay, std::abs(meas.tdoa[i - 1]) / ri);
  }
  check.cond_near_reference = r0 < kNearReferenceFactor * min_other;
  check.cond_slow_motion = max_motion < kSlowMotionLimit;
  check.cond_short_delay = max_delay < kShortDelayLimit;

  check.block_deviations = sensitivity_block_deviations(
      closed_form_g3_g4(source, sensors, phi1, meas, coupling),
      jacobians(source, sensors));
  return check;
}

}  // namespace uwloc
