#pragma once

#include "uwloc/model.hpp"
#include "uwloc/noise.hpp"

namespace uwloc {

// Partial derivatives of the stacked measurement vector with respect to the
// source state (position and velocity), the propagation speed, and the
// stacked sensor parameters. Rows follow the measurement ordering: delay
// differences first, rate differences second.
struct Jacobians {
  Mat wrt_source;   // 2(M-1) x 6
  Vec wrt_speed;    // 2(M-1)
  Mat wrt_sensors;  // 2(M-1) x 6M
};

inline Jacobians jacobians(const SourceState& source,
                           const SensorParams& sensors) {
  source.validate();
  sensors.validate();
  const int m = sensors.count();
  const int n = m - 1;
  const double c = source.speed;

  std::vector<double> r(m), rr(m);
  std::vector<Vec3> rho(m), drho(m);  // drho: d(range rate)/d(position)
  for (int i = 0; i < m; ++i) {
    r[i] = range(source, sensors.position(i));
    if (r[i] == 0.0)
      throw DegenerateGeometry("jacobians undefined at zero range");
    rr[i] = range_rate(source, sensors.position(i), sensors.velocity(i));
    rho[i] = (source.position - sensors.position(i)) / r[i];
    const Vec3 rel_vel = source.velocity - sensors.velocity(i);
    drho[i] = rel_vel / r[i] - rho[i] * (rr[i] / r[i]);
  }

  Jacobians jac{Mat::Zero(2 * n, 6), Vec::Zero(2 * n), Mat::Zero(2 * n, 6 * m)};
  for (int i = 1; i < m; ++i) {
    const int kd = i - 1;      // delay row
    const int kr = n + i - 1;  // rate row

    jac.wrt_source.block<1, 3>(kd, 0) = (rho[i] - rho[0]).transpose() / c;
    jac.wrt_source.block<1, 3>(kr, 0) = (drho[i] - drho[0]).transpose() / c;
    jac.wrt_source.block<1, 3>(kr, 3) = (rho[i] - rho[0]).transpose() / c;

    jac.wrt_speed[kd] = -(r[i] - r[0]) / (c * c);
    jac.wrt_speed[kr] = -(rr[i] - rr[0]) / (c * c);

    jac.wrt_sensors.block<1, 3>(kd, 0) = rho[0].transpose() / c;
    jac.wrt_sensors.block<1, 3>(kd, 3 * i) = -rho[i].transpose() / c;
    jac.wrt_sensors.block<1, 3>(kr, 0) = drho[0].transpose() / c;
    jac.wrt_sensors.block<1, 3>(kr, 3 * i) = -drho[i].transpose() / c;
    jac.wrt_sensors.block<1, 3>(kr, 3 * m) = rho[0].transpose() / c;
    jac.wrt_sensors.block<1, 3>(kr, 3 * m + 3 * i) = -rho[i].transpose() / c;
  }
  return jac;
}

// Information blocks for the stacked unknown [source(6); speed(1); sensors(6M)].
// The sensor block carries the prior term from the sensor-error covariance.
struct FimBlocks {
  Mat x11;  // 6 x 6
  Mat x12;  // 6 x 1
  Mat x13;  // 6 x 6M
  Mat x22;  // 1 x 1
  Mat x23;  // 1 x 6M
  Mat x33;  // 6M x 6M

  Mat assemble() const {
    const Eigen::Index nb = x13.cols();
    Mat fim(7 + nb, 7 + nb);
    fim.block(0, 0, 6, 6) = x11;
    fim.block(0, 6, 6, 1) = x12;
    fim.block(0, 7, 6, nb) = x13;
    fim.block(6, 0, 1, 6) = x12.transpose();
    fim.block(6, 6, 1, 1) = x22;
    fim.block(6, 7, 1, nb) = x23;
    fim.block(7, 0, nb, 6) = x13.transpose();
    fim.block(7, 6, nb, 1) = x23.transpose();
    fim.block(7, 7, nb, nb) = x33;
    return symmetrize(fim);
  }
};

inline FimBlocks fim(const SourceState& source, const SensorParams& sensors,
                     const NoiseModel& noise) {
  const Jacobians jac = jacobians(source, sensors);
  const Mat qa_inv =
      invert_sym<SingularCovariance>(noise.q_alpha, "measurement covariance");
  const Mat qb_inv =
      invert_sym<SingularCovariance>(noise.q_beta, "sensor covariance");
  const Mat jt = jac.wrt_source;
  const Mat jc = jac.wrt_speed;
  const Mat jb = jac.wrt_sensors;
  FimBlocks blocks;
  blocks.x11 = jt.transpose() * qa_inv * jt;
  blocks.x12 = jt.transpose() * qa_inv * jc;
  blocks.x13 = jt.transpose() * qa_inv * jb;
  blocks.x22 = jc.transpose() * qa_inv * jc;
  blocks.x23 = jc.transpose() * qa_inv * jb;
  blocks.x33 = jb.transpose() * qa_inv * jb + qb_inv;
  return blocks;
}

// Root-sum bounds over the position, velocity and speed entries of the
// inverse information matrix, plus the inverse itself.
struct CrlbReport {
  double crlb_u = 0.0;     // meters
  double crlb_udot = 0.0;  // m/s
  double crlb_c = 0.0;     // m/s
  Mat source_block;        // leading 7 x 7 of the inverse
  Mat full_inverse;        // (7 + 6M) square
};

inline CrlbReport crlb_report(const FimBlocks& blocks) {
  const Mat info = blocks.assemble();
  CrlbReport rep;
  rep.full_inverse = invert_sym<SingularFim>(info, "information matrix");
  rep.source_block = rep.full_inverse.topLeftCorner(7, 7);
  rep.crlb_u = std::sqrt(rep.full_inverse.diagonal().segment<3>(0).sum());
  rep.crlb_udot = std::sqrt(rep.full_inverse.diagonal().segment<3>(3).sum());
  rep.crlb_c = std::sqrt(rep.full_inverse(6, 6));
  return rep;
}

// --- Source-state bound, speed treated as unknown -------------------------

// Block-inversion route: fold the speed and sensor unknowns out of the
// information matrix in one Schur complement.
inline Mat crlb_theta_unknown_speed(const FimBlocks& blocks) {
  const Eigen::Index nb = blocks.x13.cols();
  Mat nuisance(1 + nb, 1 + nb);
  nuisance.block(0, 0, 1, 1) = blocks.x22;
  nuisance.block(0, 1, 1, nb) = blocks.x23;
  nuisance.block(1, 0, nb, 1) = blocks.x23.transpose();
  nuisance.block(1, 1, nb, nb) = blocks.x33;
  Mat cross(6, 1 + nb);
  cross << blocks.x12, blocks.x13;
  const Mat folded = solve_sym<SingularFim>(
      nuisance, cross.transpose(), "speed/sensor nuisance block");
  const Mat info = blocks.x11 - cross * folded;
  return invert_sym<SingularFim>(info, "source-state information");
}

// Projected measurement weighting shared by both speed cases: with the given
// effective inverse measurement covariance, fold the sensor uncertainty in
// through its prior.
inline Mat crlb_theta_given_weighting(const Jacobians& jac, const Mat& q_inv,
                                      const Mat& q_beta) {
  const Mat qb_inv =
      invert_sym<SingularCovariance>(q_beta, "sensor covariance");
  const Mat jt = jac.wrt_source;
  const Mat jb = jac.wrt_sensors;
  const Mat gamma = invert_sym<SingularFim>(
      jb.transpose() * q_inv * jb + qb_inv, "sensor information");
  const Mat cross = jt.transpose() * q_inv * jb;
  const Mat info =
      jt.transpose() * q_inv * jt - cross * gamma * cross.transpose();
  return invert_sym<SingularFim>(info, "source-state information");
}

// Direct form of the speed-projected inverse covariance.
inline Mat q1_inverse_schur(const Jacobians& jac, const Mat& q_alpha) {
  const Mat qa_inv =
      invert_sym<SingularCovariance>(q_alpha, "measurement covariance");
  const Vec jc = jac.wrt_speed;
  const double denom = jc.transpose() * qa_inv * jc;
  if (!(denom > 0.0))
    throw DegenerateProjection("speed column is numerically zero");
  const Vec w = qa_inv * jc;
  return qa_inv - (w * w.transpose()) / denom;
}

// Rank-one projector onto the whitened speed column.
inline Mat projection_p1(const Jacobians& jac, const Mat& q_alpha) {
  if (jac.wrt_speed.norm() == 0.0)
    throw DegenerateProjection("speed column vanishes");
  const Mat qa_inv =
      invert_sym<SingularCovariance>(q_alpha, "measurement covariance");
  const Mat s = psd_sqrt(qa_inv);
  const Vec jc = jac.wrt_speed;
  const double denom = jc.transpose() * qa_inv * jc;
  if (!(denom > 0.0))
    throw DegenerateProjection("speed column is numerically zero");
  const Vec w = s * jc;
  return (w * w.transpose()) / denom;
}

// Projector form of the same weighting: whiten, remove the speed direction,
// unwhiten.
inline Mat q1_inverse_projected(const Jacobians& jac, const Mat& q_alpha) {
  const Mat qa_inv =
      invert_sym<SingularCovariance>(q_alpha, "measurement covariance");
  const Mat s = psd_sqrt(qa_inv);
  const Mat p1 = projection_p1(jac, q_alpha);
  const Mat p_perp = Mat::Identity(p1.rows(), p1.cols()) - p1;
  return s * p_perp * s;
}

inline Mat crlb_theta_unknown_speed(const Jacobians& jac,
                                    const NoiseModel& noise) {
  return crlb_theta_given_weighting(jac, q1_inverse_schur(jac, noise.q_alpha),
                                    noise.q_beta);
}

inline Mat crlb_theta_unknown_speed(const SourceState& source,
                                    const SensorParams& sensors,
                                    const NoiseModel& noise) {
  return crlb_theta_unknown_speed(fim(source, sensors, noise));
}

// --- Source-state bound, speed known ---------------------------------------

inline Mat crlb_theta_known_speed(const Jacobians& jac,
                                  const NoiseModel& noise) {
  const Mat qa_inv =
      invert_sym<SingularCovariance>(noise.q_alpha, "measurement covariance");
  return crlb_theta_given_weighting(jac, qa_inv, noise.q_beta);
}

inline Mat crlb_theta_known_speed(const FimBlocks& blocks) {
  const Mat folded = solve_sym<SingularFim>(
      blocks.x33, blocks.x13.transpose(), "sensor information block");
  const Mat info = blocks.x11 - blocks.x13 * folded;
  return invert_sym<SingularFim>(info, "source-state information");
}

inline Mat crlb_theta_known_speed(const SourceState& source,
                                  const SensorParams& sensors,
                                  const NoiseModel& noise) {
  return crlb_theta_known_speed(jacobians(source, sensors), noise);
}

// Information matrix for the known-speed case: the speed row and column are
// simply absent.
inline Mat known_speed_fim(const FimBlocks& blocks) {
  const Eigen::Index nb = blocks.x13.cols();
  Mat info(6 + nb, 6 + nb);
  info.block(0, 0, 6, 6) = blocks.x11;
  info.block(0, 6, 6, nb) = blocks.x13;
  info.block(6, 0, nb, 6) = blocks.x13.transpose();
  info.block(6, 6, nb, nb) = blocks.x33;
  return symmetrize(info);
}

}  // namespace uwloc
