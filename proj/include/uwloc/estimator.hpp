#pragma once

#include <optional>

#include "uwloc/model.hpp"
#include "uwloc/noise.hpp"

namespace uwloc {

// How the first-stage weighting is built. Full covariance uses the known
// noise statistics; structured identity keeps the error-mapping structure but
// substitutes identities for the unknown covariances; plain identity skips
// weighting entirely.
enum class WeightingMode { kFullCovariance, kStructuredIdentity, kPlainIdentity };

// The rho term of the rate-row reference coupling vector can be scaled by the
// rate difference (consistent with differentiating the delay coupling) or by
// the delay itself. Estimation and analysis default to the rate scaling; the
// other form is kept for diagnostics.
enum class FdoaCoupling { kRateScaled, kDelayScaled };

// Minimum sensor count for the first stage: 2(M-1) rows must cover the nine
// pseudo-linear unknowns.
inline constexpr int kMinSensorsEstimate = 6;

// Pseudo-linear first-stage system. Unknown layout:
// [position(3), velocity(3), c*r0, c^2, c*rdot0] with r0/rdot0 the range and
// range rate to the reference sensor evaluated at its nominal parameters.
struct Stage1System {
  Vec h1;  // 2(M-1)
  Mat g1;  // 2(M-1) x 9
};

inline Stage1System build_stage1(const MeasurementSet& meas,
                                 const SensorParams& nominal) {
  meas.validate();
  nominal.validate();
  const int m = nominal.count();
  if (meas.sensor_count() != m)
    throw InvalidParameter("measurement and sensor counts disagree");
  const int n = m - 1;
  const Vec3 s0 = nominal.position(0);
  const Vec3 v0 = nominal.velocity(0);
  const double q0 = s0.squaredNorm();
  const double qd0 = v0.dot(s0);

  Stage1System sys{Vec(2 * n), Mat::Zero(2 * n, 9)};
  for (int i = 1; i < m; ++i) {
    const Vec3 si = nominal.position(i);
    const Vec3 vi = nominal.velocity(i);
    const double t = meas.tdoa[i - 1];
    const double td = meas.fdoa[i - 1];

    sys.h1[i - 1] = q0 - si.squaredNorm();
    sys.g1.block<1, 3>(i - 1, 0) = -2.0 * (si - s0).transpose();
    sys.g1(i - 1, 6) = -2.0 * t;
    sys.g1(i - 1, 7) = -t * t;

    sys.h1[n + i - 1] = 2.0 * (qd0 - vi.dot(si));
    sys.g1.block<1, 3>(n + i - 1, 0) = -2.0 * (vi - v0).transpose();
    sys.g1.block<1, 3>(n + i - 1, 3) = -2.0 * (si - s0).transpose();
    sys.g1(n + i - 1, 6) = -2.0 * td;
    sys.g1(n + i - 1, 7) = -2.0 * t * td;
    sys.g1(n + i - 1, 8) = -2.0 * t;
  }
  return sys;
}

// The unknown vector evaluated at a known source state; used by round-trip
// tests and by the diagnostics that need the exact linearization point.
inline Vec stage1_truth(const SourceState& source,
                        const SensorParams& nominal) {
  const Vec3 offset = source.position - nominal.position(0);
  const double r0 = offset.norm();
  if (r0 == 0.0) throw DegenerateGeometry("source on the reference sensor");
  const double rd0 = offset.dot(source.velocity - nominal.velocity(0)) / r0;
  Vec phi(9);
  phi << source.position, source.velocity, source.speed * r0,
      source.speed * source.speed, source.speed * rd0;
  return phi;
}

// Linear maps from the raw measurement and sensor errors to the first-stage
// equation error, evaluated at a linearization point.
struct Stage1Coeffs {
  Mat b1;  // 2(M-1) square
  Mat d1;  // 2(M-1) x 6M
};

inline Stage1Coeffs stage1_noise_coeffs(const Vec& phi1,
                                        const SensorParams& nominal,
                                        const MeasurementSet& meas,
                                        FdoaCoupling coupling) {
  const int m = nominal.count();
  const int n = m - 1;
  if (phi1.size() != 9) throw InvalidParameter("phi1 must have 9 entries");

  const Vec3 u = phi1.segment<3>(0);
  const Vec3 udot = phi1.segment<3>(3);
  const double c = std::sqrt(std::abs(phi1[7]));
  const Vec3 s0 = nominal.position(0);
  const Vec3 v0 = nominal.velocity(0);

  const Vec3 p0 = u - s0;
  const double r0 = p0.norm();
  if (r0 == 0.0)
    throw DegenerateGeometry("linearization point on the reference sensor");
  const Vec3 rho = p0 / r0;
  const double rd0 = p0.dot(udot - v0) / r0;
  const Vec3 lambda = (udot - v0) / r0 - (rd0 / r0) * rho;

  Mat b = Mat::Zero(n, n), bdot = Mat::Zero(n, n);
  Mat d = Mat::Zero(n, 3 * m), ddot = Mat::Zero(n, 3 * m);
  for (int i = 1; i < m; ++i) {
    const Vec3 si = nominal.position(i);
    const Vec3 vi = nominal.velocity(i);
    const Vec3 pi = u - si;
    const double ri = pi.norm();
    if (ri == 0.0)
      throw DegenerateGeometry("linearization point on a sensor");
    const double rdi = pi.dot(udot - vi) / ri;
    const double t = meas.tdoa[i - 1];
    const double td = meas.fdoa[i - 1];

    b(i - 1, i - 1) = 2.0 * c * ri;
    bdot(i - 1, i - 1) = 2.0 * c * rdi;

    const Vec3 di = p0 + c * t * rho;
    const double rho_scale = (coupling == FdoaCoupling::kRateScaled) ? td : t;
    const Vec3 di_dot = (udot - v0) + c * t * lambda + c * rho_scale * rho;

    d.block<1, 3>(i - 1, 0) = -2.0 * di.transpose();
    d.block<1, 3>(i - 1, 3 * i) = 2.0 * pi.transpose();
    ddot.block<1, 3>(i - 1, 0) = -2.0 * di_dot.transpose();
    ddot.block<1, 3>(i - 1, 3 * i) = 2.0 * (udot - vi).transpose();
  }

  Stage1Coeffs coeffs{Mat::Zero(2 * n, 2 * n), Mat::Zero(2 * n, 6 * m)};
  coeffs.b1.topLeftCorner(n, n) = b;
  coeffs.b1.bottomLeftCorner(n, n) = bdot;
  coeffs.b1.bottomRightCorner(n, n) = b;
  coeffs.d1.block(0, 0, n, 3 * m) = d;
  coeffs.d1.block(n, 0, n, 3 * m) = ddot;
  coeffs.d1.block(n, 3 * m, n, 3 * m) = d;
  return coeffs;
}

// (B Qa B^T + D Qb D^T)^-1. A vanishing error map means exact equations, in
// which case any weighting gives the same solution and identity is returned.
inline Mat weighting_from_coeffs(const Mat& b, const Mat& d, const Mat& q_alpha,
                                 const Mat& q_beta) {
  const Mat v = symmetrize(b * q_alpha * b.transpose() +
                           d * q_beta * d.transpose());
  if (v.cwiseAbs().maxCoeff() == 0.0) return Mat::Identity(v.rows(), v.cols());
  return invert_sym<SingularWeighting>(v, "stage-1 error covariance");
}

struct Stage1Weights {
  Mat w1;
  Mat b1;  // empty before a linearization point exists
  Mat d1;
};

inline Stage1Weights stage1_weights(const MeasurementSet& meas,
                                    const SensorParams& nominal,
                                    const std::optional<Vec>& phi1,
                                    const NoiseModel& noise, WeightingMode mode,
                                    FdoaCoupling coupling =
                                        FdoaCoupling::kRateScaled) {
  const int rows = 2 * (nominal.count() - 1);
  if (mode == WeightingMode::kPlainIdentity)
    return {Mat::Identity(rows, rows), Mat(), Mat()};

  if (!phi1) {
    if (mode == WeightingMode::kStructuredIdentity)
      return {Mat::Identity(rows, rows), Mat(), Mat()};
    if (noise.q_alpha.cwiseAbs().maxCoeff() == 0.0)
      return {Mat::Identity(rows, rows), Mat(), Mat()};
    return {invert_sym<SingularWeighting>(noise.q_alpha,
                                          "measurement covariance"),
            Mat(), Mat()};
  }

  const Stage1Coeffs coeffs = stage1_noise_coeffs(*phi1, nominal, meas,
                                                  coupling);
  Mat w1;
  if (mode == WeightingMode::kFullCovariance) {
    w1 = weighting_from_coeffs(coeffs.b1, coeffs.d1, noise.q_alpha,
                               noise.q_beta);
  } else {
    const int bm = 6 * nominal.count();
    w1 = weighting_from_coeffs(coeffs.b1, coeffs.d1,
                               Mat::Identity(rows, rows),
                               Mat::Identity(bm, bm));
  }
  return {w1, coeffs.b1, coeffs.d1};
}

struct WlsSolution {
  Vec x;
  Mat cov;  // inverse of the normal matrix
};

// Weighted least squares solved through a rank-revealing QR of the whitened,
// column-equilibrated design. The rank guard watches the triangular factor's
// diagonal, so it reacts to degenerate geometry rather than to the unit
// imbalance between columns or to an arbitrary weighting metric.
inline WlsSolution solve_wls(const Mat& g, const Vec& h, const Mat& w,
                             const std::string& context) {
  const Eigen::Index cols = g.cols();
  Vec scale(cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double norm = g.col(j).norm();
    if (norm == 0.0) throw RankDeficient(context + ": zero design column");
    scale[j] = 1.0 / norm;
  }

  if (g.rows() < cols)
    throw RankDeficient(context + ": fewer equations than unknowns");

  Eigen::LLT<Mat> llt(symmetrize(w));
  if (llt.info() != Eigen::Success)
    throw SingularWeighting(context + ": weighting is not positive definite");
  const Mat whitened = llt.matrixU() * g * scale.asDiagonal();
  const Vec rhs = llt.matrixU() * h;

  Eigen::ColPivHouseholderQR<Mat> qr(whitened);
  const Vec r_diag = qr.matrixR().diagonal().cwiseAbs();
  if (r_diag.minCoeff() == 0.0 ||
      r_diag.maxCoeff() / r_diag.minCoeff() >= kConditionLimit)
    throw RankDeficient(context + ": design rank guard tripped");

  Vec y = qr.solve(rhs);
  y += qr.solve(rhs - whitened * y);

  // (A^T A)^-1 from the triangular factor, permuted and unscaled.
  const Mat r = qr.matrixR().topRows(cols).template triangularView<Eigen::Upper>();
  const Mat r_inv = r.template triangularView<Eigen::Upper>().solve(
      Mat::Identity(cols, cols));
  const Mat cov_scaled = qr.colsPermutation() * (r_inv * r_inv.transpose()) *
                         qr.colsPermutation().transpose();
  WlsSolution sol;
  sol.x = scale.asDiagonal() * y;
  sol.cov = symmetrize(scale.asDiagonal() * cov_scaled * scale.asDiagonal());
  return sol;
}

inline WlsSolution stage1_solve(const Stage1System& sys, const Mat& w1) {
  return solve_wls(sys.g1, sys.h1, w1, "stage 1");
}

// Degeneracy floor for the per-axis offsets from the reference sensor; below
// it the second-stage error map loses rank.
inline constexpr double kAxisOffsetFloor = 1e-6;

// Error map of the refinement stage evaluated at a first-stage vector. The
// trailing 3x3 couples the scalar unknowns through the reference range terms.
inline Mat stage2_coeffs(const Vec3& offset, const Vec3& rel_vel,
                         double c_r0, double c_rd0) {
  Mat b2 = Mat::Zero(9, 9);
  b2.block<3, 3>(0, 0) = 2.0 * offset.asDiagonal();
  b2.block<3, 3>(3, 0) = rel_vel.asDiagonal();
  b2.block<3, 3>(3, 3) = offset.asDiagonal();
  b2(6, 6) = 2.0 * c_r0;
  b2(7, 6) = c_rd0;
  b2(7, 8) = c_r0;
  b2(8, 7) = 1.0;
  return b2;
}

inline Mat stage2_coeffs_from_phi1(const Vec& phi1,
                                   const SensorParams& nominal) {
  const Vec3 offset = phi1.segment<3>(0) - nominal.position(0);
  const Vec3 rel_vel = phi1.segment<3>(3) - nominal.velocity(0);
  return stage2_coeffs(offset, rel_vel, phi1[6], phi1[8]);
}

inline Mat stage2_coeffs_from_estimate(const Vec3& position,
                                       const Vec3& velocity, double speed,
                                       const SensorParams& nominal) {
  const Vec3 offset = position - nominal.position(0);
  const Vec3 rel_vel = velocity - nominal.velocity(0);
  const double r0 = offset.norm();
  if (r0 == 0.0) throw DegenerateGeometry("estimate on the reference sensor");
  const double rd0 = offset.dot(rel_vel) / r0;
  return stage2_coeffs(offset, rel_vel, speed * r0, speed * rd0);
}

// Exact first-order error map of the refinement stage. The weighting map
// above treats the squared-speed entry inside the design matrix as data,
// which drops its error coupling on the two scalar product rows; that
// coupling partially cancels the modelled terms, so the reported covariance
// needs the full map even though the weighting keeps the reduced one.
inline Mat stage2_error_map(const Vec& phi1, const SensorParams& nominal) {
  Mat b2 = stage2_coeffs_from_phi1(phi1, nominal);
  b2(6, 7) = -phi1[6] * phi1[6] / phi1[7];
  b2(7, 7) = -phi1[6] * phi1[8] / phi1[7];
  return b2;
}

// W2 = B2^-T N1 B2^-1 without forming an explicit inverse of B2.
inline Mat stage2_weighting(const Mat& b2, const Mat& stage1_normal) {
  Eigen::FullPivLU<Mat> lu(b2.transpose());
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw DegenerateGeometry("stage-2 error map is singular");
  const Mat z = lu.solve(stage1_normal);  // B2^-T N1
  return symmetrize(lu.solve(z.transpose()));
}

struct Stage2System {
  Vec h2;  // 9
  Mat g2;  // 9 x 7
  Mat w2;  // 9 x 9
  Mat b2;  // 9 x 9
};

// Refinement stage: squares and cross products of the first-stage entries
// against the unknown [offset^2(3), offset*rel_vel(3), c^2].
inline Stage2System build_stage2(const Vec& phi1, const SensorParams& nominal,
                                 const Mat& stage1_normal) {
  if (phi1.size() != 9) throw InvalidParameter("phi1 must have 9 entries");
  if (!(phi1[7] > 0.0))
    throw NonPositiveSpeedSquare("first-stage squared speed is not positive");
  const Vec3 offset = phi1.segment<3>(0) - nominal.position(0);
  const Vec3 rel_vel = phi1.segment<3>(3) - nominal.velocity(0);
  if (offset.cwiseAbs().minCoeff() < kAxisOffsetFloor * offset.norm())
    throw DegenerateGeometry(
        "source offset from the reference sensor vanishes on an axis");

  Stage2System sys;
  sys.h2.resize(9);
  sys.h2.segment<3>(0) = offset.cwiseProduct(offset);
  sys.h2.segment<3>(3) = offset.cwiseProduct(rel_vel);
  sys.h2[6] = phi1[6] * phi1[6];
  sys.h2[7] = phi1[6] * phi1[8];
  sys.h2[8] = phi1[7];

  sys.g2 = Mat::Zero(9, 7);
  sys.g2.block<3, 3>(0, 0) = Mat::Identity(3, 3);
  sys.g2.block<3, 3>(3, 3) = Mat::Identity(3, 3);
  sys.g2.block<1, 3>(6, 0) = Vec3::Constant(phi1[7]).transpose();
  sys.g2.block<1, 3>(7, 3) = Vec3::Constant(phi1[7]).transpose();
  sys.g2(8, 6) = 1.0;

  sys.b2 = stage2_coeffs_from_phi1(phi1, nominal);
  sys.w2 = stage2_weighting(sys.b2, stage1_normal);
  return sys;
}

inline WlsSolution stage2_solve(const Stage2System& sys) {
  return solve_wls(sys.g2, sys.h2, sys.w2, "stage 2");
}

// Relative magnitude beyond which a negative squared quantity is treated as
// divergence rather than noise.
inline constexpr double kClampWarnFraction = 1e-3;

struct Recovered {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double speed = 0.0;
  bool clamped = false;        // any negative radicand was clamped
  bool clamp_warning = false;  // a clamped magnitude was large
};

// Maps the refined vector back to position, velocity and speed. Signs of the
// position offsets come from the first stage; negative radicands are clamped
// to their magnitude, with a warning once they stop looking like noise.
inline Recovered recover(const Vec& phi1, const Vec& phi2,
                         const SensorParams& nominal) {
  if (phi1.size() != 9 || phi2.size() != 7)
    throw InvalidParameter("recover expects phi1(9) and phi2(7)");
  const Vec3 s0 = nominal.position(0);
  const Vec3 v0 = nominal.velocity(0);
  const double scale = phi2.norm();

  Recovered rec;
  const Vec3 sign_source = phi1.segment<3>(0) - s0;
  Vec3 offset;
  for (int k = 0; k < 3; ++k) {
    const double sq = phi2[k];
    if (sq < 0.0) {
      rec.clamped = true;
      if (-sq > kClampWarnFraction * scale) rec.clamp_warning = true;
    }
    const double sign = sign_source[k] < 0.0 ? -1.0 : 1.0;
    offset[k] = sign * std::sqrt(std::abs(sq));
  }
  rec.position = offset + s0;

  if (offset.cwiseAbs().minCoeff() == 0.0)
    throw DegenerateGeometry("recovered offset vanishes on an axis");
  rec.velocity = phi2.segment<3>(3).cwiseQuotient(offset) + v0;

  const double speed_sq = phi2[6];
  if (speed_sq <= 0.0) {
    if (-speed_sq > kClampWarnFraction * scale)
      throw NonPositiveSpeedSquare("refined squared speed is negative");
    rec.clamped = true;
  }
  rec.speed = std::sqrt(std::abs(speed_sq));
  if (!(rec.speed > 0.0))
    throw NonPositiveSpeedSquare("recovered speed is zero");
  return rec;
}

struct EstimateOptions {
  int n_iter = 2;  // weighting refinement passes per stage, 1..5
  WeightingMode mode = WeightingMode::kFullCovariance;
  FdoaCoupling coupling = FdoaCoupling::kRateScaled;
};

struct EstimateReport {
  Vec phi1;
  Vec phi2;
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double speed = 0.0;
  Mat cov_phi1;  // 9 x 9
  Mat cov_xi;    // 7 x 7 covariance of [position, velocity, speed]
  int iterations_used = 0;
  WeightingMode weighting_mode = WeightingMode::kFullCovariance;
  bool clamp_warning = false;
};

// Full two-stage estimate from measurements and nominal sensor parameters.
// Stage one alternates solve / re-weight; stage two does the same with the
// weighting rebuilt from the recovered state.
inline EstimateReport estimate(const MeasurementSet& meas,
                               const SensorParams& nominal,
                               const NoiseModel& noise,
                               const EstimateOptions& options = {}) {
  meas.validate();
  nominal.validate();
  if (options.n_iter < 1 || options.n_iter > 5)
    throw InvalidParameter("n_iter must be between 1 and 5");
  if (nominal.count() < kMinSensorsEstimate)
    throw RankDeficient("the first stage needs at least " +
                        std::to_string(kMinSensorsEstimate) + " sensors");
  if (meas.sensor_count() != nominal.count())
    throw InvalidParameter("measurement and sensor counts disagree");

  // Stage one: an initial solve under the mode's starting weights, then
  // n_iter re-weight / re-solve passes, so even a single pass delivers a
  // solution computed under estimate-based weights.
  const Stage1System sys1 = build_stage1(meas, nominal);
  Mat w1 = stage1_weights(meas, nominal, std::nullopt, noise, options.mode,
                          options.coupling)
               .w1;
  WlsSolution sol1 = stage1_solve(sys1, w1);
  for (int it = 0; it < options.n_iter; ++it) {
    if (options.mode != WeightingMode::kPlainIdentity)
      w1 = stage1_weights(meas, nominal, sol1.x, noise, options.mode,
                          options.coupling)
               .w1;
    sol1 = stage1_solve(sys1, w1);
  }
  const Vec phi1 = sol1.x;
  const Mat cov_phi1 = sol1.cov;
  const Mat stage1_normal = symmetrize(sys1.g1.transpose() * w1 * sys1.g1);

  // Stage two: the weighting starts from the first-stage vector and is then
  // rebuilt from the recovered state after each solve.
  Stage2System sys2 = build_stage2(phi1, nominal, stage1_normal);
  WlsSolution sol2;
  Recovered rec;
  Mat w2_used;
  for (int it = 0; it < options.n_iter; ++it) {
    w2_used = sys2.w2;
    sol2 = stage2_solve(sys2);
    rec = recover(phi1, sol2.x, nominal);
    sys2.b2 = stage2_coeffs_from_estimate(rec.position, rec.velocity,
                                          rec.speed, nominal);
    sys2.w2 = stage2_weighting(sys2.b2, stage1_normal);
  }
  const Vec phi2 = sol2.x;

  // Covariance of the delivered refinement: the solve used w2_used, the
  // equation error follows the exact map, so the two no longer cancel and
  // the sandwich form is required.
  const Mat gain = sol2.cov * sys2.g2.transpose() * w2_used;
  const Mat error_map = stage2_error_map(phi1, nominal);
  const Mat cov_eps2 = error_map * cov_phi1 * error_map.transpose();
  const Mat cov_phi2 = symmetrize(gain * cov_eps2 * gain.transpose());

  // Covariance of the recovered state through the final error map.
  Mat b3 = Mat::Zero(7, 7);
  b3.block<3, 3>(0, 0) = 2.0 * (rec.position - nominal.position(0)).asDiagonal();
  b3.block<3, 3>(3, 0) = (rec.velocity - nominal.velocity(0)).asDiagonal();
  b3.block<3, 3>(3, 3) = (rec.position - nominal.position(0)).asDiagonal();
  b3(6, 6) = 2.0 * rec.speed;
  Eigen::FullPivLU<Mat> lu(b3);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible())
    throw DegenerateGeometry("recovered-state error map is singular");
  const Mat b3_inv = lu.inverse();

  EstimateReport report;
  report.phi1 = phi1;
  report.phi2 = phi2;
  report.position = rec.position;
  report.velocity = rec.velocity;
  report.speed = rec.speed;
  report.cov_phi1 = cov_phi1;
  report.cov_xi = symmetrize(b3_inv * cov_phi2 * b3_inv.transpose());
  report.iterations_used = options.n_iter;
  report.weighting_mode = options.mode;
  report.clamp_warning = rec.clamp_warning;
  return report;
}

}  // namespace uwloc
