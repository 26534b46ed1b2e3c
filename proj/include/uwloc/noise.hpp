#pragma once

#include "uwloc/rng.hpp"
#include "uwloc/types.hpp"

namespace uwloc {

// Measurement and sensor-parameter error statistics. q_alpha covers the
// stacked delay/rate vector (2(M-1) square); q_beta covers the stacked
// sensor positions and velocities (6M square).
struct NoiseModel {
  Mat q_alpha;
  Mat q_beta;
  double sigma_d = 0.0;  // range-noise scale, meters
  double sigma_s = 0.0;  // sensor-error scale, meters

  void validate() const {
    if (!is_symmetric(q_alpha) || !is_symmetric(q_beta))
      throw InvalidParameter("noise covariances must be symmetric");
    for (const Mat* q : {&q_alpha, &q_beta}) {
      SymmetricSolver s(*q);
      if (s.min_eigenvalue() < -1e-10 * std::max(s.max_eigenvalue(), 0.0))
        throw NotPsd("noise covariance has a negative eigenvalue");
    }
  }
};

// Measurement covariance with a fully correlated reference: unit diagonal and
// 0.5 off-diagonal within each difference block, the rate block scaled by
// 0.1, the whole matrix by sigma_d^2 / c^2.
inline Mat standard_q_alpha(int sensor_count, double sigma_d, double speed) {
  if (sensor_count < 2) throw InvalidParameter("need at least two sensors");
  if (sigma_d < 0.0) throw InvalidParameter("sigma_d must be non-negative");
  if (!(speed > 0.0)) throw InvalidParameter("speed must be positive");
  const int n = sensor_count - 1;
  Mat r = Mat::Constant(n, n, 0.5);
  r.diagonal().setOnes();
  Mat q = Mat::Zero(2 * n, 2 * n);
  const double scale = sigma_d * sigma_d / (speed * speed);
  q.topLeftCorner(n, n) = scale * r;
  q.bottomRightCorner(n, n) = 0.1 * scale * r;
  return q;
}

// Diagonal sensor-parameter covariance: per-sensor scale b_i on each position
// coordinate, half of it on each velocity coordinate, times sigma_s^2.
inline Mat standard_q_beta(const Vec& b, double sigma_s) {
  const int m = static_cast<int>(b.size());
  if (m < 1) throw InvalidParameter("per-sensor scale vector is empty");
  for (int i = 0; i < m; ++i)
    if (!(b[i] > 0.0))
      throw InvalidParameter("per-sensor scales must be positive");
  Vec diag(6 * m);
  for (int i = 0; i < m; ++i) {
    diag.segment<3>(3 * i).setConstant(sigma_s * sigma_s * b[i]);
    diag.segment<3>(3 * m + 3 * i).setConstant(0.5 * sigma_s * sigma_s * b[i]);
  }
  return diag.asDiagonal();
}

inline NoiseModel make_noise_model(int sensor_count, const Vec& b,
                                   double sigma_d, double sigma_s,
                                   double speed) {
  return NoiseModel{standard_q_alpha(sensor_count, sigma_d, speed),
                    standard_q_beta(b, sigma_s), sigma_d, sigma_s};
}

// Correlated Gaussian sampler with the factorization done once up front.
class GaussianSampler {
 public:
  explicit GaussianSampler(const Mat& cov) : sqrt_(psd_sqrt(cov)) {}

  Vec sample(RngStream& rng) const {
    Vec z(sqrt_.rows());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.next_normal();
    return sqrt_ * z;
  }

 private:
  Mat sqrt_;
};

// mean + L z with z standard normal and L a PSD square root of cov.
inline Vec sample_gaussian(const Vec& mean, const Mat& cov, RngStream& rng) {
  if (mean.size() != cov.rows() || cov.rows() != cov.cols())
    throw InvalidParameter("mean / covariance dimensions disagree");
  return mean + GaussianSampler(cov).sample(rng);
}

// Draws sensor-parameter errors and applies them to the nominal side;
// the true parameters are left untouched.
inline SensorArray perturb_array(const SensorArray& array, const Mat& q_beta,
                                 RngStream& rng) {
  array.validate();
  const int m = array.count();
  if (q_beta.rows() != 6 * m || q_beta.cols() != 6 * m)
    throw InvalidParameter("q_beta must be 6M square");
  const Vec delta = sample_gaussian(Vec::Zero(6 * m), q_beta, rng);
  SensorArray out = array;
  out.nominal = SensorParams::from_stacked(array.truth.stacked() + delta);
  return out;
}

}  // namespace uwloc
