#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "uwloc/errors.hpp"

namespace uwloc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;

// Shared condition-number guard for every factorization-based solve.
inline constexpr double kConditionLimit = 1e12;

inline bool is_finite(const Mat& m) { return m.allFinite(); }

// Symmetry to a relative tolerance on the largest element.
inline bool is_symmetric(const Mat& m, double rtol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1.0);
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rtol * scale;
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Eigendecomposition-backed solver for symmetric matrices. Keeps the spectrum
// around so callers can check conditioning before trusting the solve.
class SymmetricSolver {
 public:
  explicit SymmetricSolver(const Mat& a) : eig_(symmetrize(a)) {
    if (eig_.info() != Eigen::Success)
      throw SingularMatrix("symmetric eigendecomposition failed");
  }

  double condition() const {
    const Vec& ev = eig_.eigenvalues();
    const double hi = ev.cwiseAbs().maxCoeff();
    const double lo = ev.cwiseAbs().minCoeff();
    if (lo == 0.0) return std::numeric_limits<double>::infinity();
    return hi / lo;
  }

  double min_eigenvalue() const { return eig_.eigenvalues().minCoeff(); }
  double max_eigenvalue() const { return eig_.eigenvalues().maxCoeff(); }

  Mat solve(const Mat& rhs) const {
    const Mat& v = eig_.eigenvectors();
    return v * eig_.eigenvalues().cwiseInverse().asDiagonal() *
           (v.transpose() * rhs);
  }

  Mat inverse() const {
    const Mat& v = eig_.eigenvectors();
    return v * eig_.eigenvalues().cwiseInverse().asDiagonal() * v.transpose();
  }

 private:
  Eigen::SelfAdjointEigenSolver<Mat> eig_;
};

// Solve a * x = rhs for symmetric a, raising ErrorT when the condition number
// exceeds the guard.
template <class ErrorT = SingularMatrix>
Mat solve_sym(const Mat& a, const Mat& rhs, const std::string& context) {
  SymmetricSolver s(a);
  if (!(s.condition() < kConditionLimit))
    throw ErrorT(context + ": condition number exceeds guard");
  return s.solve(rhs);
}

template <class ErrorT = SingularMatrix>
Mat invert_sym(const Mat& a, const std::string& context) {
  SymmetricSolver s(a);
  if (!(s.condition() < kConditionLimit))
    throw ErrorT(context + ": condition number exceeds guard");
  return s.inverse();
}

// Symmetric positive-semidefinite square root, a = L * L with L symmetric.
// Eigenvalues below -tol * max_diag raise NotPsd; small negatives clamp to 0.
inline Mat psd_sqrt(const Mat& a, double rel_tol = 1e-10) {
  if (!is_symmetric(a, 1e-10))
    throw NotPsd("psd_sqrt: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(a));
  if (eig.info() != Eigen::Success)
    throw NotPsd("psd_sqrt: eigendecomposition failed");
  const double max_diag = std::max(a.diagonal().cwiseAbs().maxCoeff(), 0.0);
  const double floor = -rel_tol * std::max(max_diag, 1e-300);
  Vec ev = eig.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < floor) throw NotPsd("psd_sqrt: negative pivot beyond tolerance");
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

// Pairwise (tree) summation: a fixed reduction order that keeps totals
// reproducible regardless of how the inputs were produced.
inline double pairwise_sum(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(values.subspan(0, half)) +
         pairwise_sum(values.subspan(half));
}

inline double pairwise_sum(const std::vector<double>& values) {
  return pairwise_sum(std::span<const double>(values));
}

}  // namespace uwloc
