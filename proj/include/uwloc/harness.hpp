#pragma once

#include <algorithm>
#include <atomic>
#include <future>
#include <limits>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "uwloc/crlb.hpp"
#include "uwloc/estimator.hpp"
#include "uwloc/scenario.hpp"

namespace uwloc {

enum class SweepVariable {
  kSigmaDSquaredDb,  // 10*log10 of the squared range-noise scale
  kSigmaSSquaredDb,  // 10*log10 of the squared sensor-error scale
  kSpeedOffset       // actual propagation speed minus the assumed one, m/s
};

struct Experiment {
  std::string name;
  Scenario scenario;
  SweepVariable sweep = SweepVariable::kSigmaDSquaredDb;
  Vec grid;
  int trials = 1000;
  EstimateOptions options;
  bool bounds_only = false;         // skip the Monte Carlo, bounds only
  bool compare_weightings = false;  // run all three weighting modes
  double base_speed = 1490.0;       // assumed speed for the offset sweep

  void validate() const {
    if (!bounds_only && trials < 1)
      throw InvalidParameter("experiment needs at least one trial");
    for (Eigen::Index i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1]))
        throw InvalidParameter("sweep grid must be strictly increasing");
    if (grid.size() == 0) throw InvalidParameter("sweep grid is empty");
  }
};

struct SeriesResult {
  std::string name;
  Vec grid;
  Vec values_db;
  std::string unit;
  std::vector<int> trials_failed;
};

// Everything below -120 dB is reported as the floor so zero-error cells stay
// numeric.
inline constexpr double kDbFloor = -120.0;

inline double to_db(double value) {
  if (!(value > 0.0)) return kDbFloor;
  return std::max(10.0 * std::log10(value), kDbFloor);
}

// Mean squared norm of an error ensemble, in dB.
inline double mse_db(const std::vector<Vec>& errors) {
  if (errors.empty()) throw EmptyEnsemble("mse over an empty ensemble");
  std::vector<double> squares(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i)
    squares[i] = errors[i].squaredNorm();
  return to_db(pairwise_sum(squares) / static_cast<double>(errors.size()));
}

namespace detail {

struct PointAccumulator {
  std::vector<double> sq_u, sq_udot, sq_c;
  int failed = 0;

  double mse(const std::vector<double>& sq) const {
    if (sq.empty()) return kDbFloor;
    return to_db(pairwise_sum(sq) / static_cast<double>(sq.size()));
  }
};

struct PointSettings {
  double sigma_d = 0.0;
  double sigma_s = 0.0;
  bool draw_speed = false;
  double speed_lo = 0.0;
  double speed_hi = 0.0;
  double fixed_speed = 0.0;
  double representative_speed = 0.0;  // for the bound columns
};

inline PointSettings point_settings(const Experiment& exp, double grid_value) {
  PointSettings ps;
  ps.sigma_d = exp.scenario.sigma_d();
  ps.sigma_s = exp.scenario.sigma_s();
  switch (exp.sweep) {
    case SweepVariable::kSigmaDSquaredDb:
      ps.sigma_d = std::pow(10.0, grid_value / 20.0);
      break;
    case SweepVariable::kSigmaSSquaredDb:
      ps.sigma_s = std::pow(10.0, grid_value / 20.0);
      break;
    case SweepVariable::kSpeedOffset:
      break;
  }
  if (exp.sweep == SweepVariable::kSpeedOffset) {
    ps.draw_speed = false;
    ps.fixed_speed = exp.base_speed + grid_value;
    ps.representative_speed = ps.fixed_speed;
  } else if (exp.scenario.speed_range) {
    ps.draw_speed = true;
    ps.speed_lo = exp.scenario.speed_range->first;
    ps.speed_hi = exp.scenario.speed_range->second;
    ps.representative_speed = 0.5 * (ps.speed_lo + ps.speed_hi);
  } else {
    ps.draw_speed = false;
    ps.fixed_speed = exp.scenario.source.speed;
    ps.representative_speed = ps.fixed_speed;
  }
  return ps;
}

// Stream purposes; trial streams are derived as (seed, purpose, trial) with
// no grid index, so every grid point sees the same draws and sweep
// differences reflect the sweep variable alone.
inline constexpr std::uint64_t kPurposeMeasurement = 1;
inline constexpr std::uint64_t kPurposeSensors = 2;
inline constexpr std::uint64_t kPurposeSpeed = 3;

}  // namespace detail

// Bounds at one operating point, already squared and in dB.
struct BoundPoint {
  double u_db = 0.0;
  double udot_db = 0.0;
  double c_db = 0.0;
};

inline BoundPoint bound_point(const Scenario& scenario, double sigma_d,
                              double sigma_s, double speed) {
  SourceState src = scenario.source;
  src.speed = speed;
  const NoiseModel noise = scenario.noise_model(sigma_d, sigma_s, speed);
  const CrlbReport rep = crlb_report(fim(src, scenario.array.truth, noise));
  return {to_db(rep.crlb_u * rep.crlb_u), to_db(rep.crlb_udot * rep.crlb_udot),
          to_db(rep.crlb_c * rep.crlb_c)};
}

inline BoundPoint bound_point_known_speed(const Scenario& scenario,
                                          double sigma_d, double sigma_s,
                                          double speed) {
  SourceState src = scenario.source;
  src.speed = speed;
  const NoiseModel noise = scenario.noise_model(sigma_d, sigma_s, speed);
  const Mat info = known_speed_fim(fim(src, scenario.array.truth, noise));
  const Mat inv = invert_sym<SingularFim>(info, "information matrix");
  return {to_db(inv.diagonal().segment<3>(0).sum()),
          to_db(inv.diagonal().segment<3>(3).sum()),
          std::numeric_limits<double>::quiet_NaN()};
}

inline std::vector<SeriesResult> run_experiment(const Experiment& exp,
                                                std::uint64_t seed) {
  exp.validate();
  const Scenario& sc = exp.scenario;
  const int points = static_cast<int>(exp.grid.size());

  std::vector<WeightingMode> modes;
  if (exp.compare_weightings)
    modes = {WeightingMode::kFullCovariance, WeightingMode::kStructuredIdentity,
             WeightingMode::kPlainIdentity};
  else
    modes = {exp.options.mode};

  struct PointResult {
    std::vector<detail::PointAccumulator> per_mode;
    BoundPoint bound;
    BoundPoint bound_known;
  };

  auto run_point = [&](int gp) {
    const detail::PointSettings ps = detail::point_settings(exp, exp.grid[gp]);
    PointResult result;
    result.bound = bound_point(sc, ps.sigma_d, ps.sigma_s,
                               ps.representative_speed);
    result.bound_known = bound_point_known_speed(sc, ps.sigma_d, ps.sigma_s,
                                                 ps.representative_speed);
    result.per_mode.resize(modes.size());
    if (exp.bounds_only) return result;

    const Mat q_beta = standard_q_beta(sc.b, ps.sigma_s);
    const GaussianSampler sensor_sampler(q_beta);
    const int m = sc.array.count();

    for (int t = 0; t < exp.trials; ++t) {
      RngStream speed_rng = RngStream::derive(
          seed, {detail::kPurposeSpeed, static_cast<std::uint64_t>(t)});
      SourceState src = sc.source;
      src.speed = ps.draw_speed ? speed_rng.uniform(ps.speed_lo, ps.speed_hi)
                                : ps.fixed_speed;

      const NoiseModel noise{standard_q_alpha(m, ps.sigma_d, src.speed),
                             q_beta, ps.sigma_d, ps.sigma_s};

      MeasurementSet meas = true_measurements(src, sc.array.truth);
      RngStream meas_rng = RngStream::derive(
          seed, {detail::kPurposeMeasurement, static_cast<std::uint64_t>(t)});
      const Vec delta =
          sample_gaussian(Vec::Zero(2 * (m - 1)), noise.q_alpha, meas_rng);
      meas.tdoa += delta.head(m - 1);
      meas.fdoa += delta.tail(m - 1);

      RngStream sensor_rng = RngStream::derive(
          seed, {detail::kPurposeSensors, static_cast<std::uint64_t>(t)});
      SensorArray perturbed = sc.array;
      perturbed.nominal = SensorParams::from_stacked(
          sc.array.truth.stacked() + sensor_sampler.sample(sensor_rng));

      for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        EstimateOptions opt = exp.options;
        opt.mode = modes[mi];
        auto& acc = result.per_mode[mi];
        try {
          const EstimateReport rep =
              estimate(meas, perturbed.nominal, noise, opt);
          acc.sq_u.push_back((rep.position - src.position).squaredNorm());
          acc.sq_udot.push_back((rep.velocity - src.velocity).squaredNorm());
          acc.sq_c.push_back((rep.speed - src.speed) *
                             (rep.speed - src.speed));
        } catch (const Error&) {
          ++acc.failed;
        }
      }
    }
    return result;
  };

  // Grid points are independent; run them on a small pool of async tasks.
  std::vector<PointResult> results(points);
  const unsigned workers =
      std::max(1u, std::min(std::thread::hardware_concurrency(),
                            static_cast<unsigned>(points)));
  std::vector<std::future<void>> pool;
  std::atomic<int> next{0};
  for (unsigned w = 0; w < workers; ++w)
    pool.push_back(std::async(std::launch::async, [&]() {
      for (int gp = next.fetch_add(1); gp < points; gp = next.fetch_add(1))
        results[gp] = run_point(gp);
    }));
  for (auto& f : pool) f.get();

  std::vector<SeriesResult> series;
  auto mode_suffix = [&](std::size_t mi) -> std::string {
    if (!exp.compare_weightings) return "";
    switch (modes[mi]) {
      case WeightingMode::kFullCovariance: return "_full_covariance";
      case WeightingMode::kStructuredIdentity: return "_structured_identity";
      case WeightingMode::kPlainIdentity: return "_plain_identity";
    }
    return "";
  };

  if (!exp.bounds_only) {
    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
      SeriesResult mu{"mse_u" + mode_suffix(mi), exp.grid, Vec(points), "m^2",
                      std::vector<int>(points, 0)};
      SeriesResult mv{"mse_udot" + mode_suffix(mi), exp.grid, Vec(points),
                      "m^2/s^2", std::vector<int>(points, 0)};
      SeriesResult mc{"mse_c" + mode_suffix(mi), exp.grid, Vec(points),
                      "m^2/s^2", std::vector<int>(points, 0)};
      for (int gp = 0; gp < points; ++gp) {
        const auto& acc = results[gp].per_mode[mi];
        mu.values_db[gp] = acc.mse(acc.sq_u);
        mv.values_db[gp] = acc.mse(acc.sq_udot);
        mc.values_db[gp] = acc.mse(acc.sq_c);
        mu.trials_failed[gp] = mv.trials_failed[gp] = mc.trials_failed[gp] =
            acc.failed;
      }
      series.push_back(std::move(mu));
      series.push_back(std::move(mv));
      series.push_back(std::move(mc));
    }
  }

  SeriesResult cu{"crlb_u", exp.grid, Vec(points), "m^2",
                  std::vector<int>(points, 0)};
  SeriesResult cv{"crlb_udot", exp.grid, Vec(points), "m^2/s^2",
                  std::vector<int>(points, 0)};
  SeriesResult cc{"crlb_c", exp.grid, Vec(points), "m^2/s^2",
                  std::vector<int>(points, 0)};
  for (int gp = 0; gp < points; ++gp) {
    cu.values_db[gp] = results[gp].bound.u_db;
    cv.values_db[gp] = results[gp].bound.udot_db;
    cc.values_db[gp] = results[gp].bound.c_db;
  }
  series.push_back(std::move(cu));
  series.push_back(std::move(cv));
  series.push_back(std::move(cc));

  if (exp.bounds_only) {
    SeriesResult ku{"crlb_u_known_c", exp.grid, Vec(points), "m^2",
                    std::vector<int>(points, 0)};
    SeriesResult kv{"crlb_udot_known_c", exp.grid, Vec(points), "m^2/s^2",
                    std::vector<int>(points, 0)};
    for (int gp = 0; gp < points; ++gp) {
      ku.values_db[gp] = results[gp].bound_known.u_db;
      kv.values_db[gp] = results[gp].bound_known.udot_db;
    }
    series.push_back(std::move(ku));
    series.push_back(std::move(kv));
  }
  return series;
}

inline const SeriesResult& find_series(const std::vector<SeriesResult>& all,
                                       const std::string& name) {
  for (const auto& s : all)
    if (s.name == name) return s;
  throw InvalidParameter("no series named " + name);
}

// Ready-made experiments for the standard study: bound sweeps and the
// four Monte Carlo figures.
inline std::vector<Experiment> figure_presets() {
  const Scenario base = load_scenario("default");
  std::vector<Experiment> out;

  {
    Experiment fig2;
    fig2.name = "fig2";
    fig2.scenario = base;
    fig2.sweep = SweepVariable::kSigmaSSquaredDb;
    fig2.grid = Vec::LinSpaced(9, -20.0, 20.0);
    fig2.bounds_only = true;
    fig2.trials = 0;
    out.push_back(std::move(fig2));
  }
  {
    Experiment fig3;
    fig3.name = "fig3";
    fig3.scenario = base;
    fig3.sweep = SweepVariable::kSigmaDSquaredDb;
    fig3.grid = Vec::LinSpaced(6, -5.0, 20.0);
    fig3.trials = 1000;
    out.push_back(std::move(fig3));
  }
  {
    Experiment fig4;
    fig4.name = "fig4";
    fig4.scenario = base;
    fig4.sweep = SweepVariable::kSigmaSSquaredDb;
    fig4.grid = Vec::LinSpaced(6, -5.0, 20.0);
    fig4.trials = 1000;
    out.push_back(std::move(fig4));
  }
  {
    Experiment fig5;
    fig5.name = "fig5";
    fig5.scenario = base;
    fig5.scenario.sigma_d_db = -5.0;
    fig5.scenario.sigma_s_db = 0.0;
    fig5.sweep = SweepVariable::kSpeedOffset;
    fig5.grid = Vec::LinSpaced(15, -70.0, 70.0);
    fig5.base_speed = 1490.0;
    fig5.trials = 1000;
    out.push_back(std::move(fig5));
  }
  {
    Experiment fig6;
    fig6.name = "fig6";
    fig6.scenario = base;
    fig6.sweep = SweepVariable::kSigmaDSquaredDb;
    fig6.grid = Vec::LinSpaced(6, -5.0, 20.0);
    fig6.trials = 1000;
    fig6.compare_weightings = true;
    out.push_back(std::move(fig6));
  }
  return out;
}

inline Experiment preset_by_name(const std::string& name) {
  for (auto& exp : figure_presets())
    if (exp.name == name) return exp;
  throw ConfigError("unknown preset '" + name + "'");
}

// --- CSV emission -----------------------------------------------------------

namespace detail {

inline void write_csv_value(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "nan";
  } else {
    out.precision(10);
    out << v;
  }
}

}  // namespace detail

// One row per grid point; when weighting modes are compared, one row per
// (grid point, mode) with a trailing mode column.
inline void write_simulation_csv(const std::vector<SeriesResult>& series,
                                 bool compare_weightings, std::ostream& out) {
  out << "sweep_value,mse_u_db,mse_udot_db,mse_c_db,crlb_u_db,crlb_udot_db,"
         "crlb_c_db,failed_trials";
  if (compare_weightings) out << ",mode";
  out << "\n";
  const std::vector<std::string> suffixes =
      compare_weightings
          ? std::vector<std::string>{"_full_covariance", "_structured_identity",
                                     "_plain_identity"}
          : std::vector<std::string>{""};
  const auto& crlb_u = find_series(series, "crlb_u");
  const auto& crlb_v = find_series(series, "crlb_udot");
  const auto& crlb_c = find_series(series, "crlb_c");
  for (Eigen::Index gp = 0; gp < crlb_u.grid.size(); ++gp) {
    for (const auto& suffix : suffixes) {
      const auto& mu = find_series(series, "mse_u" + suffix);
      const auto& mv = find_series(series, "mse_udot" + suffix);
      const auto& mc = find_series(series, "mse_c" + suffix);
      detail::write_csv_value(out, crlb_u.grid[gp]);
      for (const SeriesResult* s : {&mu, &mv, &mc, &crlb_u, &crlb_v, &crlb_c}) {
        out << ",";
        detail::write_csv_value(out, s->values_db[gp]);
      }
      out << "," << mu.trials_failed[gp];
      if (compare_weightings) out << "," << suffix.substr(1);
      out << "\n";
    }
  }
}

// Bound-only table: one row per (grid point, speed-knowledge case).
inline void write_bounds_csv(const std::vector<SeriesResult>& series,
                             std::ostream& out) {
  out << "sweep_var,crlb_u_db,crlb_udot_db,crlb_c_db,case\n";
  const auto& u_unknown = find_series(series, "crlb_u");
  const auto& v_unknown = find_series(series, "crlb_udot");
  const auto& c_unknown = find_series(series, "crlb_c");
  const auto& u_known = find_series(series, "crlb_u_known_c");
  const auto& v_known = find_series(series, "crlb_udot_known_c");
  for (Eigen::Index gp = 0; gp < u_unknown.grid.size(); ++gp) {
    detail::write_csv_value(out, u_unknown.grid[gp]);
    for (const SeriesResult* s : {&u_unknown, &v_unknown, &c_unknown}) {
      out << ",";
      detail::write_csv_value(out, s->values_db[gp]);
    }
    out << ",unknown_c\n";
    detail::write_csv_value(out, u_unknown.grid[gp]);
    for (const SeriesResult* s : {&u_known, &v_known}) {
      out << ",";
      detail::write_csv_value(out, s->values_db[gp]);
    }
    out << ",nan,known_c\n";
  }
}

}  // namespace uwloc
