#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uwloc/estimator.hpp"
#include "uwloc/model.hpp"
#include "uwloc/noise.hpp"

namespace uwloc {

// A complete simulation setup: source truth, sensor constellation, and the
// noise block. Loaded from key-value text; "default" names the bundled
// ten-sensor constellation.
struct Scenario {
  SourceState source;  // speed holds the fixed value or the range midpoint
  std::optional<std::pair<double, double>> speed_range;
  SensorArray array;   // nominal equals truth until perturbed
  double sigma_d_db = 0.0;  // 10*log10 of the squared range-noise scale
  double sigma_s_db = 0.0;  // 10*log10 of the squared sensor-error scale
  Vec b;                    // per-sensor error scale
  std::uint64_t seed = 0;

  double sigma_d() const { return std::pow(10.0, sigma_d_db / 20.0); }
  double sigma_s() const { return std::pow(10.0, sigma_s_db / 20.0); }

  NoiseModel noise_model(double sigma_d_value, double sigma_s_value,
                         double speed) const {
    return make_noise_model(array.count(), b, sigma_d_value, sigma_s_value,
                            speed);
  }
};

namespace detail {

struct KeyValueFile {
  // Insertion-ordered key -> token list.
  std::vector<std::pair<std::string, std::vector<std::string>>> entries;

  static KeyValueFile parse(std::istream& in, const std::string& origin) {
    KeyValueFile kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        std::istringstream rest(line);
        std::string token;
        if (rest >> token)
          throw ConfigError(origin + ":" + std::to_string(line_no) +
                            ": expected 'key = values'");
        continue;
      }
      std::string key = line.substr(0, eq);
      key.erase(0, key.find_first_not_of(" \t"));
      key.erase(key.find_last_not_of(" \t") + 1);
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": empty key");
      std::istringstream values(line.substr(eq + 1));
      std::vector<std::string> tokens;
      std::string token;
      while (values >> token) tokens.push_back(token);
      kv.entries.emplace_back(key, std::move(tokens));
    }
    return kv;
  }

  const std::vector<std::string>* find(const std::string& key) const {
    for (const auto& [k, v] : entries)
      if (k == key) return &v;
    return nullptr;
  }
};

inline double to_double(const std::string& token, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double value = std::stod(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad number '" + token + "'");
  }
}

inline long long to_integer(const std::string& token, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long long value = std::stoll(token, &pos, 10);
    if (pos != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad integer '" + token + "'");
  }
}

inline std::uint64_t to_seed(const std::string& token, const std::string& key) {
  try {
    std::size_t pos = 0;
    const std::uint64_t value = std::stoull(token, &pos, 10);
    if (pos != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': bad integer '" + token + "'");
  }
}

inline Vec to_vector(const std::vector<std::string>& tokens,
                     const std::string& key) {
  Vec out(static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = to_double(tokens[i], key);
  return out;
}

inline Vec3 to_vec3(const std::vector<std::string>& tokens,
                    const std::string& key) {
  if (tokens.size() != 3)
    throw ConfigError("key '" + key + "': expected 3 values");
  return Vec3(to_double(tokens[0], key), to_double(tokens[1], key),
              to_double(tokens[2], key));
}

}  // namespace detail

inline std::string default_scenario_text() {
  return R"(# Bundled ten-sensor constellation with a slow source at kilometer scale.
source.position = 200 800 200
source.velocity = -2 1.5 1
source.speed = 1400 1600

sensors[1].position = 0 1000 0
sensors[1].velocity = 3 -2 2
sensors[2].position = 0 0 0
sensors[2].velocity = -3 1 2
sensors[3].position = 0 0 1000
sensors[3].velocity = 1 -2 1
sensors[4].position = 0 1000 1000
sensors[4].velocity = 1 2 3
sensors[5].position = 1000 0 0
sensors[5].velocity = -2 1 1
sensors[6].position = 1000 1000 0
sensors[6].velocity = 2 -1 1
sensors[7].position = 1000 0 1000
sensors[7].velocity = 1.2 -1.5 1.5
sensors[8].position = 1000 1000 1000
sensors[8].velocity = -1.5 1.2 -1.2
sensors[9].position = 500 500 1000
sensors[9].velocity = 1.3 1.3 1.3
sensors[10].position = 500 500 0
sensors[10].velocity = 2.5 2.5 2.5

noise.sigma_d_db = 0
noise.sigma_s_db = 0
noise.b = 1 20 10 30 20 3 2 10 1 2
noise.seed = 0
)";
}

inline Scenario parse_scenario(std::istream& in, const std::string& origin) {
  const detail::KeyValueFile kv = detail::KeyValueFile::parse(in, origin);

  Scenario sc;
  std::map<int, Vec3> positions, velocities;
  bool saw_source_position = false, saw_sensors = false;

  for (const auto& [key, tokens] : kv.entries) {
    if (key == "source.position") {
      sc.source.position = detail::to_vec3(tokens, key);
      saw_source_position = true;
    } else if (key == "source.velocity") {
      sc.source.velocity = detail::to_vec3(tokens, key);
    } else if (key == "source.speed") {
      if (tokens.size() == 1) {
        sc.source.speed = detail::to_double(tokens[0], key);
        sc.speed_range.reset();
      } else if (tokens.size() == 2) {
        const double lo = detail::to_double(tokens[0], key);
        const double hi = detail::to_double(tokens[1], key);
        if (!(lo > 0.0) || !(hi >= lo))
          throw ConfigError("key 'source.speed': bad range");
        sc.speed_range = {lo, hi};
        sc.source.speed = 0.5 * (lo + hi);
      } else {
        throw ConfigError("key 'source.speed': expected 1 or 2 values");
      }
    } else if (key == "noise.sigma_d_db") {
      sc.sigma_d_db = detail::to_double(tokens.at(0), key);
    } else if (key == "noise.sigma_s_db") {
      sc.sigma_s_db = detail::to_double(tokens.at(0), key);
    } else if (key == "noise.b") {
      sc.b = detail::to_vector(tokens, key);
    } else if (key == "noise.seed") {
      sc.seed = detail::to_seed(tokens.at(0), key);
    } else if (key.rfind("sensors[", 0) == 0) {
      const auto close = key.find(']');
      if (close == std::string::npos)
        throw ConfigError("key '" + key + "': malformed sensor index");
      const int idx = static_cast<int>(
          detail::to_integer(key.substr(8, close - 8), key));
      const std::string field = key.substr(close + 1);
      if (field == ".position")
        positions[idx] = detail::to_vec3(tokens, key);
      else if (field == ".velocity")
        velocities[idx] = detail::to_vec3(tokens, key);
      else
        throw ConfigError("unknown key '" + key + "'");
      saw_sensors = true;
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }

  if (!saw_source_position)
    throw ConfigError("missing key 'source.position'");
  if (!saw_sensors) throw ConfigError("missing 'sensors' block");

  const int m = static_cast<int>(positions.size());
  Mat pos(m, 3), vel(m, 3);
  for (int i = 1; i <= m; ++i) {
    const auto it = positions.find(i);
    if (it == positions.end())
      throw ConfigError("missing key 'sensors[" + std::to_string(i) +
                        "].position'");
    pos.row(i - 1) = it->second.transpose();
    const auto vt = velocities.find(i);
    vel.row(i - 1) =
        (vt == velocities.end() ? Vec3::Zero() : vt->second).transpose();
  }
  sc.array = SensorArray::exact(SensorParams{pos, vel});

  if (sc.b.size() == 0) sc.b = Vec::Ones(m);
  if (sc.b.size() != m)
    throw ConfigError("key 'noise.b': expected one value per sensor");
  sc.source.validate();
  return sc;
}

inline Scenario load_scenario(const std::string& path_or_default) {
  if (path_or_default == "default" || path_or_default.empty()) {
    std::istringstream in(default_scenario_text());
    return parse_scenario(in, "<default scenario>");
  }
  std::ifstream in(path_or_default);
  if (!in) throw ConfigError("cannot open scenario file " + path_or_default);
  return parse_scenario(in, path_or_default);
}

inline void write_scenario(const Scenario& sc, std::ostream& out) {
  out.precision(17);
  out << "source.position = " << sc.source.position.transpose() << "\n";
  out << "source.velocity = " << sc.source.velocity.transpose() << "\n";
  if (sc.speed_range)
    out << "source.speed = " << sc.speed_range->first << " "
        << sc.speed_range->second << "\n";
  else
    out << "source.speed = " << sc.source.speed << "\n";
  for (int i = 0; i < sc.array.count(); ++i) {
    out << "sensors[" << i + 1 << "].position = "
        << sc.array.truth.positions.row(i) << "\n";
    out << "sensors[" << i + 1 << "].velocity = "
        << sc.array.truth.velocities.row(i) << "\n";
  }
  out << "noise.sigma_d_db = " << sc.sigma_d_db << "\n";
  out << "noise.sigma_s_db = " << sc.sigma_s_db << "\n";
  out << "noise.b = " << sc.b.transpose() << "\n";
  out << "noise.seed = " << sc.seed << "\n";
}

// --- Measurement files for the stand-alone estimator ------------------------

struct MeasurementInput {
  MeasurementSet meas;
  SensorParams nominal;
  bool has_noise = false;
  double sigma_d_db = 0.0;
  double sigma_s_db = 0.0;
  Vec b;
  // Reference speed used to scale the measurement covariance. The weighted
  // solution is insensitive to its exact value.
  double speed_ref = 1500.0;
};

inline MeasurementInput parse_measurements(std::istream& in,
                                           const std::string& origin) {
  const detail::KeyValueFile kv = detail::KeyValueFile::parse(in, origin);
  MeasurementInput mi;
  std::map<int, Vec3> positions, velocities;
  Vec tdoa, fdoa;

  for (const auto& [key, tokens] : kv.entries) {
    if (key == "tdoa") {
      tdoa = detail::to_vector(tokens, key);
    } else if (key == "fdoa") {
      fdoa = detail::to_vector(tokens, key);
    } else if (key == "noise.sigma_d_db") {
      mi.sigma_d_db = detail::to_double(tokens.at(0), key);
      mi.has_noise = true;
    } else if (key == "noise.sigma_s_db") {
      mi.sigma_s_db = detail::to_double(tokens.at(0), key);
      mi.has_noise = true;
    } else if (key == "noise.b") {
      mi.b = detail::to_vector(tokens, key);
    } else if (key == "noise.speed_ref") {
      mi.speed_ref = detail::to_double(tokens.at(0), key);
    } else if (key.rfind("sensors[", 0) == 0) {
      const auto close = key.find(']');
      if (close == std::string::npos)
        throw ConfigError("key '" + key + "': malformed sensor index");
      const int idx = static_cast<int>(
          detail::to_integer(key.substr(8, close - 8), key));
      const std::string field = key.substr(close + 1);
      if (field == ".position")
        positions[idx] = detail::to_vec3(tokens, key);
      else if (field == ".velocity")
        velocities[idx] = detail::to_vec3(tokens, key);
      else
        throw ConfigError("unknown key '" + key + "'");
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }

  if (tdoa.size() == 0) throw ConfigError("missing key 'tdoa'");
  if (fdoa.size() == 0) throw ConfigError("missing key 'fdoa'");
  if (positions.empty()) throw ConfigError("missing 'sensors' block");

  const int m = static_cast<int>(positions.size());
  Mat pos(m, 3), vel(m, 3);
  for (int i = 1; i <= m; ++i) {
    const auto it = positions.find(i);
    if (it == positions.end())
      throw ConfigError("missing key 'sensors[" + std::to_string(i) +
                        "].position'");
    pos.row(i - 1) = it->second.transpose();
    const auto vt = velocities.find(i);
    vel.row(i - 1) =
        (vt == velocities.end() ? Vec3::Zero() : vt->second).transpose();
  }
  mi.nominal = SensorParams{pos, vel};
  mi.meas = MeasurementSet{tdoa, fdoa};
  mi.meas.validate();
  if (mi.meas.sensor_count() != m)
    throw ConfigError("measurement length does not match the sensor count");
  if (mi.b.size() == 0) mi.b = Vec::Ones(m);
  if (mi.b.size() != m)
    throw ConfigError("key 'noise.b': expected one value per sensor");
  return mi;
}

inline MeasurementInput load_measurements(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open measurement file " + path);
  return parse_measurements(in, path);
}

inline void write_estimate_report(const EstimateReport& report,
                                  std::ostream& out) {
  out.precision(12);
  out << "position = " << report.position.transpose() << "\n";
  out << "velocity = " << report.velocity.transpose() << "\n";
  out << "speed = " << report.speed << "\n";
  out << "iterations = " << report.iterations_used << "\n";
  const char* mode_name =
      report.weighting_mode == WeightingMode::kFullCovariance
          ? "full_covariance"
          : report.weighting_mode == WeightingMode::kStructuredIdentity
                ? "structured_identity"
                : "plain_identity";
  out << "weighting = " << mode_name << "\n";
  out << "clamp_warning = " << (report.clamp_warning ? 1 : 0) << "\n";
  for (int r = 0; r < report.cov_xi.rows(); ++r)
    out << "cov_xi[" << r + 1 << "] = " << report.cov_xi.row(r) << "\n";
}

}  // namespace uwloc
