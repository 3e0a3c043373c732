#include "imudiff/nav_eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "imudiff/error.hpp"

namespace imudiff {

namespace {

constexpr double kGimbalTolerance = 1e-9;

Eigen::Quaterniond rotation_increment(const Eigen::Vector3d& angle) {
  const double theta = angle.norm();
  if (theta < 1e-12) {
    return Eigen::Quaterniond(1.0, 0.5 * angle.x(), 0.5 * angle.y(), 0.5 * angle.z()).normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(theta, angle / theta));
}

void check_finite(const ImuSeries& imu, std::size_t k) {
  for (std::size_t c = 0; c < kChannels; ++c) {
    if (!std::isfinite(imu.at(c, k))) {
      fail(ErrorKind::numerical, "non-finite IMU input at sample " + std::to_string(k));
    }
  }
}

std::string format_number(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace

Eigen::Quaterniond ypr_to_attitude(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .normalized();
}

Ypr attitude_to_ypr(const Eigen::Quaterniond& q) {
  const Eigen::Matrix3d r = q.normalized().toRotationMatrix();
  Ypr out;
  const double sp = std::clamp(-r(2, 0), -1.0, 1.0);
  out.pitch = std::asin(sp);
  if (std::abs(std::abs(out.pitch) - std::numbers::pi / 2) < kGimbalTolerance) {
    out.gimbal_lock = true;
    out.roll = 0.0;
    out.yaw = std::atan2(-r(0, 1), r(1, 1));
  } else {
    out.yaw = std::atan2(r(1, 0), r(0, 0));
    out.roll = std::atan2(r(2, 1), r(2, 2));
  }
  return out;
}

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * std::numbers::pi);
  if (w <= -std::numbers::pi) w += 2.0 * std::numbers::pi;
  return w;
}

Trajectory dead_reckon(const ImuSeries& imu, const NavState& initial, bool gravity_on) {
  if (imu.empty()) fail(ErrorKind::insufficient_data, "empty IMU series");
  const double dt = imu.dt();
  const Eigen::Vector3d gravity = gravity_on ? Eigen::Vector3d(0, 0, -kGravity)
                                             : Eigen::Vector3d::Zero();
  auto gyro = [&](std::size_t k) {
    return Eigen::Vector3d(imu.at(gyro_x, k), imu.at(gyro_y, k), imu.at(gyro_z, k));
  };
  auto accel = [&](std::size_t k) {
    return Eigen::Vector3d(imu.at(accel_x, k), imu.at(accel_y, k), imu.at(accel_z, k));
  };

  Trajectory out;
  out.reserve(imu.size());
  NavState state = initial;
  state.time_s = imu.time(0);
  state.attitude.normalize();
  check_finite(imu, 0);
  Eigen::Vector3d acc_prev = state.attitude * accel(0) + gravity;
  out.push_back(state);

  for (std::size_t k = 1; k < imu.size(); ++k) {
    check_finite(imu, k);
    const Eigen::Vector3d omega = 0.5 * (gyro(k - 1) + gyro(k));
    NavState next;
    next.time_s = imu.time(k);
    next.attitude = (state.attitude * rotation_increment(omega * dt)).normalized();
    const Eigen::Vector3d acc = next.attitude * accel(k) + gravity;
    next.velocity = state.velocity + 0.5 * (acc_prev + acc) * dt;
    next.position = state.position + 0.5 * (state.velocity + next.velocity) * dt;
    out.push_back(next);
    state = next;
    acc_prev = acc;
  }
  return out;
}

std::vector<std::array<double, 6>> error_series(const Trajectory& solution, const Trajectory& truth) {
  if (solution.size() != truth.size()) {
    fail(ErrorKind::contract, "trajectory lengths differ: " + std::to_string(solution.size()) +
                                  " vs " + std::to_string(truth.size()));
  }
  std::vector<std::array<double, 6>> out(solution.size());
  for (std::size_t k = 0; k < solution.size(); ++k) {
    const Eigen::Vector3d dp = solution[k].position - truth[k].position;
    const Ypr a = attitude_to_ypr(solution[k].attitude);
    const Ypr b = attitude_to_ypr(truth[k].attitude);
    out[k] = {dp.x(), dp.y(), dp.z(), wrap_angle(a.yaw - b.yaw), wrap_angle(a.pitch - b.pitch),
              wrap_angle(a.roll - b.roll)};
  }
  return out;
}

double percentile_linear(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorKind::insufficient_data, "percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double rank = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

NavErrorStats error_stats(const Trajectory& solution, const Trajectory& truth) {
  const auto errors = error_series(solution, truth);
  if (errors.empty()) fail(ErrorKind::insufficient_data, "empty trajectories");
  NavErrorStats stats;
  for (std::size_t c = 0; c < 6; ++c) {
    std::vector<double> mags(errors.size());
    double sq = 0.0;
    for (std::size_t k = 0; k < errors.size(); ++k) {
      mags[k] = std::abs(errors[k][c]);
      sq += errors[k][c] * errors[k][c];
    }
    auto& s = stats.components[c];
    s.rms = std::sqrt(sq / static_cast<double>(errors.size()));
    s.max = *std::max_element(mags.begin(), mags.end());
    s.cep95 = percentile_linear(std::move(mags), 0.95);
  }
  return stats;
}

double horizontal_rms(const Trajectory& solution, const Trajectory& truth) {
  const auto errors = error_series(solution, truth);
  if (errors.empty()) fail(ErrorKind::insufficient_data, "empty trajectories");
  double sq = 0.0;
  for (const auto& e : errors) sq += e[0] * e[0] + e[1] * e[1];
  return std::sqrt(sq / static_cast<double>(errors.size()));
}

std::array<double, kChannels> rmse_per_axis(const ImuSeries& a, const ImuSeries& b) {
  if (a.size() != b.size()) {
    fail(ErrorKind::contract, "series lengths differ: " + std::to_string(a.size()) + " vs " +
                                  std::to_string(b.size()));
  }
  if (a.empty()) fail(ErrorKind::insufficient_data, "empty series");
  std::array<double, kChannels> out{};
  for (std::size_t c = 0; c < kChannels; ++c) {
    double sq = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double d = a.at(c, k) - b.at(c, k);
      sq += d * d;
    }
    out[c] = std::sqrt(sq / static_cast<double>(a.size()));
  }
  return out;
}

double improvement_percent(double baseline, double candidate) {
  if (baseline == 0.0) return 0.0;
  return 100.0 * (baseline - candidate) / baseline;
}

void to_json(nlohmann::json& j, const NavErrorStats& s) {
  j = nlohmann::json::object();
  for (std::size_t c = 0; c < 6; ++c) {
    const auto& e = s.components[c];
    j[kNavComponents[c]] = {{"rms", e.rms}, {"max", e.max}, {"cep95", e.cep95}};
  }
}

namespace {

double norm3(const NavErrorStats& s, std::size_t first, double ErrorSummary::*field) {
  double sq = 0.0;
  for (std::size_t c = first; c < first + 3; ++c) sq += std::pow(s.components[c].*field, 2);
  return std::sqrt(sq);
}

}  // namespace

nlohmann::json comparison_json(const NavComparison& cmp) {
  nlohmann::json j;
  j["baseline"] = cmp.baseline;
  j["candidate"] = cmp.candidate;
  nlohmann::json imp = nlohmann::json::object();
  const std::array<std::pair<const char*, double ErrorSummary::*>, 3> fields = {
      std::pair{"rms", &ErrorSummary::rms}, std::pair{"max", &ErrorSummary::max},
      std::pair{"cep95", &ErrorSummary::cep95}};
  for (const auto& [name, field] : fields) {
    nlohmann::json per;
    for (std::size_t c = 0; c < 6; ++c) {
      per[kNavComponents[c]] = improvement_percent(cmp.baseline.components[c].*field,
                                                   cmp.candidate.components[c].*field);
    }
    per["position_3d_norm"] =
        improvement_percent(norm3(cmp.baseline, 0, field), norm3(cmp.candidate, 0, field));
    per["attitude_3d_norm"] =
        improvement_percent(norm3(cmp.baseline, 3, field), norm3(cmp.candidate, 3, field));
    imp[name] = per;
  }
  j["improvement_percent"] = imp;
  return j;
}

std::string format_comparison_table(const NavComparison& cmp, const std::string& baseline_name,
                                    const std::string& candidate_name) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-6s %-10s %9s %9s %9s %8s %9s %9s %9s %8s\n", "Stat",
                "Solution", "E(m)", "N(m)", "U(m)", "PosImp", "Yaw(deg)", "Pitch(deg)",
                "Roll(deg)", "AttImp");
  os << line;
  const std::array<std::pair<const char*, double ErrorSummary::*>, 3> fields = {
      std::pair{"RMS", &ErrorSummary::rms}, std::pair{"MAX", &ErrorSummary::max},
      std::pair{"CEP95", &ErrorSummary::cep95}};
  constexpr double kDeg = 180.0 / std::numbers::pi;
  for (const auto& [name, field] : fields) {
    const auto row = [&](const char* stat, const std::string& label, const NavErrorStats& s,
                         const std::string& pos_imp, const std::string& att_imp) {
      std::snprintf(line, sizeof(line), "%-6s %-10s %9.3f %9.3f %9.3f %8s %9.3f %9.3f %9.3f %8s\n",
                    stat, label.c_str(), s.components[0].*field, s.components[1].*field,
                    s.components[2].*field, pos_imp.c_str(), s.components[3].*field * kDeg,
                    s.components[4].*field * kDeg, s.components[5].*field * kDeg,
                    att_imp.c_str());
      os << line;
    };
    const std::string pos =
        format_number(improvement_percent(norm3(cmp.baseline, 0, field),
                                          norm3(cmp.candidate, 0, field)), 1) + "%";
    const std::string att =
        format_number(improvement_percent(norm3(cmp.baseline, 3, field),
                                          norm3(cmp.candidate, 3, field)), 1) + "%";
    row(name, baseline_name, cmp.baseline, pos, att);
    row("", candidate_name, cmp.candidate, "", "");
  }
  return os.str();
}

void save_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::string out = "t,E,N,U,yaw,pitch,roll,vE,vN,vU\n";
  char buf[512];
  for (const auto& s : traj) {
    const Ypr a = attitude_to_ypr(s.attitude);
    std::snprintf(buf, sizeof(buf), "%.9f,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  s.time_s, s.position.x(), s.position.y(), s.position.z(), a.yaw, a.pitch,
                  a.roll, s.velocity.x(), s.velocity.y(), s.velocity.z());
    out += buf;
  }
  write_text_file(path, out);
}

Trajectory load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t columns = 0;
  Trajectory traj;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (columns == 0) {
      if (line == "t,E,N,U,yaw,pitch,roll") {
        columns = 7;
      } else if (line == "t,E,N,U,yaw,pitch,roll,vE,vN,vU") {
        columns = 10;
      } else {
        fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) +
                                   ": unexpected trajectory header");
      }
      continue;
    }
    std::vector<double> v;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      double x = 0.0;
      const auto* end = field.data() + field.size();
      auto [ptr, ec] = std::from_chars(field.data(), end, x);
      if (ec != std::errc{} || ptr != end) {
        fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) + ": bad number");
      }
      v.push_back(x);
    }
    if (v.size() != columns) {
      fail(ErrorKind::parse, path.string() + ":" + std::to_string(line_no) +
                                 ": expected " + std::to_string(columns) + " fields");
    }
    NavState s;
    s.time_s = v[0];
    s.position = {v[1], v[2], v[3]};
    s.attitude = ypr_to_attitude(v[4], v[5], v[6]);
    if (columns == 10) s.velocity = {v[7], v[8], v[9]};
    traj.push_back(s);
  }
  if (traj.empty()) fail(ErrorKind::insufficient_data, path.string() + ": no trajectory rows");
  if (columns == 7 && traj.size() >= 2) {
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const std::size_t a = k == 0 ? 0 : k - 1;
      const std::size_t b = std::min(k + 1, traj.size() - 1);
      traj[k].velocity =
          (traj[b].position - traj[a].position) / (traj[b].time_s - traj[a].time_s);
    }
  }
  return traj;
}

void save_error_series_csv(const Trajectory& solution, const Trajectory& truth,
                           const std::filesystem::path& path) {
  const auto errors = error_series(solution, truth);
  std::string out = "t,E,N,U,yaw,pitch,roll\n";
  char buf[512];
  for (std::size_t k = 0; k < errors.size(); ++k) {
    const auto& e = errors[k];
    std::snprintf(buf, sizeof(buf), "%.9f,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  truth[k].time_s, e[0], e[1], e[2], e[3], e[4], e[5]);
    out += buf;
  }
  write_text_file(path, out);
}

void save_horizontal_error_svg(const std::vector<std::pair<std::string, Trajectory>>& solutions,
                               const Trajectory& truth, const std::filesystem::path& path) {
  constexpr double kW = 720, kH = 400, kMargin = 60;
  static constexpr std::array<const char*, 4> kColors = {"#d62728", "#1f77b4", "#2ca02c",
                                                         "#9467bd"};
  std::vector<std::vector<double>> norms;
  double ymax = 0.0;
  for (const auto& [name, traj] : solutions) {
    const auto errors = error_series(traj, truth);
    auto& n = norms.emplace_back();
    for (const auto& e : errors) {
      n.push_back(std::hypot(e[0], e[1]));
      ymax = std::max(ymax, n.back());
    }
  }
  if (!(ymax > 0.0)) ymax = 1.0;
  const double t0 = truth.empty() ? 0.0 : truth.front().time_s;
  const double t1 = truth.size() < 2 ? t0 + 1.0 : truth.back().time_s;
  auto px = [&](double t) { return kMargin + (t - t0) / (t1 - t0) * (kW - 2 * kMargin); };
  auto py = [&](double v) { return kH - kMargin - v / ymax * (kH - 2 * kMargin); };
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "font-family=\"sans-serif\" font-size=\"11\">\n"
                "<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n",
                kW, kH);
  std::string svg = buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#888\"/>"
                "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#888\"/>\n"
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.3g m</text>\n"
                "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%.1f s</text>\n",
                px(t0), py(0), px(t1), py(0), px(t0), py(0), px(t0), py(ymax), px(t0) - 6,
                py(ymax) + 4, ymax, px(t1), py(0) + 16, t1);
  svg += buf;
  // Long series are decimated to keep the file small.
  for (std::size_t s = 0; s < norms.size(); ++s) {
    const auto& n = norms[s];
    const std::size_t step = std::max<std::size_t>(1, n.size() / 2000);
    const char* color = kColors[s % kColors.size()];
    svg += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" + std::string(color) +
           "\" points=\"";
    for (std::size_t k = 0; k < n.size(); k += step) {
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(truth[k].time_s), py(n[k]));
      svg += buf;
    }
    svg += "\"/>\n";
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" fill=\"%s\">", kMargin + 8,
                  kMargin + 14.0 * static_cast<double>(s), color);
    svg += buf + solutions[s].first + "</text>\n";
  }
  svg += "<text x=\"14\" y=\"200\" transform=\"rotate(-90 14 200)\" "
         "text-anchor=\"middle\">horizontal error (m)</text>\n</svg>\n";
  write_text_file(path, svg);
}

}  // namespace imudiff
