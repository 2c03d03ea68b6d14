#pragma once

// Text formats: flow files, camera intrinsics, solver configuration, and the
// JSON/CSV result writers.
//
// Flow file:
//   # flow v1 mode=<calibrated|pixel> n=<N>
//   x y u v [valid]
// Blank lines and lines beginning with '#' after the header are ignored. A record
// whose optional valid flag is 0 is counted toward n but not loaded.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "erl_egomotion/estimator.hpp"
#include "erl_egomotion/sweep.hpp"

namespace erl {

enum class CoordinateMode { calibrated, pixel };

inline std::string_view to_string(CoordinateMode m) {
  return m == CoordinateMode::pixel ? "pixel" : "calibrated";
}

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  ImagePoint to_calibrated(double x, double y) const {
    const double yc = (y - cy) / fy;
    return {(x - cx - skew * yc) / fx, yc};
  }

  FlowVector flow_to_calibrated(double u, double v) const {
    const double vc = v / fy;
    return {(u - skew * vc) / fx, vc};
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

template <class T>
std::optional<T> parse_integer(std::string_view s) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Shortest decimal string that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string line_prefix(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ParseError(ParseError::Kind::io, 0, path.string() + ": cannot open file");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// key=value lines; '#' starts a comment. Duplicate keys keep the last value.
inline std::vector<std::pair<std::string, std::pair<std::string, std::size_t>>> parse_key_values(
    std::string_view text, const std::string& source) {
  std::vector<std::pair<std::string, std::pair<std::string, std::size_t>>> out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(ParseError::Kind::malformed_record, line_no,
                       line_prefix(source, line_no) + "expected key=value");
    }
    out.push_back({std::string(trim(line.substr(0, eq))),
                   {std::string(trim(line.substr(eq + 1))), line_no}});
    if (end == text.size()) break;
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Flow files.

struct ParsedFlowFile {
  CoordinateMode mode = CoordinateMode::calibrated;
  /// Records as written in the file, before any unit conversion.
  FlowField raw;
  /// Records marked invalid and skipped.
  std::size_t skipped = 0;
};

inline ParsedFlowFile parse_flow_text(std::string_view text, const std::string& source = "<flow>") {
  ParsedFlowFile out;
  std::size_t pos = 0, line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos > text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    if (end == pos && end == text.size()) return false;  // nothing after the final newline
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view header;
  if (!next_line(header)) {
    throw ParseError(ParseError::Kind::malformed_header, 1,
                     detail::line_prefix(source, 1) + "missing '# flow v1' header");
  }
  const auto tokens = detail::split_ws(header);
  std::optional<std::size_t> declared;
  bool mode_seen = false;
  if (tokens.size() != 5 || tokens[0] != "#" || tokens[1] != "flow" || tokens[2] != "v1") {
    throw ParseError(ParseError::Kind::malformed_header, 1,
                     detail::line_prefix(source, 1) +
                         "expected '# flow v1 mode=<calibrated|pixel> n=<N>'");
  }
  for (std::size_t k = 3; k < tokens.size(); ++k) {
    const std::string_view tok = tokens[k];
    if (tok.starts_with("mode=")) {
      const auto m = tok.substr(5);
      if (m == "calibrated") {
        out.mode = CoordinateMode::calibrated;
      } else if (m == "pixel") {
        out.mode = CoordinateMode::pixel;
      } else {
        throw ParseError(ParseError::Kind::malformed_header, 1,
                         detail::line_prefix(source, 1) + "unknown mode '" + std::string(m) + "'");
      }
      mode_seen = true;
    } else if (tok.starts_with("n=")) {
      declared = detail::parse_integer<std::size_t>(tok.substr(2));
      if (!declared) {
        throw ParseError(ParseError::Kind::malformed_header, 1,
                         detail::line_prefix(source, 1) + "bad point count '" + std::string(tok) + "'");
      }
    }
  }
  if (!mode_seen || !declared) {
    throw ParseError(ParseError::Kind::malformed_header, 1,
                     detail::line_prefix(source, 1) + "header needs both mode= and n=");
  }

  std::size_t records = 0;
  std::string_view line;
  while (next_line(line)) {
    const std::string_view body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    if (records == *declared) {
      throw ParseError(ParseError::Kind::count_mismatch, line_no,
                       detail::line_prefix(source, line_no) + "more records than the declared n=" +
                           std::to_string(*declared));
    }
    const auto fields = detail::split_ws(body);
    if (fields.size() != 4 && fields.size() != 5) {
      throw ParseError(ParseError::Kind::malformed_record, line_no,
                       detail::line_prefix(source, line_no) + "expected 'x y u v [valid]'");
    }
    double v[4];
    for (int k = 0; k < 4; ++k) {
      const auto parsed = detail::parse_double(fields[static_cast<std::size_t>(k)]);
      if (!parsed) {
        throw ParseError(ParseError::Kind::malformed_record, line_no,
                         detail::line_prefix(source, line_no) + "cannot parse '" +
                             std::string(fields[static_cast<std::size_t>(k)]) + "' as a number");
      }
      if (!std::isfinite(*parsed)) {
        throw ParseError(ParseError::Kind::non_finite_value, line_no,
                         detail::line_prefix(source, line_no) + "non-finite value '" +
                             std::string(fields[static_cast<std::size_t>(k)]) + "'");
      }
      v[k] = *parsed;
    }
    bool valid = true;
    if (fields.size() == 5) {
      if (fields[4] == "1") {
        valid = true;
      } else if (fields[4] == "0") {
        valid = false;
      } else {
        throw ParseError(ParseError::Kind::malformed_record, line_no,
                         detail::line_prefix(source, line_no) + "valid flag must be 0 or 1");
      }
    }
    ++records;
    if (!valid) {
      ++out.skipped;
      continue;
    }
    out.raw.points.push_back({v[0], v[1]});
    out.raw.flows.push_back({v[2], v[3]});
  }
  if (records != *declared) {
    throw ParseError(ParseError::Kind::count_mismatch, line_no + 1,
                     detail::line_prefix(source, line_no + 1) + "expected " +
                         std::to_string(*declared) + " records, found " + std::to_string(records));
  }
  return out;
}

inline FlowField to_calibrated(const ParsedFlowFile& parsed, const std::optional<Intrinsics>& intrinsics,
                               const std::string& source = "<flow>") {
  if (parsed.mode == CoordinateMode::calibrated) return parsed.raw;
  if (!intrinsics) {
    throw ParseError(ParseError::Kind::malformed_header, 1,
                     detail::line_prefix(source, 1) + "pixel-mode flow requires an intrinsics file");
  }
  FlowField out;
  out.points.reserve(parsed.raw.size());
  out.flows.reserve(parsed.raw.size());
  for (std::size_t i = 0; i < parsed.raw.size(); ++i) {
    out.points.push_back(intrinsics->to_calibrated(parsed.raw.points[i].x, parsed.raw.points[i].y));
    out.flows.push_back(intrinsics->flow_to_calibrated(parsed.raw.flows[i].u, parsed.raw.flows[i].v));
  }
  return out;
}

inline FlowField parse_flow_file(const std::filesystem::path& path,
                                 const std::optional<Intrinsics>& intrinsics = std::nullopt) {
  const std::string text = detail::read_file(path);
  return to_calibrated(parse_flow_text(text, path.string()), intrinsics, path.string());
}

inline std::string format_flow(const FlowField& flow, CoordinateMode mode = CoordinateMode::calibrated) {
  validate_flow_field(flow, 0);
  std::string out = "# flow v1 mode=" + std::string(to_string(mode)) + " n=" + std::to_string(flow.size()) + "\n";
  for (std::size_t i = 0; i < flow.size(); ++i) {
    out += detail::format_double(flow.points[i].x);
    out += ' ';
    out += detail::format_double(flow.points[i].y);
    out += ' ';
    out += detail::format_double(flow.flows[i].u);
    out += ' ';
    out += detail::format_double(flow.flows[i].v);
    out += '\n';
  }
  return out;
}

/// Writes to a temporary sibling and renames it over the target.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError(ParseError::Kind::io, 0, path.string() + ": cannot open for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw ParseError(ParseError::Kind::io, 0, path.string() + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw ParseError(ParseError::Kind::io, 0, path.string() + ": rename failed");
  }
}

inline void write_flow_file(const std::filesystem::path& path, const FlowField& flow,
                            CoordinateMode mode = CoordinateMode::calibrated) {
  write_file_atomic(path, format_flow(flow, mode));
}

// ---------------------------------------------------------------------------
// Intrinsics and solver configuration.

inline Intrinsics parse_intrinsics_text(std::string_view text, const std::string& source = "<intrinsics>") {
  Intrinsics k;
  bool fx = false, fy = false, cx = false, cy = false;
  for (const auto& [key, val] : detail::parse_key_values(text, source)) {
    const auto& [value, line] = val;
    const auto v = detail::parse_double(value);
    if (!v) {
      throw ParseError(ParseError::Kind::malformed_record, line,
                       detail::line_prefix(source, line) + "cannot parse '" + value + "' as a number");
    }
    if (!std::isfinite(*v)) {
      throw ParseError(ParseError::Kind::non_finite_value, line,
                       detail::line_prefix(source, line) + "non-finite value for " + key);
    }
    if (key == "fx") {
      k.fx = *v;
      fx = true;
    } else if (key == "fy") {
      k.fy = *v;
      fy = true;
    } else if (key == "cx") {
      k.cx = *v;
      cx = true;
    } else if (key == "cy") {
      k.cy = *v;
      cy = true;
    } else if (key == "skew") {
      k.skew = *v;
    } else {
      throw ParseError(ParseError::Kind::malformed_record, line,
                       detail::line_prefix(source, line) + "unknown key '" + key + "'");
    }
  }
  if (!fx || !fy || !cx || !cy) {
    throw ParseError(ParseError::Kind::malformed_record, 0, source + ": fx, fy, cx and cy are required");
  }
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) {
    throw ParseError(ParseError::Kind::malformed_record, 0, source + ": fx and fy must be positive");
  }
  return k;
}

inline Intrinsics parse_intrinsics_file(const std::filesystem::path& path) {
  return parse_intrinsics_text(detail::read_file(path), path.string());
}

namespace detail {

using ConfigSetter = std::function<bool(SolverConfig&, const std::string&)>;

template <class T>
ConfigSetter numeric_setter(T SolverConfig::*member) {
  return [member](SolverConfig& c, const std::string& s) {
    if constexpr (std::is_floating_point_v<T>) {
      const auto v = parse_double(s);
      if (!v || !std::isfinite(*v)) return false;
      c.*member = *v;
    } else {
      const auto v = parse_integer<T>(s);
      if (!v) return false;
      c.*member = *v;
    }
    return true;
  };
}

template <class Sub, class T>
ConfigSetter nested_setter(Sub SolverConfig::*sub, T Sub::*member) {
  return [sub, member](SolverConfig& c, const std::string& s) {
    if constexpr (std::is_floating_point_v<T>) {
      const auto v = parse_double(s);
      if (!v || !std::isfinite(*v)) return false;
      c.*sub.*member = *v;
    } else {
      const auto v = parse_integer<T>(s);
      if (!v) return false;
      c.*sub.*member = *v;
    }
    return true;
  };
}

inline const std::map<std::string, ConfigSetter, std::less<>>& config_setters() {
  static const std::map<std::string, ConfigSetter, std::less<>> table = {
      {"init_grid_size", numeric_setter(&SolverConfig::init_grid_size)},
      {"erl_grid_size", numeric_setter(&SolverConfig::erl_grid_size)},
      {"gn_max_iterations", numeric_setter(&SolverConfig::gn_max_iterations)},
      {"gn_tolerance", numeric_setter(&SolverConfig::gn_tolerance)},
      {"gn_cost_tolerance", numeric_setter(&SolverConfig::gn_cost_tolerance)},
      {"min_mean_flow_magnitude", numeric_setter(&SolverConfig::min_mean_flow_magnitude)},
      {"lifted_grid_iterations", numeric_setter(&SolverConfig::lifted_grid_iterations)},
      {"lifted_refine_cost_tolerance", numeric_setter(&SolverConfig::lifted_refine_cost_tolerance)},
      {"erl.scale_min", nested_setter(&SolverConfig::erl, &ErlConfig::scale_min)},
      {"erl.distribution",
       [](SolverConfig& c, const std::string& s) {
         if (s == "laplacian") {
           c.erl.distribution = ResidualDistribution::laplacian;
         } else if (s == "gaussian") {
           c.erl.distribution = ResidualDistribution::gaussian;
         } else {
           return false;
         }
         return true;
       }},
      {"lifted.tau", nested_setter(&SolverConfig::lifted, &LiftedConfig::tau)},
      {"lifted.initial_damping", nested_setter(&SolverConfig::lifted, &LiftedConfig::initial_damping)},
      {"lifted.max_iterations", nested_setter(&SolverConfig::lifted, &LiftedConfig::max_iterations)},
      {"lifted.cost_tolerance", nested_setter(&SolverConfig::lifted, &LiftedConfig::cost_tolerance)},
      {"lifted.w_init", nested_setter(&SolverConfig::lifted, &LiftedConfig::w_init)},
  };
  return table;
}

}  // namespace detail

/// Applies key=value settings on top of `base`. Keys mirror SolverConfig fields,
/// with nested fields written as erl.<field> and lifted.<field>.
inline SolverConfig parse_config_text(std::string_view text, SolverConfig base = {},
                                      const std::string& source = "<config>") {
  const auto& setters = detail::config_setters();
  for (const auto& [key, val] : detail::parse_key_values(text, source)) {
    const auto& [value, line] = val;
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ParseError(ParseError::Kind::malformed_record, line,
                       detail::line_prefix(source, line) + "unknown key '" + key + "'");
    }
    if (!it->second(base, value)) {
      throw ParseError(ParseError::Kind::malformed_record, line,
                       detail::line_prefix(source, line) + "bad value '" + value + "' for " + key);
    }
  }
  return base;
}

inline SolverConfig parse_config_file(const std::filesystem::path& path, SolverConfig base = {}) {
  return parse_config_text(detail::read_file(path), std::move(base), path.string());
}

// ---------------------------------------------------------------------------
// Result writers.

namespace detail {

inline nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json vec3(const Vector3d& v) {
  return nlohmann::json::array({number_or_null(v.x()), number_or_null(v.y()), number_or_null(v.z())});
}

}  // namespace detail

/// The key set is identical for every method.
inline nlohmann::json estimate_to_json(const EgomotionEstimate& est) {
  nlohmann::json j;
  j["method"] = std::string(to_string(est.method));
  j["t"] = detail::vec3(est.motion.t);
  j["omega"] = detail::vec3(est.motion.omega);
  nlohmann::json w = nlohmann::json::array();
  for (double v : est.weights.w) w.push_back(detail::number_or_null(v));
  j["weights"] = std::move(w);
  nlohmann::json rho = nlohmann::json::array();
  for (std::size_t i = 0; i < est.depths.size(); ++i) {
    rho.push_back(est.depths.valid[i] ? detail::number_or_null(est.depths.rho[i]) : nlohmann::json(nullptr));
  }
  j["rho"] = std::move(rho);
  j["cost"] = detail::number_or_null(est.cost);
  const Diagnostics& d = est.diagnostics;
  j["diagnostics"] = {
      {"iterations", d.iterations},
      {"grid_winner", d.grid_winner},
      {"grid_cost", detail::number_or_null(d.grid_cost)},
      {"degenerate_points", d.degenerate_points},
      {"converged", d.converged},
      {"weights_degenerate", d.weights_degenerate},
      {"fell_back_to_raw", d.fell_back_to_raw},
      {"inner_iterations", d.inner_iterations},
  };
  return j;
}

inline std::string sweep_to_csv(const SweepResult& result) {
  std::string out = "fraction,method,seed,t_err_deg,omega_err,runtime_ms,converged\n";
  auto num = [](double v) { return std::isfinite(v) ? detail::format_double(v) : std::string("nan"); };
  for (const auto& r : result.records) {
    out += num(r.fraction) + "," + std::string(to_string(r.method)) + "," + std::to_string(r.seed) + "," +
           num(r.t_err_deg) + "," + num(r.omega_err) + "," + num(r.runtime_ms) + "," +
           (r.converged ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string fit_study_to_csv(const std::vector<FitTrial>& trials) {
  std::string out =
      "trial,seed,laplacian_loglik,gaussian_loglik,degenerate,erl_laplacian_t_err_deg,erl_gaussian_t_err_deg\n";
  auto num = [](double v) { return std::isfinite(v) ? detail::format_double(v) : std::string("nan"); };
  for (std::size_t k = 0; k < trials.size(); ++k) {
    const auto& t = trials[k];
    out += std::to_string(k) + "," + std::to_string(t.seed) + "," + num(t.laplacian_loglik) + "," +
           num(t.gaussian_loglik) + "," + (t.degenerate ? "1" : "0") + "," +
           num(t.erl_laplacian_t_err_deg) + "," + num(t.erl_gaussian_t_err_deg) + "\n";
  }
  return out;
}

}  // namespace erl
