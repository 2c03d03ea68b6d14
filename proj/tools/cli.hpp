#pragma once

// Command-line front end. Exit codes: 0 success, 2 usage, 3 input, 4 estimation.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "erl_egomotion.hpp"

namespace erl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInput = 3;
inline constexpr int kExitEstimation = 4;

namespace detail {

inline SolverConfig load_solver_config(const std::string& config_path,
                                       const std::vector<std::string>& overrides) {
  SolverConfig cfg;
  if (!config_path.empty()) cfg = parse_config_file(config_path, cfg);
  std::string text;
  for (const auto& kv : overrides) text += kv + "\n";
  return parse_config_text(text, cfg, "--set");
}

inline std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<Method> out;
  for (const auto& n : names) {
    const auto m = parse_method(n);
    if (!m) throw CLI::ValidationError("--methods", "unknown method '" + n + "'");
    out.push_back(*m);
  }
  return out;
}

}  // namespace detail

/// Runs the tool with the given arguments; diagnostics go to `err`, progress to `log`.
inline int cli_main(int argc, const char* const* argv, std::ostream& log = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Egomotion from optical flow with expected residual likelihood weighting"};
  app.require_subcommand(1);

  // estimate
  auto* est_cmd = app.add_subcommand("estimate", "Estimate camera motion from a flow file");
  std::string flow_path, intrinsics_path, config_path, out_path, method_name = "erl";
  std::vector<std::string> overrides;
  est_cmd->add_option("--flow", flow_path, "Flow file")->required();
  est_cmd->add_option("--intrinsics", intrinsics_path, "Intrinsics file (pixel-mode flow)");
  est_cmd->add_option("--method", method_name, "raw, erl, lifted or soatto")
      ->check(CLI::IsMember({"raw", "erl", "lifted", "soatto"}));
  est_cmd->add_option("--config", config_path, "key=value solver configuration");
  est_cmd->add_option("--set", overrides, "Override a configuration key (key=value)");
  est_cmd->add_option("--out", out_path, "Output JSON (stdout when omitted)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Outlier-rate sweep on synthetic scenes");
  std::vector<double> fractions{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  std::size_t seeds = 100;
  std::vector<std::string> method_names{"raw", "erl", "lifted"};
  std::string sweep_out, sweep_config;
  std::vector<std::string> sweep_overrides;
  std::size_t sweep_points = SceneConfig{}.n_points;
  std::uint64_t base_seed = SweepConfig{}.base_seed;
  bool quiet = false;
  sweep_cmd->add_option("--fractions", fractions, "Outlier fractions")->delimiter(',');
  sweep_cmd->add_option("--seeds", seeds, "Seeds per cell");
  sweep_cmd->add_option("--methods", method_names, "Methods")->delimiter(',');
  sweep_cmd->add_option("--n-points", sweep_points, "Points per scene");
  sweep_cmd->add_option("--base-seed", base_seed, "First seed");
  sweep_cmd->add_option("--config", sweep_config, "key=value solver configuration");
  sweep_cmd->add_option("--set", sweep_overrides, "Override a configuration key (key=value)");
  sweep_cmd->add_option("--out", sweep_out, "Output CSV")->required();
  sweep_cmd->add_flag("--quiet", quiet, "Suppress the per-cell summary");

  // fit-study
  auto* fit_cmd = app.add_subcommand("fit-study", "Laplacian vs Gaussian fits at the true motion");
  std::size_t trials = 100;
  double fit_outliers = FitStudyConfig{}.scene.outlier_fraction;
  bool fit_estimates = false;
  std::string fit_out;
  fit_cmd->add_option("--trials", trials, "Number of trials");
  fit_cmd->add_option("--outliers", fit_outliers, "Outlier fraction")->check(CLI::Range(0.0, 1.0));
  fit_cmd->add_flag("--estimates", fit_estimates, "Also run ERL with each likelihood");
  fit_cmd->add_option("--out", fit_out, "Output CSV")->required();

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic flow field");
  std::uint64_t synth_seed = 0;
  double synth_outliers = 0.0;
  double synth_noise = SceneConfig{}.noise_fraction_of_mean_flow;
  std::size_t synth_points = SceneConfig{}.n_points;
  std::string synth_out, truth_out;
  synth_cmd->add_option("--seed", synth_seed, "Scene seed");
  synth_cmd->add_option("--outliers", synth_outliers, "Outlier fraction")->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--noise", synth_noise, "Noise as a fraction of mean flow magnitude")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--n-points", synth_points, "Number of points");
  synth_cmd->add_option("--out", synth_out, "Output flow file")->required();
  synth_cmd->add_option("--truth", truth_out, "Also write ground truth JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, log, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, log, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, log, err);
    return kExitUsage;
  }

  try {
    if (est_cmd->parsed()) {
      SolverConfig cfg;
      FlowField flow;
      try {
        cfg = detail::load_solver_config(config_path, overrides);
        std::optional<Intrinsics> intrinsics;
        if (!intrinsics_path.empty()) intrinsics = parse_intrinsics_file(intrinsics_path);
        flow = parse_flow_file(flow_path, intrinsics);
      } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
      }
      EgomotionEstimate result;
      try {
        result = estimate(flow, *parse_method(method_name), cfg);
      } catch (const InvalidInputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
      } catch (const Error& e) {
        err << "estimation failed: " << e.what() << "\n";
        return kExitEstimation;
      }
      const std::string json = estimate_to_json(result).dump(2) + "\n";
      if (out_path.empty()) {
        log << json;
      } else {
        write_file_atomic(out_path, json);
      }
      return kExitOk;
    }

    if (sweep_cmd->parsed()) {
      SweepConfig cfg;
      try {
        cfg.solver = detail::load_solver_config(sweep_config, sweep_overrides);
      } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInput;
      }
      for (double f : fractions) {
        if (!(f >= 0.0 && f <= 1.0)) {
          err << "error: --fractions values must lie in [0, 1]\n";
          return kExitUsage;
        }
      }
      std::vector<Method> methods;
      try {
        methods = detail::parse_methods(method_names);
      } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
      }
      cfg.scene.n_points = sweep_points;
      cfg.base_seed = base_seed;
      const SweepResult result = run_outlier_sweep(fractions, seeds, methods, cfg);
      write_file_atomic(sweep_out, sweep_to_csv(result));
      if (!quiet) {
        for (const auto& c : result.cells) {
          log << "fraction " << c.fraction << "  " << to_string(c.method) << "  median t error "
              << c.median_t_err_deg << " deg  failures " << c.failures << "\n";
        }
      }
      return kExitOk;
    }

    if (fit_cmd->parsed()) {
      FitStudyConfig cfg;
      cfg.scene.outlier_fraction = fit_outliers;
      cfg.run_estimates = fit_estimates;
      const auto result = likelihood_fit_study(trials, cfg);
      write_file_atomic(fit_out, fit_study_to_csv(result));
      std::size_t wins = 0, counted = 0;
      for (const auto& t : result) {
        if (t.degenerate) continue;
        ++counted;
        if (t.laplacian_loglik > t.gaussian_loglik) ++wins;
      }
      log << "laplacian fit better in " << wins << " of " << counted << " trials\n";
      return kExitOk;
    }

    if (synth_cmd->parsed()) {
      SceneConfig cfg;
      cfg.seed = synth_seed;
      cfg.outlier_fraction = synth_outliers;
      cfg.noise_fraction_of_mean_flow = synth_noise;
      cfg.n_points = synth_points;
      const LabeledFlowField scene = generate_scene(cfg);
      write_flow_file(synth_out, scene.flow);
      if (!truth_out.empty()) {
        nlohmann::json j;
        j["t"] = {scene.truth.t.x(), scene.truth.t.y(), scene.truth.t.z()};
        j["omega"] = {scene.truth.omega.x(), scene.truth.omega.y(), scene.truth.omega.z()};
        j["rho"] = scene.depths.rho;
        std::vector<int> mask(scene.inlier_mask.begin(), scene.inlier_mask.end());
        j["inlier"] = mask;
        write_file_atomic(truth_out, j.dump(2) + "\n");
      }
      return kExitOk;
    }
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const InvalidInputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitEstimation;
  }
  return kExitUsage;
}

}  // namespace erl::cli
