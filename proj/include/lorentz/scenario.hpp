#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <json.hpp>
#include <string>
#include <vector>

#include "lorentz/causal.hpp"
#include "lorentz/interaction.hpp"

namespace lorentz {

struct InteractionEntry {
  std::string family;
  KVector k{};
};

struct ScenarioConfig {
  // [scenario]
  std::string metric = "minkowski";
  std::uint64_t seed = 1;
  std::string output = "out";
  int threads = 0;

  // [observers]
  ObserverFamilySpec observers{};

  // [geometry]
  int geometry_points = 100;
  double fd_step = 1e-2;

  // [causal]
  int causal_configs = 200;
  int causal_geodesics = 8;

  // [interaction]
  double rho1 = 0.05;
  int hierarchy_N = 2;
  int order_a = 6;
  Arr4<double> oracle_rho{0.3, 0.25, 0.2, 0.15};
  std::vector<double> taus{250, 500, 1000, 2000};
  std::vector<InteractionEntry> entries{{"T_QQ", {6, 0, 0, 0}}, {"T_IQ", {2, 2, 0, 0}}, {"Tt_II", {1, 1, 0, 0}}};
  double slope_tol = 0.05;
  double ratio_tol = 0.1;

  // [adaptive]
  int fields_L = 5;
  int fields_K = 6;
  int frames = 100;
  double input_norm = 1e-3;

  // [reconstruct]
  double s_minus = -0.5;
  double s_plus = 0.5;
  double s_plus2 = 0.75;
  double t0 = 0.02;
  double eps = 1e-3;
  double theta = 0.05;
  double grid_step = 1e-3;
  double delta = 0.1;
  double ds_factor = 1.0;
  double dr_factor = 0.9;
  double dir_factor = 1.0;
  double stage_width = 0.25;
  int coverage_targets = 2000;
  double score_tol = 1e-4;

  // [diff] field name -> tolerance, "default" for the rest
  std::map<std::string, double> tolerances;

  bool operator==(const ScenarioConfig&) const;
};

// INI text with sections; unknown sections or keys are rejected; errors carry "source:line:column"
ScenarioConfig parse_config(const std::string& text, const std::string& source = "<config>");
ScenarioConfig load_config(const std::filesystem::path& path);
// canonical INI text; parse_config(to_ini(c)) == c
std::string to_ini(const ScenarioConfig& c);

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s{"geometry-check", "causal", "interaction", "adaptive", "reconstruct", "all"};
  return s;
}

struct RunReport {
  nlohmann::json manifest;
  std::vector<std::string> failed;  // assertion names
};

// writes the subcommand outputs and manifest.json into dir
RunReport run_subcommand(const ScenarioConfig& c, const std::string& sub, const std::filesystem::path& dir);

struct DiffReport {
  nlohmann::json report;
  int out_of_tolerance = 0;
};

// throws ConfigError when the manifests come from different subcommands
DiffReport diff_manifests(const nlohmann::json& a, const nlohmann::json& b);

}  // namespace lorentz
