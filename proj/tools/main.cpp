#include <CLI11.hpp>
#include <fmt/format.h>

#include <fstream>
#include <iostream>

#include "lorentz/errors.hpp"
#include "lorentz/scenario.hpp"

using namespace lorentz;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw ConfigError(fmt::format("{}: cannot open", p.string()));
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", p.string(), e.what()));
  }
}

int run(const std::string& cfg_path, const std::string& sub, const std::string& out) {
  ScenarioConfig c = load_config(cfg_path);
  fs::path dir = out.empty() ? fs::path(c.output) : fs::path(out);
  auto r = run_subcommand(c, sub, dir);
  fmt::print("{} {}: {} assertions, manifest {}\n", sub, r.failed.empty() ? "pass" : "FAIL",
             r.manifest["assertions"].size(), (dir / "manifest.json").string());
  for (const auto& n : r.failed) fmt::print(stderr, "failed: {}\n", n);
  return r.failed.empty() ? 0 : 1;
}

int diff(const std::string& a, const std::string& b) {
  auto d = diff_manifests(read_json(a), read_json(b));
  std::cout << d.report.dump(1) << "\n";
  return d.out_of_tolerance == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lorentz: geometry checks, causal kit, interaction asymptotics and diamond reconstruction"};
  app.require_subcommand(1);

  std::string cfg, sub, out;
  auto* run_cmd = app.add_subcommand("run", "run a scenario subcommand and write its manifest");
  run_cmd->add_option("config", cfg, "scenario file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("subcommand", sub, "geometry-check | causal | interaction | adaptive | reconstruct | all")
      ->required()
      ->check(CLI::IsMember(subcommands()));
  run_cmd->add_option("-o,--output", out, "output directory (default: [scenario] output)");

  std::string m1, m2;
  auto* diff_cmd = app.add_subcommand("diff", "compare the metrics of two manifests");
  diff_cmd->add_option("m1", m1, "manifest")->required()->check(CLI::ExistingFile);
  diff_cmd->add_option("m2", m2, "manifest")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*run_cmd) return run(cfg, sub, out);
    return diff(m1, m2);
  } catch (const CatalogMiss& e) {
    fmt::print(stderr, "catalog miss: {}\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 4;
  }
}
