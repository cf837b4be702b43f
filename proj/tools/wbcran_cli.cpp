// wbcran: solve single scenarios, run Monte-Carlo campaigns and run the
// oracle differential suite.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "wbcran/ccp.hpp"
#include "wbcran/harness.hpp"
#include "wbcran/seeding.hpp"
#include "wbcran/verify.hpp"

namespace fs = std::filesystem;
using namespace wbcran;

namespace {

int run_solve(const std::string& config_path, std::uint64_t seed, const std::string& mode_name,
              const std::string& strategy_name, const std::string& out) {
  harness::CampaignSpec spec = harness::spec_from_key_values(harness::read_key_values(config_path));
  spec.seed_base = seed;
  spec.trials = 1;
  const ccp::Mode mode = ccp::parse_mode(mode_name);
  const CacheStrategy strategy = parse_cache_strategy(strategy_name);

  const Instance inst = harness::trial_instance(spec, 0, strategy);
  ccp::CcpOptions opts = spec.options;
  opts.mode = mode;
  const auto backend = conic::make_default_backend();
  const ccp::Solution sol = ccp::solve(inst, opts, *backend, harness::solver_seed(spec, 0, mode, strategy));

  fs::create_directories(out);
  std::ofstream(fs::path(out) / "instance.json") << nlohmann::json(inst).dump(2) << '\n';
  std::ofstream(fs::path(out) / "solution.json") << nlohmann::json(sol).dump(2) << '\n';
  std::ofstream trace(fs::path(out) / "trace.csv");
  ccp::write_trace_csv(trace, sol.trace);

  std::cout << "status " << ccp::to_string(sol.status) << "  groups " << inst.num_groups() << "  total power "
            << sol.power.total << " W  iterations " << sol.iterations << "  serving links "
            << sol.clustering.count() << "  backhauled groups " << sol.backhauled_groups << '\n';
  if (!sol.message.empty()) std::cout << sol.message << '\n';
  return 0;
}

int run_campaign(const std::string& spec_path, const std::string& out) {
  const harness::CampaignSpec spec = harness::spec_from_key_values(harness::read_key_values(spec_path));
  const harness::CampaignResult result = harness::run_campaign(spec);
  harness::write_artifacts(result, out);
  const nlohmann::json summary = result.summary();
  for (const auto& c : summary.at("cells")) {
    std::cout << c.at("mode").get<std::string>() << '/' << c.at("strategy").get<std::string>() << "  usable "
              << c.at("usable") << "  mean total " << c.at("mean_total") << "  status " << c.at("status_counts").dump()
              << '\n';
  }
  std::cout << result.records.size() << " records, " << result.error_count() << " errors\n";
  return result.error_count() == 0 ? 0 : 1;
}

int run_verify(const std::string& config_path, std::uint64_t seed, int instances, const std::string& out) {
  const harness::CampaignSpec spec = harness::spec_from_key_values(harness::read_key_values(config_path));
  int failures = 0;

  // closed-form tightening on scenarios drawn from the configuration
  for (int t = 0; t < instances; ++t) {
    const Instance inst = make_instance(spec.config, CacheStrategy::PopC, derive_seed(seed, {0x7167ULL, std::uint64_t(t)}));
    const BeamformerSet slack = verify::random_feasible_beamformers(inst, derive_seed(seed, {1ULL, std::uint64_t(t)}), true);
    const verify::ScaledSet scaled = verify::scale_to_tightness(slack, inst);
    const verify::TighteningResult tight = verify::iterative_tightening(
        verify::random_feasible_beamformers(inst, derive_seed(seed, {2ULL, std::uint64_t(t)}), false), inst);
    const bool ok = scaled.a < 1.0 && tight.converged;
    failures += ok ? 0 : 1;
    std::cout << "tightening " << t << ": a=" << scaled.a << " rounds=" << tight.rounds
              << " residual=" << tight.residual << (ok ? "" : "  FAILED") << '\n';
  }

  const auto backend = conic::make_default_backend();
  const auto rows = verify::differential_suite(seed, instances, *backend, spec.options);
  int within = 0;
  for (const auto& r : rows) {
    const bool above_lower = r.ccp_power >= r.oracle_lower - 1e-6;
    const bool near_upper = r.ccp_power <= 1.10 * r.oracle_upper;
    within += near_upper ? 1 : 0;
    failures += above_lower ? 0 : 1;
    std::cout << "differential seed " << r.seed << ": ccp " << r.ccp_power << "  oracle [" << r.oracle_lower << ", "
              << r.oracle_upper << "]" << (above_lower ? "" : "  BELOW LOWER BOUND") << '\n';
  }
  std::cout << within << '/' << rows.size() << " within 1.10 of the enumerated best\n";
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream csv(fs::path(out) / "comparison.csv");
    verify::write_comparison_csv(csv, rows);
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cache-aware clustering and beamforming for wireless-backhaul C-RAN"};
  app.require_subcommand(1);

  std::string config, out, mode = "proposed", strategy = "popc", spec;
  std::uint64_t seed = 1;
  int instances = 20;

  auto* solve = app.add_subcommand("solve", "Solve one scenario");
  solve->add_option("--config", config, "key = value configuration file")->required()->check(CLI::ExistingFile);
  solve->add_option("--seed", seed, "scenario seed");
  solve->add_option("--mode", mode, "proposed | no-sc | no-cache");
  solve->add_option("--strategy", strategy, "popc | ranc | mosc");
  solve->add_option("--out", out, "output directory")->required();

  auto* campaign = app.add_subcommand("campaign", "Run a Monte-Carlo campaign");
  campaign->add_option("--spec", spec, "key = value campaign file")->required()->check(CLI::ExistingFile);
  campaign->add_option("--out", out, "output directory")->required();

  auto* verify_cmd = app.add_subcommand("verify", "Run the oracle differential suite");
  verify_cmd->add_option("--config", config, "key = value configuration file")->required()->check(CLI::ExistingFile);
  verify_cmd->add_option("--seed", seed, "suite seed");
  verify_cmd->add_option("--instances", instances, "instances per check")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--out", out, "optional directory for comparison.csv");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*solve) return run_solve(config, seed, mode, strategy, out);
    if (*campaign) return run_campaign(spec, out);
    if (*verify_cmd) return run_verify(config, seed, instances, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
