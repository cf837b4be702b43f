#pragma once

// Monte-Carlo campaigns over (trial, cache strategy, mode) cells with
// per-cell seeds, a bounded worker pool and CSV/JSON artifacts.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wbcran/ccp.hpp"
#include "wbcran/conic.hpp"
#include "wbcran/scenario.hpp"

namespace wbcran::harness {

// `key = value` lines; `#` starts a comment. Throws std::invalid_argument on
// malformed lines or repeated keys.
std::map<std::string, std::string> parse_key_values(std::istream& in);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

struct CampaignSpec {
  SystemConfig config = SystemConfig::desk();
  int trials = 50;
  std::uint64_t seed_base = 1;
  std::vector<CacheStrategy> strategies{CacheStrategy::PopC};
  std::vector<ccp::Mode> modes{ccp::Mode::Proposed, ccp::Mode::NoSC, ccp::Mode::NoCacheNoSC};
  std::optional<RequestProfile> fixed_requests;  // otherwise Zipf draws per trial
  ccp::CcpOptions options;
  int threads = 0;  // 0: hardware concurrency

  void validate() const;
};

// Keys: preset (desk|paper), any SystemConfig JSON key (M, K, N_m, N_s, F, Z,
// radius, P_m, P_0, P_sp, eta, r_l, alpha, ...), trials, seed_base,
// strategies, modes, requests (comma list or "zipf"), threads and solver
// options as `ccp.<name>`. Lists are comma separated.
CampaignSpec spec_from_key_values(const std::map<std::string, std::string>& kv);
SystemConfig config_from_key_values(const std::map<std::string, std::string>& kv);

void to_json(nlohmann::json& j, const CampaignSpec& spec);

struct TrialRecord {
  int trial = 0;
  std::uint64_t scenario_seed = 0;
  std::uint64_t solver_seed = 0;
  ccp::Mode mode = ccp::Mode::Proposed;
  CacheStrategy strategy = CacheStrategy::PopC;
  int groups = 0;
  std::string status;  // solver status, or "error"
  std::string message;
  PowerBreakdown power;
  int iterations = 0;
  int polish_iterations = 0;
  int backhauled_groups = 0;
  int serving_links = 0;  // number of ones in the recovered clustering
  bool audit_passed = false;
  double audit_worst = 0.0;
  std::vector<double> objective_history;

  bool errored() const { return status == "error"; }
  bool usable() const { return status == "converged" || status == "iter-limit"; }
};

void to_json(nlohmann::json& j, const TrialRecord& r);

std::uint64_t scenario_seed(const CampaignSpec& spec, int trial);
std::uint64_t solver_seed(const CampaignSpec& spec, int trial, ccp::Mode mode, CacheStrategy strategy);

Instance trial_instance(const CampaignSpec& spec, int trial, CacheStrategy strategy);

// Never throws for solver-side failures: they come back as status "error".
TrialRecord run_trial(const CampaignSpec& spec, int trial, ccp::Mode mode, CacheStrategy strategy,
                      conic::ConicBackend& backend);

using BackendFactory = std::function<std::unique_ptr<conic::ConicBackend>()>;

struct CampaignResult {
  CampaignSpec spec;
  // trial-major, then strategy, then mode, regardless of execution order
  std::vector<TrialRecord> records;

  int error_count() const;
  nlohmann::json summary() const;
};

CampaignResult run_campaign(const CampaignSpec& spec, const BackendFactory& factory = conic::make_default_backend);

// convergence.csv, cdf.csv, breakdown.csv, summary.json, trials.jsonl
void write_artifacts(const CampaignResult& result, const std::filesystem::path& dir);

}  // namespace wbcran::harness
