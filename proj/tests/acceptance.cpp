// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>
#include <vector>

#include "wbcran/ccp.hpp"
#include "wbcran/harness.hpp"
#include "wbcran/seeding.hpp"
#include "wbcran/verify.hpp"

using namespace wbcran;

namespace {

constexpr int kTrials = 50;
constexpr std::uint64_t kSeedBase = 20240601;

constexpr double kDescentTol = 1e-6;
constexpr double kRuntimeBudget = 300.0;  // s, criterion 1
constexpr int kFastIters = 10;
constexpr double kFastShare = 0.90;
constexpr int kMaxIters = 30;
constexpr double kTightUpper = 1.01;
constexpr double kSinrFloorTol = 1e-6;
constexpr int kTighteningSets = 100;
constexpr double kScaledTightTol = 1e-9;
constexpr double kIterTightTol = 1e-6;
constexpr int kTinyInstances = 20;
constexpr double kLowerBoundTol = 1e-6;
constexpr double kUpperRatio = 1.10;
constexpr double kUpperShare = 0.80;
constexpr double kAuditTol = 1e-6;
constexpr int kRepeatTrials = 5;

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("criterion %d %-22s %s  %s\n", id, name, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Run {
  ccp::Solution sol;
  Instance inst;
  bool threw = false;
  std::string what;
  double seconds = 0.0;
};

int worker_count() { return std::max(1, static_cast<int>(std::thread::hardware_concurrency())); }

template <class Fn>
void parallel_for(int n, Fn fn) {
  std::atomic<int> next{0};
  auto work = [&]() {
    const auto backend = conic::make_default_backend();
    for (int i = next++; i < n; i = next++) fn(i, *backend);
  };
  std::vector<std::thread> pool;
  const int threads = std::min(worker_count(), n);
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
}

bool descends(const std::vector<double>& h) {
  for (std::size_t i = 1; i < h.size(); ++i) {
    if (h[i] > h[i - 1] + kDescentTol * std::max(1.0, std::abs(h[i - 1]))) return false;
  }
  return true;
}

}  // namespace

int main() {
  harness::CampaignSpec spec;
  spec.config = SystemConfig::desk();
  spec.trials = kTrials;
  spec.seed_base = kSeedBase;
  spec.strategies = {CacheStrategy::PopC};
  const std::vector<ccp::Mode> modes{ccp::Mode::Proposed, ccp::Mode::NoSC, ccp::Mode::NoCacheNoSC};
  spec.modes = modes;
  std::printf("desk campaign: M=%d K=%d N_m=%d N_s=%d F=%d Z=%d, %d trials, %d workers\n", spec.config.num_sbs,
              spec.config.num_users, spec.config.mbs_antennas, spec.config.sbs_antennas, spec.config.num_files,
              spec.config.cache_capacity, kTrials, worker_count());

  const int nm = static_cast<int>(modes.size());
  std::vector<Run> runs(static_cast<std::size_t>(kTrials * nm));
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(kTrials * nm, [&](int i, conic::ConicBackend& be) {
    const int trial = i / nm;
    const ccp::Mode mode = modes[static_cast<std::size_t>(i % nm)];
    Run& r = runs[static_cast<std::size_t>(i)];
    const auto s = std::chrono::steady_clock::now();
    try {
      r.inst = harness::trial_instance(spec, trial, CacheStrategy::PopC);
      ccp::CcpOptions opts = spec.options;
      opts.mode = mode;
      r.sol = ccp::solve(r.inst, opts, be, harness::solver_seed(spec, trial, mode, CacheStrategy::PopC));
      r.inst = ccp::instance_for_mode(r.inst, mode, opts);
    } catch (const std::exception& e) {
      r.threw = true;
      r.what = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - s).count();
  });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto run_of = [&](int trial, int mode) -> const Run& { return runs[static_cast<std::size_t>(trial * nm + mode)]; };

  // 1. descent of the convexified objective on the Proposed runs
  {
    int ok = 0;
    double proposed_seconds = 0.0;
    for (int t = 0; t < kTrials; ++t) {
      const Run& r = run_of(t, 0);
      proposed_seconds += r.seconds;
      if (!r.threw && descends(r.sol.objective_history) && descends(r.sol.polish_history)) ++ok;
    }
    report(1, "ccp-descent", ok == kTrials && proposed_seconds < kRuntimeBudget,
           fmt("%.0f/%.0f runs monotone, %.1f s solver time (budget %.0f s)", ok, kTrials, proposed_seconds,
               kRuntimeBudget));
  }

  // 2. iterations to convergence
  {
    int fast = 0, bounded = 0;
    for (int t = 0; t < kTrials; ++t) {
      const Run& r = run_of(t, 0);
      if (r.threw || r.sol.status != ccp::Status::Converged) continue;
      if (r.sol.iterations <= kFastIters) ++fast;
      if (r.sol.iterations <= kMaxIters) ++bounded;
    }
    const double share = static_cast<double>(fast) / kTrials;
    report(2, "convergence-speed", share >= kFastShare && bounded == kTrials,
           fmt("%.0f%% within %.0f iterations, %.0f/%.0f within 30", 100.0 * share, kFastIters, bounded, kTrials));
  }

  // 3. group SINRs sit between gamma and 1.01 gamma at converged points
  {
    int checked = 0, ok = 0;
    double lo = INFINITY, hi = 0.0;
    for (const Run& r : runs) {
      if (r.threw || r.sol.status != ccp::Status::Converged) continue;
      ++checked;
      bool good = true;
      for (int l = 0; l < r.inst.num_groups(); ++l) {
        const double ratio = min_group_sinr(l, r.sol.beamformers, r.inst.channels, r.inst.groups) / r.inst.gamma();
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
        good = good && ratio >= 1.0 - kSinrFloorTol && ratio <= kTightUpper;
      }
      ok += good ? 1 : 0;
    }
    report(3, "sinr-tightness", checked > 0 && ok == checked,
           fmt("%.0f/%.0f converged solutions, ratio range [%.7f, %.7f]", ok, checked, lo, hi));
  }

  // 4. closed-form and iterative tightening
  {
    int scaled_ok = 0, iter_ok = 0;
    double worst_tight = 0.0, worst_residual = 0.0;
    int max_rounds = 0;
    for (int i = 0; i < kTighteningSets; ++i) {
      const Instance inst =
          make_instance(spec.config, CacheStrategy::PopC, derive_seed(kSeedBase, {0x7167ULL, std::uint64_t(i)}));
      const BeamformerSet slack =
          verify::random_feasible_beamformers(inst, derive_seed(kSeedBase, {1ULL, std::uint64_t(i)}), true);
      const verify::ScaledSet s = verify::scale_to_tightness(slack, inst);
      double binding = INFINITY;
      bool above = true;
      for (int l = 0; l < inst.num_groups(); ++l) {
        const double ratio = min_group_sinr(l, s.W, inst.channels, inst.groups) / inst.gamma();
        binding = std::min(binding, ratio);
        above = above && ratio >= 1.0 - kScaledTightTol;
      }
      worst_tight = std::max(worst_tight, std::abs(binding - 1.0));
      const bool lower = verify::sbs_transmit_power(s.W) < verify::sbs_transmit_power(slack);
      if (s.a < 1.0 && std::abs(binding - 1.0) <= kScaledTightTol && above && lower) ++scaled_ok;

      const BeamformerSet mixed =
          verify::random_feasible_beamformers(inst, derive_seed(kSeedBase, {2ULL, std::uint64_t(i)}), false);
      const verify::TighteningResult t = verify::iterative_tightening(mixed, inst, 100, kIterTightTol);
      bool monotone = true;
      for (std::size_t k = 1; k < t.power_trace.size(); ++k) monotone = monotone && t.power_trace[k] < t.power_trace[k - 1];
      bool all_tight = true;
      for (int l = 0; l < inst.num_groups(); ++l) {
        const double ratio = min_group_sinr(l, t.W, inst.channels, inst.groups) / inst.gamma();
        all_tight = all_tight && ratio >= 1.0 - kIterTightTol && ratio <= 1.0 + kIterTightTol;
      }
      worst_residual = std::max(worst_residual, t.residual);
      max_rounds = std::max(max_rounds, t.rounds);
      if (t.converged && monotone && all_tight) ++iter_ok;
    }
    report(4, "tightening-oracle", scaled_ok == kTighteningSets && iter_ok == kTighteningSets,
           fmt("scaled %.0f/100 (worst |gap| %.2e), iterative %.0f/100 (max %.0f rounds)", scaled_ok, worst_tight,
               iter_ok, max_rounds) +
               fmt(", worst residual %.2e", worst_residual));
  }

  // 5. solver against clustering enumeration on tiny instances
  {
    const auto backend = conic::make_default_backend();
    const auto rows = verify::differential_suite(kSeedBase, kTinyInstances, *backend, spec.options, worker_count());
    int above = 0, near = 0;
    double worst_ratio = 0.0;
    for (const auto& r : rows) {
      above += r.ccp_power >= r.oracle_lower - kLowerBoundTol ? 1 : 0;
      near += r.ccp_power <= kUpperRatio * r.oracle_upper ? 1 : 0;
      worst_ratio = std::max(worst_ratio, r.ccp_power / r.oracle_upper);
    }
    const int n = static_cast<int>(rows.size());
    report(5, "differential-oracle",
           n == kTinyInstances && above == n && near >= static_cast<int>(std::ceil(kUpperShare * n)),
           fmt("%.0f instances, %.0f above lower bound, %.0f within 1.10x upper (worst ratio %.4f)", n, above, near,
               worst_ratio));
  }

  // 6 and 7. mode ordering and backhaul relief
  double mean_total[3] = {0, 0, 0}, mean_mbs[3] = {0, 0, 0}, mean_bh[3] = {0, 0, 0};
  int usable[3] = {0, 0, 0};
  for (int t = 0; t < kTrials; ++t) {
    for (int m = 0; m < nm; ++m) {
      const Run& r = run_of(t, m);
      if (r.threw || r.sol.status == ccp::Status::Infeasible) continue;
      ++usable[m];
      mean_total[m] += r.sol.power.total;
      mean_mbs[m] += r.sol.power.mbs_tx;
      mean_bh[m] += r.sol.backhauled_groups;
    }
  }
  for (int m = 0; m < nm; ++m) {
    const double n = std::max(usable[m], 1);
    mean_total[m] /= n;
    mean_mbs[m] /= n;
    mean_bh[m] /= n;
  }
  const bool all_usable = usable[0] == kTrials && usable[1] == kTrials && usable[2] == kTrials;
  report(6, "baseline-ordering",
         all_usable && mean_total[0] <= mean_total[1] && mean_total[1] <= mean_total[2] && mean_total[2] - mean_total[0] > 0.0,
         fmt("mean total power: proposed %.3f, no-sc %.3f, no-cache %.3f W", mean_total[0], mean_total[1],
             mean_total[2]) +
             fmt(" (usable %.0f/%.0f/%.0f)", usable[0], usable[1], usable[2]));
  report(7, "backhaul-relief", all_usable && mean_bh[0] < mean_bh[2] && mean_mbs[0] < mean_mbs[2],
         fmt("backhauled groups %.2f vs %.2f, MBS tx %.4f vs %.4f W", mean_bh[0], mean_bh[2], mean_mbs[0],
             mean_mbs[2]));

  // 8. audits and exceptions
  {
    int converged = 0, audited = 0, exceptions = 0;
    double worst = 0.0;
    for (const Run& r : runs) {
      if (r.threw) {
        ++exceptions;
        std::printf("  exception: %s\n", r.what.c_str());
        continue;
      }
      if (r.sol.status != ccp::Status::Converged) continue;
      ++converged;
      // recompute independently from the reported beamformers and clustering
      const FeasibilityReport rep = check_p0_feasibility(r.sol.beamformers, r.sol.clustering, r.inst, kAuditTol);
      worst = std::max(worst, rep.worst());
      audited += rep.feasible ? 1 : 0;
    }
    report(8, "feasibility-audit", converged > 0 && audited == converged && exceptions == 0,
           fmt("%.0f/%.0f converged solutions feasible (worst violation %.2e), %.0f exceptions", audited, converged,
               worst, exceptions));
  }

  // 9. repeated trial records are bit-identical
  {
    int same = 0, total = 0;
    const auto backend = conic::make_default_backend();
    for (int t = 0; t < kRepeatTrials; ++t) {
      for (ccp::Mode mode : modes) {
        const std::string a = nlohmann::json(harness::run_trial(spec, t, mode, CacheStrategy::PopC, *backend)).dump();
        const auto fresh = conic::make_default_backend();
        const std::string b = nlohmann::json(harness::run_trial(spec, t, mode, CacheStrategy::PopC, *fresh)).dump();
        ++total;
        same += a == b ? 1 : 0;
      }
    }
    report(9, "determinism", same == total, fmt("%.0f/%.0f repeated records identical", same, total));
  }

  std::printf("wall time %.1f s for the desk campaign\n", wall);
  std::printf("%s\n", failures == 0 ? "ALL PASS" : "SOME FAILED");
  return failures == 0 ? 0 : 1;
}
