#pragma once

// Independent checks on the solver: closed-form SINR tightening of slack
// beamformers, semidefinite relaxation bounds for a fixed clustering and
// exhaustive clustering enumeration on tiny instances.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "wbcran/ccp.hpp"
#include "wbcran/conic.hpp"
#include "wbcran/model.hpp"
#include "wbcran/scenario.hpp"

namespace wbcran::verify {

// Sum of ||w_l||^2 over all groups.
double sbs_transmit_power(const BeamformerSet& W);

struct ScaledSet {
  double a = 1.0;
  BeamformerSet W;
};

// W_hat = sqrt(a) W with a chosen so the binding group is exactly tight.
// Throws std::invalid_argument unless every group is strictly above target.
ScaledSet scale_to_tightness(const BeamformerSet& W, const Instance& inst);

struct TighteningResult {
  BeamformerSet W;
  int rounds = 0;
  std::vector<double> power_trace;  // entry 0 is the input
  bool converged = false;
  double residual = 0.0;  // largest min-SINR / gamma - 1 over groups
};

// Scales only the slack groups, one common factor per round, until every
// group is within `tol` of its target. Throws std::invalid_argument if some
// group starts below target.
TighteningResult iterative_tightening(const BeamformerSet& W, const Instance& inst, int max_rounds = 100,
                                      double tol = 1e-6);

struct SdrOptions {
  double grid_step = 0.05;
  int randomizations = 200;
  std::uint64_t seed = 0;
  double solver_tol = 1e-9;
  double audit_tol = 1e-6;
};

struct FixedClusterBounds {
  double lower = std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  std::optional<BeamformerSet> witness;  // attains `upper`
};

// Lower bound from the relaxation (+inf when the relaxation is infeasible)
// and an upper bound from Gaussian randomization, both in total power (W).
FixedClusterBounds sdr_bounds(const Instance& inst, const Clustering& C, conic::ConicBackend& backend,
                              const SdrOptions& opts = {});
double sdr_lower_bound(const Instance& inst, const Clustering& C, conic::ConicBackend& backend,
                       const SdrOptions& opts = {});

struct ClusterRecord {
  Clustering clustering;
  bool skipped = false;  // some group has no serving SBS
  double lower = std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

struct OracleResult {
  std::optional<Clustering> best;
  double best_upper = std::numeric_limits<double>::infinity();
  double global_lower = std::numeric_limits<double>::infinity();
  std::vector<ClusterRecord> records;  // in enumeration order

  bool feasible() const { return best.has_value(); }
};

using PerClusterSolver = std::function<FixedClusterBounds(const Instance&, const Clustering&)>;

// The default per-cluster solver: sdr_bounds with a fresh solver per call.
PerClusterSolver sdr_cluster_solver(const SdrOptions& opts = {});

// Enumerates all 2^(M L) clusterings (M L <= 12). Clusterings are evaluated
// on `threads` workers; the result does not depend on the thread count.
OracleResult brute_force_small(const Instance& inst, const PerClusterSolver& solver, int threads = 1);

// M=2, N_s=1, N_m=2, F=3, Z=1 instance with `num_users` users, redrawn
// (deterministically) until it has at most two groups.
Instance tiny_instance(std::uint64_t seed, int num_users, CacheStrategy strategy = CacheStrategy::PopC);

void to_json(nlohmann::json& j, const OracleResult& r);

// Random directions with powers set so that group l's weakest member sits
// exactly at gamma (1 + margin_l): margin_l is drawn from [0.01, 1] for the
// slack groups and is 0 for the others. With all_slack false a random
// nonempty proper subset is slack when L > 1.
BeamformerSet random_feasible_beamformers(const Instance& inst, std::uint64_t seed, bool all_slack);

struct ComparisonRow {
  std::uint64_t seed = 0;
  int groups = 0;
  double ccp_power = 0.0;
  double oracle_lower = 0.0;
  double oracle_upper = 0.0;
  bool ccp_converged = false;
};

void write_comparison_csv(std::ostream& os, const std::vector<ComparisonRow>& rows);

// Solver versus enumeration on the first `count` tiny instances (derived
// from `seed`) that the oracle finds feasible; K alternates between 2 and 3.
std::vector<ComparisonRow> differential_suite(std::uint64_t seed, int count, conic::ConicBackend& backend,
                                              const ccp::CcpOptions& opts = {}, int threads = 1);

}  // namespace wbcran::verify
